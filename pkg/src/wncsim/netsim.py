"""Deterministic discrete-event simulation of loops sharing a wireless medium.

Every loop has a sender node (sensor side) and a receiver node (controller
side); both push frames through FIFO MAC buffers onto one channel, either via
CSMA-style contention with binary-exponential backoff or via round-robin
polling by a gateway.  Acknowledgments ride the same channel back.  Time is
integer microseconds; identical (scenario, seed) pairs replay identically.
"""

from __future__ import annotations

import heapq
import random
from collections import deque

import numpy as np

from .adaptation import ThresholdAdapter
from .control import (
    HISTORY_DEPTH,
    InputHistory,
    InsufficientHistoryError,
    LoopModel,
    make_kernel,
)
from .transport import (
    AckRecord,
    EstimateReplica,
    SensorPolicy,
    TahoeConfig,
    THRESHOLD_KINDS,
    VegasConfig,
)

TICK_US = 10_000

# event kinds; at equal timestamps network activity sorts ahead of sampling
# ticks, so a frame landing exactly on a tick is visible to that step
EV_MAC_ATTEMPT = 0
EV_FRAME_END = 1
EV_DELIVERY = 2
EV_ACK_DELIVERY = 3
EV_TL_TIMEOUT = 4
EV_POLL_GRANT = 5
EV_POLL_END = 6
EV_SAMPLE_TICK = 7

PRIO_NET = 0
PRIO_TICK = 1

KIND_NAMES = {
    EV_MAC_ATTEMPT: "mac_attempt",
    EV_FRAME_END: "frame_end",
    EV_DELIVERY: "delivery",
    EV_ACK_DELIVERY: "ack_delivery",
    EV_TL_TIMEOUT: "tl_timeout",
    EV_POLL_GRANT: "poll_grant",
    EV_POLL_END: "poll_end",
    EV_SAMPLE_TICK: "sample_tick",
}

# sub-stream tags for keyed seeding: one independent stream per purpose
STREAM_NOISE = 0
STREAM_NODE = 1


def noise_stream(seed: int, loop_id: int) -> np.random.Generator:
    """Per-loop process-noise stream; independent of loop count and channel."""
    return np.random.default_rng(np.random.SeedSequence([seed, STREAM_NOISE, loop_id]))


def node_stream(seed: int, node_id: int) -> random.Random:
    """Per-node channel randomness (backoff draws, loss draws)."""
    root = np.random.SeedSequence([seed, STREAM_NODE, node_id])
    return random.Random(int(root.generate_state(2, dtype=np.uint64)[0]))


class Frame:
    """One MAC-layer frame: either a status update or a transport ACK."""

    __slots__ = ("is_ack", "loop_id", "gen_step", "airtime", "payload",
                 "recv_step", "admit_time", "retries")

    def __init__(self, is_ack, loop_id, gen_step, airtime, payload=None,
                 recv_step=0, admit_time=0):
        self.is_ack = is_ack
        self.loop_id = loop_id
        self.gen_step = gen_step
        self.airtime = airtime
        self.payload = payload
        self.recv_step = recv_step
        self.admit_time = admit_time
        self.retries = 0


class Transmission:
    __slots__ = ("node", "frame", "start", "end", "collided")

    def __init__(self, node, frame, start, end):
        self.node = node
        self.frame = frame
        self.start = start
        self.end = end
        self.collided = False


class Node:
    """MAC state of one radio: FIFO buffer plus contention bookkeeping."""

    __slots__ = ("id", "label", "buffer", "cap", "be", "nb", "busy", "pending", "rng")

    def __init__(self, node_id, label, cap, rng):
        self.id = node_id
        self.label = label
        self.buffer = deque()
        self.cap = cap
        self.be = 0
        self.nb = 0
        self.busy = False
        self.pending = False
        self.rng = rng


class LoopRuntime:
    """Mutable per-loop simulation state: plant, controller view, transport."""

    __slots__ = ("idx", "model", "kernel", "policy", "activation", "x", "noise",
                 "ctrl_nu", "ctrl_xnu", "ctrl_fresh", "xhat_prev", "inputs",
                 "cost", "aoi", "lam_series", "delays", "occ_sum", "occ_n",
                 "admissions", "delivered", "mac_drops", "buffer_drops")

    def __init__(self, idx, model, kernel, policy, activation, noise):
        self.idx = idx
        self.model = model
        self.kernel = kernel
        self.policy = policy
        self.activation = activation
        self.x = kernel.zero()
        self.noise = noise
        self.ctrl_nu = activation
        self.ctrl_xnu = kernel.freeze(self.x)
        self.ctrl_fresh = True
        self.xhat_prev = None
        self.inputs = InputHistory(HISTORY_DEPTH)
        self.cost: list[float] = []
        self.aoi: list[int] = []
        self.lam_series: list[float] = []
        self.delays: list[int] = []
        self.occ_sum = 0
        self.occ_n = 0
        self.admissions = 0
        self.delivered = 0
        self.mac_drops = 0
        self.buffer_drops = 0


def _build_policy(sc, kernel, activation):
    adapter = None
    lam = sc.lam
    if sc.policy_kind in THRESHOLD_KINDS and sc.adaptive:
        adapter = ThresholdAdapter(batch_size=sc.ta_batch, window=sc.ta_window)
        lam = sc.initial_lambda
    replica = None
    if sc.policy_kind == "augm_zw_et":
        replica = EstimateReplica(kernel, activation, kernel.zero())
    return SensorPolicy(
        sc.policy_kind,
        kernel,
        lam=lam,
        rto_us=sc.rto_us,
        tahoe=TahoeConfig(sc.tahoe_cwnd, sc.tahoe_ssthresh),
        vegas=VegasConfig(sc.vegas_alpha, sc.vegas_beta, sc.vegas_cwnd),
        adapter=adapter,
        replica=replica,
    )


class Simulation:
    """One full run of a scenario under one seed.

    ``tick_hook(sim, loop, k, x_hat)``, when given, is invoked after each
    loop's control computation; tests use it to watch internal agreement.
    """

    def __init__(self, scenario, seed: int, trace: bool = False, tick_hook=None):
        self.sc = scenario
        self.seed = seed
        self.tick_hook = tick_hook
        self.trace: list[tuple] | None = [] if trace else None
        self.now = 0
        self._heap: list[tuple] = []
        self._seq = 0
        self.steps = scenario.steps
        self.end_time = scenario.steps * TICK_US
        self.failed = False
        self.fail_reason = ""

        self.data_airtime = scenario.data_airtime_us
        self.ack_airtime = scenario.ack_airtime_us
        self.p_loss = scenario.p_loss
        self.polling = scenario.mac_mode == "polling"

        model_cache: dict = {}

        def model_for(params):
            key = tuple(np.asarray(p, dtype=float).tobytes() for p in params)
            if key not in model_cache:
                model_cache[key] = LoopModel.design(*params)
            return model_cache[key]

        n = scenario.n_loops
        self.loops: list[LoopRuntime] = []
        self.nodes: list[Node] = []
        for i in range(n):
            model = model_for(scenario.loop_params(i))
            kernel = make_kernel(model)
            activation = scenario.activation.get(i, 0)
            noise = kernel.noise_series(noise_stream(seed, i), scenario.steps)
            policy = _build_policy(scenario, kernel, activation)
            self.loops.append(LoopRuntime(i, model, kernel, policy, activation, noise))
            self.nodes.append(Node(2 * i, f"s{i}", scenario.buffer_frames,
                                   node_stream(seed, 2 * i)))
            self.nodes.append(Node(2 * i + 1, f"r{i}", scenario.buffer_frames,
                                   node_stream(seed, 2 * i + 1)))

        self.active: list[Transmission] = []
        self.collisions = 0
        self.csma_failures = 0
        self.ack_admissions = 0
        self.ack_delivered = 0
        self.ack_mac_drops = 0
        self.ack_buffer_drops = 0

        for loop in self.loops:
            self._push(loop.activation * TICK_US, PRIO_TICK, EV_SAMPLE_TICK,
                       loop.idx, loop.activation)
        if self.polling:
            self._push(0, PRIO_NET, EV_POLL_GRANT, 0, 0)

    # -- event machinery ---------------------------------------------------

    def _push(self, time, prio, kind, a, b):
        heapq.heappush(self._heap, (time, prio, self._seq, kind, a, b))
        self._seq += 1

    def _record(self, time, label, kind):
        if self.trace is not None:
            self.trace.append((time, label, KIND_NAMES[kind]))

    def run(self):
        heap = self._heap
        try:
            while heap:
                time, prio, _, kind, a, b = heapq.heappop(heap)
                if time > self.end_time:
                    break
                self.now = time
                if kind == EV_SAMPLE_TICK:
                    self._on_tick(a, b)
                elif kind == EV_MAC_ATTEMPT:
                    self._on_mac_attempt(a)
                elif kind == EV_FRAME_END:
                    self._on_frame_end(a)
                elif kind == EV_DELIVERY:
                    self._on_delivery(a)
                elif kind == EV_ACK_DELIVERY:
                    self._on_ack_delivery(a)
                elif kind == EV_TL_TIMEOUT:
                    self._on_timeout(a, b)
                elif kind == EV_POLL_GRANT:
                    self._on_poll_grant(a)
                elif kind == EV_POLL_END:
                    self._on_poll_end(a, b)
        except InsufficientHistoryError as exc:
            self.failed = True
            self.fail_reason = str(exc)
        return self

    # -- sampling tick: transport decision, control computation, plant step --

    def _on_tick(self, loop_idx: int, k: int):
        loop = self.loops[loop_idx]
        self._record(self.now, f"loop{loop_idx}", EV_SAMPLE_TICK)
        kernel = loop.kernel
        policy = loop.policy
        x = loop.x

        if policy.decide_admission(x, k, self.now):
            frozen = kernel.freeze(x)
            policy.register_admit(k, frozen, self.now)
            loop.admissions += 1
            frame = Frame(False, loop_idx, k, self.data_airtime,
                          payload=frozen, admit_time=self.now)
            self._enqueue(self.nodes[2 * loop_idx], frame)
            self._push(self.now + policy.rto_us, PRIO_NET, EV_TL_TIMEOUT, loop_idx, k)

        delta = k - loop.ctrl_nu
        if delta > HISTORY_DEPTH:
            raise InsufficientHistoryError(
                f"loop {loop_idx} staleness {delta} steps at step {k}"
            )
        if loop.ctrl_fresh:
            x_hat = loop.ctrl_xnu
            for j in range(loop.ctrl_nu, k):
                x_hat = kernel.advance(x_hat, loop.inputs.get(j))
            loop.ctrl_fresh = False
        else:
            x_hat = kernel.advance(loop.xhat_prev, loop.inputs.get(k - 1))
        u = kernel.feedback(x_hat)
        loop.inputs.push(k, u)
        loop.xhat_prev = x_hat

        loop.cost.append(kernel.cost(x, u))
        loop.aoi.append(delta)
        loop.lam_series.append(policy.lam if policy.lam is not None else float("nan"))
        loop.occ_sum += len(self.nodes[2 * loop_idx].buffer)
        loop.occ_n += 1

        if self.tick_hook is not None:
            self.tick_hook(self, loop, k, x_hat)

        if k < self.steps:
            loop.x = kernel.step(x, u, loop.noise[k])
            self._push(self.now + TICK_US, PRIO_TICK, EV_SAMPLE_TICK, loop_idx, k + 1)

    # -- MAC and medium ------------------------------------------------------

    def _enqueue(self, node: Node, frame: Frame) -> bool:
        if len(node.buffer) >= node.cap:
            if frame.is_ack:
                self.ack_buffer_drops += 1
            else:
                self.loops[frame.loop_id].buffer_drops += 1
            return False
        node.buffer.append(frame)
        if not self.polling and not node.busy and not node.pending:
            self._begin_attempt(node, reset=True)
        return True

    def _begin_attempt(self, node: Node, reset: bool):
        if reset:
            node.be = self.sc.be_min
        node.nb = 0
        node.pending = True
        delay = node.rng.randrange(1 << node.be) * self.sc.backoff_us
        self._push(self.now + delay, PRIO_NET, EV_MAC_ATTEMPT, node.id, 0)

    def _on_mac_attempt(self, node_id: int):
        node = self.nodes[node_id]
        self._record(self.now, node.label, EV_MAC_ATTEMPT)
        node.pending = False
        if node.busy or not node.buffer:
            return
        now = self.now
        busy = any(t.start < now < t.end for t in self.active)
        if busy:
            node.nb += 1
            node.be = min(node.be + 1, self.sc.be_max)
            if node.nb > self.sc.max_csma_backoffs:
                # channel-access failure burns one frame retry, then re-enters
                # contention; the frame is only dropped once retries exhaust
                self.csma_failures += 1
                frame = node.buffer[0]
                frame.retries += 1
                if frame.retries > self.sc.max_frame_retries:
                    self._drop_head(node)
                else:
                    self._begin_attempt(node, reset=False)
            else:
                node.pending = True
                delay = node.rng.randrange(1 << node.be) * self.sc.backoff_us
                self._push(now + delay, PRIO_NET, EV_MAC_ATTEMPT, node.id, 0)
            return
        frame = node.buffer[0]
        tx = Transmission(node, frame, now, now + frame.airtime)
        for other in self.active:
            if other.end > now:
                other.collided = True
                tx.collided = True
        self.active.append(tx)
        node.busy = True
        self._push(tx.end, PRIO_NET, EV_FRAME_END, tx, 0)

    def _drop_head(self, node: Node):
        frame = node.buffer.popleft()
        if frame.is_ack:
            self.ack_mac_drops += 1
        else:
            self.loops[frame.loop_id].mac_drops += 1
        if node.buffer:
            self._begin_attempt(node, reset=True)

    def _on_frame_end(self, tx: Transmission):
        node = tx.node
        self._record(self.now, node.label, EV_FRAME_END)
        self.active.remove(tx)
        node.busy = False
        if tx.collided:
            self.collisions += 1
        lost = tx.collided or node.rng.random() < self.p_loss
        frame = tx.frame
        if not lost:
            popped = node.buffer.popleft()
            assert popped is frame
            kind = EV_ACK_DELIVERY if frame.is_ack else EV_DELIVERY
            self._push(self.now, PRIO_NET, kind, frame, 0)
            if node.buffer:
                self._begin_attempt(node, reset=True)
            return
        frame.retries += 1
        if frame.retries > self.sc.max_frame_retries:
            self._drop_head(node)
        else:
            node.be = min(node.be + 1, self.sc.be_max)
            self._begin_attempt(node, reset=False)

    # -- polling access ------------------------------------------------------

    def _on_poll_grant(self, pos: int):
        node = self.nodes[pos % len(self.nodes)]
        self._record(self.now, node.label, EV_POLL_GRANT)
        nxt = (pos + 1) % len(self.nodes)
        if not node.buffer:
            self._push(self.now + self.sc.t_poll_us, PRIO_NET, EV_POLL_GRANT, nxt, 0)
            return
        airtime = node.buffer[0].airtime
        self._push(self.now + self.sc.t_poll_us + airtime, PRIO_NET,
                   EV_POLL_END, node.id, nxt)

    def _on_poll_end(self, node_id: int, nxt: int):
        node = self.nodes[node_id]
        self._record(self.now, node.label, EV_POLL_END)
        frame = node.buffer[0]
        lost = node.rng.random() < self.p_loss
        if not lost:
            node.buffer.popleft()
            kind = EV_ACK_DELIVERY if frame.is_ack else EV_DELIVERY
            self._push(self.now, PRIO_NET, kind, frame, 0)
        else:
            frame.retries += 1
            if frame.retries > self.sc.max_frame_retries:
                node.buffer.popleft()
                if frame.is_ack:
                    self.ack_mac_drops += 1
                else:
                    self.loops[frame.loop_id].mac_drops += 1
        self._push(self.now, PRIO_NET, EV_POLL_GRANT, nxt, 0)

    # -- frame arrivals ------------------------------------------------------

    def _on_delivery(self, frame: Frame):
        loop = self.loops[frame.loop_id]
        receiver = self.nodes[2 * frame.loop_id + 1]
        self._record(self.now, receiver.label, EV_DELIVERY)
        loop.delivered += 1
        loop.delays.append(self.now - frame.admit_time)
        # the update becomes usable at the next sampling tick (ties included)
        recv_step = -(-self.now // TICK_US)
        if frame.gen_step > loop.ctrl_nu:
            loop.ctrl_nu = frame.gen_step
            loop.ctrl_xnu = frame.payload
            loop.ctrl_fresh = True
        ack = Frame(True, frame.loop_id, frame.gen_step, self.ack_airtime,
                    recv_step=recv_step, admit_time=frame.admit_time)
        self.ack_admissions += 1
        self._enqueue(receiver, ack)

    def _on_ack_delivery(self, frame: Frame):
        loop = self.loops[frame.loop_id]
        sensor = self.nodes[2 * frame.loop_id]
        self._record(self.now, sensor.label, EV_ACK_DELIVERY)
        self.ack_delivered += 1
        ack = AckRecord(frame.loop_id, frame.gen_step, frame.recv_step, self.now)
        loop.policy.on_ack(ack, self.now)

    def _on_timeout(self, loop_idx: int, gen_step: int):
        loop = self.loops[loop_idx]
        self._record(self.now, f"loop{loop_idx}", EV_TL_TIMEOUT)
        loop.policy.on_timeout(gen_step, self.now)

    # -- counters --------------------------------------------------------

    def loop_counters(self, i: int) -> dict:
        loop = self.loops[i]
        pol = loop.policy
        residual = loop.admissions - loop.delivered - loop.mac_drops - loop.buffer_drops
        return {
            "admissions": loop.admissions,
            "delivered": loop.delivered,
            "mac_drops": loop.mac_drops,
            "buffer_drops": loop.buffer_drops,
            "in_network_at_end": residual,
            "timeouts": pol.timeouts,
            "acked": pol.acked,
            "late_acks": pol.late_acks,
            "stale_acks": pol.stale_acks,
            "mean_sender_occupancy": loop.occ_sum / loop.occ_n if loop.occ_n else 0.0,
        }

    def global_counters(self) -> dict:
        return {
            "collisions": self.collisions,
            "csma_failures": self.csma_failures,
            "ack_admissions": self.ack_admissions,
            "ack_delivered": self.ack_delivered,
            "ack_mac_drops": self.ack_mac_drops,
            "ack_buffer_drops": self.ack_buffer_drops,
        }
