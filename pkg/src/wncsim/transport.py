"""Sensor-side transport layer.

One admission decision per sampling step, per policy:

==============  =====================================================
udp             admit everything
tcp_tahoe       admit while outstanding < cwnd; loss-driven window
tcp_vegas       admit while outstanding < cwnd; delay-driven window
zw              stop-and-wait: admit only with nothing outstanding
et              admit when |x| >= threshold, congestion-agnostic
zw_et           |x| >= threshold and nothing outstanding
augm_zw_et      |x - xbar| >= threshold and nothing outstanding,
                where xbar replays the controller estimate from ACKs
==============  =====================================================

Discarded updates are gone for good; there are no retransmissions, so the
set of generation steps a sensor hands to the network never repeats.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

from .adaptation import ThresholdAdapter
from .control import HISTORY_DEPTH, InputHistory, InsufficientHistoryError

POLICY_KINDS = ("udp", "tcp_tahoe", "tcp_vegas", "zw", "et", "zw_et", "augm_zw_et")
TCP_KINDS = frozenset({"tcp_tahoe", "tcp_vegas"})
SINGLE_OUTSTANDING_KINDS = frozenset({"zw", "zw_et", "augm_zw_et"})
THRESHOLD_KINDS = frozenset({"et", "zw_et", "augm_zw_et"})


@dataclass
class StatusUpdate:
    """One sampled measurement on its way through the network."""

    loop_id: int
    gen_step: int
    payload: object
    admit_time: int
    recv_time: int | None = None


@dataclass
class AckRecord:
    """End-to-end acknowledgment: which update, and when the receiver got it."""

    loop_id: int
    gen_step: int
    recv_step: int
    ack_arrival_time: int | None = None


@dataclass
class TahoeConfig:
    initial_cwnd: float = 1.0
    initial_ssthresh: float = 64.0


@dataclass
class VegasConfig:
    alpha: float = 1.0
    beta: float = 3.0
    initial_cwnd: float = 2.0


class EstimateReplica:
    """Sensor-side replay of the controller's estimation process.

    ACKs carry (generation step, reception step) pairs, so the sensor can
    reconstruct which update the controller was extrapolating from at every
    past step, rebuild the controller's inputs, and hold a current estimate
    of the controller's estimate.  A newly arrived ACK rewrites the replayed
    inputs from its reception step onward, refining the history.
    """

    def __init__(self, kernel, start_step: int, x0, depth: int = HISTORY_DEPTH):
        self.kernel = kernel
        self.start = start_step
        self.depth = depth
        self.states = {start_step: kernel.freeze(x0)}
        # acked (recv, gen) pairs sorted by recv, with prefix max of gen
        self._recvs = [start_step]
        self._gens = [start_step]
        self._maxgen = [start_step]
        self._ubar = InputHistory(depth)
        self._xbar = InputHistory(depth)
        self._ghist = InputHistory(depth)
        x0 = kernel.freeze(x0)
        self._xbar.push(start_step, x0)
        self._ubar.push(start_step, kernel.feedback(x0))
        self._ghist.push(start_step, start_step)
        self.step = start_step
        self._dirty_from: int | None = None

    def note_admitted(self, gen_step: int, x) -> None:
        """Remember an admitted sample; it may become a replay base later."""
        self.states[gen_step] = self.kernel.freeze(x)

    def add_ack(self, gen_step: int, recv_step: int) -> None:
        pos = bisect_right(self._recvs, recv_step)
        self._recvs.insert(pos, recv_step)
        self._gens.insert(pos, gen_step)
        self._maxgen.insert(pos, 0)
        for i in range(pos, len(self._maxgen)):
            prev = self._maxgen[i - 1] if i else self._gens[i]
            self._maxgen[i] = max(self._gens[i], prev)
        if self._dirty_from is None or recv_step < self._dirty_from:
            self._dirty_from = recv_step

    def known_at(self, step: int) -> int:
        """Freshest acked generation the controller had received by ``step``."""
        i = bisect_right(self._recvs, step)
        return self._maxgen[i - 1]

    def _replay_from(self, gen: int, upto: int):
        if upto - gen > self.depth:
            raise InsufficientHistoryError(
                f"replay from step {gen} to {upto} exceeds history depth {self.depth}"
            )
        x = self.states[gen]
        for t in range(gen, upto):
            x = self.kernel.advance(x, self._ubar.get(t))
        return x

    def advance_to(self, k: int) -> None:
        """Bring the replayed estimate up to step k, folding in new ACKs."""
        begin = self.step + 1
        if self._dirty_from is not None and self._dirty_from < begin:
            begin = self._dirty_from
        if begin > k:
            if k >= self.step:
                return
            raise ValueError(f"replica already advanced past step {k}")
        prev_g = self._ghist.get(begin - 1)
        x_prev = self._xbar.get(begin - 1)
        for j in range(begin, k + 1):
            g = self.known_at(j)
            if g != prev_g:
                x = self._replay_from(g, j)
            else:
                x = self.kernel.advance(x_prev, self._ubar.get(j - 1))
            self._xbar.push(j, x)
            self._ubar.push(j, self.kernel.feedback(x))
            self._ghist.push(j, g)
            prev_g, x_prev = g, x
        self.step = k
        self._dirty_from = None

    def current(self):
        return self._xbar.get(self.step)


class SensorPolicy:
    """Transport-layer state of one sensor: outstanding updates, congestion
    window, threshold, RTT log, and (for the augmented policy) the replica."""

    def __init__(
        self,
        kind: str,
        kernel,
        lam: float | None = None,
        rto_us: int = 200_000,
        tahoe: TahoeConfig | None = None,
        vegas: VegasConfig | None = None,
        adapter: ThresholdAdapter | None = None,
        replica: EstimateReplica | None = None,
    ):
        if kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {kind!r}")
        if kind in THRESHOLD_KINDS:
            if lam is None or lam <= 0:
                raise ValueError("threshold policies need a positive lambda")
        if kind == "augm_zw_et" and replica is None:
            raise ValueError("augm_zw_et needs an estimate replica")
        self.kind = kind
        self.kernel = kernel
        self.lam = lam
        self.rto_us = rto_us
        self.adapter = adapter
        self.replica = replica
        self.outstanding: dict[int, int] = {}
        self.admitted: dict[int, int] = {}
        self.rtt_samples: list[int] = []
        self.last_acked: AckRecord | None = None
        self.cwnd = 0.0
        self.ssthresh = 0.0
        if kind == "tcp_tahoe":
            cfg = tahoe or TahoeConfig()
            self.cwnd = float(cfg.initial_cwnd)
            self.ssthresh = float(cfg.initial_ssthresh)
        self.vegas_cfg = vegas or VegasConfig()
        if kind == "tcp_vegas":
            self.cwnd = float(self.vegas_cfg.initial_cwnd)
        self.vegas_base_rtt: int | None = None
        self.vegas_epoch_start: int | None = None
        self.vegas_epoch_samples: list[int] = []
        self.acked = 0
        self.late_acks = 0
        self.stale_acks = 0
        self.timeouts = 0

    @property
    def n_out(self) -> int:
        return len(self.outstanding)

    def decide_admission(self, x, k: int, now: int) -> bool:
        """Admit or discard the sample taken at step k.  Total function."""
        kind = self.kind
        if kind == "udp":
            return True
        if kind in TCP_KINDS:
            return self.n_out < self.cwnd
        if kind == "zw":
            return self.n_out == 0
        if kind == "et":
            return self.kernel.norm(x) >= self.lam
        if kind == "zw_et":
            return self.n_out == 0 and self.kernel.norm(x) >= self.lam
        # augm_zw_et: trigger on deviation from what the controller already knows
        if self.n_out != 0:
            return False
        self.replica.advance_to(k)
        return self.kernel.norm(self.kernel.diff(x, self.replica.current())) >= self.lam

    def register_admit(self, gen_step: int, x, now: int) -> None:
        assert gen_step not in self.admitted, "duplicate generation step admitted"
        self.admitted[gen_step] = now
        self.outstanding[gen_step] = now
        if self.kind in SINGLE_OUTSTANDING_KINDS:
            assert self.n_out <= 1
        if self.replica is not None:
            self.replica.note_admitted(gen_step, x)

    def on_ack(self, ack: AckRecord, now: int) -> int | None:
        """Process an end-to-end ACK; returns the RTT sample in microseconds.

        ACKs for unknown updates are counted and ignored.  ACKs arriving after
        the local timeout still contribute RTT statistics and still refresh
        the replica and freshest-acked bookkeeping, but leave the congestion
        window and outstanding set untouched.
        """
        admit_time = self.admitted.get(ack.gen_step)
        if admit_time is None:
            self.stale_acks += 1
            return None
        rtt = now - admit_time
        self.rtt_samples.append(rtt)
        if self.adapter is not None:
            # adaptation statistics run in milliseconds: the margin's 3/4
            # exponent is sublinear, so in microseconds it would shrink to a
            # few percent of the batch noise and the threshold would drift up
            self.lam = self.adapter.observe(rtt / 1000.0, self.lam)
        if self.last_acked is None or ack.gen_step > self.last_acked.gen_step:
            self.last_acked = ack
        if self.replica is not None:
            self.replica.add_ack(ack.gen_step, ack.recv_step)
        if ack.gen_step in self.outstanding:
            del self.outstanding[ack.gen_step]
            self.acked += 1
            if self.kind == "tcp_tahoe":
                self.tahoe_window("ack")
            elif self.kind == "tcp_vegas":
                self._vegas_on_ack(rtt, now)
        else:
            self.late_acks += 1
        return rtt

    def on_timeout(self, gen_step: int, now: int) -> bool:
        """Give up on an unacknowledged update.  No retransmission, ever."""
        if gen_step not in self.outstanding:
            return False
        del self.outstanding[gen_step]
        self.timeouts += 1
        if self.kind == "tcp_tahoe":
            self.tahoe_window("loss")
        return True

    def tahoe_window(self, event: str) -> float:
        """Slow start / congestion avoidance / multiplicative loss backoff."""
        if event == "ack":
            if self.cwnd < self.ssthresh:
                self.cwnd += 1.0
            else:
                self.cwnd += 1.0 / self.cwnd
        elif event == "loss":
            self.ssthresh = max(self.cwnd // 2, 2.0)
            self.cwnd = 1.0
        else:
            raise ValueError(f"unknown window event {event!r}")
        return self.cwnd

    def vegas_window(self, rtt: float, base_rtt: float) -> float:
        """Delay-based adjustment: diff = cwnd * (rtt - base) / rtt packets."""
        diff = self.cwnd * (rtt - base_rtt) / rtt
        if diff < self.vegas_cfg.alpha:
            self.cwnd += 1.0
        elif diff > self.vegas_cfg.beta:
            self.cwnd = max(self.cwnd - 1.0, 1.0)
        return self.cwnd

    def _vegas_on_ack(self, rtt: int, now: int) -> None:
        # one evaluation per RTT epoch, on the epoch's mean sample
        if self.vegas_base_rtt is None or rtt < self.vegas_base_rtt:
            self.vegas_base_rtt = rtt
        if self.vegas_epoch_start is None:
            self.vegas_epoch_start = now
        self.vegas_epoch_samples.append(rtt)
        if now - self.vegas_epoch_start >= self.vegas_base_rtt:
            mean_rtt = sum(self.vegas_epoch_samples) / len(self.vegas_epoch_samples)
            self.vegas_window(mean_rtt, self.vegas_base_rtt)
            self.vegas_epoch_start = now
            self.vegas_epoch_samples = []

    def augment_estimate(self, k: int):
        """Replayed controller estimate at step k (augmented policies only)."""
        if self.replica is None:
            raise ValueError("policy has no estimate replica")
        self.replica.advance_to(k)
        return self.replica.current()
