"""Scenario configuration, experiment execution and result emission.

A scenario file (YAML, versioned) fully determines a run up to the seed.
Runs are pure functions of (scenario, seed); multi-seed batches may fan out
across worker processes and reduce deterministically.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from .control import lqg_average
from .netsim import Simulation, TICK_US
from .transport import POLICY_KINDS, THRESHOLD_KINDS

SCENARIO_VERSION = 1

SUMMARY_COLUMNS = [
    "scenario", "policy", "mac", "n_loops", "lambda", "adaptive", "loop",
    "n_runs", "n_failed", "median", "q1", "q3", "min", "max",
]


class ScenarioError(ValueError):
    """Configuration problem in a scenario file or derived scenario."""


@dataclass
class Scenario:
    """Everything one run needs, minus the seed."""

    name: str = "scenario"
    steps: int = 6000
    burn_in: int = 2000
    n_loops: int = 1
    A: object = 1.2
    B: object = 1.0
    W: object = 1.0
    Q: object = 1.0
    R: object = 1.0

    policy_kind: str = "udp"
    lam: float | None = None
    adaptive: bool = False
    initial_lambda: float = 4.0
    ta_batch: int = 10
    ta_window: int = 100
    rto_us: int = 100_000
    tahoe_cwnd: float = 1.0
    tahoe_ssthresh: float = 64.0
    vegas_alpha: float = 1.0
    vegas_beta: float = 3.0
    vegas_cwnd: float = 2.0

    mac_mode: str = "csma"
    buffer_frames: int = 8
    be_min: int = 3
    be_max: int = 5
    max_csma_backoffs: int = 4
    max_frame_retries: int = 3
    backoff_us: int = 320
    p_loss: float = 0.02
    t_poll_us: int = 800

    rate_bps: int = 250_000
    payload_bytes: int = 20
    overhead_bytes: int = 60
    ack_bytes: int = 30

    activation: dict[int, int] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: list(range(10)))

    @property
    def data_airtime_us(self) -> int:
        bits = 8 * (self.payload_bytes + self.overhead_bytes)
        return bits * 1_000_000 // self.rate_bps

    @property
    def ack_airtime_us(self) -> int:
        return 8 * self.ack_bytes * 1_000_000 // self.rate_bps

    def loop_params(self, i: int):
        return (self.A, self.B, self.W, self.Q, self.R)

    def validate(self) -> "Scenario":
        if self.policy_kind not in POLICY_KINDS:
            raise ScenarioError(f"unknown policy kind {self.policy_kind!r}")
        if self.mac_mode not in ("csma", "polling"):
            raise ScenarioError(f"unknown MAC mode {self.mac_mode!r}")
        if self.n_loops < 1:
            raise ScenarioError("need at least one loop")
        if self.steps < 1:
            raise ScenarioError("need at least one step")
        if self.burn_in >= self.steps:
            raise ScenarioError("burn-in must be shorter than the run")
        if self.policy_kind in THRESHOLD_KINDS:
            if self.adaptive:
                if self.initial_lambda <= 0:
                    raise ScenarioError("initial threshold must be positive")
            elif self.lam is None or self.lam <= 0:
                raise ScenarioError(
                    f"policy {self.policy_kind!r} needs a positive lambda"
                )
        elif self.adaptive:
            raise ScenarioError("threshold adaptation needs a threshold policy")
        for loop_id, step in self.activation.items():
            if not 0 <= loop_id < self.n_loops:
                raise ScenarioError(f"activation for unknown loop {loop_id}")
            if not 0 <= step < self.steps:
                raise ScenarioError(f"activation step {step} outside the run")
        if not (0.0 <= self.p_loss < 1.0):
            raise ScenarioError("loss probability must be in [0, 1)")
        return self


_SECTION_KEYS = {
    "loops": {"count", "A", "B", "W", "Q", "R"},
    "policy": {"kind", "lambda", "adaptive", "initial_lambda", "ta_batch",
               "ta_window", "rto_us", "tahoe_cwnd", "tahoe_ssthresh",
               "vegas_alpha", "vegas_beta", "vegas_cwnd"},
    "mac": {"mode", "buffer_frames", "be_min", "be_max", "max_csma_backoffs",
            "max_frame_retries", "backoff_us", "p_loss", "t_poll_us"},
    "phy": {"rate_bps", "payload_bytes", "overhead_bytes", "ack_bytes"},
}


def scenario_from_dict(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a mapping")
    version = raw.get("version")
    if version != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported scenario version {version!r}")
    known_top = {"version", "name", "steps", "burn_in", "loops", "policy",
                 "mac", "phy", "activation", "seeds"}
    unknown = set(raw) - known_top
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    for section, allowed in _SECTION_KEYS.items():
        extra = set(raw.get(section, {}) or {}) - allowed
        if extra:
            raise ScenarioError(f"unknown keys in {section!r}: {sorted(extra)}")

    sc = Scenario()
    loops = raw.get("loops", {}) or {}
    policy = raw.get("policy", {}) or {}
    mac = raw.get("mac", {}) or {}
    phy = raw.get("phy", {}) or {}

    activation: dict[int, int] = {}
    for entry in raw.get("activation", []) or []:
        try:
            activation[int(entry["loop"])] = int(entry["step"])
        except (KeyError, TypeError) as exc:
            raise ScenarioError("activation entries need 'loop' and 'step'") from exc

    sc = replace(
        sc,
        name=str(raw.get("name", sc.name)),
        steps=int(raw.get("steps", sc.steps)),
        burn_in=int(raw.get("burn_in", sc.burn_in)),
        n_loops=int(loops.get("count", sc.n_loops)),
        A=loops.get("A", sc.A),
        B=loops.get("B", sc.B),
        W=loops.get("W", sc.W),
        Q=loops.get("Q", sc.Q),
        R=loops.get("R", sc.R),
        policy_kind=str(policy.get("kind", sc.policy_kind)),
        lam=None if policy.get("lambda") is None else float(policy["lambda"]),
        adaptive=bool(policy.get("adaptive", sc.adaptive)),
        initial_lambda=float(policy.get("initial_lambda", sc.initial_lambda)),
        ta_batch=int(policy.get("ta_batch", sc.ta_batch)),
        ta_window=int(policy.get("ta_window", sc.ta_window)),
        rto_us=int(policy.get("rto_us", sc.rto_us)),
        tahoe_cwnd=float(policy.get("tahoe_cwnd", sc.tahoe_cwnd)),
        tahoe_ssthresh=float(policy.get("tahoe_ssthresh", sc.tahoe_ssthresh)),
        vegas_alpha=float(policy.get("vegas_alpha", sc.vegas_alpha)),
        vegas_beta=float(policy.get("vegas_beta", sc.vegas_beta)),
        vegas_cwnd=float(policy.get("vegas_cwnd", sc.vegas_cwnd)),
        mac_mode=str(mac.get("mode", sc.mac_mode)),
        buffer_frames=int(mac.get("buffer_frames", sc.buffer_frames)),
        be_min=int(mac.get("be_min", sc.be_min)),
        be_max=int(mac.get("be_max", sc.be_max)),
        max_csma_backoffs=int(mac.get("max_csma_backoffs", sc.max_csma_backoffs)),
        max_frame_retries=int(mac.get("max_frame_retries", sc.max_frame_retries)),
        backoff_us=int(mac.get("backoff_us", sc.backoff_us)),
        p_loss=float(mac.get("p_loss", sc.p_loss)),
        t_poll_us=int(mac.get("t_poll_us", sc.t_poll_us)),
        rate_bps=int(phy.get("rate_bps", sc.rate_bps)),
        payload_bytes=int(phy.get("payload_bytes", sc.payload_bytes)),
        overhead_bytes=int(phy.get("overhead_bytes", sc.overhead_bytes)),
        ack_bytes=int(phy.get("ack_bytes", sc.ack_bytes)),
        activation=activation,
        seeds=[int(s) for s in raw.get("seeds", sc.seeds)],
    )
    return sc.validate()


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    return scenario_from_dict(raw)


@dataclass
class RunResult:
    """All metrics of one (scenario, seed) run."""

    scenario: str
    seed: int
    failed: bool = False
    fail_reason: str = ""
    lqg: list = field(default_factory=list)
    cost_series: list = field(default_factory=list)
    aoi_series: list = field(default_factory=list)
    lambda_series: list = field(default_factory=list)
    rtt_samples: list = field(default_factory=list)
    delays: list = field(default_factory=list)
    loop_counters: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    trace: list | None = None


def run_experiment(scenario: Scenario, seed: int, trace: bool = False,
                   tick_hook=None) -> RunResult:
    """Simulate one seed and compute all per-loop metrics.

    A loop whose estimate outruns the input history marks the whole run
    failed; the partial diagnostics are preserved.
    """
    scenario.validate()
    sim = Simulation(scenario, seed, trace=trace, tick_hook=tick_hook).run()
    result = RunResult(scenario=scenario.name, seed=seed,
                       failed=sim.failed, fail_reason=sim.fail_reason)
    for loop in sim.loops:
        # series are indexed by absolute step; pre-activation entries are padding
        pad = loop.activation
        result.cost_series.append([0.0] * pad + loop.cost)
        result.aoi_series.append([0] * pad + loop.aoi)
        result.lambda_series.append([math.nan] * pad + loop.lam_series)
        result.rtt_samples.append(loop.policy.rtt_samples)
        result.delays.append(loop.delays)
        result.loop_counters.append(sim.loop_counters(loop.idx))
        if sim.failed:
            result.lqg.append(None)
        else:
            # late-activated loops average over their active part of the window
            start = max(scenario.burn_in, loop.activation)
            result.lqg.append(lqg_average(result.cost_series[-1], burn_in=start,
                                          horizon=scenario.steps))
    result.counters = sim.global_counters()
    result.trace = sim.trace if trace else None
    return result


def _run_one(args) -> RunResult:
    scenario, seed = args
    return run_experiment(scenario, seed)


def run_many(scenario: Scenario, seeds=None, workers: int | None = None) -> list[RunResult]:
    """Run one scenario under several seeds, optionally across processes."""
    seeds = list(scenario.seeds if seeds is None else seeds)
    if workers is None or workers <= 1 or len(seeds) <= 1:
        return [run_experiment(scenario, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, [(scenario, s) for s in seeds]))


def _stats(values) -> dict:
    arr = np.asarray(sorted(values), dtype=float)
    return {
        "median": float(np.percentile(arr, 50)),
        "q1": float(np.percentile(arr, 25)),
        "q3": float(np.percentile(arr, 75)),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


def aggregate(results: list[RunResult], label: dict | None = None) -> list[dict]:
    """Boxplot-ready rows: per-loop and pooled quartiles of the LQG averages.

    Failed runs contribute to the failure count and are excluded from the
    quantiles.
    """
    if not results:
        raise ScenarioError("nothing to aggregate")
    label = label or {}
    completed = [r for r in results if not r.failed]
    n_failed = len(results) - len(completed)
    rows = []
    n_loops = len(results[0].lqg) if results[0].lqg else 0
    if completed:
        n_loops = len(completed[0].lqg)
    base = {
        **label,
        "n_runs": len(results),
        "n_failed": n_failed,
    }
    nan_stats = {"median": math.nan, "q1": math.nan, "q3": math.nan,
                 "min": math.nan, "max": math.nan}
    for i in range(n_loops):
        values = [r.lqg[i] for r in completed]
        rows.append({**base, "loop": str(i), **(_stats(values) if values else nan_stats)})
    pooled = [v for r in completed for v in r.lqg]
    rows.append({**base, "loop": "all", **(_stats(pooled) if pooled else nan_stats)})
    return rows


def _label(scenario: Scenario) -> dict:
    if scenario.policy_kind in THRESHOLD_KINDS:
        lam = "ta" if scenario.adaptive else f"{scenario.lam:g}"
    else:
        lam = ""
    return {
        "scenario": scenario.name,
        "policy": scenario.policy_kind,
        "mac": scenario.mac_mode,
        "n_loops": scenario.n_loops,
        "lambda": lam,
        "adaptive": "yes" if scenario.adaptive else "no",
    }


def run_and_aggregate(scenario: Scenario, seeds=None, workers=None):
    results = run_many(scenario, seeds, workers)
    return results, aggregate(results, _label(scenario))


def threshold_sweep(base: Scenario, lambdas, seeds=None, include_ta: bool = True,
                    workers: int | None = None):
    """One aggregate per fixed threshold, plus one for the adaptive mode."""
    if base.policy_kind not in ("zw_et", "augm_zw_et"):
        raise ScenarioError("threshold sweep applies to zw_et or augm_zw_et")
    rows = []
    all_results = {}
    for lam in lambdas:
        sc = replace(base, lam=float(lam), adaptive=False,
                     name=f"{base.name}-lam{lam:g}").validate()
        results, agg = run_and_aggregate(sc, seeds, workers)
        all_results[f"{lam:g}"] = results
        rows.extend(agg)
    if include_ta:
        sc = replace(base, adaptive=True, name=f"{base.name}-ta").validate()
        results, agg = run_and_aggregate(sc, seeds, workers)
        all_results["ta"] = results
        rows.extend(agg)
    return rows, all_results


def loop_count_sweep(base: Scenario, counts, seeds=None, workers=None):
    rows = []
    all_results = {}
    for n in counts:
        sc = replace(base, n_loops=int(n), name=f"{base.name}-n{n}").validate()
        results, agg = run_and_aggregate(sc, seeds, workers)
        all_results[int(n)] = results
        rows.extend(agg)
    return rows, all_results


def compare_policies(base: Scenario, policies, seeds=None, workers=None):
    """Run a set of policies on an otherwise shared scenario."""
    rows = []
    all_results = {}
    for kind in policies:
        sc = replace(base, policy_kind=kind, name=f"{base.name}-{kind}")
        if kind in THRESHOLD_KINDS and not sc.adaptive and sc.lam is None:
            sc = replace(sc, lam=3.0)
        if kind not in THRESHOLD_KINDS:
            sc = replace(sc, adaptive=False)
        sc.validate()
        results, agg = run_and_aggregate(sc, seeds, workers)
        all_results[kind] = results
        rows.extend(agg)
    return rows, all_results


# -- emission ---------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.10g}"
    return str(value)


def write_summary_csv(rows: list[dict], path) -> None:
    """Fixed-order CSV; the header is part of the output contract."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(col, "")) for col in SUMMARY_COLUMNS])


def write_series_ndjson(results: list[RunResult], path) -> None:
    """Newline-delimited records of every per-run series and counter."""
    with open(path, "w") as fh:
        for r in results:
            if r.failed:
                fh.write(json.dumps({"record": "failed", "scenario": r.scenario,
                                     "seed": r.seed, "reason": r.fail_reason}) + "\n")
            meta = {"scenario": r.scenario, "seed": r.seed}
            for i in range(len(r.cost_series)):
                for kind, series in (("cost", r.cost_series[i]),
                                     ("aoi", r.aoi_series[i]),
                                     ("lambda", r.lambda_series[i]),
                                     ("rtt_us", r.rtt_samples[i]),
                                     ("delay_us", r.delays[i])):
                    fh.write(json.dumps({"record": "series", **meta, "loop": i,
                                         "kind": kind, "values": series}) + "\n")
                fh.write(json.dumps({"record": "loop_counters", **meta, "loop": i,
                                     **r.loop_counters[i]}) + "\n")
            fh.write(json.dumps({"record": "counters", **meta, **r.counters,
                                 "lqg": r.lqg}) + "\n")


def write_trace(trace: list[tuple], path) -> None:
    with open(path, "w") as fh:
        for time, node, kind in trace:
            fh.write(json.dumps({"time": time, "node": node, "kind": kind}) + "\n")
