"""Distributed admission-threshold adaptation driven by batched RTT statistics.

Each sensor watches the round-trip times of its own acknowledged updates.
When a batch's mean RTT rises clearly above the sensor's rolling baseline the
threshold is raised (send less); otherwise it decays back down.  The margin
scales with the RTT spread, so sensors on noisier links tolerate more drift
before backing off.

The math is unit-agnostic, but the 3/4-power margin makes the unit part of
the tuning: callers feed RTTs in milliseconds, where the margin sits at a
useful fraction of typical spreads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def f_margin(stddev: float) -> float:
    """Tolerated RTT drift, 0.5 * stddev^(3/4), in the same unit as stddev."""
    if stddev < 0:
        raise ValueError("stddev must be nonnegative")
    return 0.5 * stddev**0.75


@dataclass
class ThresholdAdapter:
    """Per-sensor threshold controller.

    ``observe`` is called with every acknowledged RTT sample and the current
    threshold, and returns the (possibly adjusted) threshold.  Adjustments
    happen once per completed batch of ``batch_size`` samples: raise by 1 when
    the batch mean exceeds the rolling baseline plus :func:`f_margin`, else
    divide by 1.1.  The baseline mean/stddev are then recomputed over the last
    ``window`` samples of the accumulated history (population stddev).  The
    first completed batch only seeds the baseline; no adjustment is possible
    before any baseline exists.
    """

    batch_size: int = 10
    window: int = 100
    tmp: list[float] = field(default_factory=list)
    history: list[float] = field(default_factory=list)
    mean: float | None = None
    stddev: float | None = None

    def observe(self, rtt: float, lam: float) -> float:
        self.tmp.append(rtt)
        if len(self.tmp) < self.batch_size:
            return lam
        if self.mean is not None:
            batch_mean = float(np.mean(self.tmp))
            if batch_mean > self.mean + f_margin(self.stddev):
                lam = lam + 1.0
            else:
                lam = lam / 1.1
        self.history.extend(self.tmp)
        tail = self.history[-self.window :]
        self.mean = float(np.mean(tail))
        self.stddev = float(np.std(tail))
        self.tmp = []
        return lam
