import pytest
from hypothesis import given, settings, strategies as st

from wncsim.adaptation import ThresholdAdapter, f_margin


class TestMargin:
    def test_power_of_two(self):
        assert f_margin(16.0) == pytest.approx(4.0, abs=1e-12)

    def test_zero(self):
        assert f_margin(0.0) == 0.0

    def test_unit(self):
        assert f_margin(1.0) == pytest.approx(0.5, abs=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            f_margin(-1.0)

    @given(st.floats(0.0, 1e6), st.floats(0.0, 1e6))
    @settings(max_examples=100, deadline=None)
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert f_margin(lo) <= f_margin(hi)


def seeded_adapter(mean, stddev, batch_size=10, window=100):
    ta = ThresholdAdapter(batch_size=batch_size, window=window)
    ta.mean = mean
    ta.stddev = stddev
    return ta


class TestThresholdAdapter:
    def test_congested_batch_raises_threshold(self):
        # f(16) = 4, so a batch mean of 120 against a baseline of 100 + 4 rises
        ta = seeded_adapter(100.0, 16.0)
        lam = 5.0
        for _ in range(10):
            lam = ta.observe(120.0, lam)
        assert lam == pytest.approx(6.0, abs=1e-12)

    def test_boundary_batch_decays_threshold(self):
        # the comparison is strictly greater-than
        ta = seeded_adapter(100.0, 16.0)
        lam = 5.0
        for _ in range(10):
            lam = ta.observe(104.0, lam)
        assert lam == pytest.approx(5.0 / 1.1, abs=1e-12)

    def test_decrease_factor(self):
        ta = seeded_adapter(100.0, 0.0)
        lam = 4.4
        for _ in range(10):
            lam = ta.observe(50.0, lam)
        assert lam == pytest.approx(4.0, rel=1e-12)

    def test_no_change_mid_batch(self):
        ta = seeded_adapter(100.0, 16.0)
        lam = 5.0
        for _ in range(9):
            lam = ta.observe(500.0, lam)
        assert lam == 5.0
        assert len(ta.tmp) == 9

    def test_first_batch_only_seeds_baseline(self):
        ta = ThresholdAdapter(batch_size=5, window=10)
        lam = 7.0
        for _ in range(5):
            lam = ta.observe(42.0, lam)
        assert lam == 7.0
        assert ta.mean == pytest.approx(42.0)
        assert ta.stddev == pytest.approx(0.0)
        assert ta.tmp == []

    def test_rolling_stats_use_window_tail(self):
        ta = ThresholdAdapter(batch_size=4, window=4)
        lam = 5.0
        for sample in (10.0, 10.0, 10.0, 10.0):
            lam = ta.observe(sample, lam)
        for sample in (20.0, 30.0, 20.0, 30.0):
            lam = ta.observe(sample, lam)
        # baseline now reflects only the last four samples
        assert ta.mean == pytest.approx(25.0)
        assert ta.stddev == pytest.approx(5.0)
        assert len(ta.history) == 8  # history itself is never truncated

    def test_batch_appended_after_comparison(self):
        # the batch that triggers the decision joins the baseline afterwards
        ta = seeded_adapter(100.0, 16.0, batch_size=3, window=3)
        lam = 5.0
        for _ in range(3):
            lam = ta.observe(200.0, lam)
        assert lam == pytest.approx(6.0)       # compared against the old baseline
        assert ta.mean == pytest.approx(200.0)  # then absorbed into the stats

    @given(st.lists(st.floats(1.0, 1e5), min_size=0, max_size=120))
    @settings(max_examples=60, deadline=None)
    def test_deterministic_and_valid_moves(self, samples):
        lam_a = lam_b = 9.0
        ta_a = ThresholdAdapter(batch_size=5, window=20)
        ta_b = ThresholdAdapter(batch_size=5, window=20)
        trajectory_a, trajectory_b = [], []
        for s in samples:
            prev = lam_a
            lam_a = ta_a.observe(s, lam_a)
            lam_b = ta_b.observe(s, lam_b)
            trajectory_a.append(lam_a)
            trajectory_b.append(lam_b)
            assert lam_a > 0
            assert lam_a in (prev, prev + 1.0, prev / 1.1)
        assert trajectory_a == trajectory_b

    @given(st.floats(0.1, 1e4), st.floats(0.0, 1e4))
    @settings(max_examples=100, deadline=None)
    def test_raise_iff_spread_small_enough(self, gap, stddev):
        # for a batch mean above the baseline by `gap`, the raise branch fires
        # exactly when stddev < (gap / 0.5)^(4/3)
        mean = 1000.0
        ta = seeded_adapter(mean, stddev, batch_size=1)
        lam = ta.observe(mean + gap, 5.0)
        threshold = (gap / 0.5) ** (4.0 / 3.0)
        if stddev < threshold and gap != 0.5 * stddev**0.75:
            assert lam == 6.0
        elif stddev > threshold:
            assert lam == pytest.approx(5.0 / 1.1)
