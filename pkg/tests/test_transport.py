import numpy as np
import pytest

from wncsim.adaptation import ThresholdAdapter
from wncsim.control import InsufficientHistoryError, LoopModel, ScalarKernel
from wncsim.transport import (
    AckRecord,
    EstimateReplica,
    SensorPolicy,
    TahoeConfig,
    VegasConfig,
)


@pytest.fixture(scope="module")
def kernel():
    return ScalarKernel(LoopModel.design(1.2, 1.0, 1.0, 1.0, 1.0))


def make_policy(kernel, kind, lam=None, **kw):
    replica = None
    if kind == "augm_zw_et":
        replica = kw.pop("replica", EstimateReplica(kernel, 0, 0.0))
    return SensorPolicy(kind, kernel, lam=lam, replica=replica, **kw)


def fill_outstanding(policy, n, t=0):
    for g in range(n):
        policy.register_admit(g + 100, 0.0, t)


class TestAdmissionRules:
    def test_udp_always_admits(self, kernel):
        pol = make_policy(kernel, "udp")
        for x in (-50.0, 0.0, 0.01, 12.0):
            assert pol.decide_admission(x, 0, 0)
        pol.register_admit(0, 0.0, 0)
        assert pol.decide_admission(99.0, 1, 10_000)

    @pytest.mark.parametrize("kind", ["tcp_tahoe", "tcp_vegas"])
    @pytest.mark.parametrize("n_out,cwnd,expected", [
        (0, 1.0, True), (1, 1.0, False), (1, 2.0, True),
        (2, 2.0, False), (2, 2.5, True), (3, 3.0, False),
    ])
    def test_tcp_window_guard_is_strict(self, kernel, kind, n_out, cwnd, expected):
        pol = make_policy(kernel, kind)
        pol.cwnd = cwnd
        fill_outstanding(pol, n_out)
        assert pol.decide_admission(1.0, 0, 0) is expected

    @pytest.mark.parametrize("n_out,expected", [(0, True), (1, False)])
    def test_zero_wait(self, kernel, n_out, expected):
        pol = make_policy(kernel, "zw")
        fill_outstanding(pol, n_out)
        assert pol.decide_admission(0.0, 0, 0) is expected

    @pytest.mark.parametrize("x,lam,expected", [
        (3.0, 3.0, True),     # boundary included
        (2.99, 3.0, False),
        (-3.0, 3.0, True),    # magnitude rule
        (0.0, 0.5, False),
    ])
    def test_conventional_event_trigger(self, kernel, x, lam, expected):
        pol = make_policy(kernel, "et", lam=lam)
        assert pol.decide_admission(x, 0, 0) is expected

    def test_conventional_et_ignores_outstanding(self, kernel):
        pol = make_policy(kernel, "et", lam=3.0)
        fill_outstanding(pol, 5)
        assert pol.decide_admission(4.0, 0, 0)
        assert not pol.decide_admission(2.0, 0, 0)

    @pytest.mark.parametrize("x,n_out,expected", [
        (3.0, 0, True), (2.99, 0, False), (3.0, 1, False), (2.0, 1, False),
    ])
    def test_zero_wait_event_trigger(self, kernel, x, n_out, expected):
        pol = make_policy(kernel, "zw_et", lam=3.0)
        fill_outstanding(pol, n_out)
        assert pol.decide_admission(x, 0, 0) is expected

    def test_augmented_rule_uses_deviation_from_replica(self, kernel):
        # large state the receiver already knows about is not worth sending
        replica = EstimateReplica(kernel, 0, 4.5)
        pol = make_policy(kernel, "augm_zw_et", lam=3.0, replica=replica)
        assert pol.decide_admission(5.0, 0, 0) is False
        assert pol.decide_admission(8.0, 0, 0) is True  # |8 - 4.5| >= 3
        fill_outstanding(pol, 1)
        assert pol.decide_admission(8.0, 0, 0) is False

    def test_threshold_policy_requires_lambda(self, kernel):
        with pytest.raises(ValueError):
            SensorPolicy("zw_et", kernel)
        with pytest.raises(ValueError):
            SensorPolicy("et", kernel, lam=0.0)

    def test_unknown_kind_rejected(self, kernel):
        with pytest.raises(ValueError):
            SensorPolicy("tcp_reno", kernel)


class TestAckHandling:
    def test_rtt_sample(self, kernel):
        pol = make_policy(kernel, "zw")
        pol.register_admit(5, 0.0, 1000)
        rtt = pol.on_ack(AckRecord(0, 5, 6), 9000)
        assert rtt == 8000
        assert pol.rtt_samples == [8000]

    def test_freshest_ack_wins(self, kernel):
        pol = make_policy(kernel, "udp")
        pol.register_admit(50, 0.0, 500_000)
        pol.register_admit(60, 0.0, 600_000)
        pol.on_ack(AckRecord(0, 60, 61), 610_000)
        pol.on_ack(AckRecord(0, 50, 62), 620_000)
        assert pol.last_acked.gen_step == 60

    def test_zero_wait_unblocks(self, kernel):
        pol = make_policy(kernel, "zw")
        pol.register_admit(3, 0.0, 30_000)
        assert not pol.decide_admission(0.0, 4, 40_000)
        pol.on_ack(AckRecord(0, 3, 4), 38_000)
        assert pol.n_out == 0
        assert pol.decide_admission(0.0, 4, 40_000)

    def test_unknown_ack_counted(self, kernel):
        pol = make_policy(kernel, "zw")
        assert pol.on_ack(AckRecord(0, 77, 78), 1000) is None
        assert pol.stale_acks == 1

    def test_late_ack_statistics_only(self, kernel):
        pol = make_policy(kernel, "tcp_tahoe", tahoe=TahoeConfig(4.0, 64.0))
        pol.register_admit(2, 0.0, 20_000)
        assert pol.on_timeout(2, 120_000)
        cwnd_after_loss = pol.cwnd
        rtt = pol.on_ack(AckRecord(0, 2, 12), 125_000)
        assert rtt == 105_000
        assert pol.late_acks == 1
        assert pol.cwnd == cwnd_after_loss      # no window growth
        assert pol.last_acked.gen_step == 2     # still true receiver knowledge
        assert pol.rtt_samples == [105_000]

    def test_late_ack_feeds_adapter(self, kernel):
        ta = ThresholdAdapter(batch_size=1, window=10)
        pol = make_policy(kernel, "zw_et", lam=5.0, adapter=ta)
        pol.register_admit(0, 0.0, 0)
        pol.on_timeout(0, 100_000)
        pol.on_ack(AckRecord(0, 0, 1), 110_000)
        assert len(ta.history) == 1


class TestTimeouts:
    def test_zero_wait_unblocked(self, kernel):
        pol = make_policy(kernel, "zw")
        pol.register_admit(9, 0.0, 90_000)
        assert pol.on_timeout(9, 190_000)
        assert pol.n_out == 0

    def test_tahoe_loss_reaction(self, kernel):
        pol = make_policy(kernel, "tcp_tahoe", tahoe=TahoeConfig(8.0, 64.0))
        pol.register_admit(1, 0.0, 10_000)
        pol.on_timeout(1, 110_000)
        assert pol.ssthresh == 4.0
        assert pol.cwnd == 1.0

    def test_acked_packet_timeout_is_noop(self, kernel):
        pol = make_policy(kernel, "zw")
        pol.register_admit(4, 0.0, 40_000)
        pol.on_ack(AckRecord(0, 4, 5), 48_000)
        assert pol.on_timeout(4, 140_000) is False
        assert pol.timeouts == 0


class TestTahoeWindow:
    def test_slow_start(self, kernel):
        pol = make_policy(kernel, "tcp_tahoe", tahoe=TahoeConfig(2.0, 8.0))
        assert pol.tahoe_window("ack") == 3.0

    def test_congestion_avoidance(self, kernel):
        pol = make_policy(kernel, "tcp_tahoe", tahoe=TahoeConfig(8.0, 8.0))
        assert pol.tahoe_window("ack") == pytest.approx(8.125)

    def test_loss(self, kernel):
        pol = make_policy(kernel, "tcp_tahoe", tahoe=TahoeConfig(9.0, 64.0))
        pol.tahoe_window("loss")
        assert pol.ssthresh == 4.0
        assert pol.cwnd == 1.0

    def test_loss_floor(self, kernel):
        pol = make_policy(kernel, "tcp_tahoe", tahoe=TahoeConfig(2.0, 64.0))
        pol.tahoe_window("loss")
        assert pol.ssthresh == 2.0


class TestVegasWindow:
    def test_no_queueing_grows(self, kernel):
        pol = make_policy(kernel, "tcp_vegas")
        pol.cwnd = 4.0
        assert pol.vegas_window(8000.0, 8000.0) == 5.0

    def test_moderate_queueing_holds(self, kernel):
        # diff = 4 * (16 - 8) / 16 = 2 packets, inside [alpha, beta]
        pol = make_policy(kernel, "tcp_vegas")
        pol.cwnd = 4.0
        assert pol.vegas_window(16_000.0, 8000.0) == 4.0

    def test_heavy_queueing_shrinks(self, kernel):
        # diff = 8 * (16 - 8) / 16 = 4 > beta
        pol = make_policy(kernel, "tcp_vegas")
        pol.cwnd = 8.0
        assert pol.vegas_window(16_000.0, 8000.0) == 7.0

    def test_never_below_one(self, kernel):
        pol = make_policy(kernel, "tcp_vegas")
        pol.cwnd = 4.0
        for _ in range(20):
            pol.vegas_window(1e9, 1.0)
        assert pol.cwnd >= 1.0

    def test_epoch_evaluation(self, kernel):
        pol = make_policy(kernel, "tcp_vegas", vegas=VegasConfig(initial_cwnd=4.0))
        pol.register_admit(0, 0.0, 0)
        pol.register_admit(1, 0.0, 1000)
        pol.register_admit(2, 0.0, 2000)
        pol.on_ack(AckRecord(0, 0, 1), 6000)       # opens the epoch, base 6 ms
        assert pol.cwnd == 4.0
        pol.on_ack(AckRecord(0, 1, 2), 8000)       # 2 ms into the epoch: waits
        assert pol.cwnd == 4.0
        # mean (6+7+80)/3 = 31 ms; diff = 4*(31-6)/31 > 3 -> back off
        pol.on_ack(AckRecord(0, 2, 3), 82_000)
        assert pol.cwnd == 3.0


class TestReplica:
    def test_ack_for_current_step_returns_known_state(self, kernel):
        replica = EstimateReplica(kernel, 0, 0.0)
        replica.note_admitted(3, 2.5)
        replica.add_ack(3, 3)
        replica.advance_to(3)
        assert replica.current() == 2.5

    def test_one_step_rollforward(self, kernel):
        # receiver knew x=1.0 at step 0; one step later the replayed estimate
        # is A*1.0 + B*(-K*1.0)
        replica = EstimateReplica(kernel, 0, 1.0)
        replica.advance_to(1)
        expected = 1.2 - kernel.kg
        assert replica.current() == pytest.approx(expected, abs=1e-12)
        assert replica.current() == pytest.approx(0.40647, abs=1e-4)

    def test_no_acks_noise_free_stays_at_zero(self, kernel):
        replica = EstimateReplica(kernel, 0, 0.0)
        replica.advance_to(50)
        assert replica.current() == 0.0

    def test_rewrite_matches_from_scratch_oracle(self, kernel):
        a, b, kg = kernel.a, kernel.b, kernel.kg
        states = {0: 0.0, 2: 1.0, 4: 2.0}

        def oracle(pairs, upto):
            # literal replay: at each step the receiver extrapolates from the
            # freshest update it had received by then
            xs, us = {}, {}
            for j in range(0, upto + 1):
                known = [g for g, r in pairs if r <= j]
                g = max(known)
                x = states[g]
                for t in range(g, j):
                    x = a * x + b * us[t]
                xs[j] = x
                us[j] = -(kg * x)
            return xs[upto]

        replica = EstimateReplica(kernel, 0, 0.0)
        replica.note_admitted(2, 1.0)
        replica.note_admitted(4, 2.0)
        replica.advance_to(5)
        # acks arrive out of order relative to reception steps
        replica.add_ack(4, 6)
        replica.advance_to(7)
        assert replica.current() == pytest.approx(
            oracle([(0, 0), (4, 6)], 7), abs=1e-12)
        replica.add_ack(2, 3)
        replica.advance_to(10)
        assert replica.current() == pytest.approx(
            oracle([(0, 0), (2, 3), (4, 6)], 10), abs=1e-12)

    def test_depth_exhaustion(self, kernel):
        # an ACK whose reception step sits far beyond the update's generation
        # forces a replay deeper than the ring holds
        replica = EstimateReplica(kernel, 0, 0.0, depth=8)
        replica.note_admitted(1, 1.0)
        replica.advance_to(6)
        replica.add_ack(1, 30)
        with pytest.raises(InsufficientHistoryError):
            replica.advance_to(40)

    def test_augment_estimate_entry_point(self, kernel):
        pol = make_policy(kernel, "augm_zw_et", lam=1.0)
        assert pol.augment_estimate(5) == 0.0
        plain = make_policy(kernel, "zw")
        with pytest.raises(ValueError):
            plain.augment_estimate(5)


class TestBookkeepingInvariants:
    def test_no_duplicate_generations(self, kernel):
        pol = make_policy(kernel, "udp")
        pol.register_admit(7, 0.0, 70_000)
        with pytest.raises(AssertionError):
            pol.register_admit(7, 0.0, 70_000)

    def test_single_outstanding_enforced(self, kernel):
        pol = make_policy(kernel, "zw")
        pol.register_admit(0, 0.0, 0)
        with pytest.raises(AssertionError):
            pol.register_admit(1, 0.0, 10_000)
