import math

import numpy as np
import pytest

from secondorder import gilbert_elliott as ge
from secondorder.gilbert_elliott import ChannelState, GeChannelParams

from conftest import CountingRng, FixedRng

# (channels, m_S, v_S^2) from the exact fundamental-matrix variance of the
# product chain (no truncation); see the oracle script in the build notes.
EXACT_CASES = [
    ([(0.3, 0.3)], 0.5, 0.5833333333333334),
    ([(0.2, 0.5)], 0.7142857142857143, 0.37900874635568504),
    ([(0.2, 0.5), (0.7, 0.1)], 0.75, 0.32874240121580567),
    ([(0.1, 0.2), (0.4, 0.4), (0.8, 0.6)], 0.9047619047619048, 0.16897480884587296),
    ([(0.9, 0.9)], 0.5, 0.02777777777777779),
]


def _params(pairs):
    return [GeChannelParams(p, q) for p, q in pairs]


class TestParams:
    def test_stationary_probabilities(self):
        c = GeChannelParams(0.2, 0.6)
        assert c.on_prob == pytest.approx(0.75)
        assert c.off_prob == pytest.approx(0.25)
        assert ge.stationary_on_prob(c) == c.on_prob
        assert c.mixing_rate == pytest.approx(0.2)

    @pytest.mark.parametrize("p,q", [(0.0, 0.5), (0.5, 0.0), (-0.1, 0.5), (0.5, 1.2),
                                     (float("nan"), 0.5)])
    def test_rejects_out_of_range(self, p, q):
        with pytest.raises(ValueError):
            GeChannelParams(p, q)

    def test_state_enum(self):
        assert ChannelState.GOOD.on and not ChannelState.BAD.on


class TestSampling:
    def test_step_consumes_one_draw_per_call(self):
        rng = CountingRng(1)
        c = GeChannelParams(0.3, 0.4)
        state = ge.sample_initial_state(c, rng)
        for _ in range(50):
            state = ge.step(state, c, rng)
        assert rng.calls == 51

    def test_step_transitions(self):
        c = GeChannelParams(0.3, 0.4)
        assert ge.step(ChannelState.GOOD, c, FixedRng([0.29])) == ChannelState.BAD
        assert ge.step(ChannelState.GOOD, c, FixedRng([0.31])) == ChannelState.GOOD
        assert ge.step(ChannelState.BAD, c, FixedRng([0.39])) == ChannelState.GOOD
        assert ge.step(ChannelState.BAD, c, FixedRng([0.41])) == ChannelState.BAD

    def test_initial_state_is_stationary(self):
        c = GeChannelParams(0.2, 0.6)
        assert ge.sample_initial_state(c, FixedRng([0.74])) == ChannelState.GOOD
        assert ge.sample_initial_state(c, FixedRng([0.76])) == ChannelState.BAD


class TestGFunction:
    def test_starts_at_one_and_tends_to_off_prob(self):
        c = GeChannelParams(0.3, 0.2)
        assert ge.g_function(c, 1) == 1.0
        assert ge.g_function(c, 2) == pytest.approx(1 - c.q)
        assert ge.g_function(c, 500) == pytest.approx(c.off_prob, abs=1e-14)

    def test_matches_matrix_power(self):
        c = GeChannelParams(0.3, 0.2)
        P = np.array([[1 - c.q, c.q], [c.p, 1 - c.p]])  # 0 = OFF
        for k in range(1, 12):
            assert ge.g_function(c, k) == pytest.approx(np.linalg.matrix_power(P, k - 1)[0, 0])

    def test_rejects_k_below_one(self):
        with pytest.raises(ValueError):
            ge.g_function(GeChannelParams(0.3, 0.3), 0)


class TestTruncationDepth:
    def test_depth_is_smallest_meeting_tolerance(self):
        c = GeChannelParams(0.01, 0.01)
        k = ge.truncation_depth([c], 1e-3)
        assert abs(ge.g_function(c, k) - c.off_prob) < 1e-3
        assert abs(ge.g_function(c, k - 1) - c.off_prob) >= 1e-3
        assert k == 309

    def test_max_over_channels(self):
        fast, slow = GeChannelParams(0.5, 0.5), GeChannelParams(0.05, 0.05)
        assert ge.truncation_depth([fast, slow], 1e-3) == ge.truncation_depth([slow], 1e-3)

    def test_periodic_channel_is_rejected(self):
        with pytest.raises(ValueError, match="periodic"):
            GeChannelParams(1.0, 1.0)

    def test_cap(self):
        with pytest.raises(ValueError, match="no finite truncation"):
            ge.truncation_depth([GeChannelParams(1e-9, 1e-9)], 1e-3)

    def test_tolerance_must_be_positive(self):
        with pytest.raises(ValueError):
            ge.truncation_depth([GeChannelParams(0.3, 0.3)], 0.0)


class TestSubsetModel:
    @pytest.mark.parametrize("pairs,mean,var", EXACT_CASES)
    def test_matches_exact_product_chain(self, pairs, mean, var):
        params = _params(pairs)
        assert ge.subset_mean(params) == pytest.approx(mean, abs=1e-12)
        assert ge.subset_variance(params, 5000) == pytest.approx(var, abs=1e-12)

    @pytest.mark.parametrize("pairs,mean,var", EXACT_CASES)
    def test_default_truncation_is_close(self, pairs, mean, var):
        model = ge.channel_model(_params(pairs))
        assert model.mean == pytest.approx(mean)
        assert model.variance == pytest.approx(var, rel=2e-2)

    def test_single_symmetric_channel_closed_form(self):
        # one channel: v^2 = pi_on pi_off (1 + rho) / (1 - rho)
        c = GeChannelParams(0.3, 0.3)
        rho = c.mixing_rate
        expected = c.on_prob * c.off_prob * (1 + rho) / (1 - rho)
        assert ge.subset_variance([c], 10_000) == pytest.approx(expected, rel=1e-12)

    def test_k_one_is_iid_variance(self):
        params = _params([(0.2, 0.5), (0.7, 0.1)])
        m = ge.subset_mean(params)
        assert ge.subset_variance(params, 1) == pytest.approx(
            m * (1 - m) + 2 * (ge.g_function(params[0], 2) * ge.g_function(params[1], 2)
                               - (1 - m)) * (1 - m))

    def test_empty_and_bad_k(self):
        with pytest.raises(ValueError):
            ge.subset_variance([], 10)
        with pytest.raises(ValueError):
            ge.subset_variance([GeChannelParams(0.3, 0.3)], 0)

    def test_iid_special_case(self):
        for q in (0.1, 0.5, 0.93):
            model = ge.iid_subset_model([q])
            assert model.mean == pytest.approx(q)
            assert model.variance == pytest.approx(q * (1 - q))
            ge_model = ge.channel_model([GeChannelParams(1 - q, q)])
            assert ge_model.variance == pytest.approx(model.variance, abs=1e-12)

    def test_mean_table_bitmask_order(self):
        params = _params([(0.2, 0.5), (0.7, 0.1), (0.4, 0.4)])
        table = ge.subset_mean_table(params)
        assert len(table) == 8 and table[0] == 0.0
        for mask in range(1, 8):
            members = [params[i] for i in range(3) if mask >> i & 1]
            assert table[mask] == pytest.approx(ge.subset_mean(members), abs=1e-15)
        assert not table.flags.writeable

    def test_union_mean_decreases_off_probability(self):
        params = _params([(0.2, 0.5), (0.7, 0.1)])
        assert ge.subset_mean(params) == pytest.approx(
            1 - math.prod(c.off_prob for c in params))


class TestDocumentedExamples:
    def test_stationary_on_prob(self):
        assert ge.stationary_on_prob(GeChannelParams(0.3, 0.3)) == pytest.approx(0.5)
        assert ge.stationary_on_prob(GeChannelParams(0.6, 0.15)) == pytest.approx(0.2)
        assert ge.stationary_on_prob(GeChannelParams(0.05, 0.95)) == pytest.approx(0.95)

    def test_initial_draws(self):
        c = GeChannelParams(0.3, 0.3)
        assert ge.sample_initial_state(c, FixedRng([0.49])).on
        assert not ge.sample_initial_state(c, FixedRng([0.51])).on

    def test_initial_frequency(self):
        c = GeChannelParams(0.05, 0.95)
        u = np.random.default_rng(0).random(1_000_000)
        assert np.mean(u < ge.stationary_on_prob(c)) == pytest.approx(0.95, abs=1e-3)

        class ArrayRng:
            i = 0

            def random(self):
                self.i += 1
                return u[self.i - 1]

        rng = ArrayRng()
        ons = sum(ge.sample_initial_state(c, rng).on for _ in range(100_000))
        assert ons / 100_000 == pytest.approx(0.95, abs=3e-3)

    def test_certain_transitions(self):
        assert ge.step(ChannelState.GOOD, GeChannelParams(1.0, 0.5), FixedRng([0.999])) \
            == ChannelState.BAD
        assert ge.step(ChannelState.BAD, GeChannelParams(0.5, 1.0), FixedRng([0.999])) \
            == ChannelState.GOOD

    def test_off_frequency_from_on(self):
        c = GeChannelParams(0.3, 0.2)
        rng = np.random.default_rng(1)
        n = 1_000_000
        offs = sum(ge.step(ChannelState.GOOD, c, rng) == ChannelState.BAD for _ in range(n))
        assert offs / n == pytest.approx(0.3, abs=1.5e-3)

    def test_g_function_examples(self):
        assert ge.g_function(GeChannelParams(0.5, 0.5), 2) == pytest.approx(0.5)
        g = ge.g_function(GeChannelParams(0.01, 0.01), 101)
        assert g == pytest.approx(0.5 + 0.5 * 0.98**100)

    def test_truncation_examples(self):
        assert ge.truncation_depth([GeChannelParams(0.5, 0.5)], 1e-3) == 2
        assert ge.truncation_depth([GeChannelParams(0.01, 0.01)], 1e-9) <= 1001

    def test_subset_mean_examples(self):
        assert ge.subset_mean([]) == 0.0
        assert ge.subset_mean([GeChannelParams(0.3, 0.3)]) == pytest.approx(0.5)
        assert ge.subset_mean([GeChannelParams(0.5, 0.5)] * 2) == pytest.approx(0.75)

    def test_subset_variance_examples(self):
        for K in (1, 2, 50):
            assert ge.subset_variance([GeChannelParams(0.5, 0.5)], K) == pytest.approx(0.25)
        slow = [GeChannelParams(0.01, 0.01)]
        assert ge.subset_variance(slow, 100) < ge.subset_variance(slow, 1000)

    def test_subset_variance_against_monte_carlo(self):
        from secondorder.simulator import channel_statistics
        params = [GeChannelParams(0.3, 0.2)]
        stats = channel_statistics(params, 2000, 50_000, master_seed=0)
        assert stats.batch_variance[1] == pytest.approx(ge.subset_variance(params, 2000),
                                                        rel=0.05)

    def test_iid_examples(self):
        model = ge.iid_subset_model([0.5])
        assert (model.mean, model.variance) == (0.5, 0.25)
        model = ge.iid_subset_model([1.0, 0.3])
        assert (model.mean, model.variance) == (1.0, 0.0)
        with pytest.raises(ValueError):
            ge.iid_subset_model([1.2])
