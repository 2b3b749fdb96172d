"""Property-based tests of the model, solver, policy and simulator invariants."""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from secondorder import gilbert_elliott as ge
from secondorder.gilbert_elliott import GeChannelParams
from secondorder.models import SecondOrderModel
from secondorder.optimizer import (
    AllocationProblem,
    ClientSpec,
    InfeasibleProblem,
    objective_terms,
    solve,
)
from secondorder.policies import (
    POLICY_IDS,
    SchedulerObservation,
    make_policy,
    vwd_select,
)
from secondorder.second_order import (
    ChannelModelTable,
    DeliveryTargets,
    aoi_approx,
    check_inner_bound,
    check_outer_bound,
    outage_approx,
)
from secondorder.simulator import (
    SplitMix64,
    WorldState,
    build_trace_config,
    channel_statistics,
    derive_seeds,
    run_slot,
)

from helpers import random_feasible_objectives

prob = st.floats(0.05, 0.95)
channel = st.builds(GeChannelParams, prob, prob)
channels = st.lists(channel, min_size=1, max_size=4)

SLOW = settings(max_examples=20, deadline=None,
                suppress_health_check=[HealthCheck.too_slow])


class TestChannelProperties:
    @given(channels, st.data())
    def test_union_mean_monotone(self, params, data):
        n = len(params)
        sub = data.draw(st.sets(st.integers(0, n - 1)))
        small = [params[i] for i in sorted(sub)]
        assert (ge.subset_mean(small) if small else 0.0) <= ge.subset_mean(params) + 1e-15

    @given(st.floats(1e-6, 1 - 1e-6), st.integers(1, 50))
    def test_iid_reduction_matches_ge(self, q, K):
        iid = ge.iid_subset_model([q])
        params = [GeChannelParams(1 - q, q)]
        assert abs(iid.mean - ge.subset_mean(params)) < 1e-12
        assert abs(iid.variance - ge.subset_variance(params, K)) < 1e-12

    @given(st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    def test_g_function_converges_monotonically(self, p, q):
        assume(not (p == 1.0 and q == 1.0))
        c = GeChannelParams(p, q)
        assert ge.g_function(c, 1) == 1.0
        gaps = [abs(ge.g_function(c, k) - c.off_prob) for k in range(1, 40)]
        assert all(b <= a + 1e-15 for a, b in zip(gaps, gaps[1:]))

    @given(st.lists(st.builds(GeChannelParams, st.floats(0.25, 0.75), st.floats(0.25, 0.75)),
                    min_size=1, max_size=4))
    def test_variance_stable_beyond_truncation(self, params):
        # |1 - p - q| <= 1/2 here, so the dropped tail stays below the tolerance
        K = ge.truncation_depth(params, 1e-9)
        base = ge.subset_variance(params, K)
        assert abs(ge.subset_variance(params, 4 * K) - base) < 1e-9

    @given(channels)
    def test_truncation_tail_bound(self, params):
        # the tail after K is geometric: at most 2 N tol r / (1 - r), r = max |1 - p - q|
        tol = 1e-9
        K = ge.truncation_depth(params, tol)
        r = max(abs(c.mixing_rate) for c in params)
        bound = 2 * len(params) * tol * r / (1 - r) + 1e-15
        assert abs(ge.subset_variance(params, 4 * K) - ge.subset_variance(params, K)) <= bound

    def test_slow_mixing_tail_exceeds_tolerance(self):
        params = [GeChannelParams(0.25, 0.125)]
        K = ge.truncation_depth(params, 1e-9)
        tail = ge.subset_variance(params, 4 * K) - ge.subset_variance(params, K)
        assert 1e-9 < tail < 2e-9

    @settings(max_examples=10, deadline=None)
    @given(st.lists(channel, min_size=1, max_size=2), st.integers(0, 2**32 - 1))
    def test_monte_carlo_mean_within_three_se(self, params, seed):
        stats = channel_statistics(params, 8, 4000, master_seed=seed, batch=1000)
        full = (1 << len(params)) - 1
        mean, var = stats.mean[full], ge.channel_model(params).variance
        se = math.sqrt(var / (8 * 4000))
        assert abs(mean - ge.subset_mean(params)) < 3 * se + 1e-3


models = st.builds(SecondOrderModel, st.floats(0.01, 1.0), st.floats(0.0, 5.0))


class TestApproximationProperties:
    @given(models, st.floats(0.01, 1.0), st.floats(1.01, 2.0))
    def test_aoi_monotonicity(self, model, lam, factor):
        base = aoi_approx(model, lam)
        if model.mean * factor <= 1.0:
            assert aoi_approx(SecondOrderModel(model.mean * factor, model.variance), lam) < base
        assert aoi_approx(SecondOrderModel(model.mean, model.variance + 0.1), lam) > base
        assert aoi_approx(model, lam / factor) > base

    @given(models, st.floats(0.5, 50.0), st.floats(1.01, 3.0))
    def test_outage_linear_and_decreasing(self, model, ell, factor):
        out = outage_approx(model, ell)
        scaled = SecondOrderModel(model.mean, model.variance * factor)
        assert outage_approx(scaled, ell) == pytest.approx(factor * out)
        assert outage_approx(model, ell * factor) <= out

    @given(st.lists(channel, min_size=2, max_size=4), st.data())
    def test_inner_implies_outer(self, params, data):
        n = len(params)
        table = ChannelModelTable.from_ge(params)
        w = np.array(data.draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n)))
        mu = w / w.sum() * table.full.mean
        s = np.array(data.draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n)))
        var = (s / s.sum() * table.full.std * data.draw(st.floats(0.9, 1.5))) ** 2
        targets = DeliveryTargets.from_arrays(mu, var)
        delta = data.draw(st.floats(1e-6, 1e-2))
        if check_inner_bound(targets, table, delta).feasible:
            assert check_outer_bound(targets, table).feasible

    @given(channel)
    def test_single_client_work_conserving_point(self, c):
        table = ChannelModelTable.from_ge([c])
        targets = DeliveryTargets((table.full,))
        assert check_outer_bound(targets, table).feasible
        assert check_inner_bound(targets, table, 1e-3).feasible


def _sensing_clients(draw_params, lams, alphas):
    return [ClientSpec.sensing(c, lam, a) for c, lam, a in zip(draw_params, lams, alphas)]


@st.composite
def sensing_instances(draw, max_n=3):
    n = draw(st.integers(1, max_n))
    params = draw(st.lists(channel, min_size=n, max_size=n))
    lams = draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n))
    alphas = draw(st.lists(st.floats(1.0, 5.0), min_size=n, max_size=n))
    return _sensing_clients(params, lams, alphas)


class TestSolverProperties:
    @SLOW
    @given(sensing_instances())
    def test_solution_feasible_and_variance_binds(self, clients):
        problem = AllocationProblem.build(clients)
        sol = solve(problem, starts=2)
        assert check_inner_bound(sol.targets, problem.channel_table(), problem.delta).feasible
        assert abs(np.sqrt(sol.variances).sum() - problem.channel_full.std) < 1e-6

    @SLOW
    @given(sensing_instances(), st.integers(0, 2**32 - 1))
    def test_beats_random_feasible_points(self, clients, seed):
        problem = AllocationProblem.build(clients)
        sol = solve(problem, starts=2)
        values = random_feasible_objectives(problem, 200, np.random.default_rng(seed))
        assert sol.objective <= values.min() + 1e-9

    @SLOW
    @given(channel, st.floats(0.05, 1.0), st.floats(0.5, 3.0), st.integers(2, 4))
    def test_symmetric_instances(self, c, lam, alpha, n):
        problem = AllocationProblem.build([ClientSpec.sensing(c, lam, alpha)] * n)
        full = problem.channel_full
        # the equal split is a local minimum only while v^2 < N m (see below)
        assume(full.variance < 0.8 * n * full.mean)
        sol = solve(problem, starts=2)
        assert np.ptp(sol.means) < 1e-6 and np.ptp(sol.variances) < 1e-6

    def test_symmetry_breaks_for_bursty_channels(self):
        # v^2 / m ~ 3.3 > N = 2: splitting unevenly beats the equal split
        c = GeChannelParams(0.25, 0.0625)
        problem = AllocationProblem.build([ClientSpec.sensing(c, 1.0)] * 2)
        full = problem.channel_full
        assert full.variance > 2 * full.mean
        sol = solve(problem)
        equal = DeliveryTargets.from_arrays([full.mean / 2] * 2, [full.variance / 4] * 2)
        equal_value = objective_terms(equal, [None, None], problem).sum()
        assert sol.objective < equal_value - 1e-3
        assert np.ptp(sol.means) > 1e-2
        assert check_inner_bound(sol.targets, problem.channel_table(), problem.delta).feasible

    @SLOW
    @given(sensing_instances(), st.floats(0.1, 10.0))
    def test_weight_scaling_keeps_argmin(self, clients, scale):
        scaled = [ClientSpec.sensing(c.channel, c.lam, c.alpha * scale) for c in clients]
        a = solve(AllocationProblem.build(clients), starts=2)
        b = solve(AllocationProblem.build(scaled), starts=2)
        np.testing.assert_allclose(a.means, b.means, atol=1e-5)
        np.testing.assert_allclose(a.variances, b.variances, rtol=1e-4, atol=1e-9)
        assert b.objective == pytest.approx(scale * a.objective, rel=1e-6)


@st.composite
def observations(draw):
    n = draw(st.integers(1, 6))
    on = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    aoi = draw(st.lists(st.integers(1, 100), min_size=n, max_size=n))
    deficits = draw(st.lists(st.integers(-64, 64), min_size=n, max_size=n))
    sensing = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    t = draw(st.integers(1, 1000))
    return SchedulerObservation(on, aoi, np.array(deficits) / 8.0, t, is_sensing=sensing)


class TestPolicyProperties:
    @given(observations(), st.sampled_from(POLICY_IDS), st.integers(0, 2**32 - 1))
    def test_work_conservation(self, obs, name, seed):
        n = len(obs.on)
        ch = GeChannelParams(0.3, 0.3)
        clients = [ClientSpec.sensing(ch, 0.5) if s else ClientSpec.streaming(ch, 3, 5.0)
                   for s in obs.is_sensing]
        targets = DeliveryTargets.from_arrays(np.full(n, 0.1), np.full(n, 0.2))
        delays = [None if c.is_sensing else 5.0 for c in clients]
        policy = make_policy(name, clients, targets, delays)
        choice = policy.select(obs, np.random.default_rng(seed))
        if obs.on.any():
            assert choice is not None and obs.on[choice]
        else:
            assert choice is None

    @given(observations(), st.lists(st.sampled_from([1.0, 4.0, 16.0]), min_size=6,
                                    max_size=6), st.integers(-8, 8))
    def test_vwd_shift_invariance(self, obs, var, shift):
        var = np.array(var[:len(obs.on)])
        shifted = SchedulerObservation(obs.on, obs.aoi, obs.deficits + shift * np.sqrt(var),
                                       obs.t)
        assert vwd_select(obs, var) == vwd_select(shifted, var)

    @given(observations(), st.lists(st.sampled_from([1.0, 4.0, 16.0]), min_size=6,
                                    max_size=6), st.sampled_from([0.25, 4.0, 16.0]))
    def test_vwd_variance_scale_invariance(self, obs, var, factor):
        var = np.array(var[:len(obs.on)])
        assert vwd_select(obs, var) == vwd_select(obs, var * factor)


@st.composite
def mixed_systems(draw):
    n_s = draw(st.integers(1, 2))
    n_v = draw(st.integers(0, 2))
    clients = [ClientSpec.sensing(draw(channel), draw(st.floats(0.05, 1.0)))
               for _ in range(n_s)]
    for _ in range(n_v):
        clients.append(ClientSpec.streaming(draw(channel), draw(st.integers(4, 8)),
                                            float(draw(st.integers(1, 10)))))
    return clients


class TestSimulatorProperties:
    @SLOW
    @given(mixed_systems(), st.sampled_from(POLICY_IDS), st.integers(0, 2**32 - 1))
    def test_slot_invariants(self, clients, name, seed):
        try:
            sol = solve(AllocationProblem.build(clients), starts=1)
        except InfeasibleProblem:
            assume(False)
        config = build_trace_config(clients, name, sol, 300)
        env, pol = derive_seeds(seed, 0)
        env_rng, pol_rng = SplitMix64(env), SplitMix64(pol)
        world = WorldState.initial(config)
        mu = config.policy.mu
        prev_d = world.deficit.deficits.copy()
        prev_latest = list(world.latest)
        for t in range(1, 301):
            before = world.deficit.deliveries.copy()
            run_slot(world, config, env_rng, pol_rng)
            delivered = world.deficit.deliveries - before
            # work conservation: sum_n Z_n(t) = X_full(t)
            assert delivered.sum() == int(world.on.any())
            d = world.deficit.deficits
            assert np.all(np.abs(d - prev_d) <= 1.0 + 1e-12)
            np.testing.assert_allclose(d, t * mu - world.deficit.deliveries, atol=1e-9)
            prev_d = d.copy()
            for i, c in enumerate(clients):
                if c.is_sensing:
                    if delivered[i] and prev_latest[i] == t - 1:
                        assert world.aoi[i] == 1
                else:
                    assert world.generated[i] == world.served[i] + world.dropped[i] + \
                        len(world.queues[i])
            prev_latest = list(world.latest)
