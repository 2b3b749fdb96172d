"""Time-slotted simulation of the access point, its channels and its clients.

Two engines share one random-number contract:

* :func:`run_slot` / :func:`reference_run` — a readable pure-Python engine
  built on the selection functions in :mod:`secondorder.policies`.
* a compiled kernel (numba) used for every experiment.

Both draw from two SplitMix64 streams per run. The environment stream gives,
in every slot, one uniform per client for the channel (slot 1: the initial
state) followed by one uniform per sensing client for update generation. The
policy stream is touched only by randomised policies, once per slot in which
they actually pick at random. Identical seeds therefore give bit-identical
runs on either engine.

Within slot t the order is: channels, update generation, frame generation,
expiry of late frames, scheduling, transmission, bookkeeping. An update
generated in slot t can be transmitted from slot t+1 on, so delivering an
update from the previous slot leaves AoI at 1.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from . import gilbert_elliott as ge
from .optimizer import AllocationSolution
from .policies import (
    POLICY_CODES,
    DeficitState,
    Policy,
    SchedulerObservation,
    make_policy,
    update_deficits,
)
from .second_order import (
    ChannelModelTable,
    ConstraintCheck,
    FeasibilityReport,
    SecondOrderModel,
    mask_members,
)

DEFAULT_SAMPLE_EVERY = 100

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_UNIT = 2.0**-53


class SplitMix64:
    """Pure-Python SplitMix64; ``random()`` matches the compiled kernel bit for bit."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * _UNIT


def derive_seeds(master_seed: int, index: int) -> tuple[int, int]:
    """(environment, policy) seeds of run ``index``; independent of run order."""
    env, pol = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(
        2, np.uint64)
    return int(env), int(pol)


# ---------------------------------------------------------------------------
# simulation setup

INITIAL_STATES = {None: -1, "stationary": -1, "bad": 0, "good": 1}


@dataclass(frozen=True)
class TraceConfig:
    """Everything a run needs besides its seeds."""

    clients: tuple
    policy: Policy
    delays: tuple  # ell actually used per client (None for sensing)
    horizon: int
    sample_every: int = DEFAULT_SAMPLE_EVERY
    initial_state: str | None = None

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.initial_state not in INITIAL_STATES:
            raise ValueError(f"initial_state must be one of good/bad/stationary, "
                             f"got {self.initial_state!r}")

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def deadline_offsets(self) -> np.ndarray:
        """Slots a frame may wait: floor(ell * w), so frame k*w expires after k*w + offset."""
        out = np.zeros(self.n, dtype=np.int64)
        for i, (c, ell) in enumerate(zip(self.clients, self.delays)):
            if not c.is_sensing:
                out[i] = int(math.floor(ell * c.w + 1e-9))
        return out

    @property
    def sample_times(self) -> np.ndarray:
        return np.arange(self.sample_every, self.horizon + 1, self.sample_every)


def policy_delays(name: str, clients, solution: AllocationSolution) -> tuple:
    """Delays each policy runs with.

    Fixed delays are used as given. Configurable delays are the optimiser's
    for VWD; WLD splits their total in proportion to sqrt(sigma^2) and every
    other policy splits it equally.
    """
    delays = list(solution.delays)
    conf = [i for i, c in enumerate(clients) if c.configurable_delay]
    if conf and name != "vwd":
        total = sum(solution.delays[i] for i in conf)
        if name == "wld":
            s = np.sqrt(solution.variances[conf])
            for k, i in enumerate(conf):
                delays[i] = float(total * s[k] / s.sum())
        else:
            for i in conf:
                delays[i] = total / len(conf)
    return tuple(delays)


def build_trace_config(clients, policy_name: str, solution: AllocationSolution, horizon: int,
                       sample_every: int = DEFAULT_SAMPLE_EVERY,
                       initial_state: str | None = None) -> TraceConfig:
    delays = policy_delays(policy_name, clients, solution)
    policy = make_policy(policy_name, clients, solution.targets, delays)
    return TraceConfig(tuple(clients), policy, delays, horizon, sample_every, initial_state)


# ---------------------------------------------------------------------------
# metrics

@dataclass
class RunMetrics:
    """Per-client totals of one run."""

    horizon: int
    seed: tuple
    deliveries: np.ndarray      # scheduled slots, dummies included
    aoi_sum: np.ndarray         # sum over t of AoI(t) (sensing clients)
    dropped: np.ndarray         # expired frames
    served: np.ndarray          # frames delivered in time
    generated: np.ndarray       # frames generated
    samples: np.ndarray         # deliveries at each sample time, shape (S, N)
    sample_times: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def queued(self) -> np.ndarray:
        return self.generated - self.served - self.dropped

    @property
    def aoi_average(self) -> np.ndarray:
        return self.aoi_sum / self.horizon if self.horizon else np.zeros_like(self.aoi_sum, float)

    @property
    def outage_rate(self) -> np.ndarray:
        return self.dropped / self.horizon if self.horizon else np.zeros(len(self.dropped))

    @property
    def timely_throughput(self) -> np.ndarray:
        return self.served / self.horizon if self.horizon else np.zeros(len(self.served))

    def deficit_samples(self, mu) -> np.ndarray:
        """d_n(t) = t*mu_n - deliveries_n(t) at every sample time."""
        return self.sample_times[:, None] * np.asarray(mu, dtype=float) - self.samples

    def __eq__(self, other):
        if not isinstance(other, RunMetrics):
            return NotImplemented
        return (self.horizon == other.horizon and self.seed == other.seed and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("deliveries", "aoi_sum", "dropped", "served", "generated", "samples",
                      "sample_times")))


def empirical_second_order(counts, horizon: int, mu: Sequence[float] | None = None
                           ) -> list[SecondOrderModel]:
    """Cross-run (mean, temporal variance) of per-client delivery counts at ``horizon``.

    Mean: average of count/T. Variance: sample variance (ddof=1) of
    (count - T*mu)/sqrt(T).
    """
    counts = np.asarray(counts, dtype=float)
    if counts.ndim == 1:
        counts = counts[:, None]
    if counts.shape[0] < 2:
        raise ValueError("empirical_second_order needs at least 2 runs")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    mu = np.zeros(counts.shape[1]) if mu is None else np.asarray(mu, dtype=float)
    scaled = (counts - horizon * mu) / math.sqrt(horizon)
    means = counts.mean(axis=0) / horizon
    variances = scaled.var(axis=0, ddof=1)
    return [SecondOrderModel(float(min(1.0, m)), float(v)) for m, v in zip(means, variances)]


@dataclass
class ExperimentResult:
    """Per-run arrays (runs x clients) plus cross-run aggregates."""

    config: TraceConfig
    master_seed: int
    deliveries: np.ndarray
    aoi_sum: np.ndarray
    dropped: np.ndarray
    served: np.ndarray
    generated: np.ndarray
    samples: np.ndarray  # runs x S x N
    first_index: int = 0

    @property
    def runs(self) -> int:
        return self.deliveries.shape[0]

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def run(self, index: int) -> RunMetrics:
        return RunMetrics(self.horizon, (self.master_seed, self.first_index + index),
                          self.deliveries[index],
                          self.aoi_sum[index], self.dropped[index], self.served[index],
                          self.generated[index], self.samples[index], self.config.sample_times)

    def _per_slot(self, arr) -> np.ndarray:
        if self.horizon == 0:
            return np.zeros(arr.shape[1])
        return arr.mean(axis=0) / self.horizon

    @property
    def aoi(self) -> np.ndarray:
        return self._per_slot(self.aoi_sum)

    @property
    def outage_rate(self) -> np.ndarray:
        return self._per_slot(self.dropped)

    @property
    def timely_throughput(self) -> np.ndarray:
        return self._per_slot(self.served)

    @property
    def delivery_rate(self) -> np.ndarray:
        return self._per_slot(self.deliveries)

    def second_order(self) -> list[SecondOrderModel] | None:
        if self.runs < 2 or self.horizon == 0:
            return None
        return empirical_second_order(self.deliveries, self.horizon, self.config.policy.mu)

    def objective(self) -> float:
        """Empirical network objective with the weights and delays of the config."""
        total = 0.0
        aoi, out = self.aoi, self.outage_rate
        for i, (c, ell) in enumerate(zip(self.config.clients, self.config.delays)):
            if c.is_sensing:
                total += c.alpha * aoi[i]
            else:
                total += c.beta * out[i] + c.gamma * ell**2
        return float(total)

    def convergence_series(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(times, empirical means, empirical variances) at each sample time."""
        times = self.config.sample_times
        mu = self.config.policy.mu
        counts = self.samples.astype(float)
        means = counts.mean(axis=0) / times[:, None]
        if self.runs < 2:
            var = np.full_like(means, np.nan)
        else:
            var = ((counts - times[:, None] * mu) / np.sqrt(times)[:, None]).var(axis=0, ddof=1)
        return times, means, var


def empirical_outer_bound(counts, horizon: int, channel: ChannelModelTable,
                          z: float = 3.0) -> FeasibilityReport:
    """Outer-bound constraints on empirical (mu, sigma^2), each allowed z standard errors."""
    counts = np.asarray(counts, dtype=float)
    runs, n = counts.shape
    if runs < 2:
        raise ValueError("need at least 2 runs")
    rates = counts / horizon
    report = FeasibilityReport("outer-empirical")
    table = channel.mean_table()
    for mask in range(1, (1 << n) - 1):
        members = mask_members(mask, n)
        per_run = rates[:, list(members)].sum(axis=1)
        se = per_run.std(ddof=1) / math.sqrt(runs)
        slack = float(table[mask] - per_run.mean())
        report.checks.append(ConstraintCheck("subset_mean", slack, slack >= -z * se - 1e-12,
                                             members, -z * se))
    total = rates.sum(axis=1)
    se = total.std(ddof=1) / math.sqrt(runs)
    gap = float(channel.full.mean - total.mean())
    report.checks.append(ConstraintCheck("total_mean", gap, abs(gap) <= z * se + 1e-12,
                                         None, -z * se))
    models = empirical_second_order(counts, horizon)
    spread = sum(m.std for m in models) - channel.full.std
    se_v = channel.full.std / math.sqrt(2.0 * (runs - 1))
    report.checks.append(ConstraintCheck("variance", spread, spread >= -z * se_v, None,
                                         -z * se_v))
    low = float(rates.mean(axis=0).min())
    report.checks.append(ConstraintCheck("nonnegative_mean", low, low >= 0.0))
    return report


# ---------------------------------------------------------------------------
# reference engine

@dataclass
class WorldState:
    """Mutable state of one run after slot ``t``."""

    t: int
    on: np.ndarray
    aoi: np.ndarray
    latest: list            # latest generation slot < t+1 per sensing client (None if none)
    queues: list            # deque of (generation, deadline) per streaming client
    deficit: DeficitState
    aoi_sum: np.ndarray
    dropped: np.ndarray
    served: np.ndarray
    generated: np.ndarray
    states: list

    @classmethod
    def initial(cls, config: TraceConfig) -> "WorldState":
        n = config.n
        return cls(0, np.zeros(n, bool), np.ones(n, dtype=np.int64), [None] * n,
                   [deque() for _ in range(n)], DeficitState(config.policy.mu),
                   np.zeros(n, np.int64), np.zeros(n, np.int64), np.zeros(n, np.int64),
                   np.zeros(n, np.int64), [None] * n)


def run_slot(world: WorldState, config: TraceConfig, env_rng, policy_rng) -> WorldState:
    """Advance ``world`` by one slot in place and return it."""
    t = world.t + 1
    clients = config.clients
    offsets = config.deadline_offsets
    forced = INITIAL_STATES[config.initial_state]
    # (1) channels
    for i, c in enumerate(clients):
        if t == 1:
            state = ge.sample_initial_state(c.channel, env_rng)
            if forced >= 0:
                state = ge.ChannelState(forced)
        else:
            state = ge.step(world.states[i], c.channel, env_rng)
        world.states[i] = state
        world.on[i] = state.on
    # (2) sensing updates; usable from the next slot on
    fresh = [c.is_sensing and env_rng.random() < c.lam for c in clients]
    # (3) frames, (4) expiry
    for i, c in enumerate(clients):
        if c.is_sensing:
            continue
        if t % c.w == 0:
            world.queues[i].append((t, t + int(offsets[i])))
            world.generated[i] += 1
        queue = world.queues[i]
        while queue and queue[0][1] < t:
            queue.popleft()
            world.dropped[i] += 1
    # (5) scheduling on AoI(t-1), d(t-1)
    obs = SchedulerObservation(
        world.on.copy(), world.aoi.astype(float), world.deficit.deficits, t,
        np.array([bool(q) if not c.is_sensing else world.latest[i] is not None
                  for i, (c, q) in enumerate(zip(clients, world.queues))]),
        config.policy.is_sensing)
    choice = config.policy.select(obs, policy_rng)
    # (6) transmission
    new_aoi = world.aoi + 1
    if choice is not None:
        c = clients[choice]
        if c.is_sensing:
            if world.latest[choice] is not None:
                new_aoi[choice] = t - world.latest[choice]
        else:
            new_aoi[choice] = 1
            if world.queues[choice]:
                world.queues[choice].popleft()
                world.served[choice] += 1
    # (7) bookkeeping
    world.deficit = update_deficits(world.deficit, choice, choice is not None)
    world.aoi = new_aoi
    world.aoi_sum += new_aoi
    for i, f in enumerate(fresh):
        if f:
            world.latest[i] = t
    world.t = t
    return world


def reference_run(config: TraceConfig, seed: int = 0, index: int = 0) -> RunMetrics:
    """One run on the pure-Python engine (slow; for cross-checking)."""
    env_seed, pol_seed = derive_seeds(seed, index)
    env_rng, pol_rng = SplitMix64(env_seed), SplitMix64(pol_seed)
    world = WorldState.initial(config)
    times = config.sample_times
    samples = np.zeros((len(times), config.n), dtype=np.int64)
    k = 0
    for _ in range(config.horizon):
        run_slot(world, config, env_rng, pol_rng)
        if k < len(times) and world.t == times[k]:
            samples[k] = world.deficit.deliveries
            k += 1
    return RunMetrics(config.horizon, (seed, index), world.deficit.deliveries.copy(),
                      world.aoi_sum.copy(), world.dropped.copy(), world.served.copy(),
                      world.generated.copy(), samples, times)


# ---------------------------------------------------------------------------
# compiled engine

_K_GOLDEN = np.uint64(_GOLDEN)
_K_MIX1 = np.uint64(_MIX1)
_K_MIX2 = np.uint64(_MIX2)
_K30 = np.uint64(30)
_K27 = np.uint64(27)
_K31 = np.uint64(31)
_K11 = np.uint64(11)


@numba.njit(cache=True, nogil=True)
def _uniform(state):
    s = state[0] + _K_GOLDEN
    state[0] = s
    z = (s ^ (s >> _K30)) * _K_MIX1
    z = (z ^ (z >> _K27)) * _K_MIX2
    z = z ^ (z >> _K31)
    return float(z >> _K11) * _UNIT


@numba.njit(cache=True, nogil=True)
def _weighted_pick(pool, mu, rng):
    count = 0
    total = 0.0
    for i in range(len(pool)):
        if pool[i]:
            count += 1
            total += mu[i]
    if count == 0:
        return -1
    u = _uniform(rng)
    if total > 0.0:
        target = u * total
        acc = 0.0
        last = -1
        for i in range(len(pool)):
            if pool[i] and mu[i] > 0.0:
                acc += mu[i]
                last = i
                if target < acc:
                    return i
        return last
    k = int(u * count)
    if k > count - 1:
        k = count - 1
    for i in range(len(pool)):
        if pool[i]:
            if k == 0:
                return i
            k -= 1
    return -1


@numba.njit(cache=True, nogil=True)
def _simulate_block(env_seeds, pol_seeds, start, stop, p, q, on_prob, is_sensing, lam, w,
                    offset, code, mu, sigma_sq, z, ell, init_state, horizon, sample_every,
                    deliveries, aoi_sum, dropped, served, generated, samples):
    n = len(p)
    env = np.empty(1, np.uint64)
    pol = np.empty(1, np.uint64)
    on = np.zeros(n, np.bool_)
    pool = np.zeros(n, np.bool_)
    fresh = np.zeros(n, np.bool_)
    aoi = np.ones(n, np.int64)
    latest = np.full(n, -1, np.int64)
    deliv = np.zeros(n, np.int64)
    head = np.zeros(n, np.int64)
    sq = np.sqrt(sigma_sq)
    for r in range(start, stop):
        env[0] = env_seeds[r]
        pol[0] = pol_seeds[r]
        aoi[:] = 1
        latest[:] = -1
        deliv[:] = 0
        head[:] = 0
        for i in range(n):
            aoi_sum[r, i] = 0
            dropped[r, i] = 0
            served[r, i] = 0
            generated[r, i] = 0
        k_sample = 0
        for t in range(1, horizon + 1):
            # (1) channels
            any_on = False
            for i in range(n):
                u = _uniform(env)
                if t == 1:
                    if init_state < 0:
                        on[i] = u < on_prob[i]
                    else:
                        on[i] = init_state == 1
                elif on[i]:
                    on[i] = not (u < p[i])
                else:
                    on[i] = u < q[i]
                any_on = any_on or on[i]
            # (2) updates, (3) frames, (4) expiry
            for i in range(n):
                if is_sensing[i]:
                    fresh[i] = _uniform(env) < lam[i]
            for i in range(n):
                if not is_sensing[i]:
                    if t % w[i] == 0:
                        generated[r, i] += 1
                    while head[i] < generated[r, i] and (head[i] + 1) * w[i] + offset[i] < t:
                        head[i] += 1
                        dropped[r, i] += 1
            # (5) scheduling
            choice = -1
            if any_on:
                tm1 = t - 1
                if code == 2:
                    choice = _weighted_pick(on, mu, pol)
                elif code == 6 and t % 2 == 1:
                    has = False
                    for i in range(n):
                        pool[i] = on[i] and is_sensing[i]
                        has = has or pool[i]
                    if not has:
                        pool[:] = on
                    choice = _weighted_pick(pool, mu, pol)
                else:
                    has = False
                    if code == 6:
                        for i in range(n):
                            pool[i] = on[i] and not is_sensing[i]
                            has = has or pool[i]
                    if not has:
                        pool[:] = on
                    best = -np.inf
                    for i in range(n):
                        if not pool[i]:
                            continue
                        d = tm1 * mu[i] - deliv[i]
                        a = float(aoi[i])
                        if code == 0:
                            v = d / sq[i]
                        elif code == 1:
                            v = a * a / 2.0 - a / 2.0 + a / on_prob[i]
                        elif code == 3:
                            v = (a - z[i]) / mu[i]
                        elif code == 4:
                            v = d / ell[i]
                        else:
                            v = d
                        if choice < 0 or v > best:
                            best = v
                            choice = i
            # (6) transmission, (7) bookkeeping
            for i in range(n):
                if i == choice:
                    deliv[i] += 1
                    if is_sensing[i]:
                        aoi[i] = t - latest[i] if latest[i] >= 0 else aoi[i] + 1
                    else:
                        aoi[i] = 1
                        if head[i] < generated[r, i]:
                            head[i] += 1
                            served[r, i] += 1
                else:
                    aoi[i] += 1
                aoi_sum[r, i] += aoi[i]
                if fresh[i]:
                    latest[i] = t
            if t % sample_every == 0:
                for i in range(n):
                    samples[r, k_sample, i] = deliv[i]
                k_sample += 1
        for i in range(n):
            deliveries[r, i] = deliv[i]


def _chunks(runs: int, parallelism: int) -> list[tuple[int, int]]:
    parts = max(1, min(parallelism, runs))
    edges = np.linspace(0, runs, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _parallel(block, runs: int, parallelism: int):
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    chunks = _chunks(runs, parallelism)
    if len(chunks) <= 1:
        for a, b in chunks:
            block(a, b)
        return
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        for future in [pool.submit(block, a, b) for a, b in chunks]:
            future.result()


def run_experiment(config: TraceConfig, runs: int, parallelism: int = 1,
                   master_seed: int = 0, first_index: int = 0) -> ExperimentResult:
    """``runs`` independent runs; run i uses ``derive_seeds(master_seed, first_index + i)``.

    Results do not depend on ``parallelism``: runs never share state and each
    writes its own rows.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    n = config.n
    seeds = [derive_seeds(master_seed, first_index + i) for i in range(runs)]
    env_seeds = np.array([s[0] for s in seeds], dtype=np.uint64)
    pol_seeds = np.array([s[1] for s in seeds], dtype=np.uint64)
    shape = (runs, n)
    out = {k: np.zeros(shape, np.int64)
           for k in ("deliveries", "aoi_sum", "dropped", "served", "generated")}
    samples = np.zeros((runs, len(config.sample_times), n), np.int64)
    pol = config.policy
    clients = config.clients
    args = (
        np.array([c.channel.p for c in clients], float),
        np.array([c.channel.q for c in clients], float),
        np.array([c.channel.on_prob for c in clients], float),
        np.array([c.is_sensing for c in clients], np.bool_),
        np.array([c.lam if c.is_sensing else 0.0 for c in clients], float),
        np.array([1 if c.is_sensing else c.w for c in clients], np.int64),
        config.deadline_offsets,
        POLICY_CODES[pol.name],
        np.asarray(pol.mu, float),
        np.asarray(pol.sigma_sq, float),
        np.asarray(pol.z, float),
        np.asarray(pol.ell, float),
        INITIAL_STATES[config.initial_state],
        int(config.horizon),
        int(config.sample_every),
    )
    if pol.name == "vwd" and np.any(pol.sigma_sq <= 0):
        raise ValueError("VWD needs strictly positive target variances")

    def block(a, b):
        _simulate_block(env_seeds, pol_seeds, a, b, *args, out["deliveries"], out["aoi_sum"],
                        out["dropped"], out["served"], out["generated"], samples)

    _parallel(block, runs, parallelism)
    return ExperimentResult(config, master_seed, samples=samples, first_index=first_index, **out)


def run_trace(config: TraceConfig, seed: int = 0, index: int = 0) -> RunMetrics:
    """One run on the compiled engine; equal to ``reference_run`` with the same seeds."""
    return run_experiment(config, 1, 1, seed, first_index=index).run(0)


# ---------------------------------------------------------------------------
# raw channel statistics

@numba.njit(cache=True, nogil=True)
def _channel_block(env_seeds, start, stop, p, q, on_prob, means, horizon, batch,
                   totals, batch_sq, n_batches):
    n = len(p)
    n_masks = len(means)
    env = np.empty(1, np.uint64)
    on = np.zeros(n, np.bool_)
    seg = np.zeros(n_masks, np.int64)
    for r in range(start, stop):
        env[0] = env_seeds[r]
        seg[:] = 0
        for m in range(n_masks):
            totals[r, m] = 0
            batch_sq[r, m] = 0.0
        n_batches[r] = 0
        for t in range(1, horizon + 1):
            bits = 0
            for i in range(n):
                u = _uniform(env)
                if t == 1:
                    on[i] = u < on_prob[i]
                elif on[i]:
                    on[i] = not (u < p[i])
                else:
                    on[i] = u < q[i]
                if on[i]:
                    bits |= 1 << i
            for m in range(1, n_masks):
                if bits & m:
                    seg[m] += 1
            if t % batch == 0:
                for m in range(1, n_masks):
                    dev = seg[m] - batch * means[m]
                    batch_sq[r, m] += dev * dev / batch
                    totals[r, m] += seg[m]
                    seg[m] = 0
                n_batches[r] += 1
        for m in range(1, n_masks):
            totals[r, m] += seg[m]


@dataclass
class ChannelStatistics:
    """Empirical ON statistics of every non-empty channel subset (indexed by bitmask)."""

    mean: np.ndarray
    cross_run_variance: np.ndarray
    batch_variance: np.ndarray
    runs: int
    horizon: int
    batch: int

    def subset(self, members: Sequence[int]) -> tuple[float, float]:
        mask = sum(1 << i for i in members)
        return float(self.mean[mask]), float(self.batch_variance[mask])


def channel_statistics(params_list: Sequence[ge.GeChannelParams], runs: int, horizon: int,
                       master_seed: int = 0, batch: int = 5000,
                       parallelism: int = 1) -> ChannelStatistics:
    """Simulate stationary channels and estimate (m_S, v_S^2) for every subset S.

    ``cross_run_variance`` is the sample variance across runs of
    (sum_t X_S(t) - T m_S)/sqrt(T). ``batch_variance`` averages
    (segment sum - L m_S)^2 / L over all length-``batch`` segments of all
    runs, which uses the same slots with far less sampling noise.
    """
    n = len(params_list)
    if runs < 2:
        raise ValueError("need at least 2 runs")
    if horizon < batch:
        raise ValueError("horizon must cover at least one batch")
    means = np.array(ge.subset_mean_table(params_list))
    env_seeds = np.array([derive_seeds(master_seed, i)[0] for i in range(runs)], np.uint64)
    totals = np.zeros((runs, 1 << n), np.int64)
    batch_sq = np.zeros((runs, 1 << n))
    n_batches = np.zeros(runs, np.int64)
    p = np.array([c.p for c in params_list])
    q = np.array([c.q for c in params_list])
    on_prob = np.array([c.on_prob for c in params_list])

    def block(a, b):
        _channel_block(env_seeds, a, b, p, q, on_prob, means, horizon, batch, totals,
                       batch_sq, n_batches)

    _parallel(block, runs, parallelism)
    mean = totals.mean(axis=0) / horizon
    cross = ((totals - horizon * means) / math.sqrt(horizon)).var(axis=0, ddof=1)
    batch_var = batch_sq.sum(axis=0) / n_batches.sum()
    mean[0] = cross[0] = batch_var[0] = 0.0
    return ChannelStatistics(mean, cross, batch_var, runs, horizon, batch)
