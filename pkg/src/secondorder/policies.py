"""Per-slot scheduling rules: VWD and six baselines.

Every ``*_select`` function is pure: it looks at a :class:`SchedulerObservation`
and returns the index (0-based) of an ON client or ``None`` when no channel
is ON. Ties always go to the lowest index. Randomised rules consume exactly
one ``rng.random()`` draw, and only when they have a candidate to pick.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gilbert_elliott import GeChannelParams
from .second_order import DeliveryTargets

POLICY_IDS = ("vwd", "whittle", "stationary", "maxweight", "wld", "dbldf", "stationary-dbldf")

#: Integer codes shared with the compiled simulation kernel.
POLICY_CODES = {name: code for code, name in enumerate(POLICY_IDS)}


@dataclass
class SchedulerObservation:
    """What the access point sees at the start of slot ``t``.

    ``aoi`` holds AoI(t-1) for sensing clients (for streaming clients the
    number of slots since their last delivery, used only by AoI-based rules).
    ``deficits`` holds d(t-1).
    """

    on: np.ndarray
    aoi: np.ndarray
    deficits: np.ndarray
    t: int
    has_packet: np.ndarray | None = None
    is_sensing: np.ndarray | None = None

    def __post_init__(self):
        self.on = np.asarray(self.on, dtype=bool)
        self.aoi = np.asarray(self.aoi, dtype=float)
        self.deficits = np.asarray(self.deficits, dtype=float)
        n = len(self.on)
        if self.is_sensing is None:
            self.is_sensing = np.ones(n, dtype=bool)
        if self.has_packet is None:
            self.has_packet = np.ones(n, dtype=bool)
        self.is_sensing = np.asarray(self.is_sensing, dtype=bool)
        self.has_packet = np.asarray(self.has_packet, dtype=bool)

    @property
    def on_set(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.on)]

    @property
    def odd_slot(self) -> bool:
        return self.t % 2 == 1


@dataclass
class DeficitState:
    """Deficits d_n(t) = t*mu_n - deliveries_n(t), recomputed from counts (no drift)."""

    mu: np.ndarray
    t: int = 0
    deliveries: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        if self.deliveries is None:
            self.deliveries = np.zeros(len(self.mu), dtype=np.int64)

    @property
    def deficits(self) -> np.ndarray:
        return self.t * self.mu - self.deliveries


def update_deficits(state: DeficitState, scheduled: Optional[int], delivered: bool,
                    targets: DeliveryTargets | None = None) -> DeficitState:
    """Advance one slot: every d_n grows by mu_n, the delivered client loses 1."""
    mu = state.mu if targets is None else targets.means
    deliveries = state.deliveries.copy()
    if delivered:
        if scheduled is None:
            raise ValueError("a delivery needs a scheduled client")
        deliveries[scheduled] += 1
    return DeficitState(mu, state.t + 1, deliveries)


def _argmax_on(values: np.ndarray, mask: np.ndarray) -> Optional[int]:
    if not mask.any():
        return None
    # np.argmax returns the first maximiser, i.e. the lowest index on ties
    return int(np.argmax(np.where(mask, values, -np.inf)))


def vwd_select(obs: SchedulerObservation, targets) -> Optional[int]:
    """argmax over ON clients of d_n / sqrt(sigma_n^2)."""
    var = targets.variances if isinstance(targets, DeliveryTargets) else np.asarray(targets)
    if np.any(var <= 0):
        raise ValueError("VWD needs strictly positive target variances")
    return _argmax_on(obs.deficits / np.sqrt(var), obs.on)


def whittle_index(aoi, on_prob):
    aoi = np.asarray(aoi, dtype=float)
    return aoi * aoi / 2.0 - aoi / 2.0 + aoi / np.asarray(on_prob, dtype=float)


def whittle_select(obs: SchedulerObservation,
                   channels: Sequence[GeChannelParams]) -> Optional[int]:
    on_prob = np.array([c.on_prob for c in channels])
    return _argmax_on(whittle_index(obs.aoi, on_prob), obs.on)


def _weighted_pick(pool: np.ndarray, mu: np.ndarray, rng) -> Optional[int]:
    """Pick from ``pool`` with probability proportional to mu (uniform if all zero)."""
    members = np.flatnonzero(pool)
    if len(members) == 0:
        return None
    u = rng.random()
    total = 0.0
    for i in members:
        total += mu[i]
    if total > 0.0:
        target = u * total
        acc = 0.0
        last = -1
        for i in members:
            if mu[i] > 0.0:
                acc += mu[i]
                last = int(i)
                if target < acc:
                    return int(i)
        return last
    k = min(int(u * len(members)), len(members) - 1)
    return int(members[k])


def stationary_randomized_select(obs: SchedulerObservation, mu, rng) -> Optional[int]:
    return _weighted_pick(obs.on, np.asarray(mu, dtype=float), rng)


def max_weight_select(obs: SchedulerObservation, lam, mu, z=None) -> Optional[int]:
    """argmax (AoI_n - z_n) / mu_n with z_n = 1/lambda_n unless given."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("max weight needs positive rates")
    z = 1.0 / np.asarray(lam, dtype=float) if z is None else np.asarray(z, dtype=float)
    return _argmax_on((obs.aoi - z) / mu, obs.on)


def wld_select(obs: SchedulerObservation, ell) -> Optional[int]:
    return _argmax_on(obs.deficits / np.asarray(ell, dtype=float), obs.on)


def dbldf_select(obs: SchedulerObservation) -> Optional[int]:
    return _argmax_on(obs.deficits, obs.on)


def stationary_dbldf_select(obs: SchedulerObservation, mu, rng) -> Optional[int]:
    """Odd slots: stationary among ON sensing clients; even slots: DBLDF among ON
    streaming clients. Either falls back to all ON clients when its pool is empty."""
    if obs.odd_slot:
        pool = obs.on & obs.is_sensing
        if not pool.any():
            pool = obs.on
        return _weighted_pick(pool, np.asarray(mu, dtype=float), rng)
    pool = obs.on & ~obs.is_sensing
    if not pool.any():
        pool = obs.on
    return _argmax_on(obs.deficits, pool)


@dataclass(frozen=True)
class Policy:
    """A named rule bound to the per-client parameters it needs."""

    name: str
    mu: np.ndarray
    sigma_sq: np.ndarray
    on_prob: np.ndarray
    z: np.ndarray
    ell: np.ndarray
    is_sensing: np.ndarray

    @property
    def code(self) -> int:
        return POLICY_CODES[self.name]

    @property
    def randomized(self) -> bool:
        return self.name in ("stationary", "stationary-dbldf")

    def select(self, obs: SchedulerObservation, rng=None) -> Optional[int]:
        name = self.name
        if name == "vwd":
            return vwd_select(obs, self.sigma_sq)
        if name == "whittle":
            return _argmax_on(whittle_index(obs.aoi, self.on_prob), obs.on)
        if name == "stationary":
            return stationary_randomized_select(obs, self.mu, rng)
        if name == "maxweight":
            return max_weight_select(obs, None, self.mu, z=self.z)
        if name == "wld":
            return wld_select(obs, self.ell)
        if name == "dbldf":
            return dbldf_select(obs)
        return stationary_dbldf_select(obs, self.mu, rng)


def make_policy(name: str, clients, targets: DeliveryTargets,
                delays: Sequence[float | None]) -> Policy:
    """Bind a registered policy to a client list and a solved allocation.

    Sensing clients use z = 1/lambda in max weight and ell = 1 in WLD;
    streaming clients use z = w and their delay ell.
    """
    if name not in POLICY_CODES:
        raise ValueError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_IDS)}")
    n = len(clients)
    if len(targets) != n or len(delays) != n:
        raise ValueError("clients, targets and delays differ in length")
    is_sensing = np.array([c.is_sensing for c in clients], dtype=bool)
    z = np.array([1.0 / c.lam if c.is_sensing else float(c.w) for c in clients])
    ell = np.array([1.0 if c.is_sensing else float(d) for c, d in zip(clients, delays)])
    on_prob = np.array([c.channel.on_prob for c in clients])
    return Policy(name, targets.means, targets.variances, on_prob, z, ell, is_sensing)
