"""Second-order delivery models, performance approximations and capacity bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import gilbert_elliott as ge
from .models import SecondOrderModel

__all__ = [
    "SecondOrderModel",
    "ChannelModelTable",
    "DeliveryTargets",
    "ConstraintCheck",
    "FeasibilityReport",
    "first_hitting_moments",
    "aoi_approx",
    "outage_approx",
    "timely_throughput",
    "check_outer_bound",
    "check_inner_bound",
    "reference_delivery_sample",
]

#: Absolute tolerance for the total-mean equality and other float comparisons.
EQ_TOL = 1e-9

#: Above this client count the subset constraints are probed by the greedy oracle.
ENUMERATION_LIMIT = 20


class ChannelModelTable:
    """Second-order channel model indexed by client subsets.

    Either built from Gilbert-Elliott parameters (entries computed on demand)
    or from an explicit mapping ``frozenset -> SecondOrderModel``.
    """

    def __init__(self, n: int, entries: Mapping[frozenset, SecondOrderModel] | None = None,
                 params: Sequence[ge.GeChannelParams] | None = None, tol: float = 1e-3,
                 K: int | None = None):
        if (entries is None) == (params is None):
            raise ValueError("give exactly one of entries or params")
        self.n = n
        self.tol = tol
        self.K = K
        self.params = tuple(params) if params is not None else None
        self._entries: dict[frozenset, SecondOrderModel] = dict(entries or {})
        full = frozenset(range(n))
        if self.params is None:
            if full not in self._entries:
                raise ValueError("channel table must contain the full client set")
        elif len(self.params) != n:
            raise ValueError("params length does not match n")

    @classmethod
    def from_ge(cls, params: Sequence[ge.GeChannelParams], tol: float = 1e-3,
                K: int | None = None):
        """Table over GE channels; variances use depth ``K`` if given, else ``tol``."""
        return cls(len(params), params=params, tol=tol, K=K)

    @property
    def full_set(self) -> frozenset:
        return frozenset(range(self.n))

    def model(self, subset: Iterable[int]) -> SecondOrderModel:
        key = frozenset(subset)
        if key not in self._entries:
            if self.params is None:
                raise KeyError(f"subset {sorted(key)} not in channel table")
            chans = [self.params[i] for i in sorted(key)]
            self._entries[key] = ge.channel_model(chans, self.tol, self.K)
        return self._entries[key]

    def mean(self, subset: Iterable[int]) -> float:
        key = frozenset(subset)
        if self.params is not None:
            return ge.subset_mean([self.params[i] for i in sorted(key)])
        return self.model(key).mean

    @property
    def full(self) -> SecondOrderModel:
        return self.model(self.full_set)

    def mean_table(self) -> np.ndarray:
        """m_S for all 2^N subsets indexed by bitmask."""
        if self.params is not None:
            return ge.subset_mean_table(self.params)
        table = np.empty(1 << self.n)
        table[0] = 0.0
        for mask in range(1, 1 << self.n):
            table[mask] = self.mean(mask_members(mask, self.n))
        return table


@dataclass(frozen=True)
class DeliveryTargets:
    """Per-client delivery models (mu_n, sigma_n^2)."""

    models: tuple[SecondOrderModel, ...]

    @classmethod
    def from_arrays(cls, means: Sequence[float], variances: Sequence[float]):
        if len(means) != len(variances):
            raise ValueError("means and variances differ in length")
        return cls(tuple(SecondOrderModel(float(m), float(v))
                         for m, v in zip(means, variances)))

    def __len__(self):
        return len(self.models)

    @property
    def means(self) -> np.ndarray:
        return np.array([m.mean for m in self.models])

    @property
    def variances(self) -> np.ndarray:
        return np.array([m.variance for m in self.models])


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    slack: float
    satisfied: bool
    subset: tuple[int, ...] | None = None
    required: float = 0.0

    @property
    def margin(self) -> float:
        """Slack beyond what the region requires (negative when violated)."""
        return self.slack - self.required

    def describe(self) -> str:
        where = "" if self.subset is None else f" S={list(self.subset)}"
        state = "ok" if self.satisfied else "VIOLATED"
        return f"{self.name}{where}: slack={self.slack:.6g} ({state})"


@dataclass
class FeasibilityReport:
    """Outcome of a capacity-region check.

    ``checks`` holds the aggregate constraints, the tightest subset constraint
    and every violated subset constraint.
    """

    region: str
    checks: list[ConstraintCheck] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return all(c.satisfied for c in self.checks)

    @property
    def violations(self) -> list[ConstraintCheck]:
        return [c for c in self.checks if not c.satisfied]

    def binding(self, tol: float = 1e-6) -> list[ConstraintCheck]:
        return [c for c in self.checks if c.satisfied and abs(c.margin) <= tol]

    def __bool__(self):
        return self.feasible


def first_hitting_moments(model: SecondOrderModel) -> tuple[float, float]:
    """First two moments of the time a drifted Brownian motion needs to rise by 1."""
    mu, var = model.mean, model.variance
    if mu <= 0.0:
        raise ValueError("zero delivery rate")
    return 1.0 / mu, var / mu**3 + 1.0 / mu**2


def aoi_approx(model: SecondOrderModel, lam: float) -> float:
    """Long-run average AoI of a sensor with update probability ``lam`` per slot."""
    if lam <= 0.0:
        raise ValueError("no update generation")
    if lam > 1.0:
        raise ValueError(f"lambda must be <= 1, got {lam}")
    h1, h2 = first_hitting_moments(model)
    return h2 / (2.0 * h1) + 1.0 / lam - 0.5


def outage_approx(model: SecondOrderModel, ell: float) -> float:
    """Deadline-miss rate of a stream served at exactly its frame rate.

    Only meaningful when the delivery mean equals 1/w; the caller enforces it.
    """
    if not ell > 0:
        raise ValueError(f"ell must be positive, got {ell}")
    return model.variance / (2.0 * ell)


def timely_throughput(w: int, outage: float) -> float:
    if w < 1:
        raise ValueError(f"w must be >= 1, got {w}")
    return 1.0 / w - outage


def subset_sums(values: Sequence[float]) -> np.ndarray:
    """Sum of ``values`` over every subset, indexed by bitmask."""
    sums = np.zeros(1)
    for v in values:
        sums = np.concatenate([sums, sums + float(v)])
    return sums


def mask_members(mask: int, n: int) -> tuple[int, ...]:
    return tuple(i for i in range(n) if mask >> i & 1)


def _subset_checks(mu: np.ndarray, channel: ChannelModelTable, required_slack: float,
                   name: str) -> list[ConstraintCheck]:
    n = len(mu)
    if n < 2:
        return []
    if n <= ENUMERATION_LIMIT:
        slack = channel.mean_table() - subset_sums(mu)
        proper = slack[1:-1]
        bad = np.flatnonzero(proper < required_slack - EQ_TOL) + 1
        checks = []
        for mask in bad:
            members = mask_members(int(mask), n)
            checks.append(ConstraintCheck(name, float(slack[mask]), False, members,
                                          required_slack))
        tight = int(np.argmin(proper)) + 1
        if tight not in set(bad.tolist()):
            members = mask_members(tight, n)
            checks.append(ConstraintCheck(name, float(slack[tight]), True, members,
                                          required_slack))
        return checks

    if channel.params is None:
        raise ValueError("explicit channel tables are limited to "
                         f"{ENUMERATION_LIMIT} clients")
    from .optimizer import separation_oracle

    subset = separation_oracle(mu, channel.params, required_slack - EQ_TOL)
    if subset is None:
        return []
    members = tuple(sorted(subset))
    slack = channel.mean(members) - float(mu[list(members)].sum())
    return [ConstraintCheck(name, slack, False, members, required_slack)]


def _check(targets: DeliveryTargets, channel: ChannelModelTable, delta: float,
           strict_variance: bool, region: str) -> FeasibilityReport:
    if len(targets) != channel.n:
        raise ValueError("targets and channel table cover different client counts")
    mu = targets.means
    var = targets.variances
    full = channel.full
    report = FeasibilityReport(region)
    report.checks.extend(_subset_checks(mu, channel, delta, "subset_mean"))

    total = full.mean - float(mu.sum())
    report.checks.append(ConstraintCheck("total_mean", total, abs(total) <= EQ_TOL))

    spread = float(np.sqrt(var).sum()) - full.std
    report.checks.append(ConstraintCheck("variance", spread, spread >= -EQ_TOL))

    low = float(mu.min()) if len(mu) else 0.0
    report.checks.append(ConstraintCheck("nonnegative_mean", low, low >= 0.0))
    if strict_variance:
        low_var = float(var.min()) if len(var) else 1.0
        report.checks.append(ConstraintCheck("positive_variance", low_var, low_var > 0.0))
    return report


def check_outer_bound(targets: DeliveryTargets, channel: ChannelModelTable) -> FeasibilityReport:
    """Necessary conditions for membership in the second-order capacity region."""
    return _check(targets, channel, 0.0, strict_variance=False, region="outer")


def check_inner_bound(targets: DeliveryTargets, channel: ChannelModelTable,
                      delta: float) -> FeasibilityReport:
    """Sufficient conditions, with every proper subset held ``delta`` below m_S."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return _check(targets, channel, delta, strict_variance=True, region="inner")


def reference_delivery_sample(model: SecondOrderModel, horizon: int, rng) -> np.ndarray:
    """Binary delivery sequence Z'(1..horizon) driven by a drifted Brownian motion.

    The motion is observed at slot boundaries; a delivery is emitted when it
    has climbed one unit above the level reached at the previous delivery
    (the level starts at 0, i.e. a delivery at slot 0). At most one delivery
    per slot.
    """
    if model.mean <= 0.0 or model.variance <= 0.0:
        raise ValueError("reference delivery needs positive mean and variance")
    increments = rng.normal(model.mean, math.sqrt(model.variance), size=horizon)
    path = np.cumsum(increments)
    out = np.zeros(horizon, dtype=np.int8)
    level = 0.0
    for t in range(horizon):
        if path[t] - level >= 1.0:
            out[t] = 1
            level += 1.0
    return out
