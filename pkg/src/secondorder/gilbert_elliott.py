"""Gilbert-Elliott ON/OFF channels: closed-form second-order model and sampling.

Each channel is a two-state Markov chain. ``p`` is the probability of moving
from the good (ON) state to the bad (OFF) state and ``q`` the probability of
moving back. Channels of different clients are independent.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .models import SecondOrderModel

#: Upper limit on the truncation depth of the covariance series.
MAX_TRUNCATION = 10**6

#: Values of the variance series in (-NEGATIVE_CLAMP, 0) are rounding noise.
NEGATIVE_CLAMP = 1e-9


class ChannelState(enum.IntEnum):
    BAD = 0
    GOOD = 1

    @property
    def on(self) -> bool:
        return self is ChannelState.GOOD


@dataclass(frozen=True)
class GeChannelParams:
    p: float
    q: float

    def __post_init__(self):
        for name in ("p", "q"):
            value = getattr(self, name)
            if not (0.0 < value <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.p == 1.0 and self.q == 1.0:
            # period-2 chain, never converges to its stationary law
            raise ValueError("p = q = 1 gives a periodic channel; rejected")

    @property
    def on_prob(self) -> float:
        return self.q / (self.p + self.q)

    @property
    def off_prob(self) -> float:
        return self.p / (self.p + self.q)

    @property
    def mixing_rate(self) -> float:
        """Second eigenvalue 1 - p - q of the transition matrix."""
        return 1.0 - self.p - self.q


def stationary_on_prob(params: GeChannelParams) -> float:
    return params.q / (params.p + params.q)


def sample_initial_state(params: GeChannelParams, rng) -> ChannelState:
    """Draw a state from the stationary law. ``rng`` needs a ``random()`` method."""
    if rng.random() < stationary_on_prob(params):
        return ChannelState.GOOD
    return ChannelState.BAD


def step(state: ChannelState, params: GeChannelParams, rng) -> ChannelState:
    """Advance one slot. Always consumes exactly one uniform draw."""
    u = rng.random()
    if state == ChannelState.GOOD:
        return ChannelState.BAD if u < params.p else ChannelState.GOOD
    return ChannelState.GOOD if u < params.q else ChannelState.BAD


def g_function(params: GeChannelParams, k: int) -> float:
    """P(OFF at slot k | OFF at slot 1)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 1:
        return 1.0
    s = params.p + params.q
    return params.p / s + params.q / s * params.mixing_rate ** (k - 1)


def _tail_depth(params: GeChannelParams, tol: float) -> int:
    # smallest K with |G(K) - off_prob| < tol; the gap is on_prob * |rho|^(K-1)
    amplitude = params.on_prob
    rho = abs(params.mixing_rate)
    if amplitude < tol:
        return 1
    if rho == 0.0:
        return 2
    if rho >= 1.0:
        raise ValueError("no finite truncation: channel does not mix")
    k = 1 + max(0, math.floor(math.log(tol / amplitude) / math.log(rho)))
    # float log can land one off either way
    while k > 1 and amplitude * rho ** (k - 2) < tol:
        k -= 1
    while amplitude * rho ** (k - 1) >= tol:
        k += 1
    return k


def truncation_depth(params_list: Sequence[GeChannelParams], tol: float) -> int:
    """Smallest K such that every listed channel has |G(K) - p/(p+q)| < tol."""
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    depth = 1
    for params in params_list:
        depth = max(depth, _tail_depth(params, tol))
        if depth > MAX_TRUNCATION:
            raise ValueError(
                f"no finite truncation: depth exceeds cap {MAX_TRUNCATION}"
            )
    return depth


def subset_mean(params_list: Sequence[GeChannelParams]) -> float:
    """Fraction of slots in which at least one listed channel is ON."""
    off = 1.0
    for params in params_list:
        off *= params.off_prob
    return 1.0 - off


def subset_variance(params_list: Sequence[GeChannelParams], K: int) -> float:
    """Temporal variance of the union-ON indicator, covariance series cut at K."""
    if len(params_list) == 0:
        raise ValueError("subset_variance needs at least one channel")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    off = np.array([c.off_prob for c in params_list])
    on = np.array([c.on_prob for c in params_list])
    rho = np.array([c.mixing_rate for c in params_list])
    pi_off = float(np.prod(off))

    # G_n(k+1) - off_n = on_n * rho_n^k for k = 1..K
    k = np.arange(1, K + 1, dtype=float)
    g = off[:, None] + on[:, None] * np.power(rho[:, None], k[None, :])
    cov = (np.prod(g, axis=0) - pi_off) * pi_off
    value = 2.0 * float(np.sum(cov)) + pi_off - pi_off**2
    if value < 0.0:
        if value > -NEGATIVE_CLAMP:
            return 0.0
        raise ValueError(f"negative temporal variance {value}")
    return value


def channel_model(params_list: Sequence[GeChannelParams], tol: float = 1e-3,
                  K: int | None = None) -> SecondOrderModel:
    """(m_S, v_S^2) for a set of channels, with K from ``truncation_depth``."""
    if K is None:
        K = truncation_depth(params_list, tol)
    return SecondOrderModel(subset_mean(params_list), subset_variance(params_list, K))


def iid_subset_model(q_list: Sequence[float]) -> SecondOrderModel:
    """Model of independent i.i.d. channels, each ON with probability q."""
    for q in q_list:
        if not (0.0 <= q <= 1.0):
            raise ValueError(f"probability out of range: {q}")
    off = float(np.prod([1.0 - q for q in q_list]))
    return SecondOrderModel(1.0 - off, max(0.0, off - off * off))


@lru_cache(maxsize=16)
def _mean_table(params: tuple[GeChannelParams, ...]) -> np.ndarray:
    log_off = np.zeros(1)
    for c in params:
        log_off = np.concatenate([log_off, log_off + math.log(c.off_prob)])
    table = -np.expm1(log_off)
    table.setflags(write=False)
    return table


def subset_mean_table(params_list: Sequence[GeChannelParams]) -> np.ndarray:
    """m_S for every subset, indexed by bitmask (bit n set <=> client n in S).

    Read-only and cached; size 2^N.
    """
    return _mean_table(tuple(params_list))
