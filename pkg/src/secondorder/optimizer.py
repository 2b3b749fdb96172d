"""Second-order allocation: choose per-client (mu, sigma^2, ell) for VWD.

The objective is the weighted sum of approximate sensing AoI, approximate
streaming outage and a quadratic delay cost. Feasibility is the inner bound
of the capacity region with every proper-subset constraint tightened by
``delta``.

Solver outline
--------------
* Streaming means are pinned to 1/w; sensing means share the remaining
  budget m_full - sum(1/w).
* With s_n = sqrt(sigma_n^2) the variance constraint is linear
  (sum s_n >= sqrt(v_full^2)) and, for fixed means, the (s, ell) block has a
  closed-form / one-dimensional water-filling solution. Configurable delays
  are set by :func:`optimal_delay` at that solution.
* The sensing means are found by projected gradient descent (Barzilai-Borwein
  step, Armijo backtracking) on the resulting reduced objective. Projections
  onto the polytope use an exact primal active-set QP.
* The 2^N subset constraints are generated lazily by :func:`separation_oracle`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gilbert_elliott as ge
from .models import SecondOrderModel
from .second_order import (
    ENUMERATION_LIMIT,
    EQ_TOL,
    ChannelModelTable,
    ConstraintCheck,
    DeliveryTargets,
    aoi_approx,
    check_inner_bound,
    mask_members,
    outage_approx,
    subset_sums,
)

SENSING = "sensing"
STREAMING = "streaming"
CONFIGURABLE = "configurable"

#: Floor on sigma_n^2 (strict positivity of the delivery variance).
MIN_VARIANCE = 1e-6


class InfeasibleProblem(ValueError):
    """The allocation problem has no point in the relaxed inner bound."""

    def __init__(self, constraint: str, message: str, subset=None):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint
        self.subset = subset


@dataclass(frozen=True)
class ClientSpec:
    kind: str
    channel: ge.GeChannelParams
    lam: float | None = None
    alpha: float = 1.0
    w: int | None = None
    ell: float | str | None = None
    beta: float = 1.0
    gamma: float = 0.0
    name: str | None = None

    def __post_init__(self):
        if self.kind == SENSING:
            if self.lam is None or not (0.0 < self.lam <= 1.0):
                raise ValueError(f"sensing client needs lambda in (0, 1], got {self.lam}")
            if not self.alpha > 0:
                raise ValueError(f"alpha must be positive, got {self.alpha}")
        elif self.kind == STREAMING:
            if self.w is None or int(self.w) != self.w or self.w < 1:
                raise ValueError(f"streaming client needs integer w >= 1, got {self.w}")
            if self.beta < 0 or self.gamma < 0:
                raise ValueError("beta and gamma must be nonnegative")
            if self.ell == CONFIGURABLE:
                if not (self.gamma > 0 and self.beta > 0):
                    raise ValueError("configurable delay needs beta > 0 and gamma > 0")
            elif self.ell is None or not float(self.ell) > 0:
                raise ValueError(f"ell must be positive or '{CONFIGURABLE}', got {self.ell}")
        else:
            raise ValueError(f"unknown client kind {self.kind!r}")

    @classmethod
    def sensing(cls, channel, lam, alpha=1.0, name=None):
        return cls(SENSING, channel, lam=lam, alpha=alpha, name=name)

    @classmethod
    def streaming(cls, channel, w, ell, beta=1.0, gamma=0.0, name=None):
        return cls(STREAMING, channel, w=w, ell=ell, beta=beta, gamma=gamma, name=name)

    @property
    def is_sensing(self) -> bool:
        return self.kind == SENSING

    @property
    def configurable_delay(self) -> bool:
        return self.kind == STREAMING and self.ell == CONFIGURABLE


@dataclass(frozen=True)
class AllocationProblem:
    clients: tuple[ClientSpec, ...]
    delta: float
    channel_full: SecondOrderModel
    truncation_tol: float = 1e-3
    K: int | None = None

    @classmethod
    def build(cls, clients: Sequence[ClientSpec], delta: float | None = None,
              truncation_tol: float = 1e-3, K: int | None = None):
        """Compute the full-set channel model; ``delta`` defaults to 1e-3 * m_full."""
        clients = tuple(clients)
        if not clients:
            return cls(clients, delta if delta is not None else 1e-3,
                       SecondOrderModel(0.0, 0.0), truncation_tol, K)
        full = ge.channel_model([c.channel for c in clients], truncation_tol, K)
        if delta is None:
            delta = 1e-3 * full.mean
        if not delta > 0:
            raise ValueError(f"delta must be positive, got {delta}")
        return cls(clients, float(delta), full, truncation_tol, K)

    @property
    def channels(self) -> tuple[ge.GeChannelParams, ...]:
        return tuple(c.channel for c in self.clients)

    @property
    def sensing_index(self) -> np.ndarray:
        return np.array([i for i, c in enumerate(self.clients) if c.is_sensing], dtype=int)

    @property
    def streaming_index(self) -> np.ndarray:
        return np.array([i for i, c in enumerate(self.clients) if not c.is_sensing], dtype=int)

    def channel_table(self) -> ChannelModelTable:
        return ChannelModelTable.from_ge(self.channels, self.truncation_tol, self.K)


@dataclass
class AllocationSolution:
    targets: DeliveryTargets
    delays: tuple[float | None, ...]
    objective: float
    binding_constraints: list[ConstraintCheck] = field(default_factory=list)
    active_subsets: list[tuple[int, ...]] = field(default_factory=list)
    iterations: int = 0

    @property
    def means(self) -> np.ndarray:
        return self.targets.means

    @property
    def variances(self) -> np.ndarray:
        return self.targets.variances


def objective_terms(targets: DeliveryTargets, delays: Sequence[float | None],
                    problem: AllocationProblem) -> np.ndarray:
    """Per-client contribution to the network objective."""
    terms = np.zeros(len(problem.clients))
    for i, (client, model) in enumerate(zip(problem.clients, targets.models)):
        if client.is_sensing:
            terms[i] = client.alpha * aoi_approx(model, client.lam)
        else:
            ell = delays[i]
            terms[i] = client.beta * outage_approx(model, ell) + client.gamma * ell**2
    return terms


def objective_value(solution: AllocationSolution, problem: AllocationProblem) -> float:
    if len(solution.targets) != len(problem.clients):
        raise ValueError("solution and problem sizes differ")
    return float(objective_terms(solution.targets, solution.delays, problem).sum())


def optimal_delay(sigma_sq: float, beta: float, gamma: float) -> float:
    """Minimiser over ell of beta*sigma_sq/(2 ell) + gamma*ell^2."""
    if not (sigma_sq > 0 and beta > 0 and gamma > 0):
        raise ValueError("optimal_delay needs positive sigma_sq, beta and gamma")
    return (beta * sigma_sq / (4.0 * gamma)) ** (1.0 / 3.0)


def separation_oracle(mu: Sequence[float], channel_params: Sequence[ge.GeChannelParams],
                      delta: float) -> frozenset | None:
    """Most violated proper subset S with sum_{n in S} mu_n > m_S - delta, or None.

    Exact (full enumeration) up to ENUMERATION_LIMIT clients; above that a
    greedy prefix sweep that may miss violations.
    """
    mu = np.asarray(mu, dtype=float)
    n = len(mu)
    if n != len(channel_params):
        raise ValueError("mu and channel_params differ in length")
    if n < 2:
        return None
    if n <= ENUMERATION_LIMIT:
        violation = subset_sums(mu) - (ge.subset_mean_table(channel_params) - delta)
        proper = violation[1:-1]
        best = int(np.argmax(proper))
        if proper[best] > 0.0:
            return frozenset(mask_members(best + 1, n))
        return None

    log_off = np.array([math.log(c.off_prob) for c in channel_params])
    order = np.argsort(-(mu / -log_off), kind="stable")
    best_val, best_k = 0.0, 0
    sum_mu, sum_log = 0.0, 0.0
    for k in range(n - 1):
        sum_mu += mu[order[k]]
        sum_log += log_off[order[k]]
        val = sum_mu - (-math.expm1(sum_log) - delta)
        if val > best_val:
            best_val, best_k = val, k + 1
    if best_k == 0:
        return None
    return frozenset(int(i) for i in order[:best_k])


# ---------------------------------------------------------------------------
# variance block

def _waterfill(weights: np.ndarray, total: float, floor: float) -> np.ndarray:
    """argmin sum w_n s_n^2  s.t. sum s_n = total, s_n >= floor (all w_n > 0)."""
    n = len(weights)
    clipped = np.zeros(n, dtype=bool)
    inv = 1.0 / weights
    for _ in range(n + 1):
        free = ~clipped
        tau = (total - floor * clipped.sum()) / inv[free].sum()
        s = np.where(clipped, floor, tau * inv)
        newly = free & (s < floor)
        if not newly.any():
            return s
        clipped |= newly
    return s


def _split_variance(quad: np.ndarray, power: np.ndarray, total: float,
                    floor: float) -> np.ndarray:
    """Minimise sum quad_n s_n^2 + power_n s_n^(4/3) s.t. sum s >= total, s >= floor.

    Each client has either a quadratic or a 4/3-power cost (the other entry 0).
    Clients with no cost at all absorb whatever the others do not need.
    """
    n = len(quad)
    s = np.full(n, floor)
    if n == 0 or floor * n >= total:
        return s
    zero = (quad <= 0) & (power <= 0)
    if zero.any():
        s[zero] = (total - floor * (~zero).sum()) / zero.sum()
        return s
    if not (power > 0).any():
        return _waterfill(quad, total, floor)

    def shares(tau):
        out = np.full(n, floor)
        q = quad > 0
        out[q] = np.maximum(floor, tau / (2.0 * quad[q]))
        out[~q] = np.maximum(floor, (3.0 * tau / (4.0 * power[~q])) ** 3)
        return out

    lo, hi = 0.0, 1.0
    while shares(hi).sum() < total:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if shares(mid).sum() < total:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    s = shares(hi)
    free = s > floor
    s[free] *= (total - floor * (~free).sum()) / s[free].sum()
    return s


class _Reduced:
    """Objective over sensing means with the (s, ell) block minimised out."""

    def __init__(self, problem: AllocationProblem):
        clients = problem.clients
        self.problem = problem
        self.sens = problem.sensing_index
        self.stream = problem.streaming_index
        self.n = len(clients)
        self.alpha = np.array([clients[i].alpha for i in self.sens])
        self.lam = np.array([clients[i].lam for i in self.sens])
        quad = np.zeros(len(self.stream))
        power = np.zeros(len(self.stream))
        for k, i in enumerate(self.stream):
            c = clients[i]
            if c.configurable_delay:
                power[k] = 3.0 * c.gamma ** (1.0 / 3.0) * (c.beta / 4.0) ** (2.0 / 3.0)
            else:
                quad[k] = c.beta / (2.0 * float(c.ell))
        self.stream_quad = quad
        self.stream_power = power
        self.stream_const = np.array(
            [0.0 if clients[i].configurable_delay else clients[i].gamma * float(clients[i].ell) ** 2
             for i in self.stream])
        self.total_std = problem.channel_full.std
        self.floor = math.sqrt(MIN_VARIANCE)

    def split(self, mu_s: np.ndarray) -> np.ndarray:
        """Optimal s for every client (sensing block first, then streaming)."""
        quad = np.concatenate([self.alpha / (2.0 * mu_s**2), self.stream_quad])
        power = np.concatenate([np.zeros(len(self.sens)), self.stream_power])
        return _split_variance(quad, power, self.total_std, self.floor)

    def value_grad(self, mu_s: np.ndarray) -> tuple[float, np.ndarray]:
        s = self.split(mu_s)
        ss, sj = s[: len(self.sens)], s[len(self.sens):]
        a = self.alpha
        val = float(np.sum(a * 0.5 * (ss**2 / mu_s**2 + 1.0 / mu_s)))
        val += float(np.sum(self.stream_quad * sj**2 + self.stream_power * sj ** (4.0 / 3.0)))
        val += float(np.sum(self.stream_const))
        val += float(np.sum(a * (1.0 / self.lam - 0.5)))
        grad = a * 0.5 * (-2.0 * ss**2 / mu_s**3 - 1.0 / mu_s**2)
        return val, grad


# ---------------------------------------------------------------------------
# polytope {x >= lb, sum x = budget, A x <= b}

class _Polytope:
    def __init__(self, n: int, budget: float, lb: float):
        self.n = n
        self.budget = budget
        self.lb = lb
        self.rows: list[np.ndarray] = []
        self.rhs: list[float] = []

    def add(self, row: np.ndarray, rhs: float):
        self.rows.append(row.astype(float))
        self.rhs.append(float(rhs))

    def _inequalities(self):
        G = np.vstack([-np.eye(self.n)] + [r[None, :] for r in self.rows])
        h = np.concatenate([np.full(self.n, -self.lb), np.array(self.rhs)])
        return G, h

    def max_violation(self, x: np.ndarray) -> float:
        G, h = self._inequalities()
        return max(float(np.max(G @ x - h)), abs(float(x.sum()) - self.budget))

    def _simplex(self, y: np.ndarray) -> np.ndarray:
        # Euclidean projection onto {x >= lb, sum x = budget}
        z = y - self.lb
        r = self.budget - self.lb * self.n
        u = np.sort(z)[::-1]
        css = np.cumsum(u) - r
        k = np.arange(1, self.n + 1)
        rho = np.nonzero(u - css / k > 0)[0][-1]
        theta = css[rho] / (rho + 1.0)
        return np.maximum(z - theta, 0.0) + self.lb

    def feasible_point(self, y: np.ndarray, max_cycles: int = 20000) -> np.ndarray:
        """Approximate projection by Dykstra's method; used only to find a start."""
        x = self._simplex(y)
        if not self.rows:
            return x
        sets = len(self.rows) + 1
        incr = [np.zeros(self.n) for _ in range(sets)]
        for _ in range(max_cycles):
            prev = x
            for j in range(sets):
                z = x + incr[j]
                if j == 0:
                    nx = self._simplex(z)
                else:
                    a, b = self.rows[j - 1], self.rhs[j - 1]
                    over = a @ z - b
                    nx = z - max(over, 0.0) / (a @ a) * a
                incr[j] = z - nx
                x = nx
            if self.max_violation(x) < 1e-13 and np.max(np.abs(x - prev)) < 1e-13:
                break
        return x

    def project(self, y: np.ndarray, x0: np.ndarray, max_iter: int = 500) -> np.ndarray:
        """Exact Euclidean projection of ``y`` by primal active set from feasible ``x0``."""
        G, h = self._inequalities()
        eq = np.ones((1, self.n))
        x = x0.copy()
        working: list[int] = []
        for i in np.flatnonzero(G @ x - h >= -1e-12):
            trial = np.vstack([eq, G[working + [int(i)]]])
            if np.linalg.matrix_rank(trial) == trial.shape[0]:
                working.append(int(i))
        for _ in range(max_iter):
            A = np.vstack([eq, G[working]]) if working else eq
            r = y - x
            lam, *_ = np.linalg.lstsq(A.T, r, rcond=None)
            p = r - A.T @ lam
            if np.max(np.abs(p)) <= 1e-15 * (1.0 + np.max(np.abs(r))):
                mult = lam[1:]
                if len(mult) == 0 or mult.min() >= -1e-12:
                    return x
                working.pop(int(np.argmin(mult)))
                continue
            Gp = G @ p
            slack = np.maximum(h - G @ x, 0.0)
            step, block = 1.0, -1
            for i in np.flatnonzero(Gp > 1e-15):
                if i in working:
                    continue
                t = slack[i] / Gp[i]
                if t < step:
                    step, block = t, int(i)
            x = x + step * p
            if block >= 0:
                working.append(block)
        return x


def _descend(fun: _Reduced, poly: _Polytope, x: np.ndarray, tol: float,
             max_iter: int) -> tuple[np.ndarray, float, int]:
    f, g = fun.value_grad(x)
    eta = 1.0 / max(1e-12, float(np.max(np.abs(g))))
    it = 0
    for it in range(1, max_iter + 1):
        x_unit = poly.project(x - g, x)
        if np.max(np.abs(x_unit - x)) < tol * max(1.0, abs(f)):
            break
        # Armijo backtracking along the projection arc
        while True:
            cand = poly.project(x - eta * g, x)
            d = cand - x
            fc, gc = fun.value_grad(cand) if np.all(cand > 0) else (math.inf, None)
            if fc <= f + 1e-4 * float(g @ d) or eta < 1e-16:
                break
            eta *= 0.5
        if not math.isfinite(fc) or np.max(np.abs(d)) == 0.0:
            break
        sy = float(d @ (gc - g))
        eta = float(d @ d) / sy if sy > 0 else eta * 2.0
        eta = min(max(eta, 1e-16), 1e16)
        improved = f - fc
        x, f, g = cand, fc, gc
        if improved <= 1e-16 * max(1.0, abs(f)) and np.max(np.abs(d)) < 1e-14:
            break
    return x, f, it


def _assemble(problem: AllocationProblem, fun: _Reduced, mu_s: np.ndarray | None):
    n = len(problem.clients)
    mu = np.zeros(n)
    for i in fun.stream:
        mu[i] = 1.0 / problem.clients[i].w
    if mu_s is not None and len(fun.sens):
        mu[fun.sens] = mu_s
    s_all = fun.split(mu_s if mu_s is not None else np.zeros(0))
    s = np.zeros(n)
    s[fun.sens] = s_all[: len(fun.sens)]
    s[fun.stream] = s_all[len(fun.sens):]
    delays: list[float | None] = []
    for i, c in enumerate(problem.clients):
        if c.is_sensing:
            delays.append(None)
        elif c.configurable_delay:
            delays.append(float(optimal_delay(float(s[i]) ** 2, c.beta, c.gamma)))
        else:
            delays.append(float(c.ell))
    return mu, s**2, tuple(delays)


def solve(problem: AllocationProblem, starts: int = 8, tol: float = 1e-8,
          max_iter: int = 100_000, seed: int = 0) -> AllocationSolution:
    """Minimise the network objective over the delta-relaxed inner bound."""
    clients = problem.clients
    if not clients:
        return AllocationSolution(DeliveryTargets(()), (), 0.0)
    fun = _Reduced(problem)
    m_full = problem.channel_full.mean
    stream_rate = sum(1.0 / clients[i].w for i in fun.stream)
    budget = m_full - stream_rate
    params = problem.channels
    n_s = len(fun.sens)

    if budget < -EQ_TOL:
        raise InfeasibleProblem(
            "total_mean", f"streaming rates {stream_rate:.6g} exceed channel mean {m_full:.6g}")
    if n_s == 0 and abs(budget) > EQ_TOL:
        raise InfeasibleProblem(
            "total_mean", f"streaming rates {stream_rate:.6g} must equal channel mean "
            f"{m_full:.6g} when there are no sensing clients")
    if n_s and budget <= problem.delta:
        raise InfeasibleProblem(
            "total_mean", f"sensing budget {budget:.6g} does not exceed delta {problem.delta:.6g}")

    fixed = np.zeros(len(clients))
    for i in fun.stream:
        fixed[i] = 1.0 / clients[i].w
    # a subset violated with every sensing mean at zero can never be repaired
    sub = separation_oracle(fixed, params, problem.delta - EQ_TOL)
    if sub is not None and not any(clients[i].is_sensing for i in sub):
        members = sorted(sub)
        raise InfeasibleProblem("subset_mean", "streaming rates violate the subset "
                                f"constraint on clients {members}", members)
    if n_s and len(fun.stream):
        stream_set = [int(i) for i in fun.stream]
        slack = ge.subset_mean([params[i] for i in stream_set]) - fixed.sum()
        if slack < problem.delta - EQ_TOL:
            raise InfeasibleProblem("subset_mean", "streaming rates violate the subset "
                                    f"constraint on clients {stream_set}", stream_set)

    iterations = 0
    active: list[tuple[int, ...]] = []
    mu_s = None
    if n_s:
        lb = min(1e-9, budget / (10.0 * n_s))
        poly = _Polytope(n_s, budget, lb)
        pos = {int(i): k for k, i in enumerate(fun.sens)}
        rng = np.random.default_rng(seed)
        candidates = [np.full(n_s, budget / n_s)]
        candidates += [rng.dirichlet(np.ones(n_s)) * budget for _ in range(max(0, starts - 1))]
        best_x = None
        for _round in range(4 * len(clients) + 64):
            best_f = math.inf
            starts_now = candidates if best_x is None else [best_x] + candidates
            for x0 in starts_now:
                x = poly.feasible_point(x0)
                if poly.max_violation(x) > 1e-9:
                    raise InfeasibleProblem(
                        "subset_mean", "no sensing allocation satisfies the subset constraints",
                        active[-1] if active else None)
                x, f, it = _descend(fun, poly, x, tol, max_iter)
                iterations += it
                if f < best_f:
                    best_f, best_x = f, x
            full_mu = fixed.copy()
            full_mu[fun.sens] = best_x
            sub = separation_oracle(full_mu, params, problem.delta - 1e-10)
            if sub is None:
                break
            members = tuple(sorted(sub))
            row = np.zeros(n_s)
            for i in members:
                if i in pos:
                    row[pos[i]] = 1.0
            if not row.any() or members in active:
                raise InfeasibleProblem("subset_mean", f"cannot satisfy subset {list(members)}",
                                        list(members))
            rhs = ge.subset_mean([params[i] for i in members]) - problem.delta \
                - sum(fixed[i] for i in members)
            poly.add(row, rhs)
            active.append(members)
        mu_s = best_x

    mu, var, delays = _assemble(problem, fun, mu_s)
    targets = DeliveryTargets.from_arrays(mu, var)
    report = check_inner_bound(targets, problem.channel_table(), problem.delta)
    if not report.feasible:
        raise RuntimeError("solver returned a point outside the inner bound: "
                           + "; ".join(c.describe() for c in report.violations))
    binding = [c for c in report.binding() if c.name != "subset_mean"]
    for members in active:
        slack = ge.subset_mean([params[i] for i in members]) - float(mu[list(members)].sum())
        if abs(slack - problem.delta) <= 1e-6:
            binding.append(ConstraintCheck("subset_mean", slack, True, members, problem.delta))
    solution = AllocationSolution(targets, delays, 0.0, binding, active, iterations)
    solution.objective = objective_value(solution, problem)
    return solution
