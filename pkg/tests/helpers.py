"""Independent oracles shared by the unit and acceptance tests."""

import itertools

import numpy as np

from secondorder import gilbert_elliott as ge
from secondorder.optimizer import optimal_delay, objective_terms
from secondorder.second_order import DeliveryTargets


def brute_force_violation(mu, params, delta):
    """Most violated proper subset by explicit enumeration of index tuples."""
    n = len(mu)
    best, best_val = None, 0.0
    for size in range(1, n):
        for subset in itertools.combinations(range(n), size):
            off = 1.0
            for i in subset:
                off *= params[i].off_prob
            val = sum(mu[i] for i in subset) - (1.0 - off - delta)
            if val > best_val + 1e-15:
                best, best_val = frozenset(subset), val
    return best, best_val


def random_feasible_objectives(problem, samples, rng, batch=20_000):
    """Objective at uniformly drawn points of the delta-relaxed inner bound.

    Sensing means are Dirichlet draws over the sensing budget (rejected if a
    subset constraint fails); standard deviations split sqrt(v_full^2) times a
    random factor >= 1; configurable delays are drawn around their optimum.
    """
    clients = problem.clients
    n = len(clients)
    params = problem.channels
    sens = [i for i, c in enumerate(clients) if c.is_sensing]
    fixed = np.zeros(n)
    for i, c in enumerate(clients):
        if not c.is_sensing:
            fixed[i] = 1.0 / c.w
    budget = problem.channel_full.mean - fixed.sum()
    table = ge.subset_mean_table(params)
    masks = np.arange(1, (1 << n) - 1)
    member = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
    std_full = problem.channel_full.std
    values = []
    while len(values) < samples:
        mu = np.tile(fixed, (batch, 1))
        if sens:
            mu[:, sens] = rng.dirichlet(np.ones(len(sens)), size=batch) * budget
        ok = ((member @ mu.T) <= (table[masks] - problem.delta)[:, None] + 1e-15).all(axis=0)
        mu = mu[ok]
        if len(mu) == 0:
            continue
        s = rng.dirichlet(np.ones(n), size=len(mu)) * std_full
        s *= 1.0 + rng.exponential(0.05, size=(len(mu), 1))
        s = np.maximum(s, 1e-9)
        for row_mu, row_s in zip(mu, s):
            var = row_s ** 2
            delays = []
            for i, c in enumerate(clients):
                if c.is_sensing:
                    delays.append(None)
                elif c.configurable_delay:
                    delays.append(optimal_delay(var[i], c.beta, c.gamma)
                                  * float(np.exp(rng.normal(0.0, 0.2))))
                else:
                    delays.append(float(c.ell))
            targets = DeliveryTargets.from_arrays(row_mu, var)
            values.append(float(objective_terms(targets, delays, problem).sum()))
            if len(values) >= samples:
                break
    return np.array(values)
