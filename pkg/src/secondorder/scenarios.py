"""Random instance generators for the experiment families.

* AoI instances: sensing clients on random Gilbert-Elliott channels.
* i.i.d. instances: q = 1 - p, lambda = alpha = 1.
* Streaming instances in heavy traffic: identical channels whose full-set
  mean equals the total frame rate N/(N+1).
* Mixed instances: half sensing, half streaming, resampled until feasible.
"""

from __future__ import annotations

import math

import numpy as np

from .gilbert_elliott import GeChannelParams
from .optimizer import CONFIGURABLE, AllocationProblem, ClientSpec, InfeasibleProblem, solve


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def _channel(rng) -> GeChannelParams:
    p, q = rng.uniform(0.05, 0.95, size=2)
    return GeChannelParams(float(p), float(q))


def aoi_instance(n: int, seed=0, weighted: bool = False) -> list[ClientSpec]:
    rng = _rng(seed)
    clients = []
    for i in range(n):
        channel = _channel(rng)
        lam = float(rng.uniform(0.1 / n, 1.0 / n))
        alpha = float(rng.uniform(1.0, 5.0)) if weighted else 1.0
        clients.append(ClientSpec.sensing(channel, lam, alpha, name=f"s{i}"))
    return clients


def iid_instance(n: int, seed=0) -> list[ClientSpec]:
    rng = _rng(seed)
    clients = []
    for i in range(n):
        q = float(rng.uniform(0.05, 0.95))
        clients.append(ClientSpec.sensing(GeChannelParams(1.0 - q, q), 1.0, 1.0, name=f"s{i}"))
    return clients


def heavy_traffic_channel(n: int, p: float = 0.5) -> GeChannelParams:
    """Channel with off probability (n+1)^(-1/n): n copies have full-set mean n/(n+1)."""
    off = (n + 1.0) ** (-1.0 / n)
    # off = p / (p + q)  =>  q = p (1 - off) / off
    return GeChannelParams(p, p * (1.0 - off) / off)


def default_delays(count: int, system_size: int | None = None) -> list[float]:
    """Delays 10, 20, ... (15, 25, ... in a 10-client system)."""
    start = 15 if (system_size or count) == 10 else 10
    return [float(start + 10 * i) for i in range(count)]


def streaming_instance(n: int, seed=0, configurable: bool = False,
                       p: float | None = None) -> list[ClientSpec]:
    """Heavy-traffic streaming clients, w = n+1.

    Fixed-delay mode uses ell = 10, 20, ... and beta = ell^2, gamma = 0.
    Configurable mode uses beta = 1 and gamma log-uniform in [1e-13, 1e-7].
    """
    rng = _rng(seed)
    if p is None:
        p = float(rng.uniform(0.05, 0.95))
    channel = heavy_traffic_channel(n, p)
    clients = []
    for i, ell in enumerate(default_delays(n)):
        if configurable:
            gamma = float(10.0 ** rng.uniform(-13.0, -7.0))
            clients.append(ClientSpec.streaming(channel, n + 1, CONFIGURABLE, 1.0, gamma,
                                                name=f"v{i}"))
        else:
            clients.append(ClientSpec.streaming(channel, n + 1, ell, ell**2, 0.0, name=f"v{i}"))
    return clients


def mixed_instance(n: int, seed=0, max_tries: int = 1000) -> list[ClientSpec]:
    """n/2 sensing and n/2 streaming clients (w = n+1, beta = ell^2), resampled until solvable."""
    if n < 2 or n % 2:
        raise ValueError("mixed instances need an even n >= 2")
    rng = _rng(seed)
    half = n // 2
    for _ in range(max_tries):
        clients = []
        for i in range(half):
            lam = float(rng.uniform(0.01 / n, 0.1 / n))
            clients.append(ClientSpec.sensing(_channel(rng), lam, 1.0, name=f"s{i}"))
        for i, ell in enumerate(default_delays(half, n)):
            clients.append(ClientSpec.streaming(_channel(rng), n + 1, ell, ell**2, 0.0,
                                                name=f"v{i}"))
        try:
            solve(AllocationProblem.build(clients), starts=1)
        except InfeasibleProblem:
            continue
        return clients
    raise RuntimeError("no feasible mixed instance found")


def single_client(p: float, q: float, lam: float | None = None, w: int | None = None,
                  ell: float | None = None) -> list[ClientSpec]:
    channel = GeChannelParams(p, q)
    if lam is not None:
        return [ClientSpec.sensing(channel, lam)]
    return [ClientSpec.streaming(channel, w, ell)]


def heavy_traffic_gap(clients) -> float:
    """m_full - sum(1/w) over streaming clients (0 means heavy traffic)."""
    off = math.prod(c.channel.off_prob for c in clients)
    return 1.0 - off - sum(1.0 / c.w for c in clients if not c.is_sensing)
