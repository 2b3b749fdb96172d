"""Experiment configuration documents (JSON, or YAML when PyYAML is installed).

Example::

    {
      "clients": [
        {"id": "cam", "kind": "sensing", "channel": {"p": 0.3, "q": 0.3},
         "lambda": 0.5, "alpha": 1.0},
        {"id": "vid", "kind": "streaming", "channel": {"p": 0.2, "q": 0.4},
         "w": 4, "ell": 10, "beta": 1.0, "gamma": 0.0}
      ],
      "policy": "vwd",
      "horizon": 50000,
      "runs": 10,
      "master_seed": 0
    }

All validation errors are collected and reported together, each with the
path of the offending entry (``clients[0].channel.p``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .gilbert_elliott import GeChannelParams
from .optimizer import CONFIGURABLE, SENSING, STREAMING, ClientSpec
from .policies import POLICY_IDS

TOP_LEVEL_KEYS = {
    "clients", "policy", "horizon", "runs", "master_seed", "delta", "truncation_tol",
    "output_path", "parallelism", "initial_channel_state", "sample_every", "sweep",
    "truncation_depth",
}
SENSING_KEYS = {"id", "kind", "channel", "lambda", "alpha"}
STREAMING_KEYS = {"id", "kind", "channel", "w", "ell", "beta", "gamma"}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ExperimentConfig:
    clients: list[ClientSpec]
    client_ids: list[str]
    policy: list[str] = field(default_factory=lambda: ["vwd"])
    horizon: int = 50_000
    runs: int = 1
    master_seed: int = 0
    delta: float | None = None
    truncation_tol: float = 1e-3
    output_path: str | None = None
    parallelism: int = 1
    initial_channel_state: str | None = None
    sample_every: int = 100
    sweep: dict | None = None
    truncation_depth: int | None = None


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


class _Collector:
    def __init__(self):
        self.errors: list[str] = []

    def add(self, msg: str):
        self.errors.append(msg)

    def number(self, obj, key, path, lo=None, hi=None, lo_open=False, required=True,
               default=None):
        if key not in obj:
            if required:
                self.add(f"{_join(path, key)} is required")
            return default
        value = obj[key]
        if not _is_number(value):
            self.add(f"{_join(path, key)} must be a number")
            return default
        if (lo is not None and (value < lo or (lo_open and value == lo))) or \
                (hi is not None and value > hi):
            self.add(f"{_join(path, key)} out of range")
            return default
        return float(value)

    def integer(self, obj, key, path, lo, default):
        if key not in obj:
            return default
        value = obj[key]
        if not _is_int(value):
            self.add(f"{_join(path, key)} must be an integer")
            return default
        if value < lo:
            self.add(f"{_join(path, key)} out of range")
            return default
        return value


def _parse_client(raw, path: str, col: _Collector):
    if not isinstance(raw, dict):
        col.add(f"{path} must be a mapping")
        return None, None
    kind = raw.get("kind")
    if kind not in (SENSING, STREAMING):
        col.add(f"{path}.kind must be 'sensing' or 'streaming'")
        return None, raw.get("id")
    allowed = SENSING_KEYS if kind == SENSING else STREAMING_KEYS
    for key in sorted(set(raw) - allowed):
        col.add(f"{path}.{key} is not a valid key for a {kind} client")
    ident = raw.get("id")
    if ident is not None and not isinstance(ident, (str, int)):
        col.add(f"{path}.id must be a string")
        ident = None
    before = len(col.errors)
    channel = raw.get("channel")
    p = q = None
    if not isinstance(channel, dict):
        col.add(f"{path}.channel is required (mapping with p and q)")
    else:
        for key in sorted(set(channel) - {"p", "q"}):
            col.add(f"{path}.channel.{key} is not a valid key")
        p = col.number(channel, "p", f"{path}.channel", 0.0, 1.0, lo_open=True)
        q = col.number(channel, "q", f"{path}.channel", 0.0, 1.0, lo_open=True)
        if p == 1.0 and q == 1.0:
            col.add(f"{path}.channel p = q = 1 is a periodic channel")
    if kind == SENSING:
        lam = col.number(raw, "lambda", path, 0.0, 1.0, lo_open=True)
        alpha = col.number(raw, "alpha", path, 0.0, lo_open=True, required=False, default=1.0)
        if len(col.errors) > before:
            return None, ident
        return ClientSpec.sensing(GeChannelParams(p, q), lam, alpha,
                                  name=None if ident is None else str(ident)), ident
    w = raw.get("w")
    if w is None:
        col.add(f"{path}.w is required")
    elif not _is_int(w) or w < 1:
        col.add(f"{path}.w out of range (integer >= 1)")
    ell = raw.get("ell")
    if ell is None:
        col.add(f"{path}.ell is required")
    elif ell != CONFIGURABLE and (not _is_number(ell) or ell <= 0):
        col.add(f"{path}.ell must be a positive number or '{CONFIGURABLE}'")
    beta = col.number(raw, "beta", path, 0.0, required=False, default=1.0)
    gamma = col.number(raw, "gamma", path, 0.0, required=False, default=0.0)
    if ell == CONFIGURABLE and not (gamma and gamma > 0 and beta and beta > 0):
        col.add(f"{path}.gamma must be positive when ell is '{CONFIGURABLE}'")
    if len(col.errors) > before:
        return None, ident
    ell_value = ell if ell == CONFIGURABLE else float(ell)
    return ClientSpec.streaming(GeChannelParams(p, q), int(w), ell_value, beta, gamma,
                                name=None if ident is None else str(ident)), ident


def config_from_dict(doc) -> ExperimentConfig:
    col = _Collector()
    if not isinstance(doc, dict):
        raise ConfigError(["configuration must be a mapping"])
    for key in sorted(set(doc) - TOP_LEVEL_KEYS):
        col.add(f"{key} is not a valid key")

    clients, ids = [], []
    raw_clients = doc.get("clients")
    if not isinstance(raw_clients, list):
        col.add("clients is required (list)")
        raw_clients = []
    seen: dict[str, str] = {}
    for i, raw in enumerate(raw_clients):
        path = f"clients[{i}]"
        spec, ident = _parse_client(raw, path, col)
        key = str(ident) if ident is not None else str(i)
        if ident is not None and key in seen:
            col.add(f"duplicate client id {key!r} at {seen[key]}.id and {path}.id")
        seen.setdefault(key, path)
        if spec is not None:
            clients.append(spec)
            ids.append(key)

    policy = doc.get("policy", "vwd")
    if isinstance(policy, str):
        policy = [p.strip() for p in policy.split(",") if p.strip()]
    if not isinstance(policy, list) or not policy:
        col.add("policy must be an identifier or a list of identifiers")
        policy = ["vwd"]
    for i, name in enumerate(policy):
        if name not in POLICY_IDS:
            col.add(f"policy[{i}] unknown policy {name!r}")

    horizon = col.integer(doc, "horizon", "", 1, 50_000)
    runs = col.integer(doc, "runs", "", 1, 1)
    seed = col.integer(doc, "master_seed", "", 0, 0)
    parallelism = col.integer(doc, "parallelism", "", 1, 1)
    sample_every = col.integer(doc, "sample_every", "", 1, 100)
    depth = col.integer(doc, "truncation_depth", "", 1, None)
    delta = col.number(doc, "delta", "", 0.0, lo_open=True, required=False)
    tol = col.number(doc, "truncation_tol", "", 0.0, lo_open=True, required=False,
                     default=1e-3)
    output = doc.get("output_path")
    if output is not None and not isinstance(output, str):
        col.add("output_path must be a string")
    init = doc.get("initial_channel_state")
    if init not in (None, "stationary", "good", "bad"):
        col.add("initial_channel_state must be 'stationary', 'good' or 'bad'")
    sweep = doc.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict) or len(sweep) != 1 or \
                next(iter(sweep)) not in ("p", "ell"):
            col.add("sweep must be a mapping with a single key 'p' or 'ell'")
        else:
            key, values = next(iter(sweep.items()))
            if not isinstance(values, list) or not all(_is_number(v) and v > 0 for v in values):
                col.add(f"sweep.{key} must be a list of positive numbers")
            elif key == "p" and any(v > 1 for v in values):
                col.add("sweep.p out of range")
    if col.errors:
        raise ConfigError(col.errors)
    return ExperimentConfig(clients, ids, policy, horizon, runs, seed, delta, tol, output,
                            parallelism, init, sample_every, sweep, depth)


def parse_config(text: str) -> ExperimentConfig:
    """Parse a JSON (or YAML) document into a validated :class:`ExperimentConfig`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        try:
            import yaml
        except ImportError:
            raise ConfigError([f"not valid JSON: {exc}"]) from None
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as yexc:
            raise ConfigError([f"not valid JSON or YAML: {yexc}"]) from None
    return config_from_dict(doc)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from None
    return parse_config(text)


def client_to_dict(spec: ClientSpec, ident: str) -> dict:
    out = {"id": ident, "kind": spec.kind,
           "channel": {"p": spec.channel.p, "q": spec.channel.q}}
    if spec.is_sensing:
        out.update({"lambda": spec.lam, "alpha": spec.alpha})
    else:
        out.update({"w": spec.w, "ell": spec.ell, "beta": spec.beta, "gamma": spec.gamma})
    return out


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "clients": [client_to_dict(c, i) for c, i in zip(cfg.clients, cfg.client_ids)],
        "policy": cfg.policy if len(cfg.policy) > 1 else cfg.policy[0],
        "horizon": cfg.horizon,
        "runs": cfg.runs,
        "master_seed": cfg.master_seed,
        "truncation_tol": cfg.truncation_tol,
    }
    optional = {"delta": cfg.delta, "output_path": cfg.output_path,
                "initial_channel_state": cfg.initial_channel_state, "sweep": cfg.sweep,
                "truncation_depth": cfg.truncation_depth}
    doc.update({k: v for k, v in optional.items() if v is not None})
    if cfg.parallelism != 1:
        doc["parallelism"] = cfg.parallelism
    if cfg.sample_every != 100:
        doc["sample_every"] = cfg.sample_every
    return doc
