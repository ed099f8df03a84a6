"""Scenario definition and config-file parsing.

Config files are flat ``key = value`` text (``#`` starts a comment) or a
JSON object with the same keys. Dotted names such as ``thresholds.theta``
or ``workload.p`` resolve to their last component.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import List

from .errors import ConfigError
from .server import POLICIES

DISTRIBUTIONS = ("uniform", "longtail", "noniid", "longtail+noniid")


@dataclass(frozen=True)
class Scenario:
    seed: int = 0
    clients: int = 4
    classes: int = 50
    layers: int = 8
    vector_dim: int = 64
    rounds: int = 10
    frames_per_round: int = 300
    batch_len: int = 30
    # lookup and sample selection
    theta: float = 0.012
    hit_margin: float = 0.1
    miss_margin: float = 0.25
    alpha: float = 0.5
    beta: float = 0.95
    gamma: float = 0.99
    ema: float = 0.05
    temperature: float = 0.05
    label_oracle: str = "predicted"
    # workload
    distribution: str = "uniform"
    p: float = 0.0
    rho: float = 1.0
    drift: float = 0.0
    separation_first: float = 0.006
    separation_last: float = 0.3
    noise_first: float = 0.3
    noise_last: float = 0.2
    difficulty: float = 0.4
    calibration_per_class: int = 50
    probe_frames: int = 2000
    # allocation
    policy: str = "ACA"
    capacity: int = 30
    fixed_layers: str = ""
    fixed_layer_count: int = 2
    budget_bytes: int = 0
    gcu: bool = True
    dca: bool = True
    score_decay: float = 0.2
    coverage_target: float = 0.95
    pool_hit_stats: bool = False
    hit_prior: str = "profile"
    # cost model
    total_compute: float = 100.0
    reference_classes: int = 50
    lookup_fraction: float = 0.5622
    fixed_share: float = 0.3
    transfer_ms_per_kb: float = 0.0
    # execution and outputs
    workers: int = 1
    event_log: bool = False
    export_trace: bool = False
    export_snapshot: bool = False
    trace_in: str = ""

    def policy_for(self, client_id) -> str:
        names = [p.strip() for p in self.policy.split(",") if p.strip()]
        return names[client_id % len(names)]

    def fixed_layer_list(self) -> List[int]:
        """0-based fixed layers from the 1-based ``fixed_layers`` key."""
        if not self.fixed_layers.strip():
            return []
        return sorted({int(t) - 1 for t in self.fixed_layers.replace(";", ",").split(",") if t.strip()})

    def to_dict(self):
        return asdict(self)

    def with_updates(self, **kw) -> "Scenario":
        return validate(replace(self, **normalize_keys(kw)))


_FIELDS = {f.name: f for f in fields(Scenario)}


def normalize_keys(raw: dict) -> dict:
    out, unknown, bad = {}, [], []
    for key, value in raw.items():
        name = key.strip().replace("-", "_")
        if name not in _FIELDS:
            name = name.split(".")[-1]
        if name not in _FIELDS:
            unknown.append(key)
            continue
        try:
            out[name] = _coerce(name, value)
        except ConfigError:
            bad.append(name)
    if unknown or bad:
        parts = []
        if unknown:
            parts.append(f"unknown config keys: {', '.join(sorted(unknown))}")
        if bad:
            parts.append(f"bad values for: {', '.join(bad)}")
        raise ConfigError("; ".join(parts), sorted(unknown) + bad)
    return out


def _coerce(name, value):
    kind = _FIELDS[name].type
    try:
        if kind == "bool":
            if isinstance(value, str):
                v = value.strip().lower()
                if v not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                    raise ValueError(value)
                return v in ("1", "true", "yes", "on")
            return bool(value)
        if kind == "int":
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if kind == "float":
            return float(value)
        if isinstance(value, (list, tuple)):
            return ",".join(str(v) for v in value)
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {value!r}", [name]) from None


def validate(s: Scenario) -> Scenario:
    bad = []
    positive = ("clients", "classes", "layers", "vector_dim", "frames_per_round", "batch_len",
                "calibration_per_class", "temperature", "total_compute", "reference_classes", "workers")
    for name in positive:
        if getattr(s, name) <= 0:
            bad.append(name)
    if s.classes < 2:
        bad.append("classes")
    if s.rounds < 0:
        bad.append("rounds")
    if not s.theta > 0:
        bad.append("theta")
    for name in ("alpha", "beta", "ema", "coverage_target", "lookup_fraction", "fixed_share"):
        if not 0 <= getattr(s, name) <= 1:
            bad.append(name)
    if not 0 < s.gamma <= 1:
        bad.append("gamma")
    if s.distribution not in DISTRIBUTIONS:
        bad.append("distribution")
    if s.p < 0:
        bad.append("p")
    if s.rho < 1:
        bad.append("rho")
    if s.drift < 0:
        bad.append("drift")
    if s.label_oracle not in ("predicted", "true"):
        bad.append("label_oracle")
    if s.hit_prior not in ("profile", "uniform"):
        bad.append("hit_prior")
    if s.capacity < 0 or s.budget_bytes < 0 or s.fixed_layer_count < 0:
        bad.append("capacity/budget_bytes/fixed_layer_count")
    try:
        names = [p.strip() for p in s.policy.split(",") if p.strip()]
        if not names or any(n not in POLICIES for n in names):
            bad.append("policy")
        if any(not 0 <= j < s.layers for j in s.fixed_layer_list()):
            bad.append("fixed_layers")
    except ValueError:
        bad.append("fixed_layers")
    if bad:
        raise ConfigError(f"invalid config values: {', '.join(bad)}", bad)
    return s


def parse_text(text: str) -> dict:
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value", [line])
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def _flatten(obj, prefix=""):
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_scenario(path, **overrides) -> Scenario:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            raw = _flatten(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    else:
        raw = parse_text(text)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return validate(Scenario(**normalize_keys(raw)))


def scenario_from(**kw) -> Scenario:
    return validate(Scenario(**normalize_keys(kw)))
