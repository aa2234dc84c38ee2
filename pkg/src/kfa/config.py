"""
Audit configuration with layered overrides.

Precedence, lowest first: built-in defaults, a JSON config file, ``KFA_*``
environment variables, command-line flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from kfa.errors import InputError


@dataclass(frozen=True)
class AuditConfig:
    kernel: str = "rbf"
    bandwidth: str = "median"
    seed: int = 0
    subsample_cap: int = 5000  # rows used by the median heuristic
    gram_cap: int = 10000  # rows used to form the Gram matrix
    permutations: int = 999
    bootstrap: int = 1000
    fdr_q: float = 0.05
    eo_gate: float = 0.05
    rho_gate: float = 0.15
    k99_threshold: float = 0.99
    top_j: int = 200
    out: str = "kfa-out"

    def __post_init__(self):
        for name in ("subsample_cap", "gram_cap", "permutations", "bootstrap", "top_j"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be at least 1")
        if self.subsample_cap < 2:
            raise InputError("subsample_cap must be at least 2")
        if not 0.0 <= self.eo_gate <= 1.0:
            raise InputError("eo_gate must lie in [0, 1]")
        if not 0.0 < self.fdr_q < 1.0:
            raise InputError("fdr_q must lie in (0, 1)")
        if not 0.0 < self.k99_threshold <= 1.0:
            raise InputError("k99_threshold must lie in (0, 1]")
        if self.rho_gate < 0:
            raise InputError("rho_gate must be non-negative")

    def to_dict(self):
        return asdict(self)

    def reproducible_dict(self):
        """Settings that determine the results (the output directory does not)."""
        d = asdict(self)
        d.pop("out")
        return d


_TYPES = {f.name: f.type for f in fields(AuditConfig)}


def _coerce(name, value):
    kind = _TYPES[name]
    try:
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise InputError(f"invalid value for {name}: {value!r}") from None


def _apply(base: AuditConfig, updates: dict, origin: str) -> AuditConfig:
    unknown = set(updates) - set(_TYPES)
    if unknown:
        raise InputError(f"unknown settings in {origin}: {sorted(unknown)}")
    return replace(base, **{k: _coerce(k, v) for k, v in updates.items()})


def load_config(config_path=None, env=None, flags=None) -> AuditConfig:
    cfg = AuditConfig()
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"cannot read config {config_path}: {e}") from None
        if not isinstance(data, dict):
            raise InputError("config file must hold a JSON object")
        cfg = _apply(cfg, data, str(config_path))
    env = os.environ if env is None else env
    from_env = {name: env[f"KFA_{name.upper()}"] for name in _TYPES if f"KFA_{name.upper()}" in env}
    cfg = _apply(cfg, from_env, "environment")
    if flags:
        cfg = _apply(cfg, {k: v for k, v in flags.items() if v is not None}, "command line")
    return cfg
