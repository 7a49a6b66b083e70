"""JSON scenario configuration: strict loading, dotted overrides, snapshots."""
from __future__ import annotations

import copy
import dataclasses
import json
from pathlib import Path
from typing import Any

from .model import (
    CompareOptions,
    Grid,
    InitialCondition,
    LatticeOptions,
    ModelParams,
    OutputConfig,
    ScenarioConfig,
    SolverConfig,
    StationaryOptions,
    validate_params,
)


class ConfigError(ValueError):
    pass


SECTIONS = {
    "params": ModelParams,
    "grid": Grid,
    "initial": InitialCondition,
    "solver": SolverConfig,
    "output": OutputConfig,
    "lattice": LatticeOptions,
    "stationary": StationaryOptions,
    "compare": CompareOptions,
}
SCALARS = {"T_end": float, "seed": int}
TUPLE_FIELDS = {("stationary", "C_values"), ("stationary", "masses"), ("compare", "h_levels")}


def _build(section: str, cls, data: Any):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(f'{section}.{k}' for k in unknown)}")
    kwargs = {}
    for k, v in data.items():
        if (section, k) in TUPLE_FIELDS and v is not None:
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def config_from_dict(data: dict) -> ScenarioConfig:
    """Build a validated ``ScenarioConfig``; unknown keys anywhere are an error."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS) - set(SCALARS))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
    if "params" not in data:
        raise ConfigError("missing required section 'params'")
    kwargs = {}
    for name, cls in SECTIONS.items():
        if name in data:
            kwargs[name] = _build(name, cls, data[name])
    for name, typ in SCALARS.items():
        if name in data:
            value = data[name]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}: expected a number, got {value!r}")
            if typ is int and int(value) != value:
                raise ConfigError(f"{name}: expected an integer, got {value!r}")
            kwargs[name] = typ(value)
    problems = validate_params(kwargs["params"])
    if problems:
        raise ConfigError("invalid params: " + "; ".join(problems))
    try:
        return ScenarioConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> tuple[ScenarioConfig, dict]:
    """Read a JSON config; returns the config and the raw dict it came from."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data), data


def set_dotted(data: dict, key: str, value: Any) -> dict:
    """Copy of ``data`` with ``key`` (e.g. ``params.gamma0``) set to ``value``."""
    out = copy.deepcopy(data)
    parts = key.split(".")
    node = out
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {part} is not a section")
    node[parts[-1]] = value
    return out


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """JSON-ready snapshot of a resolved config (tuples become lists)."""

    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        if hasattr(v, "tolist"):
            return v.tolist()
        return v

    return plain(cfg)
