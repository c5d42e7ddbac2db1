"""Plain-text run configuration: key=value lines, '#' comments.

The vocabulary is deliberately tiny and flat so a resolved configuration
round-trips byte-for-byte into the run manifest. Vector values are
comma-separated. Unknown keys, duplicate keys and type mismatches are
rejected with the offending line number before any computation starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field, fields

import numpy as np

from .errors import ConfigError

COMMANDS = ("simulate-particles", "solve-pde", "compare", "glm-demo",
            "lemma-tests", "momenta")

FIELD_KEYS = ("linear-decay", "rotation", "newton:quadratic",
              "glm-fisher", "glm-score", "zero")


def _parse_float(raw: str, line: int, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key} expects a number, got {raw!r}", line) from None


def _parse_int(raw: str, line: int, key: str) -> int:
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"{key} expects an integer, got {raw!r}", line) from None


def _parse_vector(raw: str, line: int, key: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in raw.split(",")])
    except ValueError:
        raise ConfigError(
            f"{key} expects comma-separated numbers, got {raw!r}", line) from None


def _parse_int_vector(raw: str, line: int, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(
            f"{key} expects comma-separated integers, got {raw!r}", line) from None


def _parse_bool(raw: str, line: int, key: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key} expects true/false, got {raw!r}", line)


def _parse_str(raw: str, line: int, key: str) -> str:
    return raw


_SCHEMA = {
    "command": _parse_str,
    "field": _parse_str,
    "output_dir": _parse_str,
    "glm_n": _parse_int,
    "beta_star": _parse_vector,
    "glm_seed": _parse_int,
    "glm_law": _parse_str,
    "grid_lower": _parse_vector,
    "grid_dx": _parse_vector,
    "grid_cells": _parse_int_vector,
    "dt": _parse_float,
    "t_end": _parse_float,
    "snapshots": _parse_vector,
    "enforce_cfl": _parse_bool,
    "init_mean": _parse_vector,
    "init_sigma": _parse_vector,
    "init_truncate": _parse_float,
    "init_law": _parse_str,
    "particles_n": _parse_int,
    "particles_seed": _parse_int,
    "method": _parse_str,
    "smoothing": _parse_str,
    "bandwidth": _parse_float,
    "threads": _parse_int,
}


@dataclass
class RunConfig:
    """Resolved run configuration; unset optionals stay None."""

    command: str | None = None
    field: str | None = None
    output_dir: str | None = None
    glm_n: int | None = None
    beta_star: np.ndarray | None = None
    glm_seed: int | None = None
    glm_law: str = "standard_normal"
    grid_lower: np.ndarray | None = None
    grid_dx: np.ndarray | None = None
    grid_cells: tuple[int, ...] | None = None
    dt: float | None = None
    t_end: float | None = None
    snapshots: np.ndarray | None = None
    enforce_cfl: bool = True
    init_mean: np.ndarray | None = None
    init_sigma: np.ndarray | None = None
    init_truncate: float | None = None
    init_law: str = "gaussian"
    particles_n: int | None = None
    particles_seed: int | None = None
    method: str = "rk4"
    smoothing: str = "histogram"
    bandwidth: float | None = None
    threads: int = 1
    source: dict = dataclass_field(default_factory=dict, repr=False)


def parse_config(text: str) -> RunConfig:
    """Parse key=value configuration text into a RunConfig."""
    config = RunConfig()
    seen: dict[str, int] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", lineno)
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(
                f"duplicate key {key!r} (first defined on line {seen[key]})", lineno)
        seen[key] = lineno
        value = _SCHEMA[key](raw, lineno, key)
        setattr(config, key, value)
        config.source[key] = raw
    return config


def _require(config: RunConfig, keys) -> None:
    missing = [k for k in keys if getattr(config, k) is None]
    if missing:
        raise ConfigError("missing required key(s): " + ", ".join(missing))


def validate(config: RunConfig, command: str) -> None:
    """Fail-fast validation: every key the command touches must resolve."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if config.command is not None and config.command != command:
        raise ConfigError(
            f"config file names command {config.command!r}, invoked {command!r}")
    if config.field is not None and config.field not in FIELD_KEYS:
        raise ConfigError(f"unknown field {config.field!r}; "
                          f"choose from {', '.join(FIELD_KEYS)}")
    if config.method not in ("rk4", "euler"):
        raise ConfigError(f"method must be rk4 or euler, got {config.method!r}")
    if config.smoothing not in ("histogram", "gaussian_kernel"):
        raise ConfigError("smoothing must be histogram or gaussian_kernel")
    if config.glm_law not in ("standard_normal", "uniform"):
        raise ConfigError("glm_law must be standard_normal or uniform")
    if config.init_law not in ("gaussian", "uniform"):
        raise ConfigError("init_law must be gaussian or uniform")
    if config.threads < 1:
        raise ConfigError("threads must be at least 1")

    needs_glm = config.field in ("glm-fisher", "glm-score") or command == "glm-demo"
    if needs_glm:
        _require(config, ("glm_n", "beta_star", "glm_seed"))

    if command in ("solve-pde", "compare", "momenta"):
        _require(config, ("field", "grid_lower", "grid_dx", "grid_cells",
                          "dt", "t_end", "snapshots", "init_mean", "init_sigma"))
    if command == "simulate-particles":
        _require(config, ("field", "grid_lower", "grid_dx", "grid_cells",
                          "dt", "t_end", "snapshots", "particles_n",
                          "particles_seed"))
        if config.init_law == "gaussian":
            _require(config, ("init_mean", "init_sigma"))
    if command == "compare":
        _require(config, ("particles_n", "particles_seed"))
    if command == "lemma-tests":
        _require(config, ("field", "init_mean", "init_sigma", "dt"))

    if config.grid_lower is not None:
        dims = {config.grid_lower.size}
        if config.grid_dx is not None and config.grid_dx.size > 1:
            dims.add(config.grid_dx.size)
        if config.grid_cells is not None:
            dims.add(len(config.grid_cells))
        if len(dims) > 1:
            raise ConfigError("grid_lower, grid_dx and grid_cells disagree "
                              "in dimension")


def resolved_items(config: RunConfig) -> list[tuple[str, str]]:
    """All configuration fields with resolved values, formatted for the manifest."""
    items = []
    for f in fields(RunConfig):
        if f.name == "source":
            continue
        value = getattr(config, f.name)
        if value is None:
            rendered = ""
        elif isinstance(value, np.ndarray):
            rendered = ",".join(f"{v:.17g}" for v in value)
        elif isinstance(value, tuple):
            rendered = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = f"{value:.17g}"
        else:
            rendered = str(value)
        items.append((f.name, rendered))
    return items
