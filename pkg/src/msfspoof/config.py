"""Default tuning and TOML config handling."""

from __future__ import annotations

import copy
import sys
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .msf_core import KfConfig, OutlierPolicy
from .trace import NoiseModel, Scenario, UnconfidentPeriod
from .vehicle import ControllerConfig


class ConfigError(ValueError):
    """A config value is missing or invalid. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"invalid TOML ({exc})") from exc


def defaults() -> dict:
    """The packaged default tuning as a fresh nested dict."""
    text = resources.files("msfspoof").joinpath("data/default.toml").read_text(encoding="utf-8")
    return tomllib.loads(text)


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; tables merge, everything else replaces."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "expected a table")
    return sec


def _build(path: str, fn, **kwargs):
    try:
        return fn(**kwargs)
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc


def kf_config(cfg: dict | None = None) -> KfConfig:
    sec = dict(_section(cfg if cfg is not None else defaults(), "filter"))
    policy = sec.pop("outlier_policy", "discard")
    try:
        sec["outlier_policy"] = OutlierPolicy(policy)
    except ValueError as exc:
        raise ConfigError("filter.outlier_policy", f"unknown policy {policy!r}") from exc
    for key in ("process_noise", "initial_covariance"):
        if key in sec:
            arr = np.asarray(sec[key], dtype=float)
            if arr.shape not in ((5,), (5, 5)):
                raise ConfigError(f"filter.{key}", "expected 5 diagonal entries or a 5x5 matrix")
            sec[key] = arr
    if "process_noise" not in sec:
        raise ConfigError("filter.process_noise", "missing")
    return _build("filter", KfConfig, **sec)


def noise_model(cfg: dict | None = None, **overrides) -> NoiseModel:
    sec = dict(_section(cfg if cfg is not None else defaults(), "noise"))
    sec.update(overrides)
    return _build("noise", NoiseModel, **sec)


def scenario(cfg: dict | None = None) -> Scenario:
    return _build("scenario", Scenario, **_section(cfg if cfg is not None else defaults(), "scenario"))


def controller_config(cfg: dict | None = None) -> ControllerConfig:
    return _build("controller", ControllerConfig, **_section(cfg if cfg is not None else defaults(), "controller"))


def unconfident_layout(cfg: dict | None = None) -> tuple[float, list[UnconfidentPeriod], int]:
    """``(duration, periods, seed)`` for the unconfident-period campaign trace."""
    sec = _section(cfg if cfg is not None else defaults(), "unconfident")
    try:
        duration = float(sec["duration"])
        start, length, spacing = float(sec["first_start"]), float(sec["length"]), float(sec["spacing"])
        scale, bias = float(sec["lidar_var_scale"]), float(sec["lidar_bias_sigma"])
        seed = int(sec.get("seed", 0))
    except KeyError as exc:
        raise ConfigError(f"unconfident.{exc.args[0]}", "missing") from exc
    if not (length > 0 and spacing >= length):
        raise ConfigError("unconfident", "need 0 < length <= spacing")
    periods = []
    s = start
    while s + length <= duration + 1e-9:
        periods.append(_build("unconfident", UnconfidentPeriod, start=s, end=s + length,
                              lidar_var_scale=scale, lidar_bias_sigma=bias))
        s += spacing
    return duration, periods, seed


def grid(spec, path: str = "grid") -> list[float]:
    """Expand ``{start, stop, step}`` (stop inclusive) or pass an explicit list through."""
    if isinstance(spec, dict):
        try:
            start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        except KeyError as exc:
            raise ConfigError(f"{path}.{exc.args[0]}", "missing") from exc
        if not (step > 0 and stop >= start):
            raise ConfigError(path, "need step > 0 and stop >= start")
        n = int(round((stop - start) / step))
        out = [round(start + k * step, 9) for k in range(n + 1)]
    else:
        out = [round(float(v), 9) for v in spec]
    if not out or any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigError(path, "grid must be non-empty and ascending")
    return out


def get(cfg: dict, dotted: str, default: Any = None) -> Any:
    cur: Any = cfg
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return default
        cur = cur[part]
    return cur


def resolve_path(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)
