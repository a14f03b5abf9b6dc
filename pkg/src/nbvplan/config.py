"""Run configuration: built-in defaults, overridden by a TOML/JSON file, overridden by CLI flags."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from .energy import INCIDENCE_SIGNS, EnergyParams, EnergyWeights
from .photo import DEFAULT_MAX_INCIDENCE_DEG, DEFAULT_SUBDIVISION, METRICS, UNDEFINED_POLICIES


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    metric: str = "ssd"
    K: int = 10
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    params: EnergyParams = field(default_factory=EnergyParams)
    patch_subdivision: int = DEFAULT_SUBDIVISION
    incidence_sign: str = "reward"
    max_incidence_deg: float | None = DEFAULT_MAX_INCIDENCE_DEG
    undefined: str = "first"
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.incidence_sign not in INCIDENCE_SIGNS:
            raise ConfigError(f"incidence_sign must be one of {INCIDENCE_SIGNS}, got {self.incidence_sign!r}")
        if self.undefined not in UNDEFINED_POLICIES:
            raise ConfigError(f"undefined must be one of {UNDEFINED_POLICIES}, got {self.undefined!r}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.patch_subdivision < 1:
            raise ConfigError("patch_subdivision must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")  # affects wall time only, kept out of reports
        return d


_TOP = {f.name for f in fields(RunConfig)} - {"weights", "params"}


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text) if path.suffix.lower() == ".json" else tomli.loads(text)
    except (json.JSONDecodeError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc, str(path))


def config_from_dict(doc: dict, where: str = "config") -> RunConfig:
    doc = dict(doc)
    unknown = set(doc) - _TOP - {"weights", "params"}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        weights = EnergyWeights(**doc.pop("weights", {}))
        params = EnergyParams(**doc.pop("params", {}))
        return RunConfig(weights=weights, params=params, **doc)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def apply_overrides(cfg: RunConfig, *, metric=None, K=None, weights=None, kappa=None, delta=None,
                    penalty=None, incidence_sign=None, seed=None, threads=None,
                    max_incidence_deg=None, undefined=None) -> RunConfig:
    """Layer command-line values (None = not given) over ``cfg``."""
    try:
        params = cfg.params
        if kappa is not None:
            params = replace(params, kappa=kappa)
        if delta is not None:
            params = replace(params, delta=delta)
        if penalty is not None:
            params = replace(params, penalty=penalty)
        w = cfg.weights if weights is None else EnergyWeights(*weights)
        changes = {k: v for k, v in dict(metric=metric, K=K, incidence_sign=incidence_sign, seed=seed,
                                         threads=threads, max_incidence_deg=max_incidence_deg,
                                         undefined=undefined).items() if v is not None}
        return replace(cfg, weights=w, params=params, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_weights(text: str) -> tuple[float, float, float, float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise ConfigError("--weights expects four comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"--weights: {exc}") from exc
