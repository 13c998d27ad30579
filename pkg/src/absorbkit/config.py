"""Pipeline configuration from TOML or JSON."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .augmentation import AugmentConfig
from .data import contrast_by_name, default_contrasts
from .errors import ConfigError, DataError
from .models import DEFAULT_HYPER, FAMILIES, ModelSpec
from .selection import SelectionConfig


@dataclass(frozen=True)
class Paths:
    group_csv: str | None = None
    case_csv: str | None = None
    covariates_csv: str | None = None
    registry_csv: str | None = None
    out_dir: str = "out"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 42
    K: int = 5
    repeats: int = 1
    ensemble_top_l: int = 3
    selection_metric: str = "kappa"
    families: tuple[str, ...] = FAMILIES
    model_hyper: dict = field(default_factory=dict)  # family -> overrides
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    contrasts: tuple[str, ...] = tuple(c.name for c in default_contrasts())
    permutation_iterations: int = 1000
    permutation_contrasts: tuple[str, ...] | None = None  # None: every contrast
    permutation_metric: str = "accuracy"
    full_null: bool = False
    residualize: bool = False
    importance_repeats: int = 10
    loro: bool = True
    grid_search: bool = False
    grid: dict = field(default_factory=dict)  # family -> {param: [values]}
    n_jobs: int = 1
    persist_models: bool = True
    paths: Paths = field(default_factory=Paths)

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError("K must be >= 2")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.selection_metric not in ("kappa", "accuracy"):
            raise ConfigError(f"unknown selection_metric {self.selection_metric!r}")
        if self.permutation_metric not in ("kappa", "accuracy"):
            raise ConfigError(f"unknown permutation_metric {self.permutation_metric!r}")
        unknown = [f for f in self.families if f not in FAMILIES]
        if unknown:
            raise ConfigError(f"unknown model families {unknown}")
        if not 1 <= self.ensemble_top_l <= len(self.families):
            raise ConfigError("ensemble_top_l must lie in [1, number of families]")
        if self.permutation_iterations < 0:
            raise ConfigError("permutation_iterations must be >= 0")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be >= 1")
        try:
            for c in self.contrasts:
                contrast_by_name(c)
            for c in self.permutation_contrasts or ():
                contrast_by_name(c)
            for fam, hyper in self.model_hyper.items():
                ModelSpec(fam, hyper)
            for fam, grid in self.grid.items():
                bad = set(grid) - set(DEFAULT_HYPER.get(fam, {}))
                if fam not in FAMILIES or bad:
                    raise ConfigError(f"bad grid for {fam}: {sorted(bad)}")
        except DataError as e:
            raise ConfigError(str(e)) from e

    def model_spec(self, family: str, hyper: dict | None = None) -> ModelSpec:
        h = dict(self.model_hyper.get(family, {}))
        h.update(hyper or {})
        return ModelSpec(family, h, self.seed)

    def runs_permutation(self, contrast: str) -> bool:
        if self.permutation_iterations == 0:
            return False
        return self.permutation_contrasts is None or contrast in self.permutation_contrasts

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _sub(cls, d, where):
    if d is None:
        return cls()
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return cls(**kw)


def config_from_dict(d: dict, base_dir: str | os.PathLike | None = None) -> PipelineConfig:
    d = dict(d)
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    paths = d.pop("paths", None) or {}
    if base_dir is not None:
        # relative paths resolve against the config file's directory
        paths = {k: (v if v is None or os.path.isabs(v) else str(Path(base_dir) / v))
                 for k, v in paths.items()}
    kw = dict(d)
    kw["paths"] = _sub(Paths, paths, "paths")
    kw["selection"] = _sub(SelectionConfig, d.get("selection"), "selection")
    kw["augment"] = _sub(AugmentConfig, d.get("augment"), "augment")
    for key in ("families", "contrasts", "permutation_contrasts"):
        if kw.get(key) is not None:
            kw[key] = tuple(kw[key])
    try:
        return PipelineConfig(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> PipelineConfig:
    """Read a ``.toml`` or ``.json`` config file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        if path.suffix.lower() == ".json":
            d = json.loads(raw)
        else:
            d = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    return config_from_dict(d, base_dir=path.parent)
