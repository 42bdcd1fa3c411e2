"""Experiment configuration, loaded from a flat YAML mapping.

Recognised keys (all optional except ``scenario``, ``dims`` and ``sample_sizes``)::

    scenario: GMD_F_PLUS
    dims: [2]
    sample_sizes: [4096]
    n_instances: 10
    n_replicates: 5
    n_eval: 3000
    methods: [Silverman, LCV, Abramson, kNN, Oracle]
    seed: 0
    shared_test_set: true
    checkpoint: ckpt/recommender_d{d}.nnkd   # "{d}" -> dimension; relative to this file
    lcv_grid: [0.1, 0.2, ...]                # multipliers of the Silverman factor
    knn_k: null                              # null -> ceil(sqrt(n))
    knn_scale_grid: [...]
    abramson_alpha: 0.5
    finetune_bracket: [0.01, 100.0]
    finetune_grid_points: 17
    finetune_tol: 1.0e-4
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..finetune import FinetuneConfig
from ..selectors import SelectorConfig
from ..targets import Scenario

METHODS = ("Silverman", "LCV", "Abramson", "kNN", "NNKDE_scratch", "NNKDE_pre", "NNKDE_fine", "Oracle")
NEEDS_CHECKPOINT = frozenset({"NNKDE_pre", "NNKDE_fine"})
_METHOD_LOOKUP = {m.lower(): m for m in METHODS}

_SELECTOR_KEYS = {"lcv_grid", "knn_k", "knn_scale_grid", "abramson_alpha"}
_FINETUNE_KEYS = {"finetune_bracket": "bracket", "finetune_grid_points": "grid_points", "finetune_tol": "tol"}


def canonical_method(name: str) -> str:
    try:
        return _METHOD_LOOKUP[str(name).strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown method {name!r}; choose from {', '.join(METHODS)}") from None


def parse_methods(value) -> tuple[str, ...]:
    items = value.split(",") if isinstance(value, str) else list(value)
    out = []
    for m in items:
        if str(m).strip():
            c = canonical_method(m)
            if c not in out:
                out.append(c)
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    dims: tuple[int, ...]
    sample_sizes: tuple[int, ...]
    n_instances: int = 10
    n_replicates: int = 5
    n_eval: int = 3000
    methods: tuple[str, ...] = ("Silverman", "LCV", "Abramson", "kNN", "Oracle")
    selectors: SelectorConfig = field(default_factory=SelectorConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    checkpoint: str | None = None
    seed: int = 0
    shared_test_set: bool = True

    def __post_init__(self):
        try:
            object.__setattr__(self, "scenario", Scenario(self.scenario))
        except ValueError:
            raise ConfigError(
                f"unknown scenario {self.scenario!r}; choose from {', '.join(s.value for s in Scenario)}"
            ) from None
        for name in ("dims", "sample_sizes"):
            vals = getattr(self, name)
            vals = (vals,) if isinstance(vals, int) else tuple(vals)
            if not vals or any(int(v) != v or v < 1 for v in vals):
                raise ConfigError(f"{name} must be a non-empty list of positive integers")
            object.__setattr__(self, name, tuple(int(v) for v in vals))
        min_d = 2 if self.scenario in (Scenario.BANANA, Scenario.NOISY_TORUS) else 1
        if min(self.dims) < min_d:
            raise ConfigError(f"{self.scenario.value} needs d >= {min_d}")
        for name in ("n_instances", "n_replicates", "n_eval"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        methods = parse_methods(self.methods)
        if not methods:
            raise ConfigError("methods must be non-empty")
        object.__setattr__(self, "methods", methods)
        if NEEDS_CHECKPOINT & set(methods) and not self.checkpoint:
            raise ConfigError(f"methods {sorted(NEEDS_CHECKPOINT & set(methods))} need a checkpoint")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))

    def checkpoint_for(self, d: int) -> Path | None:
        return None if self.checkpoint is None else Path(str(self.checkpoint).replace("{d}", str(d)))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "dims": list(self.dims),
            "sample_sizes": list(self.sample_sizes),
            "n_instances": self.n_instances,
            "n_replicates": self.n_replicates,
            "n_eval": self.n_eval,
            "methods": list(self.methods),
            "seed": self.seed,
            "shared_test_set": self.shared_test_set,
            "checkpoint": self.checkpoint,
            "lcv_grid": list(self.selectors.lcv_grid),
            "knn_k": self.selectors.knn_k,
            "knn_scale_grid": list(self.selectors.knn_scale_grid),
            "abramson_alpha": self.selectors.abramson_alpha,
            "finetune_bracket": list(self.finetune.bracket),
            "finetune_grid_points": self.finetune.grid_points,
            "finetune_tol": self.finetune.tol,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a mapping")
        own = {f.name for f in fields(cls)} - {"selectors", "finetune"}
        unknown = set(data) - own - _SELECTOR_KEYS - set(_FINETUNE_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("scenario", "dims", "sample_sizes"):
            if key not in data:
                raise ConfigError(f"missing required key {key!r}")
        kw = {k: v for k, v in data.items() if k in own}
        try:
            sel = {k: v for k, v in data.items() if k in _SELECTOR_KEYS and v is not None}
            if "lcv_grid" in sel:
                sel["lcv_grid"] = tuple(sel["lcv_grid"])
            if "knn_scale_grid" in sel:
                sel["knn_scale_grid"] = tuple(sel["knn_scale_grid"])
            kw["selectors"] = SelectorConfig(**sel)
            ft = {_FINETUNE_KEYS[k]: v for k, v in data.items() if k in _FINETUNE_KEYS}
            kw["finetune"] = FinetuneConfig(**ft)
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
    data = data or {}
    ckpt = data.get("checkpoint") if isinstance(data, dict) else None
    if ckpt and not Path(str(ckpt)).is_absolute():
        # relative checkpoint paths are relative to the config file
        data["checkpoint"] = str(path.parent / str(ckpt))
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None))
    return path
