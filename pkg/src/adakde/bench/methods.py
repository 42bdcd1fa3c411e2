"""Method registry: each entry fits a density model to one sample."""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, DimensionMismatchError
from ..finetune import FinetuneConfig, finetune_kde
from ..kde import DensityModel, SamplePointKde
from ..recommender import BandwidthRecommender, load_checkpoint, recommend_all
from ..recommender.training import TrainConfig
from ..selectors import SelectorConfig, abramson_select, knn_select, lcv_scan, silverman
from ..targets import TargetModel
from .config import METHODS


@dataclass
class Fitted:
    model: DensityModel
    details: dict = field(default_factory=dict)


@functools.lru_cache(maxsize=8)
def cached_checkpoint(path: str) -> BandwidthRecommender:
    return load_checkpoint(path)


class FitContext:
    """One fitting sample plus lazily shared intermediate results.

    LCV and Abramson share the LCV scan; NNKDE_pre and NNKDE_fine share the
    recommended factors.
    """

    def __init__(
        self,
        sample: np.ndarray,
        target: TargetModel,
        selectors: SelectorConfig,
        finetune: FinetuneConfig,
        checkpoint: Path | None,
        method_seed,
    ):
        self.sample = sample
        self.target = target
        self.selectors = selectors
        self.finetune = finetune
        self.checkpoint = checkpoint
        self.method_seed = method_seed  # callable: method name -> u64 seed
        self.d = sample.shape[1]

    @cached_property
    def lcv(self):
        return lcv_scan(self.sample, self.selectors)

    @cached_property
    def pretrained(self) -> BandwidthRecommender:
        if self.checkpoint is None:
            raise ConfigError("no recommender checkpoint configured")
        model = cached_checkpoint(str(self.checkpoint))
        if model.config.d != self.d:
            raise DimensionMismatchError(f"checkpoint {self.checkpoint} is for d={model.config.d}, not d={self.d}")
        return model

    @cached_property
    def pre_kde(self) -> SamplePointKde:
        return recommend_all(self.pretrained, self.sample)

    def scratch_model(self) -> BandwidthRecommender:
        # same architecture as the checkpoint when there is one, so the comparison isolates pre-training
        if self.checkpoint is not None:
            cfg = self.pretrained.config
        else:
            cfg = TrainConfig(d=self.d).model_config()
        gen = torch.Generator().manual_seed(self.method_seed("NNKDE_scratch") % 2**63)
        model = BandwidthRecommender(cfg, generator=gen)
        model.eval()
        return model


def _silverman(ctx: FitContext) -> Fitted:
    return Fitted(SamplePointKde.with_global_factor(ctx.sample, silverman(ctx.sample)))


def _lcv(ctx: FitContext) -> Fitted:
    scan, _ = ctx.lcv
    L = silverman(ctx.sample).scaled(scan.best)
    return Fitted(SamplePointKde.with_global_factor(ctx.sample, L), {"multiplier": scan.best})


def _abramson(ctx: FitContext) -> Fitted:
    sel = abramson_select(ctx.sample, ctx.selectors, lcv=ctx.lcv)
    details = {"multiplier": sel.global_scale}
    if sel.warnings:
        details["warnings"] = list(sel.warnings)
    return Fitted(sel.kde(ctx.sample), details)


def _knn(ctx: FitContext) -> Fitted:
    sel = knn_select(ctx.sample, ctx.selectors)
    return Fitted(sel.kde(ctx.sample), {"scale": sel.global_scale, "k": ctx.selectors.k_for(len(ctx.sample))})


def _nnkde_scratch(ctx: FitContext) -> Fitted:
    return Fitted(recommend_all(ctx.scratch_model(), ctx.sample))


def _nnkde_pre(ctx: FitContext) -> Fitted:
    return Fitted(ctx.pre_kde)


def _nnkde_fine(ctx: FitContext) -> Fitted:
    kde, res = finetune_kde(ctx.pre_kde, ctx.finetune)
    return Fitted(
        kde,
        {
            "gamma_star": res.gamma_star,
            "objective_at_gamma_star": res.objective_at_gamma_star,
            "objective_at_one": res.objective_at_one,
        },
    )


def _oracle(ctx: FitContext) -> Fitted:
    return Fitted(ctx.target)


REGISTRY = {
    "Silverman": _silverman,
    "LCV": _lcv,
    "Abramson": _abramson,
    "kNN": _knn,
    "NNKDE_scratch": _nnkde_scratch,
    "NNKDE_pre": _nnkde_pre,
    "NNKDE_fine": _nnkde_fine,
    "Oracle": _oracle,
}
assert tuple(REGISTRY) == METHODS
