"""Neural bandwidth recommender.

Maps the translated k-nearest-neighbour coordinates of a sample point to a
lower-triangular factor ``L`` with positive diagonal.

Layout:

* neighbour tokens embed ``[r, |r|, log|r|]``;
* the centre token starts from the pooled neighbour embeddings;
* each interaction block lets the centre attend to the neighbours.  Attention
  logits carry a per-head distance penalty ``-softplus(beta_h) * |r|``, and
  values are gated by ``sigmoid(W_g r/|r|)`` (orientation gate).  A residual
  two-layer feed-forward follows;
* the head emits ``d(d+1)/2 + 1`` numbers.  Diagonal entries are clipped then
  exponentiated.  Off-diagonal entries are scaled by a fixed factor and by a
  sigmoid of the last output.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..errors import AdakdeError, ConfigError, DimensionMismatchError
from ..kde import SamplePointKde, as_sample
from ..linalg import BandwidthFactor
from ..neighbors import neighborhoods

_EPS = 1e-12


class NonFiniteActivationError(AdakdeError, FloatingPointError):
    def __init__(self, block: int):
        where = "input embedding" if block < 0 else f"interaction block {block}"
        super().__init__(f"non-finite activations after {where}")
        self.block = block


@dataclass(frozen=True)
class RecommenderConfig:
    d: int
    k_nn: int = 16
    width: int = 32
    n_blocks: int = 2
    n_heads: int = 2
    dropout: float = 0.1
    diag_clip: tuple[float, float] = (-6.0, 3.0)
    offdiag_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "diag_clip", tuple(float(v) for v in self.diag_clip))
        if min(self.d, self.k_nn, self.width, self.n_blocks, self.n_heads) < 1:
            raise ConfigError(f"recommender sizes must be positive: {self}")
        if self.width % self.n_heads:
            raise ConfigError(f"width {self.width} not divisible by {self.n_heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.diag_clip[0] >= self.diag_clip[1]:
            raise ConfigError(f"bad diagonal clip range {self.diag_clip}")

    @property
    def n_outputs(self) -> int:
        return self.d * (self.d + 1) // 2 + 1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["diag_clip"] = list(self.diag_clip)
        return out


class InteractionBlock(nn.Module):
    def __init__(self, width: int, n_heads: int, d: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = width // n_heads
        self.norm = nn.LayerNorm(width)
        self.query = nn.Linear(width, width)
        self.key = nn.Linear(width, width)
        self.value = nn.Linear(width, width)
        self.gate = nn.Linear(d, width)
        self.dist_bias = nn.Parameter(torch.zeros(n_heads))
        self.proj = nn.Linear(width, width)
        self.ff_norm = nn.LayerNorm(width)
        self.ff1 = nn.Linear(width, 2 * width)
        self.ff2 = nn.Linear(2 * width, width)
        self.dropout = nn.Dropout(dropout)

    def forward(self, h, tokens, dist, direction):
        P, K, W = tokens.shape
        H, D = self.n_heads, self.head_dim
        q = self.query(self.norm(h)).view(P, H, D)
        k = self.key(tokens).view(P, K, H, D)
        v = self.value(tokens) * torch.sigmoid(self.gate(direction))
        v = v.view(P, K, H, D)
        logits = torch.einsum("phd,pkhd->phk", q, k) / math.sqrt(D)
        logits = logits - F.softplus(self.dist_bias)[None, :, None] * dist[:, None, :]
        attn = self.dropout(torch.softmax(logits, dim=-1))
        out = torch.einsum("phk,pkhd->phd", attn, v).reshape(P, W)
        h = h + self.dropout(self.proj(out))
        return h + self.dropout(self.ff2(F.gelu(self.ff1(self.ff_norm(h)))))


class BandwidthRecommender(nn.Module):
    """The recommender's parameters and forward pass (float64 throughout)."""

    def __init__(self, config: RecommenderConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        c = config
        self.embed = nn.Linear(c.d + 2, c.width)
        self.center = nn.Linear(c.width, c.width)
        self.blocks = nn.ModuleList(
            [InteractionBlock(c.width, c.n_heads, c.d, c.dropout) for _ in range(c.n_blocks)]
        )
        self.head_norm = nn.LayerNorm(c.width)
        self.head = nn.Linear(c.width, c.n_outputs)
        self.double()
        self.reset_parameters(generator)

        rows, cols = np.tril_indices(c.d)
        self.register_buffer("_flat_idx", torch.as_tensor(rows * c.d + cols), persistent=False)
        self.register_buffer("_diag_mask", torch.as_tensor(rows == cols), persistent=False)

    @torch.no_grad()
    def reset_parameters(self, generator: torch.Generator | None = None):
        """Uniform(+-1/sqrt(fan_in)) for linear layers, identity LayerNorms, zero distance bias."""
        for mod in self.modules():
            if isinstance(mod, nn.Linear):
                bound = 1.0 / math.sqrt(mod.in_features)
                mod.weight.uniform_(-bound, bound, generator=generator)
                mod.bias.uniform_(-bound, bound, generator=generator)
            elif isinstance(mod, nn.LayerNorm):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
            elif isinstance(mod, InteractionBlock):
                mod.dist_bias.zero_()

    def forward(self, nbh: torch.Tensor) -> torch.Tensor:
        """``(P, k_nn, d)`` neighbourhoods -> ``(P, d, d)`` lower-triangular factors."""
        c = self.config
        if nbh.ndim != 3 or nbh.shape[-1] != c.d or nbh.shape[1] != c.k_nn:
            raise DimensionMismatchError(
                f"neighbourhoods of shape {tuple(nbh.shape)} do not match model (k_nn={c.k_nn}, d={c.d})"
            )
        dist = torch.sqrt(torch.sum(nbh * nbh, dim=-1) + _EPS**2)
        direction = nbh / dist[..., None]
        feats = torch.cat([nbh, dist[..., None], torch.log(dist)[..., None]], dim=-1)
        tokens = self.embed(feats)
        h = self.center(tokens.mean(dim=1))
        if not torch.isfinite(h).all():
            raise NonFiniteActivationError(-1)
        for b, block in enumerate(self.blocks):
            h = block(h, tokens, dist, direction)
            if not torch.isfinite(h).all():
                raise NonFiniteActivationError(b)
        raw = self.head(self.head_norm(h))
        return self._factor_from_raw(raw)

    def _factor_from_raw(self, raw: torch.Tensor) -> torch.Tensor:
        c = self.config
        packed = raw[:, :-1]
        gate = torch.sigmoid(raw[:, -1:])
        lo, hi = c.diag_clip
        diag = torch.exp(torch.clamp(packed, lo, hi))
        off = packed * (c.offdiag_scale * gate)
        packed = torch.where(self._diag_mask[None, :], diag, off)
        flat = packed.new_zeros(packed.shape[0], c.d * c.d).index_copy(1, self._flat_idx, packed)
        return flat.view(-1, c.d, c.d)


def _as_tensor(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def recommend_factors(model: BandwidthRecommender, nbh, training_mode: bool = False) -> np.ndarray:
    """Batched recommendation: ``(P, k_nn, d)`` -> ``(P, d, d)`` numpy factors."""
    was_training = model.training
    model.train(training_mode)
    try:
        with torch.no_grad():
            L = model(_as_tensor(nbh))
    finally:
        model.train(was_training)
    return L.numpy()


def recommend(model: BandwidthRecommender, nbh, training_mode: bool = False) -> BandwidthFactor:
    """Factor for a single ``(k_nn, d)`` neighbourhood."""
    nbh = np.asarray(nbh, dtype=np.float64)
    if nbh.ndim != 2:
        raise DimensionMismatchError(f"a single neighbourhood is (k_nn, d), got shape {nbh.shape}")
    return BandwidthFactor(recommend_factors(model, nbh[None], training_mode)[0])


def recommend_all(model: BandwidthRecommender, sample, batch: int = 4096) -> SamplePointKde:
    """Recommend a factor for every sample point and assemble the KDE."""
    X = as_sample(sample)
    k = model.config.k_nn
    if X.shape[1] != model.config.d:
        raise DimensionMismatchError(f"model is for d={model.config.d}, sample has d={X.shape[1]}")
    if X.shape[0] <= k:
        raise ValueError(f"need more than k_nn={k} sample points, got {X.shape[0]}")
    nbh = neighborhoods(X, k)
    L = np.concatenate([recommend_factors(model, nbh[s : s + batch]) for s in range(0, len(nbh), batch)])
    return SamplePointKde(X, L)
