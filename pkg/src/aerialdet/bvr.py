"""
Key-point attention that enhances per-location features.

A point head predicts centre/corner scores and sub-pixel offsets. The top-k
corner cells become keys; every grid cell is a query. Each query feature
gets a residual update: the softmax-weighted sum of value-projected key
features. A key's logit adds an appearance term (scaled dot product of
projected features) to a geometric term (an affine read-out of a sine/cosine
embedding of the key's offset from the query).
Positions are in grid-cell units with x = column, y = row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, Linear, Module
from .numerics import (
    Tensor,
    as_tensor,
    concat,
    cos,
    matmul,
    relu,
    sigmoid,
    sin,
    softmax,
    stack,
)

log = logging.getLogger(__name__)


@dataclass
class PointHeadOutput:
    center_scores: Tensor   # (N, 1, H, W), in (0, 1)
    corner_scores: Tensor   # (N, 1, H, W), in (0, 1)
    center_offsets: Tensor  # (N, 2, H, W), (dx, dy) in cells
    corner_offsets: Tensor  # (N, 2, H, W), (dx, dy) in cells


@dataclass(frozen=True)
class KeySet:
    """Selected keys of one image, ordered by non-increasing corner score."""

    positions: Tensor   # (k, 2) refined (x, y)
    features: Tensor    # (k, d) gathered at the unrefined cells
    scores: np.ndarray  # (k,)
    cells: np.ndarray   # (k, 2) integer (row, col)

    def __len__(self) -> int:
        return len(self.scores)


class PointHead(Module):
    """Two shared 3x3 convs, then a score branch and an offset branch."""

    def __init__(self, d: int, rng: np.random.Generator | None = None):
        rng = np.random.default_rng() if rng is None else rng
        self.d = d
        self.shared1 = Conv2d(d, d, 3, rng=rng)
        self.shared2 = Conv2d(d, d, 3, rng=rng)
        self.score_head = Conv2d(d, 2, 3, rng=rng)
        self.offset_head = Conv2d(d, 4, 3, rng=rng)

    def forward(self, feature: Tensor) -> PointHeadOutput:
        if feature.ndim != 4 or feature.shape[1] != self.d:
            raise ValueError(f"point head expects {self.d} channels, got shape {feature.shape}")
        h = relu(self.shared2(relu(self.shared1(feature))))
        scores = sigmoid(self.score_head(h))
        offsets = self.offset_head(h)
        return PointHeadOutput(
            center_scores=scores[:, 0:1],
            corner_scores=scores[:, 1:2],
            center_offsets=offsets[:, 0:2],
            corner_offsets=offsets[:, 2:4],
        )


def select_top_k_keys(out: PointHeadOutput, feature: Tensor, k: int, batch_index: int = 0) -> KeySet:
    """
    Keep the ``k`` cells with the highest corner score (all cells if fewer).

    Ties go to the earlier row-major cell. Positions are the cell coordinates
    shifted by the predicted corner offsets; features are read at the cell.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _, _, h, w = feature.shape
    if h * w == 0:
        raise ValueError("cannot select keys from an empty grid")
    scores = out.corner_scores.data[batch_index, 0].reshape(-1)
    order = np.argsort(-scores, kind="stable")[: min(k, h * w)]
    rows, cols = np.divmod(order, w)
    offsets = out.corner_offsets[batch_index].reshape(2, h * w)[:, order].transpose(1, 0)
    base = np.stack([cols, rows], axis=1).astype(np.float64)
    positions = offsets + base
    feats = feature[batch_index].reshape(feature.shape[1], h * w)[:, order].transpose(1, 0)
    return KeySet(positions=positions, features=feats, scores=scores[order],
                  cells=np.stack([rows, cols], axis=1))


def embedding_periods(embed_dim: int, max_period: float) -> np.ndarray:
    """Geometrically spaced periods from 1 to ``max_period``, ``embed_dim // 4`` of them."""
    if embed_dim < 4 or embed_dim % 4:
        raise ValueError(f"embedding dimension must be a positive multiple of 4, got {embed_dim}")
    return np.geomspace(1.0, max_period, embed_dim // 4)


def location_embedding(pos, embed_dim: int = 64, max_period: float = 1000.0) -> Tensor:
    """
    Sine/cosine embedding of 2-D points.

    ``pos`` has shape ``(..., 2)``; the result has shape ``(..., embed_dim)`` laid out
    as ``[sin(x/l0), cos(x/l0), sin(x/l1), ..., sin(y/l0), cos(y/l0), ...]``.
    """
    periods = embedding_periods(embed_dim, max_period)
    pos = as_tensor(pos)
    if pos.shape[-1] != 2:
        raise ValueError(f"positions must have a trailing axis of 2, got {pos.shape}")
    axes = []
    for a in range(2):
        scaled = pos[..., a : a + 1] * (1.0 / periods)        # (..., T)
        pair = stack([sin(scaled), cos(scaled)], axis=-1)     # (..., T, 2)
        axes.append(pair.reshape(*pos.shape[:-1], 2 * len(periods)))
    return concat(axes, axis=-1)


class BVRAttention(Module):
    """Query/key/value projections plus the geometric read-out."""

    def __init__(self, d: int, attn_dim: int | None = None, embed_dim: int = 64, max_period: float = 1000.0,
                 rng: np.random.Generator | None = None):
        rng = np.random.default_rng() if rng is None else rng
        attn_dim = d if attn_dim is None else attn_dim
        self.d, self.attn_dim, self.embed_dim, self.max_period = d, attn_dim, embed_dim, max_period
        embedding_periods(embed_dim, max_period)
        self.query_proj = Linear(d, attn_dim, rng=rng, bias=False)
        self.key_proj = Linear(d, attn_dim, rng=rng, bias=False)
        self.value_proj = Linear(d, d, rng=rng, bias=False, scale=0.1 / np.sqrt(d))
        self.geo_head = Linear(embed_dim, 1, rng=rng, scale=0.1 / np.sqrt(embed_dim))

    def appearance_similarity(self, query_feat, key_feat) -> Tensor:
        """Scaled dot products of projected features, shape ``(Q, K)``."""
        query_feat, key_feat = _as_rows(query_feat), _as_rows(key_feat)
        if query_feat.shape[1] != self.d or key_feat.shape[1] != self.d:
            raise ValueError(f"feature dims {query_feat.shape[1]} and {key_feat.shape[1]} must both be {self.d}")
        q = self.query_proj(query_feat)
        k = self.key_proj(key_feat)
        return matmul(q, k.transpose(1, 0)) * (1.0 / np.sqrt(self.attn_dim))

    def geometric_similarity(self, query_xy, key_xy) -> Tensor:
        """Affine read-out of the embedding of ``key_xy - query_xy``, shape ``(Q, K)``."""
        query_xy, key_xy = _as_rows(query_xy), _as_rows(key_xy)
        rel = key_xy.reshape(1, key_xy.shape[0], 2) - query_xy.reshape(query_xy.shape[0], 1, 2)
        emb = location_embedding(rel, self.embed_dim, self.max_period)          # (Q, K, embed_dim)
        return self.geo_head(emb).reshape(query_xy.shape[0], key_xy.shape[0])

    def attention(self, query_feat, query_xy, keys: KeySet) -> Tensor:
        logits = self.appearance_similarity(query_feat, keys.features) + self.geometric_similarity(query_xy, keys.positions)
        return softmax(logits, axis=1)

    def enhance(self, query_feat, query_xy, keys: KeySet) -> tuple[Tensor, Tensor | None]:
        """Enhanced query features ``(Q, d)`` and the attention weights ``(Q, K)``."""
        query_feat = _as_rows(query_feat)
        if len(keys) == 0:
            log.warning("empty key set: returning query features unchanged")
            return query_feat, None
        weights = self.attention(query_feat, query_xy, keys)
        return query_feat + matmul(weights, self.value_proj(keys.features)), weights


def _as_rows(x) -> Tensor:
    x = as_tensor(x)
    return x.reshape(1, x.shape[0]) if x.ndim == 1 else x


def bvr_enhance(attn: BVRAttention, query_feat, query_xy, keys: KeySet) -> Tensor:
    """Single-query form; returns a vector of the query's dimension."""
    out, _ = attn.enhance(_as_rows(query_feat), _as_rows(query_xy), keys)
    return out.reshape(out.shape[1])


def grid_positions(h: int, w: int) -> np.ndarray:
    rows, cols = np.divmod(np.arange(h * w), w)
    return np.stack([cols, rows], axis=1).astype(np.float64)


@dataclass
class BVRDetails:
    point_head: PointHeadOutput
    keys: list[KeySet]
    weights: list[Tensor | None]


class BVRHead(Module):
    """Point head + top-k keys + attention applied at every grid cell of a level."""

    def __init__(self, d: int, attn_dim: int | None = None, embed_dim: int = 64, max_period: float = 1000.0,
                 rng: np.random.Generator | None = None):
        rng = np.random.default_rng() if rng is None else rng
        self.point_head = PointHead(d, rng=rng)
        self.attention = BVRAttention(d, attn_dim=attn_dim, embed_dim=embed_dim, max_period=max_period, rng=rng)

    def forward(self, feature: Tensor, k: int = 50) -> Tensor:
        return self.forward_with_details(feature, k)[0]

    def forward_with_details(self, feature: Tensor, k: int = 50) -> tuple[Tensor, BVRDetails]:
        n, d, h, w = feature.shape
        out = self.point_head(feature)
        query_xy = grid_positions(h, w)
        enhanced, keysets, weights = [], [], []
        for i in range(n):
            keys = select_top_k_keys(out, feature, k, batch_index=i)
            query_feat = feature[i].reshape(d, h * w).transpose(1, 0)
            fi, wi = self.attention.enhance(query_feat, query_xy, keys)
            enhanced.append(fi.transpose(1, 0).reshape(1, d, h, w))
            keysets.append(keys)
            weights.append(wi)
        result = enhanced[0] if n == 1 else concat(enhanced, axis=0)
        return result, BVRDetails(point_head=out, keys=keysets, weights=weights)
