"""
Dual relationship module.

Backbone levels C2..C5 are resized to C2's grid, concatenated and reduced by
a 3x3 convolution (the fusion operation). Each patch of the batch then acts
as one expert: its pooled fused feature is mapped to a full block of
convolution parameters, a sigmoid router scores it, and the routed sum of
all experts becomes the two grouped 1x1 convolutions that fuse P2..P5 into
the extra level P2'. Because the sum runs over the batch, P2' of one patch
depends on its batch companions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .nn import Conv2d, Linear, Module
from .numerics import (
    ConvSpec,
    Tensor,
    concat_channels,
    conv2d,
    global_avg_pool,
    max_pool2d,
    resize_bilinear,
    sigmoid,
    tensor_sum,
)

log = logging.getLogger(__name__)


@dataclass
class BackboneFeatures:
    """Backbone outputs at strides 4, 8, 16 and 32."""

    c2: Tensor
    c3: Tensor
    c4: Tensor
    c5: Tensor

    def levels(self) -> list[Tensor]:
        return [self.c2, self.c3, self.c4, self.c5]


@dataclass
class PyramidFeatures:
    """FPN levels P2..P6 with a uniform channel count, plus the optional P2'."""

    p2: Tensor
    p3: Tensor
    p4: Tensor
    p5: Tensor
    p6: Tensor
    p2prime: Tensor | None = None

    def __post_init__(self):
        d = self.p2.shape[1]
        for name in ("p3", "p4", "p5", "p6"):
            if getattr(self, name).shape[1] != d:
                raise ValueError(f"{name} has {getattr(self, name).shape[1]} channels, expected {d}")
        if self.p2prime is not None and self.p2prime.shape != self.p2.shape:
            raise ValueError(f"P2' shape {self.p2prime.shape} differs from P2 shape {self.p2.shape}")

    @property
    def channels(self) -> int:
        return self.p2.shape[1]

    def named_levels(self) -> list[tuple[str, Tensor, int]]:
        """``(name, tensor, stride)`` in head order; P2' first when present."""
        out = [("P2", self.p2, 4), ("P3", self.p3, 8), ("P4", self.p4, 16), ("P5", self.p5, 32), ("P6", self.p6, 64)]
        if self.p2prime is not None:
            out.insert(0, ("P2'", self.p2prime, 4))
        return out


@dataclass
class DynamicParams:
    """
    Generated parameters of the two 1x1 fusion convolutions.

    ``experts`` holds each patch's flat parameter block (n, P) and ``alpha``
    the router output per expert (n,). ``w1``/``b1``/``w2``/``b2`` are
    slices of the routing-weighted sum of the expert blocks.
    """

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    alpha: Tensor
    experts: Tensor
    combined: Tensor
    groups: int


def conv1_param_count(d: int, groups: int) -> int:
    """Parameters of the grouped 1x1 conv mapping 4d -> d channels."""
    return d * (4 * d // groups) + d


def conv2_param_count(d: int, groups: int) -> int:
    """Parameters of the grouped 1x1 conv mapping d -> d channels."""
    return d * (d // groups) + d


def build_p6(p5: Tensor) -> Tensor:
    """P6 by 2x2/2 max pooling of P5; a 1-pixel axis pools with a 1-wide window."""
    window = min(2, p5.shape[2], p5.shape[3])
    return max_pool2d(p5, window, 2)


class DualRelationModule(Module):
    """
    Parameters
    ----------
    backbone_channels : tuple of 4 int
        Channel counts of C2..C5.
    d : int
        Pyramid channel count.
    fused_channels : int
        Output channels of the fusion operation.
    groups : int, optional
        Group count of both 1x1 convolutions; defaults to ``max(1, d // 16)``.
    """

    def __init__(self, backbone_channels: tuple[int, int, int, int], d: int = 256, fused_channels: int = 64,
                 groups: int | None = None, rng: np.random.Generator | None = None):
        rng = np.random.default_rng() if rng is None else rng
        groups = max(1, d // 16) if groups is None else groups
        if d % groups:
            raise ValueError(f"pyramid channels {d} not divisible by groups {groups}")
        self.backbone_channels = tuple(backbone_channels)
        self.d = d
        self.fused_channels = fused_channels
        self.groups = groups
        self.fo_conv = Conv2d(sum(backbone_channels), fused_channels, 3, padding=1, rng=rng)
        self.n_w1 = d * (4 * d // groups)
        self.n_w2 = d * (d // groups)
        n_block = self.n_w1 + d + self.n_w2 + d
        # expert kernels start near the scale of a freshly initialised 1x1 conv
        scale = 1.0 / np.sqrt(fused_channels * (4 * d // groups))
        self.expert_head = Linear(fused_channels, n_block, rng=rng, scale=scale)
        self.routing_head = Linear(fused_channels, 1, rng=rng, scale=0.1 / np.sqrt(fused_channels))

    @property
    def block_size(self) -> int:
        return self.n_w1 + self.d + self.n_w2 + self.d

    def fusion_operation(self, c: BackboneFeatures) -> Tensor:
        levels = c.levels()
        for i, (t, want) in enumerate(zip(levels, self.backbone_channels)):
            if t.ndim != 4 or t.shape[1] != want:
                raise ValueError(f"C{i + 2} has shape {t.shape}, expected {want} channels")
        h, w = c.c2.shape[2:]
        stacked = concat_channels([c.c2] + [resize_bilinear(t, h, w) for t in levels[1:]])
        return self.fo_conv(stacked)

    def pooled(self, fused: Tensor) -> Tensor:
        n = fused.shape[0]
        return global_avg_pool(fused).reshape(n, fused.shape[1])

    def generate_dynamic_params(self, fused: Tensor) -> DynamicParams:
        if fused.ndim != 4 or fused.shape[0] < 1:
            raise ValueError(f"need at least one patch (expert), got fused shape {fused.shape}")
        if fused.shape[1] != self.fused_channels:
            raise ValueError(f"fused map has {fused.shape[1]} channels, expected {self.fused_channels}")
        n = fused.shape[0]
        if n == 1:
            log.debug("single patch in batch: condconv degenerates to one expert")
        pooled = self.pooled(fused)
        experts = self.expert_head(pooled)                          # (n, P)
        alpha = sigmoid(self.routing_head(pooled))                  # (n, 1)
        # explicit sum rather than a matmul, so no fused multiply-add blurs exact symmetries
        combined = tensor_sum(alpha * experts, axis=0)               # routed sum over experts
        d, g = self.d, self.groups
        o = 0
        w1 = combined[o : o + self.n_w1].reshape(d, 4 * d // g, 1, 1)
        o += self.n_w1
        b1 = combined[o : o + d]
        o += d
        w2 = combined[o : o + self.n_w2].reshape(d, d // g, 1, 1)
        o += self.n_w2
        b2 = combined[o : o + d]
        return DynamicParams(w1=w1, b1=b1, w2=w2, b2=b2, alpha=alpha.reshape(n), experts=experts,
                             combined=combined, groups=g)

    def fuse_pyramid(self, p: PyramidFeatures, params: DynamicParams) -> Tensor:
        d = p.channels
        if params.w1.shape[1] * params.groups != 4 * d or params.w1.shape[0] != d:
            raise ValueError(f"conv1 weight {params.w1.shape} incompatible with {d} pyramid channels")
        h, w = p.p2.shape[2:]
        stacked = concat_channels([p.p2] + [resize_bilinear(t, h, w) for t in (p.p3, p.p4, p.p5)])
        spec = ConvSpec(kernel=(1, 1), groups=params.groups)
        hidden = conv2d(stacked, params.w1, params.b1, spec)
        return conv2d(hidden, params.w2, params.b2, spec)

    def forward(self, c: BackboneFeatures, p: PyramidFeatures) -> PyramidFeatures:
        """Return ``p`` extended with P2'; the original levels are passed through untouched."""
        return self.forward_with_params(c, p)[0]

    def forward_with_params(self, c: BackboneFeatures, p: PyramidFeatures) -> tuple[PyramidFeatures, DynamicParams]:
        if c.c2.shape[0] != p.p2.shape[0]:
            raise ValueError(f"batch mismatch: backbone {c.c2.shape[0]}, pyramid {p.p2.shape[0]}")
        params = self.generate_dynamic_params(self.fusion_operation(c))
        return replace(p, p2prime=self.fuse_pyramid(p, params)), params
