"""
Toy-scale anchor-free detector: strided-conv backbone, FPN, optional
dual-relationship level P2', optional key-point attention, a shared FCOS
head, decoding with per-class NMS, FCOS targets/losses and an SGD step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import nms
from .bvr import BVRDetails, BVRHead
from .drm import BackboneFeatures, DualRelationModule, DynamicParams, PyramidFeatures, build_p6
from .dota_io import DOTA_CLASSES, DetectionRecord
from .nn import SGD, Conv2d, GroupNorm, Module
from .numerics import (
    Tensor,
    concat,
    exp,
    expit,
    log,
    log_sigmoid,
    minimum,
    relu,
    resize_nearest,
    sigmoid,
)


class NonFiniteLossError(FloatingPointError):
    """The loss was NaN or infinite; the step was not applied."""


@dataclass
class DetectorConfig:
    num_classes: int = 15
    pyramid_channels: int = 256
    backbone_channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    stem_channels: int = 8
    use_drm: bool = True
    use_bvr: bool = True
    k_max: int = 400
    score_threshold: float = 0.05
    nms_iou: float = 0.5
    lr: float = 0.0025
    momentum: float = 0.9
    weight_decay: float = 1e-4
    fo_channels: int = 64
    drm_groups: int | None = None
    bvr_embed_dim: int = 64
    bvr_max_period: float = 1000.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    prior_prob: float = 0.01
    head_depth: int = 1
    center_radius: float | None = 1.5

    def __post_init__(self):
        self.backbone_channels = tuple(self.backbone_channels)
        if len(self.backbone_channels) != 4:
            raise ValueError("backbone_channels needs four entries (C2..C5)")
        for name in ("score_threshold", "nms_iou"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.num_classes < 1 or self.k_max < 1:
            raise ValueError("num_classes and k_max must be positive")


@dataclass
class HeadOutput:
    cls_logits: Tensor   # (N, classes, H, W)
    box_reg: Tensor      # (N, 4, H, W) distances l, t, r, b in stride units, > 0
    centerness: Tensor   # (N, 1, H, W) logits
    stride: int
    name: str = ""


@dataclass
class DetectorOutput:
    backbone: BackboneFeatures
    pyramid: PyramidFeatures
    heads: list[HeadOutput]
    drm_params: DynamicParams | None = None
    bvr: dict[str, BVRDetails] = field(default_factory=dict)


class Backbone(Module):
    """Stride-2 stem followed by four stride-2 stages; outputs at strides 4/8/16/32."""

    def __init__(self, channels=(16, 32, 64, 128), stem_channels: int = 8, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.stem = Conv2d(3, stem_channels, 3, stride=2, rng=rng)
        self.stem_norm = GroupNorm(norm_groups(stem_channels), stem_channels)
        prev = stem_channels
        self.stages = []
        self.norms = []
        for ch in channels:
            self.stages.append(Conv2d(prev, ch, 3, stride=2, rng=rng))
            self.norms.append(GroupNorm(norm_groups(ch), ch))
            prev = ch

    def forward(self, image: Tensor) -> BackboneFeatures:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected an (N, 3, H, W) image, got {image.shape}")
        if image.shape[2] % 32 or image.shape[3] % 32:
            raise ValueError(f"image size {image.shape[2:]} must be divisible by 32")
        x = relu(self.stem_norm(self.stem(image)))
        feats = []
        for stage, norm in zip(self.stages, self.norms):
            x = relu(norm(stage(x)))
            feats.append(x)
        return BackboneFeatures(*feats)


class FPN(Module):
    """1x1 laterals, nearest-upsample-and-add top-down path, 3x3 smoothing, P6 by max pooling."""

    def __init__(self, in_channels, d: int, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.lateral = [Conv2d(c, d, 1, rng=rng) for c in in_channels]
        self.smooth = [Conv2d(d, d, 3, rng=rng) for _ in in_channels]

    def forward(self, c: BackboneFeatures) -> PyramidFeatures:
        levels = c.levels()
        merged = [None] * 4
        merged[3] = self.lateral[3](levels[3])
        for i in (2, 1, 0):
            h, w = levels[i].shape[2:]
            merged[i] = self.lateral[i](levels[i]) + resize_nearest(merged[i + 1], h, w)
        p2, p3, p4, p5 = (s(m) for s, m in zip(self.smooth, merged))
        return PyramidFeatures(p2, p3, p4, p5, build_p6(p5))


def norm_groups(d: int) -> int:
    """Largest group count <= 32 dividing ``d`` with at least 4 channels per group when possible."""
    for g in (32, 16, 8, 4, 2, 1):
        if d % g == 0 and d // g >= min(4, d):
            return g
    return 1


class FCOSHead(Module):
    """One shared head over all levels: cls tower -> logits; reg tower -> distances and center-ness."""

    def __init__(self, d: int, num_classes: int, prior_prob: float = 0.01, depth: int = 1,
                 level_names: tuple[str, ...] = (), rng=None):
        rng = np.random.default_rng() if rng is None else rng
        g = norm_groups(d)
        self.cls_tower = [Conv2d(d, d, 3, rng=rng) for _ in range(depth)]
        self.reg_tower = [Conv2d(d, d, 3, rng=rng) for _ in range(depth)]
        self.cls_norm = [GroupNorm(g, d) for _ in range(depth)]
        self.reg_norm = [GroupNorm(g, d) for _ in range(depth)]
        prior = -np.log((1 - prior_prob) / prior_prob)
        self.cls_logits = Conv2d(d, num_classes, 3, rng=rng, init_std=0.01, bias_init=prior)
        self.bbox_pred = Conv2d(d, 4, 3, rng=rng, init_std=0.01)
        self.centerness = Conv2d(d, 1, 3, rng=rng, init_std=0.01)
        # per-level multiplier inside the exponent, as in the reference FCOS head
        self.scales: dict[str, Tensor] = {}
        for level in level_names:
            self.scales[level] = Tensor(np.ones(1), requires_grad=True)

    def forward(self, feature: Tensor, stride: int, name: str = "") -> HeadOutput:
        scale = self.scales.get(name)
        c = r = feature
        for conv, norm in zip(self.cls_tower, self.cls_norm):
            c = relu(norm(conv(c)))
        for conv, norm in zip(self.reg_tower, self.reg_norm):
            r = relu(norm(conv(r)))
        reg = self.bbox_pred(r)
        if scale is not None:
            reg = reg * scale
        return HeadOutput(self.cls_logits(c), exp(reg), self.centerness(r), stride, name)


class Detector(Module):
    def __init__(self, cfg: DetectorConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        d = cfg.pyramid_channels
        self.backbone = Backbone(cfg.backbone_channels, cfg.stem_channels, rng=rng)
        self.fpn = FPN(cfg.backbone_channels, d, rng=rng)
        self.drm = (DualRelationModule(cfg.backbone_channels, d, cfg.fo_channels, cfg.drm_groups, rng=rng)
                    if cfg.use_drm else None)
        self.bvr = (BVRHead(d, embed_dim=cfg.bvr_embed_dim, max_period=cfg.bvr_max_period, rng=rng)
                    if cfg.use_bvr else None)
        self.head = FCOSHead(d, cfg.num_classes, cfg.prior_prob, cfg.head_depth,
                              self.level_names(), rng=rng)

    def level_names(self) -> tuple[str, ...]:
        names = ("P2", "P3", "P4", "P5", "P6")
        return ("P2'",) + names if self.cfg.use_drm else names

    def features(self, images: Tensor) -> tuple[BackboneFeatures, PyramidFeatures, DynamicParams | None]:
        c = self.backbone(images)
        p = self.fpn(c)
        params = None
        if self.drm is not None:
            p, params = self.drm.forward_with_params(c, p)
        return c, p, params

    def forward(self, images) -> DetectorOutput:
        images = images if isinstance(images, Tensor) else Tensor(images)
        c, p, params = self.features(images)
        heads, details = [], {}
        for name, feat, stride in p.named_levels():
            if self.bvr is not None:
                feat, details[name] = self.bvr.forward_with_details(feat, self.cfg.k_max)
            heads.append(self.head(feat, stride, name))
        return DetectorOutput(c, p, heads, params, details)


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------


def level_locations(h: int, w: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates ``(x, y)`` of each cell centre, each shaped ``(h, w)``."""
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return xs * stride + stride // 2, ys * stride + stride // 2


def decode_detections(heads: list[HeadOutput], cfg: DetectorConfig, image_size: tuple[int, int],
                      image_ids: list[str] | None = None,
                      class_names: tuple[str, ...] = DOTA_CLASSES) -> list[DetectionRecord]:
    """
    Score every location as ``sigmoid(cls) * sigmoid(centerness)``, keep scores
    above threshold, expand distances by the level stride, clip to the image,
    and run per-class NMS per image.
    """
    img_h, img_w = image_size
    n = heads[0].cls_logits.shape[0]
    image_ids = [str(i) for i in range(n)] if image_ids is None else list(image_ids)
    per_image: list[list[tuple[int, float, tuple]]] = [[] for _ in range(n)]
    for h in heads:
        logits = h.cls_logits.data
        with np.errstate(over="ignore"):
            scores = expit(logits) * expit(h.centerness.data)
        dist = h.box_reg.data * h.stride
        _, _, hh, ww = logits.shape
        xs, ys = level_locations(hh, ww, h.stride)
        for b, c, i, j in zip(*np.nonzero(scores > cfg.score_threshold)):
            l, t, r, bt = dist[b, :, i, j]
            box = (
                float(np.clip(xs[i, j] - l, 0, img_w)),
                float(np.clip(ys[i, j] - t, 0, img_h)),
                float(np.clip(xs[i, j] + r, 0, img_w)),
                float(np.clip(ys[i, j] + bt, 0, img_h)),
            )
            per_image[b].append((int(c), float(scores[b, c, i, j]), box))
    out = []
    for b, cands in enumerate(per_image):
        for c in sorted({k[0] for k in cands}):
            group = [k for k in cands if k[0] == c]
            keep = nms(np.array([k[2] for k in group]), np.array([k[1] for k in group]), cfg.nms_iou)
            for i in keep:
                out.append(DetectionRecord(image_ids[b], class_names[c], group[i][1], group[i][2]))
    return out


# ---------------------------------------------------------------------------
# targets and losses
# ---------------------------------------------------------------------------


def level_ranges(strides: list[int]) -> dict[int, tuple[float, float]]:
    """Regression-size band per stride: ``(2s, 4s]`` with open ends at the extremes."""
    uniq = sorted(set(strides))
    out = {}
    for i, s in enumerate(uniq):
        lo = 0.0 if i == 0 else 4.0 * uniq[i - 1]
        hi = np.inf if i == len(uniq) - 1 else 4.0 * s
        out[s] = (lo, hi)
    return out


@dataclass
class LevelTargets:
    labels: np.ndarray      # (N, H, W) int, -1 for background
    box: np.ndarray         # (N, 4, H, W) l, t, r, b in stride units
    centerness: np.ndarray  # (N, H, W)


def fcos_targets(boxes_per_image: list[np.ndarray], labels_per_image: list[np.ndarray],
                 level_shapes: list[tuple[int, int, int]], center_radius: float | None = 1.5) -> list[LevelTargets]:
    """
    FCOS assignment. A location is positive for a box when it lies strictly
    inside the box and the box's largest distance falls in the level's band;
    among several such boxes the smallest area wins.

    With ``center_radius`` set, a location must also lie within that many
    strides of the box centre (centre sampling), which drops the locations
    hugging a box edge whose distances are a pixel or two. ``None`` keeps
    every interior location.

    ``level_shapes`` lists ``(stride, H, W)`` per head level, in head order.
    """
    ranges = level_ranges([s for s, _, _ in level_shapes])
    n = len(boxes_per_image)
    out = []
    for stride, h, w in level_shapes:
        lo, hi = ranges[stride]
        xs, ys = level_locations(h, w, stride)
        labels = np.full((n, h, w), -1, dtype=int)
        reg = np.zeros((n, 4, h, w))
        ctr = np.zeros((n, h, w))
        for b in range(n):
            boxes = np.asarray(boxes_per_image[b], dtype=np.float64).reshape(-1, 4)
            if not len(boxes):
                continue
            l = xs[None] - boxes[:, 0, None, None]
            t = ys[None] - boxes[:, 1, None, None]
            r = boxes[:, 2, None, None] - xs[None]
            bt = boxes[:, 3, None, None] - ys[None]
            dists = np.stack([l, t, r, bt], axis=1)                  # (M, 4, h, w)
            inside = dists.min(axis=1) > 0
            if center_radius is not None:
                cx = (boxes[:, 0] + boxes[:, 2])[:, None, None] / 2
                cy = (boxes[:, 1] + boxes[:, 3])[:, None, None] / 2
                reach_c = center_radius * stride
                inside &= (np.abs(xs[None] - cx) < reach_c) & (np.abs(ys[None] - cy) < reach_c)
            reach = dists.max(axis=1)
            ok = inside & (reach > lo) & (reach <= hi)
            area = ((boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1]))[:, None, None]
            area = np.where(ok, area, np.inf)
            best = area.argmin(axis=0)
            pos = np.isfinite(area.min(axis=0))
            chosen = np.take_along_axis(dists, best[None, None], axis=0)[0]  # (4, h, w)
            labels[b][pos] = np.asarray(labels_per_image[b])[best[pos]]
            reg[b][:, pos] = chosen[:, pos] / stride
            lr_ = np.minimum(chosen[0], chosen[2]) / np.maximum(chosen[0], chosen[2])
            tb_ = np.minimum(chosen[1], chosen[3]) / np.maximum(chosen[1], chosen[3])
            with np.errstate(invalid="ignore"):
                ctr[b][pos] = np.sqrt(lr_ * tb_)[pos]
        out.append(LevelTargets(labels, reg, ctr))
    return out


def _flatten(t: Tensor) -> Tensor:
    n, c, h, w = t.shape
    return t.transpose(0, 2, 3, 1).reshape(n * h * w, c)


def detection_loss(heads: list[HeadOutput], targets: list[LevelTargets], cfg: DetectorConfig) -> tuple[Tensor, dict]:
    """
    Focal classification + ``-log IoU`` regression + center-ness cross-entropy,
    weighted 1:1:1. Classification is normalised by the positive count, the
    other two terms are means over positives. The center-ness term has the
    target entropy subtracted, so a perfect prediction scores zero.
    """
    logits = concat([_flatten(h.cls_logits) for h in heads], axis=0)
    reg = concat([_flatten(h.box_reg) for h in heads], axis=0)
    ctr = concat([_flatten(h.centerness) for h in heads], axis=0)
    labels = np.concatenate([t.labels.reshape(-1) for t in targets])
    reg_t = np.concatenate([t.box.transpose(0, 2, 3, 1).reshape(-1, 4) for t in targets])
    ctr_t = np.concatenate([t.centerness.reshape(-1) for t in targets])
    pos = np.nonzero(labels >= 0)[0]
    num_pos = max(len(pos), 1)

    onehot = np.zeros(logits.shape)
    onehot[pos, labels[pos]] = 1.0
    p = sigmoid(logits)
    a, gamma = cfg.focal_alpha, cfg.focal_gamma
    one_minus_p = 1.0 - p
    if gamma == 2.0:
        w_pos, w_neg = one_minus_p * one_minus_p, p * p
    else:
        w_pos, w_neg = exp(log(one_minus_p) * gamma), exp(log(p) * gamma)
    focal = -(a * onehot) * w_pos * log_sigmoid(logits) - ((1 - a) * (1 - onehot)) * w_neg * log_sigmoid(-logits)
    loss_cls = focal.sum() * (1.0 / num_pos)

    parts = {"cls": loss_cls.item(), "reg": 0.0, "ctr": 0.0, "num_pos": len(pos)}
    total = loss_cls
    if len(pos):
        pr = reg[pos]
        tr = reg_t[pos]
        pred_area = (pr[:, 0:1] + pr[:, 2:3]) * (pr[:, 1:2] + pr[:, 3:4])
        tgt_area = (tr[:, 0:1] + tr[:, 2:3]) * (tr[:, 1:2] + tr[:, 3:4])
        mins = minimum(pr, tr)
        inter = (mins[:, 0:1] + mins[:, 2:3]) * (mins[:, 1:2] + mins[:, 3:4])
        iou = inter / (pred_area + tgt_area - inter)
        loss_reg = -log(iou).mean()

        tc = ctr_t[pos].reshape(-1, 1)
        pc = ctr[pos]
        bce = -(tc * log_sigmoid(pc)) - (1 - tc) * log_sigmoid(-pc)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = -np.where(tc > 0, tc * np.log(tc), 0.0) - np.where(tc < 1, (1 - tc) * np.log1p(-tc), 0.0)
        loss_ctr = (bce - ent).mean()
        total = total + loss_reg + loss_ctr
        parts["reg"], parts["ctr"] = loss_reg.item(), loss_ctr.item()
    return total, parts


def head_level_shapes(model: Detector, image_size: tuple[int, int]) -> list[tuple[int, int, int]]:
    """``(stride, H, W)`` per head level for an input of ``image_size``."""
    h, w = image_size
    sizes = []
    for s in (4, 8, 16, 32):
        sizes.append((s, h // s, w // s))
    p5h, p5w = h // 32, w // 32
    wnd = min(2, p5h, p5w)
    sizes.append((64, (p5h - wnd) // 2 + 1, (p5w - wnd) // 2 + 1))
    if model.drm is not None:
        sizes.insert(0, sizes[0])
    return sizes


def make_optimizer(model: Detector, cfg: DetectorConfig | None = None) -> SGD:
    cfg = model.cfg if cfg is None else cfg
    return SGD(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)


def micro_train_step(model: Detector, optimizer: SGD, images: np.ndarray,
                     targets: list[LevelTargets], cfg: DetectorConfig | None = None) -> float:
    """One SGD step on a batch; returns the loss before the update."""
    cfg = model.cfg if cfg is None else cfg
    out = model(Tensor(images))
    loss, _ = detection_loss(out.heads, targets, cfg)
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLossError(f"loss is {value}; parameters left unchanged")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return value
