"""Random-parameter forward pass that reports feature shapes together with attention and routing statistics."""

from __future__ import annotations

import numpy as np

from .detector import Detector, DetectorConfig
from .numerics import Tensor, no_grad


def demo_report(size: int = 64, use_drm: bool = True, use_bvr: bool = True, duplicate: bool = False,
                seed: int = 0, cfg: DetectorConfig | None = None) -> dict:
    """
    Run a batch of two random patches through a freshly initialised detector.

    With ``duplicate`` the second patch is a copy of the first, which makes
    the two routing weights equal. The returned dict is JSON-serialisable.
    """
    if cfg is None:
        cfg = DetectorConfig(pyramid_channels=16, fo_channels=8, bvr_embed_dim=16, k_max=50)
    cfg = DetectorConfig(**(vars(cfg) | dict(use_drm=use_drm, use_bvr=use_bvr)))
    rng = np.random.default_rng(seed)
    first = rng.uniform(0, 1, (1, 3, size, size))
    second = first.copy() if duplicate else rng.uniform(0, 1, (1, 3, size, size))
    model = Detector(cfg, seed=seed)
    with no_grad():
        out = model(Tensor(np.concatenate([first, second])))

    shapes = {name: list(t.shape) for name, t in zip(("C2", "C3", "C4", "C5"), out.backbone.levels())}
    for name, t, _ in out.pyramid.named_levels():
        shapes[name] = list(t.shape)
    heads = {h.name: {"stride": h.stride, "cls": list(h.cls_logits.shape), "box": list(h.box_reg.shape),
                      "centerness": list(h.centerness.shape)} for h in out.heads}
    attention = {}
    for name, det in out.bvr.items():
        w = np.concatenate([wi.numpy() for wi in det.weights if wi is not None])
        sums = w.sum(axis=1)
        attention[name] = {"keys": int(w.shape[1]), "mean": float(w.mean()), "max": float(w.max()),
                           "entropy": float(-(w * np.log(np.clip(w, 1e-300, None))).sum(axis=1).mean()) + 0.0,
                           "max_sum_error": float(np.abs(sums - 1).max())}
    alpha = out.drm_params.alpha.numpy().tolist() if out.drm_params is not None else None
    return {"image_size": size, "use_drm": use_drm, "use_bvr": use_bvr, "duplicate": duplicate,
            "shapes": shapes, "heads": heads, "attention": attention, "alpha": alpha}


def format_report(report: dict) -> str:
    lines = [f"input 2x3x{report['image_size']}x{report['image_size']}  "
             f"drm={'on' if report['use_drm'] else 'off'}  bvr={'on' if report['use_bvr'] else 'off'}"]
    lines.append("features:")
    for name, shape in report["shapes"].items():
        lines.append(f"  {name:<4} {'x'.join(map(str, shape))}")
    lines.append("heads:")
    for name, h in report["heads"].items():
        lines.append(f"  {name:<4} stride {h['stride']:>2}  cls {'x'.join(map(str, h['cls']))}"
                     f"  box {'x'.join(map(str, h['box']))}  ctr {'x'.join(map(str, h['centerness']))}")
    if report["attention"]:
        lines.append("attention weights:")
        for name, a in report["attention"].items():
            lines.append(f"  {name:<4} keys {a['keys']:>3}  mean {a['mean']:.4f}  max {a['max']:.4f}"
                         f"  entropy {a['entropy']:.4f}  |sum-1| {a['max_sum_error']:.1e}")
    if report["alpha"] is not None:
        lines.append("routing weights: " + "  ".join(f"{v:.6f}" for v in report["alpha"]))
    return "\n".join(lines)
