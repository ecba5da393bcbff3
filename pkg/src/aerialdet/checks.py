"""
Self-check suites: gradient fidelity, oracle equivalence, attention and
expert-routing properties, shape contracts, metric and tiling correctness,
and the ablation identity run.

Every suite is a function ``suite(seed, **opts) -> CheckResult`` that is
deterministic in ``seed``. The same functions back the ``check`` command and
the acceptance tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as N
from . import oracles
from .bvr import BVRAttention, BVRHead, KeySet, PointHead, select_top_k_keys
from .detector import Detector, DetectorConfig, detection_loss, fcos_targets, head_level_shapes
from .dota_io import AnnotationRecord, DetectionRecord, clip_annotations_to_patch, crop_patches, hbb_to_quad, remap_detections
from .drm import BackboneFeatures, DualRelationModule, PyramidFeatures, build_p6
from .metrics import TP, FP, average_precision, evaluate, match_detections, precision_recall
from .nn import GroupNorm
from .numerics import GradCheckError, Tensor, grad_check

GRAD_TOL = 1e-4
FULL_GRAPH_TOL = 1e-3
ORACLE_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    lines: list[str] = field(default_factory=list)
    seconds: float = 0.0

    def add(self, label: str, ok: bool, detail: str = "") -> None:
        self.lines.append(f"{'ok  ' if ok else 'FAIL'} {label}" + (f": {detail}" if detail else ""))
        self.passed = self.passed and ok


def _rand(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def _op_cases(rng) -> list[tuple[str, Callable, list[Tensor]]]:
    pos = lambda *s: Tensor(rng.uniform(0.5, 2.0, s), requires_grad=True)  # noqa: E731
    cases = [
        ("add (broadcast)", lambda a, b: a + b, [_rand(rng, 3, 4), _rand(rng, 4)]),
        ("sub", lambda a, b: a - b, [_rand(rng, 3, 4), _rand(rng, 3, 1)]),
        ("mul (broadcast)", lambda a, b: a * b, [_rand(rng, 2, 3, 4), _rand(rng, 3, 1)]),
        ("div", lambda a, b: a / b, [_rand(rng, 3, 4), pos(3, 4)]),
        ("exp", N.exp, [_rand(rng, 5)]),
        ("log", N.log, [pos(5)]),
        ("sqrt", N.sqrt, [pos(5)]),
        ("sin", N.sin, [_rand(rng, 5)]),
        ("cos", N.cos, [_rand(rng, 5)]),
        ("sigmoid", N.sigmoid, [_rand(rng, 6, scale=3)]),
        ("log_sigmoid", N.log_sigmoid, [_rand(rng, 6, scale=3)]),
        ("relu", N.relu, [_rand(rng, 8)]),
        ("minimum", N.minimum, [_rand(rng, 6), _rand(rng, 6)]),
        ("maximum", N.maximum, [_rand(rng, 6), _rand(rng, 6)]),
        ("matmul (batched)", N.matmul, [_rand(rng, 2, 3, 4), _rand(rng, 4, 5)]),
        ("sum (axis)", lambda a: N.tensor_sum(a, axis=1), [_rand(rng, 3, 4, 2)]),
        ("mean (axes)", lambda a: N.mean(a, axis=(0, 2), keepdims=True), [_rand(rng, 3, 4, 2)]),
        ("reshape", lambda a: a.reshape(6, 4), [_rand(rng, 2, 3, 4)]),
        ("transpose", lambda a: a.transpose(2, 0, 1), [_rand(rng, 2, 3, 4)]),
        ("index (repeated)", lambda a: N.index(a, (np.array([0, 2, 0]), slice(None))), [_rand(rng, 3, 4)]),
        ("concat", lambda a, b: N.concat([a, b], axis=1), [_rand(rng, 2, 3), _rand(rng, 2, 2)]),
        ("stack", lambda a, b: N.stack([a, b], axis=-1), [_rand(rng, 2, 3), _rand(rng, 2, 3)]),
        ("softmax (8-vector)", N.softmax, [_rand(rng, 8)]),
        ("softmax (rows)", lambda a: N.softmax(a, axis=1), [_rand(rng, 3, 5, scale=2)]),
        ("conv2d 3x3 N=2", lambda x, w, b: N.conv2d(x, w, b, N.ConvSpec((3, 3), padding=1)),
         [_rand(rng, 2, 3, 5, 5), _rand(rng, 4, 3, 3, 3), _rand(rng, 4)]),
        ("conv2d stride 2 N=1", lambda x, w: N.conv2d(x, w, None, N.ConvSpec((3, 3), stride=2, padding=1)),
         [_rand(rng, 1, 2, 6, 7), _rand(rng, 3, 2, 3, 3)]),
        ("conv2d g=C depthwise", lambda x, w, b: N.conv2d(x, w, b, N.ConvSpec((3, 3), padding=1, groups=4)),
         [_rand(rng, 2, 4, 4, 4), _rand(rng, 4, 1, 3, 3), _rand(rng, 4)]),
        ("conv2d 1x1 g=2", lambda x, w, b: N.conv2d(x, w, b, N.ConvSpec((1, 1), groups=2)),
         [_rand(rng, 1, 4, 3, 3), _rand(rng, 6, 2, 1, 1), _rand(rng, 6)]),
        ("resize_bilinear up", lambda x: N.resize_bilinear(x, 7, 5), [_rand(rng, 2, 2, 3, 2)]),
        ("resize_bilinear down", lambda x: N.resize_bilinear(x, 2, 3), [_rand(rng, 1, 2, 5, 6)]),
        ("resize_nearest", lambda x: N.resize_nearest(x, 6, 4), [_rand(rng, 1, 2, 3, 2)]),
        ("concat_channels", lambda a, b: N.concat_channels([a, b]), [_rand(rng, 2, 2, 3, 3), _rand(rng, 2, 3, 3, 3)]),
        ("max_pool2d", lambda x: N.max_pool2d(x, 2, 2), [_rand(rng, 2, 2, 4, 5)]),
        ("global_avg_pool", N.global_avg_pool, [_rand(rng, 2, 3, 3, 4)]),
    ]
    gn = GroupNorm(2, 4)
    gn.weight = _rand(rng, 1, 4, 1, 1)
    gn.bias = _rand(rng, 1, 4, 1, 1)
    cases.append(("group_norm", lambda x, w, b: gn(x), [_rand(rng, 2, 4, 3, 3), gn.weight, gn.bias]))
    return cases


def _small_drm(rng) -> tuple[DualRelationModule, BackboneFeatures, PyramidFeatures]:
    bc = (2, 3, 3, 4)
    drm = DualRelationModule(bc, d=4, fused_channels=3, groups=2, rng=rng)
    sizes = (6, 3, 2, 1)
    c = BackboneFeatures(*(_rand(rng, 2, ch, s, s) for ch, s in zip(bc, sizes)))
    p5 = _rand(rng, 2, 4, 1, 1)
    p = PyramidFeatures(*(_rand(rng, 2, 4, s, s) for s in sizes[:3]), p5, build_p6(p5))
    return drm, c, p


def tiny_detector_config(**overrides) -> DetectorConfig:
    base = dict(num_classes=3, pyramid_channels=8, backbone_channels=(4, 4, 6, 8), stem_channels=3,
                fo_channels=4, drm_groups=2, bvr_embed_dim=8, k_max=4)
    base.update(overrides)
    return DetectorConfig(**base)


def suite_gradients(seed: int = 0, corrupt_params: bool = False) -> CheckResult:
    """Every differentiable op plus three end-to-end graphs against central differences."""
    rng = np.random.default_rng(seed)
    res = CheckResult("gradients", True)

    def run(label: str, op, inputs, tol, max_elements=None):
        try:
            err = grad_check(op, inputs, eps=1e-6, max_elements=max_elements, seed=seed)
        except GradCheckError as e:
            res.add(label, False, f"non-finite value ({e})")
            return
        res.add(label, err < tol, f"rel err {err:.1e} (tol {tol:.0e})")

    for label, op, inputs in _op_cases(rng):
        run(label, op, inputs, GRAD_TOL)

    drm, c, p = _small_drm(rng)
    params = list(drm.parameters().values())
    if corrupt_params:
        bad = np.array(params[0].data)
        bad.flat[0] = np.nan
        params[0].data = bad
    run("drm_forward end-to-end", lambda *_: drm.forward(c, p).p2prime,
        params + c.levels() + [p.p2, p.p3, p.p4, p.p5], GRAD_TOL)

    head = BVRHead(4, embed_dim=8, rng=rng)
    feat = _rand(rng, 1, 4, 6, 6)
    run("bvr_head_forward end-to-end (1x4x6x6, k=4)", lambda *_: head(feat, k=4),
        list(head.parameters().values()) + [feat], GRAD_TOL)

    cfg = tiny_detector_config()
    model = Detector(cfg, seed=seed)
    image = Tensor(rng.uniform(0, 1, (1, 3, 32, 32)), requires_grad=True)
    targets = fcos_targets([np.array([[4.0, 6.0, 20.0, 22.0]])], [np.array([1])], head_level_shapes(model, (32, 32)))

    def full(*_):
        return detection_loss(model(image).heads, targets, cfg)[0]

    run("detector loss, full graph (1x3x32x32)", full, list(model.parameters().values()) + [image],
        FULL_GRAPH_TOL, max_elements=4)
    return res


# ---------------------------------------------------------------------------
# DRM
# ---------------------------------------------------------------------------


def _random_drm_instance(rng):
    n = int(rng.integers(1, 3))
    bc = tuple(int(v) for v in rng.integers(1, 4, size=4))
    g = int(rng.choice([1, 2]))
    d = g * int(rng.integers(1, 3))
    h2, w2 = (int(v) for v in rng.integers(3, 7, size=2))
    sizes = [(h2, w2)]
    for _ in range(3):
        sizes.append((max(1, (sizes[-1][0] + 1) // 2), max(1, (sizes[-1][1] + 1) // 2)))
    drm = DualRelationModule(bc, d=d, fused_channels=int(rng.integers(1, 4)), groups=g, rng=rng)
    # non-zero biases so that bias handling is exercised
    drm.fo_conv.bias = Tensor(rng.standard_normal(drm.fo_conv.bias.shape), requires_grad=True)
    c = BackboneFeatures(*(Tensor(rng.standard_normal((n, ch, h, w))) for ch, (h, w) in zip(bc, sizes)))
    ps = [Tensor(rng.standard_normal((n, d, h, w))) for h, w in sizes]
    p = PyramidFeatures(*ps, build_p6(ps[3]))
    return drm, c, p


def suite_drm_oracles(seed: int = 0, instances: int = 20) -> CheckResult:
    """fusion_operation and fuse_pyramid against straight-line loop oracles."""
    rng = np.random.default_rng(seed)
    res = CheckResult("drm-oracles", True)
    worst_fo = worst_fp = 0.0
    for _ in range(instances):
        drm, c, p = _random_drm_instance(rng)
        fused = drm.fusion_operation(c)
        ref = oracles.fusion_operation([t.data for t in c.levels()], drm.fo_conv.weight.data, drm.fo_conv.bias.data)
        worst_fo = max(worst_fo, float(np.max(np.abs(fused.data - ref))))
        params = drm.generate_dynamic_params(fused)
        p2prime = drm.fuse_pyramid(p, params)
        ref = oracles.fuse_pyramid([p.p2.data, p.p3.data, p.p4.data, p.p5.data], params.w1.data, params.b1.data,
                                   params.w2.data, params.b2.data, params.groups)
        worst_fp = max(worst_fp, float(np.max(np.abs(p2prime.data - ref))))
    res.add(f"fusion_operation vs loop oracle ({instances} instances)", worst_fo < ORACLE_TOL, f"max abs diff {worst_fo:.1e}")
    res.add(f"fuse_pyramid vs loop oracle ({instances} instances)", worst_fp < ORACLE_TOL, f"max abs diff {worst_fp:.1e}")
    return res


def suite_expert_algebra(seed: int = 0) -> CheckResult:
    """Routed combination, single-expert and identical-patch cases."""
    rng = np.random.default_rng(seed)
    res = CheckResult("expert-algebra", True)
    worst = 0.0
    for _ in range(10):
        drm, c, _ = _random_drm_instance(rng)
        fused = drm.fusion_operation(BackboneFeatures(*(Tensor(rng.standard_normal((2,) + t.shape[1:])) for t in c.levels())))
        dp = drm.generate_dynamic_params(fused)
        ref = oracles.routed_combination(dp.experts.data, dp.alpha.data)
        worst = max(worst, float(np.max(np.abs(dp.combined.data - ref))))
    res.add("combination equals the routing-weighted sum of expert blocks element-wise", worst <= 1e-15, f"max abs diff {worst:.1e}")

    drm, c, _ = _random_drm_instance(rng)
    one = BackboneFeatures(*(Tensor(t.data[:1]) for t in c.levels()))
    dp = drm.generate_dynamic_params(drm.fusion_operation(one))
    exact = np.array_equal(dp.combined.data, dp.alpha.data[0] * dp.experts.data[0])
    res.add("single expert: combination is its weight times its block, exactly", exact)
    drm.routing_head.weight = Tensor(np.zeros(drm.routing_head.weight.shape), requires_grad=True)
    drm.routing_head.bias = Tensor(np.zeros(drm.routing_head.bias.shape), requires_grad=True)
    dp = drm.generate_dynamic_params(drm.fusion_operation(one))
    res.add("zeroed routing head gives alpha = 0.5", bool(dp.alpha.data[0] == 0.5))

    drm, c, _ = _random_drm_instance(rng)
    twin = BackboneFeatures(*(Tensor(np.concatenate([t.data[:1], t.data[:1]])) for t in c.levels()))
    dp = drm.generate_dynamic_params(drm.fusion_operation(twin))
    sym = (np.array_equal(dp.experts.data[0], dp.experts.data[1]) and dp.alpha.data[0] == dp.alpha.data[1]
           and np.array_equal(dp.combined.data, (dp.alpha.data[0] + dp.alpha.data[1]) * dp.experts.data[0]))
    res.add("identical patches: equal blocks, equal weights, sum is the weight total times the block", sym)
    return res


def suite_batch_coupling(seed: int = 0) -> CheckResult:
    """P2' of a patch depends on its batch companion; a duplicated companion is the symmetric case."""
    rng = np.random.default_rng(seed)
    res = CheckResult("batch-coupling", True)
    cfg = tiny_detector_config(use_bvr=False)
    model = Detector(cfg, seed=seed)
    a = rng.uniform(0, 1, (1, 3, 64, 64))
    b = rng.uniform(0, 1, (1, 3, 64, 64))
    with N.no_grad():
        alone = model.features(Tensor(a))[1].p2prime.data[0]
        pair = model.features(Tensor(np.concatenate([a, b])))[1].p2prime.data[0]
        _, twin_p, twin_params = model.features(Tensor(np.concatenate([a, a])))
    diff = float(np.max(np.abs(alone - pair)))
    res.add("batch-of-two (distinct companion) differs from batch-of-one", diff > 1e-8, f"max abs diff {diff:.2e}")
    same = np.array_equal(twin_p.p2prime.data[0], twin_p.p2prime.data[1])
    sym = bool(twin_params.alpha.data[0] == twin_params.alpha.data[1])
    res.add("identical companion: both outputs equal, both routing weights equal", same and sym)
    return res


# ---------------------------------------------------------------------------
# BVR
# ---------------------------------------------------------------------------


def suite_attention(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    res = CheckResult("attention", True)
    head = BVRHead(6, embed_dim=8, rng=rng)
    feat = Tensor(rng.standard_normal((2, 6, 7, 5)))
    with N.no_grad():
        _, det = head.forward_with_details(feat, k=9)
    dev = max(float(np.max(np.abs(w.data.sum(axis=1) - 1.0))) for w in det.weights)
    nonneg = all(np.all(w.data >= 0) for w in det.weights)
    res.add("attention weights sum to 1 at every query", dev < 1e-9 and nonneg, f"max deviation {dev:.1e}")

    head.attention.value_proj.weight = Tensor(np.zeros(head.attention.value_proj.weight.shape), requires_grad=True)
    with N.no_grad():
        out = head(feat, k=9)
    res.add("zero value transform gives the input bitwise", np.array_equal(out.data, feat.data))

    attn = BVRAttention(6, embed_dim=8, rng=rng)
    worst = 0.0
    for _ in range(100):
        query_xy, key_xy = rng.uniform(-50, 50, (3, 2)), rng.uniform(-50, 50, (4, 2))
        t = rng.uniform(-500, 500, 2)
        a = attn.geometric_similarity(query_xy, key_xy).data
        b = attn.geometric_similarity(query_xy + t, key_xy + t).data
        worst = max(worst, float(np.max(np.abs(a - b))))
    res.add("geometric term invariant under joint translation (100 draws)", worst < 1e-9, f"max abs diff {worst:.1e}")

    worst_enh = 0.0
    for _ in range(5):
        keys = KeySet(positions=Tensor(rng.uniform(0, 8, (5, 2))), features=Tensor(rng.standard_normal((5, 6))),
                      scores=np.sort(rng.uniform(size=5))[::-1], cells=np.zeros((5, 2), int))
        query_feat, query_xy = rng.standard_normal(6), rng.uniform(0, 8, 2)
        got = attn.enhance(query_feat, query_xy, keys)[0].data[0]
        ref = oracles.bvr_enhance(query_feat, query_xy, keys.features.data, keys.positions.data, attn.query_proj.weight.data,
                                  attn.key_proj.weight.data, attn.value_proj.weight.data,
                                  attn.geo_head.weight.data[:, 0], float(attn.geo_head.bias.data[0]),
                                  attn.embed_dim, attn.max_period)
        worst_enh = max(worst_enh, float(np.max(np.abs(got - ref))))
    res.add("enhancement vs loop oracle (5-key instances)", worst_enh < ORACLE_TOL, f"max abs diff {worst_enh:.1e}")

    ph = PointHead(2, rng=rng)
    mismatches = 0
    for trial in range(60):
        h, w = (int(v) for v in rng.integers(1, 17, size=2))
        scores = rng.integers(0, 4, (h, w)) / 4.0 if trial % 2 else rng.uniform(size=(h, w))
        out = ph(Tensor(rng.standard_normal((1, 2, h, w))))
        out.corner_scores = Tensor(scores[None, None])
        k = int(rng.integers(1, h * w + 3))
        keys = select_top_k_keys(out, Tensor(rng.standard_normal((1, 2, h, w))), k)
        want = oracles.top_k_cells(scores, k)
        if [tuple(c) for c in keys.cells.tolist()] != want:
            mismatches += 1
    res.add("top-k equals brute-force sort on grids up to 16x16 (60 grids, half tied)", mismatches == 0,
            f"{mismatches} mismatches")
    return res


# ---------------------------------------------------------------------------
# shapes
# ---------------------------------------------------------------------------


def suite_shapes(seed: int = 0, draws: int = 6) -> CheckResult:
    """With DRM on, the head sees six levels and P2' has P2's shape."""
    rng = np.random.default_rng(seed)
    res = CheckResult("shapes", True)
    bad = []
    for _ in range(draws):
        g = int(rng.choice([1, 2, 4]))
        d = g * int(rng.integers(1, 4))
        size = (32 * int(rng.integers(1, 4)), 32 * int(rng.integers(1, 4)))
        cfg = tiny_detector_config(pyramid_channels=d, drm_groups=g, use_bvr=bool(rng.integers(2)))
        model = Detector(cfg, seed=int(rng.integers(1 << 30)))
        with N.no_grad():
            out = model(Tensor(rng.uniform(size=(int(rng.integers(1, 3)), 3) + size)))
        names = [h.name for h in out.heads]
        ok = (names == ["P2'", "P2", "P3", "P4", "P5", "P6"]
              and out.pyramid.p2prime.shape == out.pyramid.p2.shape
              and all(h.cls_logits.shape[1] == cfg.num_classes and h.box_reg.shape[1] == 4 for h in out.heads))
        if not ok:
            bad.append((d, g, size))
    res.add(f"six head levels and P2' shape equals P2 ({draws} random configurations)", not bad, f"failures {bad}" if bad else "")
    return res


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _random_micro_instance(rng):
    n_gt = int(rng.integers(0, 7))
    n_det = int(rng.integers(0, 11))
    corners = rng.integers(0, 20, size=(n_gt, 2))
    gts = [((int(x), int(y), int(x + rng.integers(2, 8)), int(y + rng.integers(2, 8))), bool(rng.uniform() < 0.2))
           for x, y in corners]
    dets = []
    for _ in range(n_det):
        if gts and rng.uniform() < 0.7:
            b = gts[int(rng.integers(len(gts)))][0]
            jit = rng.integers(-2, 3, size=4)
            box = (b[0] + jit[0], b[1] + jit[1], max(b[2] + jit[2], b[0] + jit[0] + 1), max(b[3] + jit[3], b[1] + jit[1] + 1))
        else:
            x, y = rng.integers(0, 20, size=2)
            box = (x, y, x + rng.integers(2, 8), y + rng.integers(2, 8))
        score = float(rng.integers(1, 6)) / 5.0  # coarse scores force ties
        dets.append((score, tuple(float(v) for v in box)))
    return dets, gts


def pipeline_ap(dets, gts, method: str) -> float:
    flags = match_detections([d[1] for d in dets], [d[0] for d in dets], [g[0] for g in gts], [g[1] for g in gts])
    return average_precision(precision_recall(flags, sum(not g[1] for g in gts)), method)


def suite_metrics(seed: int = 0, instances: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    res = CheckResult("metrics", True)
    worst = {"eleven_point": 0.0, "all_point": 0.0}
    for _ in range(instances):
        dets, gts = _random_micro_instance(rng)
        for m in worst:
            worst[m] = max(worst[m], abs(pipeline_ap(dets, gts, m) - oracles.brute_force_ap(dets, gts, method=m)))
    for m, v in worst.items():
        res.add(f"{m} AP vs brute-force oracle ({instances} instances)", v < 1e-12, f"max abs diff {v:.1e}")

    ap = average_precision(precision_recall([TP, FP, TP], 2), "eleven_point")
    # (6 * 1 + 5 * 2/3) / 11 = 28/33; the five-decimal figure 0.84848 is its rounding
    ok = abs(ap - 28 / 33) <= 1e-6 and round(ap, 5) == 0.84848
    res.add("hand-derived fixture [TP, FP, TP], n_gt=2", ok, f"AP {ap:.6f}")

    records = {
        "img1": [AnnotationRecord(hbb_to_quad((10, 10, 50, 40)), "plane"), AnnotationRecord(hbb_to_quad((60, 5, 90, 30)), "ship")],
        "img2": [AnnotationRecord(hbb_to_quad((0, 0, 20, 20)), "plane"), AnnotationRecord(hbb_to_quad((30, 30, 70, 80)), "harbor")],
    }
    dets = [DetectionRecord(img, r.category, 1.0, r.hbb) for img, rs in records.items() for r in rs]
    m = evaluate(dets, records).mAP
    res.add("identity experiment mAP", m == 1.0, f"mAP {m!r}")
    return res


# ---------------------------------------------------------------------------
# tiling
# ---------------------------------------------------------------------------


def _axis_coverage(length: int, window: int, overlap: int) -> tuple[bool, bool]:
    patches = crop_patches(length, window, window, overlap)
    starts = sorted({p.x0 for p in patches})
    covered = np.zeros(length, int)
    interior = np.zeros(length, int)
    margin = overlap // 2
    for s in starts:
        covered[s : s + window] += 1
        interior[s + margin : s + window - margin] += 1
    full = bool(np.all(covered >= 1))
    if length <= window:
        return full, True
    inner = interior[overlap : length - overlap]
    return full, bool(np.all(inner >= 1))


def suite_tiling(seed: int = 0, draws: int = 300) -> CheckResult:
    rng = np.random.default_rng(seed)
    res = CheckResult("tiling", True)
    fails = []
    for _ in range(draws):
        w, h = (int(v) for v in rng.integers(100, 4001, size=2))
        patches = crop_patches(w, h)
        covered = np.zeros((h, w), bool)
        for p in patches:
            covered[p.y0 : p.y0 + p.height, p.x0 : p.x0 + p.width] = True
        full_x, inner_x = _axis_coverage(w, 1024, 500)
        full_y, inner_y = _axis_coverage(h, 1024, 500)
        if not (covered.all() and full_x and inner_x and full_y and inner_y):
            fails.append((w, h))
    res.add(f"coverage over {draws} random scene sizes in 100..4000", not fails, f"failures {fails[:5]}" if fails else "")
    one = crop_patches(1024, 1024)
    res.add("1024x1024 gives one unpadded patch at the origin", [(p.x0, p.y0, p.padded) for p in one] == [(0, 0, False)])
    four = crop_patches(1525, 1525)
    res.add("1525x1525 gives 4 patches at starts {0, 501}",
            sorted((p.x0, p.y0) for p in four) == [(0, 0), (0, 501), (501, 0), (501, 501)])

    bad = 0
    for _ in range(200):
        w, h = (int(v) for v in rng.integers(300, 3000, size=2))
        bw, bh = (int(v) for v in rng.integers(1, 400, size=2))
        x, y = int(rng.integers(0, max(1, w - bw))), int(rng.integers(0, max(1, h - bh)))
        box = (x, y, min(x + bw, w), min(y + bh, h))
        rec = AnnotationRecord(hbb_to_quad(box), "small-vehicle")
        hits = []
        for p in crop_patches(w, h, scene_id="s"):
            local = clip_annotations_to_patch([rec], p, min_visible=1.0)
            if local:
                back = remap_detections([DetectionRecord(p.name, "small-vehicle", 0.5, local[0].hbb)], p, w, h)
                hits.append(tuple(back[0].hbb))
        if not hits or any(hb != tuple(float(v) for v in box) for hb in hits):
            bad += 1
    res.add("crop -> remap round trip is exact (200 boxes)", bad == 0, f"{bad} mismatches")
    return res


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------


def suite_ablation(seed: int = 0) -> CheckResult:
    from .pipeline import ABLATIONS, ablation_table, run_ablation_identity

    res = CheckResult("ablation", True)
    runs = run_ablation_identity(seed)
    for name, run in runs.items():
        drm = ABLATIONS[name][0]
        want = 6 if drm else 5
        res.add(f"{name}: identity mAP 1.0 over {run.n_patches} patches, {len(run.head_levels)} head levels",
                run.report.mAP == 1.0 and len(run.head_levels) == want)
    table = ablation_table(runs)
    header = table.splitlines()[0].split()
    res.add("report has 15 class columns plus mAP", len(header) == 17 and header[-1] == "mAP(%)")
    return res


SUITES: dict[str, Callable[..., CheckResult]] = {
    "gradients": suite_gradients,
    "drm-oracles": suite_drm_oracles,
    "expert-algebra": suite_expert_algebra,
    "attention": suite_attention,
    "shapes": suite_shapes,
    "batch-coupling": suite_batch_coupling,
    "metrics": suite_metrics,
    "tiling": suite_tiling,
    "ablation": suite_ablation,
}


def run_suites(seed: int = 0, corrupt_params: bool = False, only: list[str] | None = None) -> list[CheckResult]:
    out = []
    for name, fn in SUITES.items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        r = fn(seed, corrupt_params=corrupt_params) if name == "gradients" else fn(seed)
        r.seconds = time.perf_counter() - t0
        out.append(r)
    return out
