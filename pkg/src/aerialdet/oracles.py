"""
Slow reference implementations written as plain loops over scalars.

They share no code with the vectorised kernels (no interpolation matrices,
no im2col, no library IoU) so that agreement between the two is evidence
rather than tautology. Used by the self-check command and the test suite.
"""

from __future__ import annotations

import math

import numpy as np


def bilinear_pixel(img: np.ndarray, out_h: int, out_w: int, i: int, j: int) -> float:
    """One output pixel of a half-pixel-centre bilinear resize of a 2-D array."""
    h, w = img.shape
    sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1)
    sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1)
    y0, x0 = int(math.floor(sy)), int(math.floor(sx))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = sy - y0, sx - x0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return float(top * (1 - fy) + bottom * fy)


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    n, c = x.shape[:2]
    out = np.zeros((n, c, out_h, out_w))
    for b in range(n):
        for ch in range(c):
            for i in range(out_h):
                for j in range(out_w):
                    out[b, ch, i, j] = bilinear_pixel(x[b, ch], out_h, out_w, i, j)
    return out


def resize_nearest(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))
    for i in range(out_h):
        si = min(int(math.floor(i * h / out_h)), h - 1)
        for j in range(out_w):
            sj = min(int(math.floor(j * w / out_w)), w - 1)
            out[:, :, i, j] = x[:, :, si, sj]
    return out


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> np.ndarray:
    """Direct summation over every output element."""
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    og = o // groups
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            g = oc // og
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if bias is None else float(bias[oc])
                    for ic in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                yy = i * stride - padding + u
                                xx = j * stride - padding + v
                                if 0 <= yy < h and 0 <= xx < w:
                                    acc += weight[oc, ic, u, v] * x[b, g * cg + ic, yy, xx]
                    out[b, oc, i, j] = acc
    return out


def max_pool2d(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.zeros((n, c, ho, wo))
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = -math.inf
                    for u in range(window):
                        for v in range(window):
                            best = max(best, x[b, ch, i * stride + u, j * stride + v])
                    out[b, ch, i, j] = best
    return out


def fusion_operation(levels: list[np.ndarray], weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Resize every level to the first one's grid, stack channels, 3x3 conv."""
    h, w = levels[0].shape[2:]
    stacked = np.concatenate([levels[0]] + [resize_bilinear(t, h, w) for t in levels[1:]], axis=1)
    return conv2d(stacked, weight, bias, padding=1)


def routed_combination(experts: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Element-wise sum over experts of ``alpha[i] * experts[i]``."""
    n, size = experts.shape
    out = np.zeros(size)
    for e in range(size):
        for i in range(n):
            out[e] += alpha[i] * experts[i, e]
    return out


def fuse_pyramid(levels: list[np.ndarray], w1: np.ndarray, b1: np.ndarray,
                 w2: np.ndarray, b2: np.ndarray, groups: int) -> np.ndarray:
    """Resize P2..P5 to P2's grid, stack, then two grouped 1x1 convs."""
    h, w = levels[0].shape[2:]
    stacked = np.concatenate([levels[0]] + [resize_bilinear(t, h, w) for t in levels[1:]], axis=1)
    hidden = conv2d(stacked, w1, b1, groups=groups)
    return conv2d(hidden, w2, b2, groups=groups)


def fpn_top_down(levels: list[np.ndarray], lateral: list[tuple[np.ndarray, np.ndarray]],
                 smooth: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    """P2..P6 from C2..C5 with lateral 1x1, nearest upsample-add, 3x3 smoothing, 2x2 max pool."""
    merged = [None] * 4
    merged[3] = conv2d(levels[3], *lateral[3])
    for i in (2, 1, 0):
        h, w = levels[i].shape[2:]
        merged[i] = conv2d(levels[i], *lateral[i]) + resize_nearest(merged[i + 1], h, w)
    ps = [conv2d(m, wt, bs, padding=1) for m, (wt, bs) in zip(merged, smooth)]
    p5 = ps[3]
    window = min(2, p5.shape[2], p5.shape[3])
    return ps + [max_pool2d(p5, window, 2)]


def location_embedding(x: float, y: float, embed_dim: int, max_period: float) -> np.ndarray:
    t = embed_dim // 4
    out = []
    for coord in (x, y):
        for k in range(t):
            period = max_period ** (k / (t - 1)) if t > 1 else 1.0
            out.append(math.sin(coord / period))
            out.append(math.cos(coord / period))
    return np.array(out)


def bvr_enhance(query_feat: np.ndarray, query_xy: np.ndarray, key_feats: np.ndarray, key_pos: np.ndarray,
                wq: np.ndarray, wk: np.ndarray, wv: np.ndarray, wg: np.ndarray, bg: float,
                embed_dim: int, max_period: float) -> np.ndarray:
    """
    Single-query attention with projections stored as ``(in, out)`` matrices.

    Returns ``query_feat`` plus the softmax-weighted sum of ``key @ wv`` over the keys.
    """
    attn_dim = wq.shape[1]
    q = query_feat @ wq
    logits = []
    for key_feat, key_xy in zip(key_feats, key_pos):
        k = key_feat @ wk
        appearance = sum(q[i] * k[i] for i in range(attn_dim)) / math.sqrt(attn_dim)
        emb = location_embedding(key_xy[0] - query_xy[0], key_xy[1] - query_xy[1], embed_dim, max_period)
        geometric = sum(emb[i] * wg[i] for i in range(embed_dim)) + bg
        logits.append(appearance + geometric)
    top = max(logits)
    expd = [math.exp(v - top) for v in logits]
    z = sum(expd)
    out = np.array(query_feat, dtype=np.float64)
    for e, key_feat in zip(expd, key_feats):
        out = out + (e / z) * (key_feat @ wv)
    return out


def top_k_cells(scores: np.ndarray, k: int) -> list[tuple[int, int]]:
    """Cells of a 2-D score map sorted by score, row-major on ties, first ``k``."""
    h, w = scores.shape
    cells = [(-scores[i, j], i * w + j, i, j) for i in range(h) for j in range(w)]
    cells.sort()
    return [(i, j) for _, _, i, j in cells[:k]]


def box_iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def brute_force_ap(dets: list[tuple[float, tuple]], gts: list[tuple[tuple, bool]],
                   iou_thresh: float = 0.5, method: str = "eleven_point") -> float:
    """
    AP for one image and one class from first principles.

    The matching is replayed from scratch for every prefix of the
    score-sorted detections, and precision/recall are read off each prefix
    directly; no cumulative sums are carried between prefixes.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][0], i))
    n_gt = sum(1 for _, diff in gts if not diff)
    if n_gt == 0:
        return 0.0
    points = []
    for m in range(1, len(order) + 1):
        claimed = [False] * len(gts)
        tp = fp = 0
        for i in order[:m]:
            box = dets[i][1]
            best, best_j = -1.0, -1
            for j, (g, _) in enumerate(gts):
                v = box_iou(box, g)
                if v > best:
                    best, best_j = v, j
            if best_j < 0 or best < iou_thresh:
                fp += 1
            elif gts[best_j][1]:
                pass
            elif not claimed[best_j]:
                claimed[best_j] = True
                tp += 1
            else:
                fp += 1
        if tp + fp == 0:
            continue
        # a prefix ending in an ignored detection repeats the previous point, which is harmless
        points.append((tp / n_gt, tp / (tp + fp)))
    if method == "eleven_point":
        total = 0.0
        for a in range(11):
            best = 0.0
            for r, p in points:
                if r >= a / 10 and p > best:
                    best = p
            total += best
        return total / 11
    # all-point: integrate the upper envelope over recall
    area, prev_r = 0.0, 0.0
    recalls = sorted({r for r, _ in points})
    for r in recalls:
        env = max(p for rr, p in points if rr >= r)
        area += (r - prev_r) * env
        prev_r = r
    return area
