"""
DOTA-style data handling: label parsing, tiling of large scenes into
overlapping fixed-size patches, remapping patch detections back to scene
coordinates, cross-patch NMS, and the per-class result files.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .boxes import nms

log = logging.getLogger(__name__)

DOTA_CLASSES = (
    "plane",
    "baseball-diamond",
    "bridge",
    "ground-track-field",
    "small-vehicle",
    "large-vehicle",
    "ship",
    "tennis-court",
    "basketball-court",
    "storage-tank",
    "soccer-ball-field",
    "roundabout",
    "harbor",
    "swimming-pool",
    "helicopter",
)

# column headers used in result tables
CLASS_ABBREVIATIONS = {
    "plane": "Plane",
    "baseball-diamond": "BD",
    "bridge": "Bridge",
    "ground-track-field": "GTF",
    "small-vehicle": "SV",
    "large-vehicle": "LV",
    "ship": "Ship",
    "tennis-court": "TC",
    "basketball-court": "BC",
    "storage-tank": "ST",
    "soccer-ball-field": "SBF",
    "roundabout": "RA",
    "harbor": "Harbor",
    "swimming-pool": "SP",
    "helicopter": "HC",
}

RESULT_PREFIX = "Task2_"
SCORE_DECIMALS = 6
COORD_DECIMALS = 2


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


@dataclass(frozen=True)
class AnnotationRecord:
    quad: tuple[float, ...]  # x1 y1 x2 y2 x3 y3 x4 y4
    category: str
    difficult: bool = False

    def __post_init__(self):
        if len(self.quad) != 8:
            raise ValueError(f"quad needs 8 coordinates, got {len(self.quad)}")
        if self.category not in DOTA_CLASSES:
            raise ValueError(f"unknown category {self.category!r}")

    @property
    def hbb(self) -> tuple[float, float, float, float]:
        return quad_to_hbb(self.quad)


@dataclass(frozen=True)
class PatchSpec:
    scene_id: str
    x0: int
    y0: int
    width: int = 1024
    height: int = 1024
    padded: bool = False

    @property
    def name(self) -> str:
        return f"{self.scene_id}__1__{self.x0}___{self.y0}"


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    category: str
    score: float
    hbb: tuple[float, float, float, float]

    def __post_init__(self):
        x1, y1, x2, y2 = self.hbb
        if not (x1 <= x2 and y1 <= y2):
            raise ValueError(f"box {self.hbb} has min > max")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------


def parse_annotation(text: str, strict: bool = False) -> tuple[list[AnnotationRecord], list[str]]:
    """
    Parse a DOTA label file.

    Returns the records and one diagnostic per rejected line (``"line N: ..."``).
    ``imagesource:`` and ``gsd:`` header lines are skipped. With ``strict``
    the first problem raises :class:`FormatError` instead.
    """
    records: list[AnnotationRecord] = []
    problems: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("imagesource", "gsd")):
            continue
        parts = line.split()
        msg = None
        if len(parts) not in (9, 10):
            msg = f"line {lineno}: expected 9 or 10 fields, got {len(parts)}"
        else:
            try:
                quad = tuple(float(v) for v in parts[:8])
            except ValueError:
                msg = f"line {lineno}: non-numeric coordinate"
            else:
                if not all(np.isfinite(quad)):
                    msg = f"line {lineno}: non-finite coordinate"
                elif parts[8] not in DOTA_CLASSES:
                    msg = f"line {lineno}: unknown category {parts[8]!r}"
                elif len(parts) == 10 and parts[9] not in ("0", "1"):
                    msg = f"line {lineno}: difficult flag must be 0 or 1, got {parts[9]!r}"
                else:
                    difficult = len(parts) == 10 and parts[9] == "1"
                    records.append(AnnotationRecord(quad, parts[8], difficult))
        if msg is not None:
            if strict:
                raise FormatError(msg)
            problems.append(msg)
    return records, problems


def format_annotation(records: Iterable[AnnotationRecord]) -> str:
    lines = []
    for r in records:
        coords = " ".join(f"{v:g}" for v in r.quad)
        lines.append(f"{coords} {r.category} {int(r.difficult)}")
    return "\n".join(lines) + ("\n" if lines else "")


def quad_to_hbb(quad: Sequence[float]) -> tuple[float, float, float, float]:
    xs = quad[0::2]
    ys = quad[1::2]
    return (float(min(xs)), float(min(ys)), float(max(xs)), float(max(ys)))


def hbb_to_quad(hbb: Sequence[float]) -> tuple[float, ...]:
    x1, y1, x2, y2 = hbb
    return (x1, y1, x2, y1, x2, y2, x1, y2)


# ---------------------------------------------------------------------------
# tiling
# ---------------------------------------------------------------------------


def _axis_starts(length: int, window: int, stride: int) -> list[int]:
    if length <= window:
        return [0]
    starts = []
    s = 0
    while True:
        if s + window >= length:
            starts.append(length - window)
            break
        starts.append(s)
        s += stride
    return sorted(set(starts))


def crop_patches(scene_w: int, scene_h: int, window: int = 1024, overlap: int = 500,
                 scene_id: str = "") -> list[PatchSpec]:
    """
    Overlapping ``window``-sized tiles covering a scene, row-major by origin.

    Starts step by ``window - overlap``; the last start on each axis is pulled
    back so that its window ends on the scene edge. An axis shorter than the
    window gets a single start at 0 and the patch is flagged as padded.
    """
    if scene_w <= 0 or scene_h <= 0:
        raise ValueError(f"scene size must be positive, got {scene_w}x{scene_h}")
    if not 0 <= overlap < window:
        raise ValueError(f"need window > overlap >= 0, got window={window}, overlap={overlap}")
    stride = window - overlap
    padded = scene_w < window or scene_h < window
    return [
        PatchSpec(scene_id, x0, y0, window, window, padded)
        for y0 in _axis_starts(scene_h, window, stride)
        for x0 in _axis_starts(scene_w, window, stride)
    ]


def clip_annotations_to_patch(records: Iterable[AnnotationRecord], patch: PatchSpec,
                              min_visible: float = 0.25) -> list[AnnotationRecord]:
    """
    Annotations visible in ``patch``, as axis-aligned quads in patch coordinates.

    A box is kept when its clipped area is positive and at least
    ``min_visible`` of its full area.
    """
    out = []
    px1, py1 = patch.x0, patch.y0
    px2, py2 = px1 + patch.width, py1 + patch.height
    for r in records:
        x1, y1, x2, y2 = r.hbb
        area = (x2 - x1) * (y2 - y1)
        cx1, cy1, cx2, cy2 = max(x1, px1), max(y1, py1), min(x2, px2), min(y2, py2)
        if cx2 <= cx1 or cy2 <= cy1:
            continue
        clipped = (cx2 - cx1) * (cy2 - cy1)
        if area <= 0 or clipped < min_visible * area:
            continue
        local = (cx1 - px1, cy1 - py1, cx2 - px1, cy2 - py1)
        out.append(AnnotationRecord(hbb_to_quad(local), r.category, r.difficult))
    return out


def remap_detections(dets: Iterable[DetectionRecord], patch: PatchSpec, scene_w: int, scene_h: int,
                     image_id: str | None = None) -> list[DetectionRecord]:
    """Translate patch boxes to scene coordinates, clip, and drop boxes clipped to zero area."""
    image_id = patch.scene_id if image_id is None else image_id
    out = []
    for d in dets:
        x1, y1, x2, y2 = d.hbb
        x1 = min(max(x1 + patch.x0, 0.0), scene_w)
        x2 = min(max(x2 + patch.x0, 0.0), scene_w)
        y1 = min(max(y1 + patch.y0, 0.0), scene_h)
        y2 = min(max(y2 + patch.y0, 0.0), scene_h)
        if x2 <= x1 or y2 <= y1:
            continue
        out.append(DetectionRecord(image_id, d.category, d.score, (x1, y1, x2, y2)))
    return out


def merge_and_nms(dets: Iterable[DetectionRecord], iou_thresh: float = 0.5) -> list[DetectionRecord]:
    """Greedy NMS within each (image, class) group; output sorted by image, class, score."""
    groups: dict[tuple[str, str], list[DetectionRecord]] = {}
    for d in dets:
        groups.setdefault((d.image_id, d.category), []).append(d)
    out = []
    for key in sorted(groups):
        group = groups[key]
        keep = nms(np.array([d.hbb for d in group]), np.array([d.score for d in group]), iou_thresh)
        out.extend(group[i] for i in keep)
    return out


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------


def _format_detection(d: DetectionRecord) -> str:
    c = COORD_DECIMALS
    x1, y1, x2, y2 = d.hbb
    return f"{d.image_id} {d.score:.{SCORE_DECIMALS}f} {x1:.{c}f} {y1:.{c}f} {x2:.{c}f} {y2:.{c}f}"


def quantize(d: DetectionRecord) -> DetectionRecord:
    """The record as it reads back after a write/read round trip."""
    c = COORD_DECIMALS
    return DetectionRecord(d.image_id, d.category, float(f"{d.score:.{SCORE_DECIMALS}f}"),
                           tuple(float(f"{v:.{c}f}") for v in d.hbb))


def write_results(dets: Iterable[DetectionRecord], out_dir: str | os.PathLike) -> list[Path]:
    """Write one ``Task2_<class>.txt`` per class (all 15, possibly empty)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_class: dict[str, list[DetectionRecord]] = {c: [] for c in DOTA_CLASSES}
    for d in dets:
        if d.category not in by_class:
            raise ValueError(f"unknown category {d.category!r}")
        by_class[d.category].append(d)
    paths = []
    for cls in DOTA_CLASSES:
        path = out_dir / f"{RESULT_PREFIX}{cls}.txt"
        lines = [_format_detection(d) for d in by_class[cls]]
        path.write_text("\n".join(lines) + ("\n" if lines else ""))
        paths.append(path)
    return paths


def read_results(in_dir: str | os.PathLike) -> list[DetectionRecord]:
    """Read per-class result files; any ``.txt`` not named after a class is rejected."""
    in_dir = Path(in_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"results directory {in_dir} does not exist")
    out = []
    for path in sorted(in_dir.glob("*.txt")):
        stem = path.stem
        cls = stem[len(RESULT_PREFIX):] if stem.startswith(RESULT_PREFIX) else stem
        if cls not in DOTA_CLASSES:
            raise FormatError(f"{path.name}: file name does not match any class")
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            if not raw.strip():
                continue
            parts = raw.split()
            try:
                if len(parts) != 6:
                    raise ValueError(f"expected 6 fields, got {len(parts)}")
                score = float(parts[1])
                box = tuple(float(v) for v in parts[2:])
                out.append(DetectionRecord(parts[0], cls, score, box))
            except ValueError as e:
                raise FormatError(f"{path.name}:{lineno}: {e}") from None
    return out


def read_manifest(path: str | os.PathLike) -> dict[str, tuple[int, int]]:
    """
    Scene sizes keyed by scene id.

    JSON files map ``id -> [width, height]``; anything else is read as
    whitespace-separated ``id width height`` lines.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        raw = json.loads(text) if text.strip() else {}
        return {str(k): (int(v[0]), int(v[1])) for k, v in raw.items()}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path.name}:{lineno}: expected 'id width height'")
        out[parts[0]] = (int(parts[1]), int(parts[2]))
    return out
