"""Synthetic scenes (coloured rectangles on noise) for overfit runs and demos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Scene:
    image: np.ndarray   # (3, H, W) in [0, 1]
    boxes: np.ndarray   # (M, 4) xmin, ymin, xmax, ymax in pixels
    labels: np.ndarray  # (M,) class indices


def class_colors(num_classes: int) -> np.ndarray:
    # fixed palette, independent of the scene seed
    return np.random.default_rng(12345).uniform(0.3, 1.0, size=(num_classes, 3))


def synthetic_scenes(count: int, size: int = 64, classes: tuple[int, ...] = (0, 1, 2),
                     max_objects: int = 2, min_side: int = 10, max_side: int = 28,
                     seed: int = 0, num_classes: int = 15, min_gap: int = 4) -> list[Scene]:
    """
    Scenes with 1..``max_objects`` filled rectangles of class-specific colour.

    Rectangles keep at least ``min_gap`` pixels of background between them,
    so every box edge is visible in the image. Placement is retried a few
    times; an object that still does not fit is left out.
    """
    rng = np.random.default_rng(seed)
    palette = class_colors(num_classes)
    out = []
    for _ in range(count):
        img = rng.uniform(0.0, 0.15, size=(3, size, size))
        k = int(rng.integers(1, max_objects + 1))
        boxes, labels = [], []
        for _ in range(k):
            for _attempt in range(50):
                w, h = rng.integers(min_side, max_side + 1, size=2)
                x0 = int(rng.integers(0, size - w + 1))
                y0 = int(rng.integers(0, size - h + 1))
                if all(_apart((x0, y0, x0 + w, y0 + h), b, min_gap) for b in boxes):
                    break
            else:
                continue
            c = int(rng.choice(classes))
            img[:, y0 : y0 + h, x0 : x0 + w] = palette[c][:, None, None]
            boxes.append((x0, y0, x0 + w, y0 + h))
            labels.append(c)
        out.append(Scene(img, np.asarray(boxes, dtype=np.float64), np.asarray(labels, dtype=int)))
    return out


def _apart(a, b, gap: int) -> bool:
    return a[0] >= b[2] + gap or b[0] >= a[2] + gap or a[1] >= b[3] + gap or b[1] >= a[3] + gap


def batch_images(scenes: list[Scene]) -> np.ndarray:
    return np.stack([s.image for s in scenes])
