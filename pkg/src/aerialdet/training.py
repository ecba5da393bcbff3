"""
Micro-training on synthetic scenes: the overfit run used as a smoke test of
the whole differentiable detector.

The reported initial and final losses are means over every batch of the
training set under the same parameters, so they are not confounded by which
batch happened to be drawn at a given step.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .detector import (
    Detector,
    DetectorConfig,
    LevelTargets,
    detection_loss,
    fcos_targets,
    head_level_shapes,
    make_optimizer,
    micro_train_step,
)
from .nn import save_checkpoint
from .numerics import Tensor, no_grad
from .synthetic import batch_images, synthetic_scenes

log = logging.getLogger(__name__)


def micro_train_config(**overrides) -> DetectorConfig:
    """Small detector used by the overfit run; optimiser values are the defaults."""
    base = dict(pyramid_channels=32, fo_channels=16, bvr_embed_dim=16, k_max=400)
    base.update(overrides)
    return DetectorConfig(**base)


@dataclass
class TrainTrace:
    seed: int
    steps: int
    initial_loss: float
    final_loss: float
    step_losses: list[float] = field(default_factory=list)
    initial_parts: dict = field(default_factory=dict)
    final_parts: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.final_loss / self.initial_loss

    def to_json(self) -> str:
        return json.dumps(asdict(self) | {"ratio": self.ratio}, indent=2)


def build_batches(cfg: DetectorConfig, model: Detector, n_scenes: int = 8, batch_size: int = 2,
                  image_size: int = 64, seed: int = 0) -> list[tuple[np.ndarray, list[LevelTargets]]]:
    scenes = synthetic_scenes(n_scenes, size=image_size, seed=seed, num_classes=cfg.num_classes)
    shapes = head_level_shapes(model, (image_size, image_size))
    batches = []
    for i in range(0, n_scenes, batch_size):
        group = scenes[i : i + batch_size]
        targets = fcos_targets([s.boxes for s in group], [s.labels for s in group], shapes,
                               center_radius=cfg.center_radius)
        batches.append((batch_images(group), targets))
    return batches


def dataset_loss(model: Detector, batches) -> tuple[float, dict]:
    """Mean loss (and mean components) over all batches, without gradients."""
    totals, parts = [], []
    with no_grad():
        for images, targets in batches:
            loss, p = detection_loss(model(Tensor(images)).heads, targets, model.cfg)
            totals.append(loss.item())
            parts.append(p)
    mean_parts = {k: float(np.mean([p[k] for p in parts])) for k in parts[0]}
    return float(np.mean(totals)), mean_parts


def micro_train(steps: int = 200, seed: int = 0, cfg: DetectorConfig | None = None, n_scenes: int = 8,
                batch_size: int = 2, image_size: int = 64, checkpoint: str | os.PathLike | None = None) -> TrainTrace:
    """
    Train on ``n_scenes`` synthetic scenes, cycling through the batches in order.

    ``steps=0`` evaluates the initial loss only. The seed fixes both the scenes
    and the initial parameters, so two runs with the same seed give identical
    traces.
    """
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    cfg = micro_train_config() if cfg is None else cfg
    model = Detector(cfg, seed=seed)
    optimizer = make_optimizer(model)
    batches = build_batches(cfg, model, n_scenes, batch_size, image_size, seed)
    initial, initial_parts = dataset_loss(model, batches)
    log.info("initial loss %.4f", initial)
    step_losses = []
    for step in range(steps):
        images, targets = batches[step % len(batches)]
        step_losses.append(micro_train_step(model, optimizer, images, targets))
        log.debug("step %d loss %.4f", step, step_losses[-1])
    final, final_parts = dataset_loss(model, batches) if steps else (initial, initial_parts)
    log.info("final loss %.4f (%.1f%% of initial)", final, 100 * final / initial)
    if checkpoint is not None:
        Path(checkpoint).parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(checkpoint, model)
    return TrainTrace(seed, steps, initial, final, step_losses, initial_parts, final_parts)
