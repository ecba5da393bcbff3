"""Micro-training loop: trace bookkeeping and reproducibility."""

import numpy as np
import pytest

from aerialdet.checks import tiny_detector_config
from aerialdet.nn import load_checkpoint
from aerialdet.detector import Detector
from aerialdet.training import micro_train, micro_train_config


class TestMicroTrain:
    def test_config_uses_reference_optimiser_values(self):
        cfg = micro_train_config()
        assert (cfg.lr, cfg.momentum, cfg.weight_decay) == (0.0025, 0.9, 1e-4)

    def test_zero_steps(self):
        t = micro_train(0, seed=0, cfg=tiny_detector_config(num_classes=15))
        assert t.step_losses == [] and t.ratio == 1.0

    def test_reproducible(self):
        cfg = tiny_detector_config(num_classes=15)
        a = micro_train(4, seed=2, cfg=cfg)
        b = micro_train(4, seed=2, cfg=cfg)
        assert a.step_losses == b.step_losses and a.final_loss == b.final_loss

    def test_checkpoint_holds_trained_parameters(self, tmp_path):
        cfg = tiny_detector_config(num_classes=15)
        micro_train(2, seed=0, cfg=cfg, checkpoint=tmp_path / "ck" / "m.npz")
        loaded = Detector(cfg, seed=9)
        load_checkpoint(tmp_path / "ck" / "m.npz", loaded)
        untrained = Detector(cfg, seed=0).state_dict()
        trained = loaded.state_dict()
        assert trained.keys() == untrained.keys()
        assert any(not np.array_equal(trained[k], untrained[k]) for k in trained)

    def test_negative_steps(self):
        with pytest.raises(ValueError):
            micro_train(-1)
