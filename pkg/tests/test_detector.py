"""Detector assembly: shapes, targets, decoding, loss, training step, ablation wiring, checkpoints."""

import numpy as np
import pytest

from aerialdet.checks import tiny_detector_config
from aerialdet.detector import (
    Detector,
    DetectorConfig,
    HeadOutput,
    NonFiniteLossError,
    decode_detections,
    detection_loss,
    fcos_targets,
    head_level_shapes,
    level_ranges,
    make_optimizer,
    micro_train_step,
)
from aerialdet.dota_io import DOTA_CLASSES
from aerialdet.nn import load_checkpoint, save_checkpoint
from aerialdet.numerics import Tensor, no_grad
from aerialdet.synthetic import synthetic_scenes

SHAPES_32 = [(4, 8, 8), (8, 4, 4), (16, 2, 2), (32, 1, 1), (64, 1, 1)]


@pytest.fixture
def cfg():
    return tiny_detector_config()


class TestForward:
    @pytest.mark.parametrize("drm,levels", [(True, ["P2'", "P2", "P3", "P4", "P5", "P6"]),
                                            (False, ["P2", "P3", "P4", "P5", "P6"])])
    def test_head_levels(self, rng, drm, levels):
        model = Detector(tiny_detector_config(use_drm=drm), seed=0)
        with no_grad():
            out = model(Tensor(rng.uniform(size=(2, 3, 64, 64))))
        assert [h.name for h in out.heads] == levels
        assert [h.stride for h in out.heads][-5:] == [4, 8, 16, 32, 64]
        assert [h.cls_logits.shape[2:] for h in out.heads] == [s[1:] for s in head_level_shapes(model, (64, 64))]
        for h in out.heads:
            assert np.all(h.box_reg.data > 0)

    def test_image_size_validated(self, cfg, rng):
        with pytest.raises(ValueError):
            Detector(cfg)(Tensor(rng.uniform(size=(1, 3, 40, 40))))

    def test_same_seed_same_model(self, cfg, rng):
        x = Tensor(rng.uniform(size=(1, 3, 32, 32)))
        with no_grad():
            a = Detector(cfg, seed=3)(x).heads[0].cls_logits.data
            b = Detector(cfg, seed=3)(x).heads[0].cls_logits.data
        assert np.array_equal(a, b)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DetectorConfig(nms_iou=1.5)
        with pytest.raises(ValueError):
            DetectorConfig(backbone_channels=(4, 4, 4))


class TestAblationWiring:
    def test_zero_influence_modules_reproduce_baseline(self, rng):
        """BVR with a zero value transform plus DRM (which only adds P2') leaves P2..P6 bitwise unchanged."""
        base = Detector(tiny_detector_config(use_drm=False, use_bvr=False), seed=0)
        full = Detector(tiny_detector_config(use_drm=True, use_bvr=True), seed=1)
        params = full.parameters()
        for name, t in base.named_parameters():
            params[name].data = t.data
        vp = full.bvr.attention.value_proj
        vp.weight = Tensor(np.zeros(vp.weight.shape), requires_grad=True)
        x = Tensor(rng.uniform(size=(2, 3, 64, 64)))
        with no_grad():
            ref = {h.name: h for h in base(x).heads}
            got = {h.name: h for h in full(x).heads}
        assert set(got) - set(ref) == {"P2'"}
        for name, h in ref.items():
            for field in ("cls_logits", "box_reg", "centerness"):
                assert np.array_equal(getattr(got[name], field).data, getattr(h, field).data)


class TestTargets:
    def test_level_bands(self):
        r = level_ranges([4, 8, 16, 32, 64])
        assert r[4] == (0.0, 16.0) and r[8] == (16.0, 32.0) and r[64] == (128.0, np.inf)

    def test_empty_image_is_background(self):
        t = fcos_targets([np.zeros((0, 4))], [np.zeros(0, int)], SHAPES_32)
        assert all(np.all(lv.labels == -1) for lv in t)

    def test_positives_respect_level_bands(self):
        boxes = np.array([[1.0, 1.0, 30.0, 12.0], [3.0, 16.0, 12.0, 31.0]])
        shapes = [(4, 8, 8), (8, 4, 4), (16, 2, 2)]
        bands = level_ranges([s for s, _, _ in shapes])
        total = 0
        for lv, (stride, _, _) in zip(fcos_targets([boxes], [np.array([0, 1])], shapes, None), shapes):
            lo, hi = bands[stride]
            for i, j in zip(*np.nonzero(lv.labels[0] >= 0)):
                reach = lv.box[0, :, i, j].max() * stride
                assert lo < reach <= hi
                total += 1
        assert total > 0

    def test_targets_are_consistent(self):
        box = np.array([[2.0, 3.0, 29.0, 30.0]])
        for lv, (stride, h, w) in zip(fcos_targets([box], [np.array([1])], SHAPES_32, None), SHAPES_32):
            for i, j in zip(*np.nonzero(lv.labels[0] >= 0)):
                x, y = j * stride + stride // 2, i * stride + stride // 2
                l, t, r, b = lv.box[0, :, i, j] * stride
                np.testing.assert_allclose([x - l, y - t, x + r, y + b], box[0])
                assert 0 < lv.centerness[0, i, j] <= 1

    def test_center_sampling_shrinks_positives(self):
        box = np.array([[0.0, 0.0, 32.0, 32.0]])
        loose = fcos_targets([box], [np.array([0])], SHAPES_32, None)
        tight = fcos_targets([box], [np.array([0])], SHAPES_32, 1.5)
        n = lambda t: sum(int((lv.labels >= 0).sum()) for lv in t)  # noqa: E731
        assert 0 < n(tight) < n(loose)

    def test_smallest_box_wins(self):
        boxes = np.array([[0.0, 0.0, 31.0, 31.0], [8.0, 8.0, 20.0, 20.0]])
        t = fcos_targets([boxes], [np.array([0, 1])], [(4, 8, 8)], None)
        assert t[0].labels[0, 3, 3] == 1  # location (14, 14) is inside both


class TestDecode:
    def test_single_confident_location(self, cfg):
        cls = np.full((1, cfg.num_classes, 2, 2), -20.0)
        cls[0, 2, 1, 0] = 20.0
        box = np.ones((1, 4, 2, 2))
        box[0, :, 1, 0] = [0.5, 1.0, 1.5, 0.25]
        head = HeadOutput(Tensor(cls), Tensor(box), Tensor(np.full((1, 1, 2, 2), 20.0)), stride=8, name="P3")
        dets = decode_detections([head], cfg, (16, 16), ["img"])
        assert len(dets) == 1
        d = dets[0]
        # cell centre (4, 12), distances times stride 8
        assert d.image_id == "img" and d.category == DOTA_CLASSES[2]
        np.testing.assert_allclose(d.hbb, (0.0, 4.0, 16.0, 14.0))

    def test_nothing_above_threshold(self, cfg):
        head = HeadOutput(Tensor(np.full((1, cfg.num_classes, 2, 2), -20.0)), Tensor(np.ones((1, 4, 2, 2))),
                          Tensor(np.zeros((1, 1, 2, 2))), stride=8)
        assert decode_detections([head], cfg, (16, 16)) == []


class TestLoss:
    def test_perfect_regression_has_zero_iou_loss(self, cfg):
        box = np.array([[2.0, 2.0, 14.0, 13.0]])
        (t,) = fcos_targets([box], [np.array([0])], [(4, 4, 4)], None)
        reg = np.where(t.box > 0, t.box, 1.0)
        head = HeadOutput(Tensor(np.zeros((1, cfg.num_classes, 4, 4))), Tensor(reg), Tensor(np.zeros((1, 1, 4, 4))), 4)
        _, parts = detection_loss([head], [t], cfg)
        assert parts["num_pos"] > 0 and abs(parts["reg"]) < 1e-12

    def test_no_positives_is_classification_only(self, cfg):
        (t,) = fcos_targets([np.zeros((0, 4))], [np.zeros(0, int)], [(4, 4, 4)])
        head = HeadOutput(Tensor(np.zeros((1, cfg.num_classes, 4, 4))), Tensor(np.ones((1, 4, 4, 4))),
                          Tensor(np.zeros((1, 1, 4, 4))), 4)
        loss, parts = detection_loss([head], [t], cfg)
        assert parts["reg"] == 0 and parts["ctr"] == 0 and np.isclose(loss.item(), parts["cls"])


class TestTraining:
    def test_fifty_steps_on_one_image(self):
        """Windowed mean loss strictly decreases over 50 steps on one synthetic image."""
        cfg = tiny_detector_config(num_classes=15)
        model = Detector(cfg, seed=0)
        opt = make_optimizer(model)
        scene = synthetic_scenes(1, size=64, seed=0)[0]
        targets = fcos_targets([scene.boxes], [scene.labels], head_level_shapes(model, (64, 64)))
        losses = [micro_train_step(model, opt, scene.image[None], targets) for _ in range(50)]
        windows = np.mean(np.reshape(losses, (5, 10)), axis=1)
        assert np.all(np.diff(windows) < 0), windows

    def test_non_finite_loss_leaves_params(self, cfg, rng):
        model = Detector(cfg, seed=0)
        opt = make_optimizer(model)
        before = model.state_dict()
        image = np.full((1, 3, 32, 32), np.nan)
        targets = fcos_targets([np.array([[2.0, 2.0, 20.0, 20.0]])], [np.array([0])], head_level_shapes(model, (32, 32)))
        with pytest.raises(NonFiniteLossError), np.errstate(invalid="ignore"):
            micro_train_step(model, opt, image, targets)
        after = model.state_dict()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_optimizer_uses_config(self, cfg):
        opt = make_optimizer(Detector(cfg))
        assert (opt.lr, opt.momentum, opt.weight_decay) == (0.0025, 0.9, 1e-4)


class TestCheckpoint:
    def test_round_trip(self, cfg, tmp_path):
        a, b = Detector(cfg, seed=0), Detector(cfg, seed=1)
        save_checkpoint(tmp_path / "m.npz", a)
        load_checkpoint(tmp_path / "m.npz", b)
        sa, sb = a.state_dict(), b.state_dict()
        assert sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)

    def test_mismatch_rejected(self, cfg, tmp_path):
        save_checkpoint(tmp_path / "m.npz", Detector(cfg))
        with pytest.raises(KeyError):
            load_checkpoint(tmp_path / "m.npz", Detector(tiny_detector_config(use_drm=False)))
