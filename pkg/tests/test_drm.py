"""Dynamic multi-scale fusion: loop-oracle equivalence, routed expert algebra, batch coupling."""

import numpy as np
import pytest

from aerialdet import oracles
from aerialdet.checks import _random_drm_instance, tiny_detector_config
from aerialdet.detector import Detector
from aerialdet.drm import (
    BackboneFeatures,
    DualRelationModule,
    PyramidFeatures,
    build_p6,
    conv1_param_count,
    conv2_param_count,
)
from aerialdet.numerics import Tensor, grad_check, no_grad


def _features(rng, n, channels=(2, 3, 3, 4), d=4, size=8):
    sizes = [max(1, size // 2 ** i) for i in range(4)]
    c = BackboneFeatures(*(Tensor(rng.standard_normal((n, ch, s, s))) for ch, s in zip(channels, sizes)))
    ps = [Tensor(rng.standard_normal((n, d, s, s))) for s in sizes]
    return c, PyramidFeatures(*ps, build_p6(ps[3]))


@pytest.fixture
def drm(rng):
    return DualRelationModule((2, 3, 3, 4), d=4, fused_channels=3, groups=2, rng=rng)


class TestOracles:
    @pytest.mark.parametrize("seed", range(20))
    def test_fusion_and_fuse_pyramid(self, seed):
        rng = np.random.default_rng(seed)
        drm, c, p = _random_drm_instance(rng)
        fused = drm.fusion_operation(c)
        ref = oracles.fusion_operation([t.data for t in c.levels()], drm.fo_conv.weight.data, drm.fo_conv.bias.data)
        np.testing.assert_allclose(fused.data, ref, atol=1e-9, rtol=0)
        params = drm.generate_dynamic_params(fused)
        out = drm.fuse_pyramid(p, params)
        ref = oracles.fuse_pyramid([p.p2.data, p.p3.data, p.p4.data, p.p5.data], params.w1.data, params.b1.data,
                                   params.w2.data, params.b2.data, params.groups)
        np.testing.assert_allclose(out.data, ref, atol=1e-9, rtol=0)


class TestExpertAlgebra:
    def test_param_counts(self, drm):
        assert drm.block_size == conv1_param_count(4, 2) + conv2_param_count(4, 2)

    def test_combination_is_routed_sum(self, drm, rng):
        c, _ = _features(rng, 2)
        dp = drm.generate_dynamic_params(drm.fusion_operation(c))
        a, w = dp.alpha.data, dp.experts.data
        assert np.max(np.abs(dp.combined.data - (a[0] * w[0] + a[1] * w[1]))) <= 1e-15

    def test_single_expert_exact(self, drm, rng):
        c, _ = _features(rng, 1)
        dp = drm.generate_dynamic_params(drm.fusion_operation(c))
        assert np.array_equal(dp.combined.data, dp.alpha.data[0] * dp.experts.data[0])

    def test_alpha_in_unit_interval(self, drm, rng):
        c, _ = _features(rng, 3)
        a = drm.generate_dynamic_params(drm.fusion_operation(c)).alpha.data
        assert a.shape == (3,) and np.all((a > 0) & (a < 1))

    def test_identical_patches_symmetric(self, drm, rng):
        c, p = _features(rng, 1)
        twin_c = BackboneFeatures(*(Tensor(np.concatenate([t.data, t.data])) for t in c.levels()))
        twin_p = PyramidFeatures(*(Tensor(np.concatenate([t.data, t.data])) for t in (p.p2, p.p3, p.p4, p.p5, p.p6)))
        out, dp = drm.forward_with_params(twin_c, twin_p)
        assert dp.alpha.data[0] == dp.alpha.data[1]
        assert np.array_equal(dp.experts.data[0], dp.experts.data[1])
        assert np.array_equal(out.p2prime.data[0], out.p2prime.data[1])


class TestForward:
    def test_p2prime_shape_and_passthrough(self, drm, rng):
        c, p = _features(rng, 2)
        out = drm(c, p)
        assert out.p2prime.shape == p.p2.shape
        for name in ("p2", "p3", "p4", "p5", "p6"):
            assert getattr(out, name) is getattr(p, name)

    def test_gradient(self, drm, rng):
        c, p = _features(rng, 2, size=4)
        params = list(drm.parameters().values())
        assert grad_check(lambda *_: drm(c, p).p2prime, params + c.levels() + [p.p2, p.p3]) < 1e-4

    def test_wrong_channels_rejected(self, drm, rng):
        c, p = _features(rng, 1, channels=(2, 3, 3, 5))
        with pytest.raises(ValueError):
            drm(c, p)

    def test_groups_must_divide(self):
        with pytest.raises(ValueError):
            DualRelationModule((2, 2, 2, 2), d=6, fused_channels=2, groups=4)

    def test_build_p6_on_one_pixel(self, rng):
        assert build_p6(Tensor(rng.standard_normal((1, 2, 1, 1)))).shape == (1, 2, 1, 1)


class TestBatchCoupling:
    def test_companion_changes_output(self, rng):
        model = Detector(tiny_detector_config(use_bvr=False), seed=0)
        a, b = rng.uniform(size=(2, 1, 3, 32, 32))
        with no_grad():
            alone = model.features(Tensor(a))[1].p2prime.data[0]
            pair = model.features(Tensor(np.concatenate([a, b])))[1].p2prime.data[0]
            twin = model.features(Tensor(np.concatenate([a, a])))[1].p2prime.data
        assert np.max(np.abs(alone - pair)) > 1e-8
        assert np.array_equal(twin[0], twin[1])
