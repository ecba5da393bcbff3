"""Key-point attention: normalisation, zero value transform, translation invariance, top-k, oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerialdet import oracles
from aerialdet.bvr import (
    BVRAttention,
    BVRHead,
    KeySet,
    PointHead,
    bvr_enhance,
    embedding_periods,
    location_embedding,
    select_top_k_keys,
)
from aerialdet.numerics import Tensor, grad_check, no_grad


@pytest.fixture
def head(rng):
    return BVRHead(6, embed_dim=8, rng=rng)


def _keys(rng, k=5, d=6):
    return KeySet(positions=Tensor(rng.uniform(0, 8, (k, 2))), features=Tensor(rng.standard_normal((k, d))),
                  scores=np.sort(rng.uniform(size=k))[::-1], cells=np.zeros((k, 2), int))


class TestEmbedding:
    def test_layout(self):
        e = location_embedding(np.array([[2.0, 3.0]]), embed_dim=8, max_period=100.0).data[0]
        ref = oracles.location_embedding(2.0, 3.0, 8, 100.0)
        np.testing.assert_allclose(e, ref, atol=1e-15)

    def test_periods_span_range(self):
        p = embedding_periods(16, 1000.0)
        assert p[0] == 1.0 and np.isclose(p[-1], 1000.0) and len(p) == 4

    @pytest.mark.parametrize("embed_dim", [0, 6, 10])
    def test_bad_dimension(self, embed_dim):
        with pytest.raises(ValueError):
            embedding_periods(embed_dim, 1000.0)


class TestAttention:
    def test_weights_normalised(self, head, rng):
        with no_grad():
            _, det = head.forward_with_details(Tensor(rng.standard_normal((2, 6, 5, 4))), k=7)
        for w in det.weights:
            assert w.shape == (20, 7)
            assert np.all(w.data >= 0)
            np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_value_transform_is_identity(self, head, rng):
        head.attention.value_proj.weight = Tensor(np.zeros(head.attention.value_proj.weight.shape), requires_grad=True)
        feat = Tensor(rng.standard_normal((2, 6, 5, 4)))
        assert np.array_equal(head(feat, k=7).data, feat.data)

    def test_translation_invariance(self, rng):
        attn = BVRAttention(6, embed_dim=8, rng=rng)
        for _ in range(100):
            query_xy, key_xy = rng.uniform(-50, 50, (3, 2)), rng.uniform(-50, 50, (4, 2))
            t = rng.uniform(-500, 500, 2)
            np.testing.assert_allclose(attn.geometric_similarity(query_xy + t, key_xy + t).data,
                                       attn.geometric_similarity(query_xy, key_xy).data, atol=1e-9, rtol=0)

    def test_single_query_oracle(self, rng):
        attn = BVRAttention(6, embed_dim=8, rng=rng)
        keys = _keys(rng)
        query_feat, query_xy = rng.standard_normal(6), rng.uniform(0, 8, 2)
        ref = oracles.bvr_enhance(query_feat, query_xy, keys.features.data, keys.positions.data, attn.query_proj.weight.data,
                                  attn.key_proj.weight.data, attn.value_proj.weight.data,
                                  attn.geo_head.weight.data[:, 0], float(attn.geo_head.bias.data[0]), 8, 1000.0)
        np.testing.assert_allclose(bvr_enhance(attn, query_feat, query_xy, keys).data, ref, atol=1e-9, rtol=0)

    def test_head_gradient(self, head, rng):
        feat = Tensor(rng.standard_normal((1, 6, 4, 4)))
        assert grad_check(lambda *_: head(feat, k=4), list(head.parameters().values()) + [feat]) < 1e-4

    def test_dimension_mismatch(self, rng):
        attn = BVRAttention(6, embed_dim=8, rng=rng)
        with pytest.raises(ValueError):
            attn.appearance_similarity(rng.standard_normal((2, 5)), rng.standard_normal((3, 6)))


class TestTopK:
    @given(h=st.integers(1, 16), w=st.integers(1, 16), k=st.integers(1, 300), tied=st.booleans(),
           seed=st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, h, w, k, tied, seed):
        rng = np.random.default_rng(seed)
        scores = rng.integers(0, 3, (h, w)) / 3.0 if tied else rng.uniform(size=(h, w))
        out = PointHead(2, rng=rng)(Tensor(rng.standard_normal((1, 2, h, w))))
        out.corner_scores = Tensor(scores[None, None])
        keys = select_top_k_keys(out, Tensor(rng.standard_normal((1, 2, h, w))), k)
        assert [tuple(c) for c in keys.cells.tolist()] == oracles.top_k_cells(scores, k)
        assert len(keys) == min(k, h * w)

    def test_k_must_be_positive(self, rng):
        feat = Tensor(rng.standard_normal((1, 2, 3, 3)))
        with pytest.raises(ValueError):
            select_top_k_keys(PointHead(2, rng=rng)(feat), feat, 0)

    def test_point_head_shapes(self, rng):
        out = PointHead(4, rng=rng)(Tensor(rng.standard_normal((2, 4, 5, 3))))
        assert out.corner_scores.shape == (2, 1, 5, 3) and out.corner_offsets.shape == (2, 2, 5, 3)
        assert np.all((out.corner_scores.data > 0) & (out.corner_scores.data < 1))
