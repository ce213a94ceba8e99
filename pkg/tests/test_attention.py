import numpy as np
import pytest

from compactcap.attention import (
    GEO_EMBED_DIM,
    NO_SHARE,
    SHARE_KV,
    SHARE_QK,
    geometric_gate,
    init_attention_weights,
    multi_head_attention,
    relative_geometry,
    sinusoid_embed,
)
from compactcap.autodiff import Parameter, Tensor, backward, sum_all


def _weights(mode, hidden=16, heads=4, seed=0):
    rng = np.random.default_rng(seed)
    return init_attention_weights("t", hidden, heads, mode, rng)


def _boxes(rng, n):
    out = np.zeros((n, 4))
    out[:, 0] = rng.uniform(0.2, 0.8, n)
    out[:, 1] = rng.uniform(0.2, 0.8, n)
    out[:, 2] = rng.uniform(0.05, 0.3, n)
    out[:, 3] = rng.uniform(0.05, 0.3, n)
    return out


class TestSharingStructure:
    def test_no_share_has_four_distinct_matrices(self):
        w = _weights(NO_SHARE)
        mats = [p for p in w.distinct_parameters() if p.data.ndim == 2]
        assert len(mats) == 4

    def test_share_modes_have_three_distinct_matrices(self):
        for mode in (SHARE_QK, SHARE_KV):
            w = _weights(mode)
            mats = [p for p in w.distinct_parameters() if p.data.ndim == 2]
            assert len(mats) == 3

    def test_aliasing_matches_mode(self):
        w = _weights(SHARE_QK)
        assert w.w_q is w.w_k and w.b_q is w.b_k
        assert w.w_v is not w.w_k
        w = _weights(SHARE_KV)
        assert w.w_k is w.w_v and w.b_k is w.b_v
        assert w.w_q is not w.w_k

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="unknown attention mode"):
            _weights("share_qv")

    def test_indivisible_heads_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="divisible"):
            init_attention_weights("t", 10, 4, NO_SHARE, rng)


class TestReuseEquivalence:
    @pytest.mark.parametrize("mode", [NO_SHARE, SHARE_QK, SHARE_KV])
    def test_self_attention_fast_path_equals_naive(self, mode, rng):
        w = _weights(mode)
        for trial in range(100):
            x = Tensor(rng.standard_normal((5, 16)))
            fast = multi_head_attention(x, x, x, w)
            naive = multi_head_attention(x, x, x, w, recompute=True)
            assert np.abs(fast.data - naive.data).max() <= 1e-12

    def test_cross_attention_key_value_reuse(self, rng):
        w = _weights(SHARE_KV)
        for trial in range(100):
            q = Tensor(rng.standard_normal((3, 16)))
            kv = Tensor(rng.standard_normal((6, 16)))
            fast = multi_head_attention(q, kv, kv, w)
            naive = multi_head_attention(q, kv, kv, w, recompute=True)
            assert np.abs(fast.data - naive.data).max() <= 1e-12

    def test_share_qk_cross_attention_falls_back(self, rng):
        # distinct query/key sources: no reuse possible, result still valid
        w = _weights(SHARE_QK)
        q = Tensor(rng.standard_normal((3, 16)))
        kv = Tensor(rng.standard_normal((6, 16)))
        out = multi_head_attention(q, kv, kv, w)
        naive = multi_head_attention(q, kv, kv, w, recompute=True)
        np.testing.assert_array_equal(out.data, naive.data)

    def test_single_region_degenerates_to_value_path(self, rng):
        """Softmax over one key is 1, so output = (x Wv + bv) Wo + bo."""
        for mode in (NO_SHARE, SHARE_QK, SHARE_KV):
            w = _weights(mode)
            x_arr = rng.standard_normal((1, 16))
            x = Tensor(x_arr)
            out = multi_head_attention(x, x, x, w)
            expect = (x_arr @ w.w_v.data + w.b_v.data) @ w.w_o.data + w.b_o.data
            np.testing.assert_allclose(np.asarray(out), expect, atol=1e-12)

    def test_mask_zeroes_attention(self, rng):
        w = _weights(NO_SHARE)
        x = Tensor(rng.standard_normal((4, 16)))
        mask = np.array([True, True, False, True])[None, None, None, :]
        out = multi_head_attention(x, x, x, w, mask=mask)
        # masked key must not influence the output: perturb it and compare
        x2_arr = x.data.copy()
        x2_arr[2] += 10.0
        x2 = Tensor(x2_arr)
        out_rows = multi_head_attention(x2, x2, x2, w, mask=mask)
        np.testing.assert_allclose(out.data[:2], np.asarray(out_rows)[:2],
                                   atol=1e-12)

    def test_training_never_diverges_aliased_values(self, rng):
        """After gradient steps, tied roles still point at one array."""
        w = _weights(SHARE_KV)
        x = Tensor(rng.standard_normal((4, 16)))
        loss = sum_all(multi_head_attention(x, x, x, w))
        backward(loss)
        for p in w.distinct_parameters():
            p.data -= 0.1 * p.grad
            p.grad = None
        assert w.w_k is w.w_v
        np.testing.assert_array_equal(w.w_k.data, w.w_v.data)


class TestGeometricGate:
    def test_identical_boxes_zero_relative_geometry(self):
        boxes = np.tile([0.5, 0.5, 0.2, 0.1], (3, 1))
        lam = relative_geometry(boxes)
        np.testing.assert_array_equal(lam, np.zeros((3, 3, 4)))

    def test_translation_invariance(self, rng):
        boxes = _boxes(rng, 5)
        shifted = boxes.copy()
        shifted[:, 0] += 0.37
        shifted[:, 1] -= 0.21
        gw = Parameter(rng.standard_normal((GEO_EMBED_DIM, 4)) * 0.2, "gw")
        gb = Parameter(rng.standard_normal(4) * 0.1, "gb")
        g1 = geometric_gate(boxes, gw, gb)
        g2 = geometric_gate(shifted, gw, gb)
        assert np.abs(g1.data - g2.data).max() <= 1e-12

    def test_uniform_scale_invariance(self, rng):
        boxes = _boxes(rng, 5)
        for s in (0.5, 2.0, 7.3):
            scaled = boxes * s
            gw = Parameter(rng.standard_normal((GEO_EMBED_DIM, 4)) * 0.2, "gw")
            gb = Parameter(rng.standard_normal(4) * 0.1, "gb")
            g1 = geometric_gate(boxes, gw, gb)
            g2 = geometric_gate(scaled, gw, gb)
            assert np.abs(g1.data - g2.data).max() <= 1e-12

    def test_gate_is_nonnegative_per_head(self, rng):
        boxes = _boxes(rng, 4)
        gw = Parameter(rng.standard_normal((GEO_EMBED_DIM, 8)), "gw")
        gb = Parameter(rng.standard_normal(8), "gb")
        gate = geometric_gate(boxes, gw, gb)
        assert gate.data.shape == (8, 4, 4)
        assert gate.data.min() >= 0.0

    def test_non_positive_extent_rejected(self):
        boxes = np.array([[0.5, 0.5, 0.0, 0.1]])
        with pytest.raises(ValueError, match="non-positive box extent"):
            relative_geometry(boxes)

    def test_gated_attention_rows_still_sum_to_one(self, rng):
        from compactcap.autodiff import add, clip_min, log, masked_softmax

        w = _weights(NO_SHARE, hidden=16, heads=4)
        x = Tensor(rng.standard_normal((5, 16)))
        gw = Parameter(rng.standard_normal((GEO_EMBED_DIM, 4)) * 0.2, "gw")
        gb = Parameter(np.full(4, 0.5), "gb")
        gate = geometric_gate(_boxes(rng, 5), gw, gb)
        out = multi_head_attention(x, x, x, w, gate=gate)
        assert np.isfinite(np.asarray(out)).all()
        # the gating composition renormalizes: rows of the gated softmax sum to 1
        scores = Tensor(rng.standard_normal((4, 5, 5)))
        probs = masked_softmax(add(scores, log(clip_min(gate, 1e-9))))
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_sinusoid_embedding_width(self, rng):
        lam = relative_geometry(_boxes(rng, 3))
        emb = sinusoid_embed(lam)
        assert emb.shape == (3, 3, GEO_EMBED_DIM)
