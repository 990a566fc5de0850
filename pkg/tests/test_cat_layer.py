"""Tests for the single-head CAT layer and multi-head convolution."""

import numpy as np
import pytest

from src.core.cat_layer import (
    CatModel,
    MultiHeadConv,
    cat_attention_map,
    cat_forward,
    cat_forward_all,
    cat_forward_with_map,
    multihead_convolve,
    project_all,
)
from src.core.errors import ZeroRow
from src.core.numerics import Filter, Hard, Soft, Vocab, convolve


def _identity_model(d, mode=Soft(1.0), **kwargs):
    eye = np.eye(d)
    return CatModel(f_k=Filter.delay(0), f_q=Filter.delay(0), f_v=Filter.delay(0),
                    w_k=eye, w_q=eye, w_v=eye, attn_mode=mode, **kwargs)


class TestCatModel:

    def test_weights_must_agree(self):
        with pytest.raises(ValueError):
            CatModel(f_k=Filter.delay(0), f_q=Filter.delay(0), f_v=Filter.delay(0),
                     w_k=np.eye(3), w_q=np.eye(3), w_v=np.eye(4))

    def test_dict_round_trip_preserves_outputs(self):
        rng = np.random.default_rng(0)
        m = CatModel(f_k=Filter.causal([1.0, 0.5]), f_q=Filter.delay(0), f_v=Filter.delay(-1),
                     w_k=rng.normal(size=(3, 3)), w_q=rng.normal(size=(3, 3)), w_v=rng.normal(size=(3, 3)),
                     normalize_k=True, attn_mode=Soft(2.0), causal_mask=True)
        m2 = CatModel.from_dict(m.to_dict())
        x = rng.normal(size=(7, 3))
        np.testing.assert_allclose(cat_forward(x, m2, 5), cat_forward(x, m, 5))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cat_forward(np.ones((4, 2)), _identity_model(3), 0)

    def test_query_index_out_of_range(self):
        with pytest.raises(IndexError):
            cat_forward(np.ones((4, 2)), _identity_model(2), 4)


class TestForward:

    def test_value_delay_recall_example(self):
        vocab = Vocab.orthonormal(3)
        eye = np.eye(3)
        m = CatModel(f_k=Filter.delay(0), f_q=Filter.delay(0), f_v=Filter.delay(-1),
                     w_k=eye, w_q=eye, w_v=2 * eye, normalize_k=True, normalize_q=True,
                     attn_mode=Hard())
        out, weights = cat_forward_with_map(vocab.embed([0, 1, 2, 0]), m, 3)
        np.testing.assert_allclose(weights, [0.5, 0, 0, 0.5])
        np.testing.assert_allclose(out, vocab.embeddings[1])

    def test_attention_is_probability_vector(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            L, d = int(rng.integers(2, 12)), int(rng.integers(1, 5))
            x = rng.normal(size=(L, d))
            m = _identity_model(d, Soft(float(rng.uniform(0.1, 5))))
            w = cat_attention_map(x, m, int(rng.integers(L)))
            assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)

    def test_permutation_invariance_without_mask(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            L, d = int(rng.integers(2, 10)), 3
            x = rng.normal(size=(L, d))
            q = int(rng.integers(L))
            perm = rng.permutation(L)
            inv = np.argsort(perm)
            m = _identity_model(d)
            np.testing.assert_allclose(cat_forward(x[perm], m, int(inv[q])), cat_forward(x, m, q), atol=1e-10)

    def test_output_linear_in_value_weights(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.normal(size=(6, 3))
            m = _identity_model(3)
            a = float(rng.uniform(-3, 3))
            scaled = m.with_changes(w_v=a * np.eye(3))
            np.testing.assert_allclose(cat_forward(x, scaled, 5), a * cat_forward(x, m, 5), atol=1e-10)

    def test_key_query_rescaling_leaves_output_unchanged(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            L, d = int(rng.integers(2, 10)), int(rng.integers(1, 5))
            x = rng.normal(size=(L, d))
            m = CatModel(f_k=Filter.causal(rng.uniform(0.1, 1.0, size=2)), f_q=Filter.delay(0),
                         f_v=Filter.delay(-1), w_k=rng.normal(size=(d, d)), w_q=rng.normal(size=(d, d)),
                         w_v=rng.normal(size=(d, d)), attn_mode=Soft(float(rng.uniform(0.1, 3))))
            a = float(rng.uniform(0.1, 10))
            rescaled = m.with_changes(w_k=a * m.w_k, w_q=m.w_q / a)
            q = int(rng.integers(L))
            np.testing.assert_allclose(cat_forward(x, rescaled, q), cat_forward(x, m, q), rtol=1e-9, atol=1e-10)

    def test_causal_mask_ignores_future(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(8, 3))
        m = _identity_model(3, causal_mask=True)
        w = cat_attention_map(x, m, 3)
        assert np.all(w[4:] == 0.0)
        y = x.copy()
        y[4:] = rng.normal(size=(4, 3))
        np.testing.assert_allclose(cat_forward(y, m, 3), cat_forward(x, m, 3))

    def test_forward_all_matches_single_queries(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 2))
        m = _identity_model(2, causal_mask=True)
        out = cat_forward_all(x, m)
        for t in range(6):
            np.testing.assert_allclose(out[t], cat_forward(x, m, t))

    def test_forward_all_needs_mask(self):
        with pytest.raises(ValueError):
            cat_forward_all(np.ones((3, 2)), _identity_model(2))


class TestNormalization:

    def test_structural_zero_row_is_kept(self):
        vocab = Vocab.orthonormal(3)
        eye = np.eye(3)
        m = CatModel(f_k=Filter.delay(1), f_q=Filter.delay(0), f_v=Filter.delay(0),
                     w_k=eye, w_q=eye, w_v=eye, normalize_k=True, attn_mode=Hard())
        K, _, _ = project_all(vocab.embed([0, 1, 2]), m)
        np.testing.assert_array_equal(K[0], [0, 0, 0])

    def test_zero_token_raises(self):
        m = _identity_model(2).with_changes(normalize_k=True)
        x = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ZeroRow) as exc:
            cat_forward(x, m, 2)
        assert exc.value.index == 1


class TestMultiHeadConvolution:

    def test_single_head_matches_convolve(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            taps = rng.normal(size=int(rng.integers(1, 4)))
            x = rng.normal(size=(int(rng.integers(1, 10)), 3))
            f = MultiHeadConv(taps[:, None, None])
            out = multihead_convolve(x[:, :, None], f)[:, :, 0]
            np.testing.assert_allclose(out, convolve(x, Filter.causal(taps)), atol=1e-10)

    def test_heads_mix(self):
        x = np.zeros((3, 1, 2))
        x[:, 0, 0] = [1.0, 2.0, 3.0]
        taps = np.zeros((1, 2, 2))
        taps[0, 1, 0] = 1.0  # head 0 feeds head 1
        out = multihead_convolve(x, MultiHeadConv(taps))
        np.testing.assert_allclose(out[:, 0, 1], [1, 2, 3])
        np.testing.assert_allclose(out[:, 0, 0], 0.0)

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            MultiHeadConv(np.zeros((2, 2, 3)))
