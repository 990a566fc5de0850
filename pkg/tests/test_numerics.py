"""Tests for filters, convolution, normalization, attention weights and vocabulary geometry."""

import numpy as np
import pytest

from src.core.errors import EmptyVocab, InfeasibleSpec, ZeroRow
from src.core.numerics import (
    Filter,
    Hard,
    Soft,
    Vocab,
    attention_weights,
    attn_mode_from_dict,
    convolve,
    cosine_gap,
    gram_schmidt_delta,
    min_embedding_distance,
    nearest_token,
    row_normalize,
    structural_zero_rows,
)


def _random_causal(rng, max_len=4):
    return Filter.causal(rng.normal(size=int(rng.integers(1, max_len + 1))))


class TestFilter:

    def test_delay_support(self):
        f = Filter.delay(-1)
        assert f.t_min == -1 and f.t_max == -1
        assert f.tap(-1) == 1.0 and f.tap(0) == 0.0
        assert not f.is_causal

    def test_empty_taps_rejected(self):
        with pytest.raises(ValueError):
            Filter(())

    def test_delays_compose_additively(self):
        for i in range(-3, 4):
            for j in range(-3, 4):
                assert Filter.delay(i).compose(Filter.delay(j)).l1_distance(Filter.delay(i + j)) == 0.0

    def test_l1_distance(self):
        f = Filter((1.0, 0.25), t_min=-1)
        assert f.l1_distance(Filter.delay(-1)) == pytest.approx(0.25)
        assert f.l1_distance(f) == 0.0

    def test_exp_decay_and_ones(self):
        np.testing.assert_allclose(Filter.exp_decay(0.5, 4).array, [1, 0.5, 0.25, 0.125])
        np.testing.assert_allclose(Filter.ones(3).array, [1, 1, 1])

    def test_dict_round_trip(self):
        f = Filter((0.5, 2.0, -1.0), t_min=-1)
        assert Filter.from_dict(f.to_dict()) == f


class TestConvolve:

    def test_delay_shifts_with_zero_padding(self):
        x = np.arange(12, dtype=float).reshape(6, 2)
        y = convolve(x, Filter.delay(1))
        np.testing.assert_array_equal(y[0], [0, 0])
        np.testing.assert_array_equal(y[1:], x[:-1])

    def test_look_ahead(self):
        x = np.arange(5, dtype=float)
        y = convolve(x, Filter.delay(-1))
        np.testing.assert_array_equal(y[:, 0], [1, 2, 3, 4, 0])

    def test_scalar_example(self):
        y = convolve([1.0, 2.0, 3.0], Filter.causal([1.0, 1.0]))
        np.testing.assert_array_equal(y[:, 0], [1, 3, 5])

    def test_linearity(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            L, d = int(rng.integers(1, 20)), int(rng.integers(1, 5))
            x, z = rng.normal(size=(L, d)), rng.normal(size=(L, d))
            a, b = rng.normal(size=2)
            f = Filter(tuple(rng.normal(size=3)), t_min=int(rng.integers(-2, 3)))
            np.testing.assert_allclose(convolve(a * x + b * z, f),
                                       a * convolve(x, f) + b * convolve(z, f), atol=1e-10)

    def test_composition_of_causal_filters(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            L, d = int(rng.integers(1, 25)), int(rng.integers(1, 4))
            x = rng.normal(size=(L, d))
            f, g = _random_causal(rng), _random_causal(rng)
            np.testing.assert_allclose(convolve(convolve(x, f), g), convolve(x, f.compose(g)), atol=1e-10)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            convolve([[1.0], [np.nan]], Filter.delay(0))


class TestStructuralZeros:

    def test_delay_rows(self):
        np.testing.assert_array_equal(structural_zero_rows(5, Filter.delay(1)), [True, False, False, False, False])
        np.testing.assert_array_equal(structural_zero_rows(4, Filter.delay(-1)), [False, False, False, True])

    def test_rows_match_convolution_of_ones(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            L = int(rng.integers(1, 12))
            f = Filter(tuple(rng.uniform(0.5, 1.5, size=3)), t_min=int(rng.integers(-4, 4)))
            zero = np.all(convolve(np.ones((L, 1)), f) == 0.0, axis=1)
            np.testing.assert_array_equal(structural_zero_rows(L, f), zero)


class TestRowNormalize:

    def test_unit_rows(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.normal(size=(int(rng.integers(1, 10)), 3))
            np.testing.assert_allclose(np.linalg.norm(row_normalize(x), axis=1), 1.0)

    def test_zero_row_reports_index(self):
        x = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
        with pytest.raises(ZeroRow) as exc:
            row_normalize(x)
        assert exc.value.index == 1

    def test_skipped_rows_stay_zero(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0]])
        y = row_normalize(x, skip=np.array([True, False]))
        np.testing.assert_array_equal(y[0], [0, 0])
        np.testing.assert_allclose(y[1], [0.6, 0.8])


class TestAttentionWeights:

    def test_probability_vectors(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            s = rng.normal(size=int(rng.integers(1, 30))) * 10
            for mode in (Hard(), Soft(float(rng.uniform(0.1, 50)))):
                w = attention_weights(s, mode)
                assert np.all(w >= 0)
                assert w.sum() == pytest.approx(1.0, abs=1e-9)

    def test_hard_splits_ties(self):
        np.testing.assert_allclose(attention_weights([1.0, 0.0, 1.0], Hard()), [0.5, 0.0, 0.5])

    def test_soft_limits(self):
        s = np.array([0.3, 1.0, 0.2, 1.0])
        np.testing.assert_allclose(attention_weights(s, Soft(1e4)), attention_weights(s, Hard()), atol=1e-12)
        np.testing.assert_allclose(attention_weights(s, Soft(1e-9)), np.full(4, 0.25), atol=1e-8)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            s = rng.normal(size=8)
            perm = rng.permutation(8)
            for mode in (Hard(), Soft(2.0)):
                np.testing.assert_allclose(attention_weights(s[perm], mode), attention_weights(s, mode)[perm])

    def test_empty_scores(self):
        with pytest.raises(ValueError):
            attention_weights([], Hard())

    def test_soft_needs_positive_temperature(self):
        with pytest.raises(ValueError):
            Soft(0.0)

    def test_mode_dict_round_trip(self):
        assert attn_mode_from_dict(Hard().to_dict()) == Hard()
        assert attn_mode_from_dict(Soft(3.5).to_dict()) == Soft(3.5)


class TestVocab:

    def test_orthonormal(self):
        vocab = Vocab.orthonormal(5, d=7)
        assert vocab.size == 5 and vocab.dim == 7
        np.testing.assert_allclose(vocab.embeddings @ vocab.embeddings.T, np.eye(5))

    def test_orthonormal_needs_room(self):
        with pytest.raises(InfeasibleSpec):
            Vocab.orthonormal(5, d=3)

    def test_empty(self):
        with pytest.raises(EmptyVocab):
            Vocab(np.zeros((0, 3)))

    def test_embeddings_are_read_only(self):
        vocab = Vocab.orthonormal(3)
        with pytest.raises(ValueError):
            vocab.embeddings[0, 0] = 2.0

    def test_random_unit_respects_cosine_bound(self):
        vocab = Vocab.random_unit(20, 16, np.random.default_rng(6), max_abs_cos=0.5)
        G = np.abs(vocab.embeddings @ vocab.embeddings.T)
        np.fill_diagonal(G, 0.0)
        assert G.max() <= 0.5

    def test_nearest_token(self):
        vocab = Vocab.orthonormal(4)
        rng = np.random.default_rng(7)
        for _ in range(100):
            t = int(rng.integers(4))
            v = vocab.embeddings[t] + rng.normal(scale=0.1, size=4)
            assert nearest_token(v, vocab) == t

    def test_nearest_token_tie_goes_to_smallest_id(self):
        assert nearest_token([0.5, 0.5, 0.0], Vocab.orthonormal(3)) == 0


class TestGeometry:

    def test_min_embedding_distance(self):
        assert min_embedding_distance(Vocab.orthonormal(6)) == pytest.approx(1.0)
        c = np.cos(np.pi / 3)
        vocab = Vocab(np.array([[1.0, 0.0], [c, np.sin(np.pi / 3)]]))
        assert min_embedding_distance(vocab) == pytest.approx(np.sqrt(1 - c ** 2))

    def test_cosine_gap(self):
        assert cosine_gap(np.eye(3)) == pytest.approx(1.0)
        assert cosine_gap([[1.0, 0.0], [2.0, 0.0]]) == pytest.approx(0.0)

    def test_gram_schmidt_delta(self):
        assert gram_schmidt_delta(np.eye(4)) == pytest.approx(1.0)
        assert gram_schmidt_delta([[1.0, 0.0], [2.0, 0.0]]) == 0.0
        b = np.array([[1.0, 0.0], [1.0, 1.0]]) / np.array([[1.0], [np.sqrt(2)]])
        assert gram_schmidt_delta(b) == pytest.approx(1 / np.sqrt(2))

    def test_gaps_match_pairwise_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            size, d = int(rng.integers(2, 9)), int(rng.integers(2, 6))
            E = rng.normal(size=(size, d))
            vocab = Vocab(E / np.linalg.norm(E, axis=1, keepdims=True))
            dots = [float(vocab.embeddings[a] @ vocab.embeddings[b])
                    for a in range(size) for b in range(size) if a != b]
            expected_delta = min(np.sqrt(max(1.0 - t * t, 0.0)) for t in dots)
            assert min_embedding_distance(vocab) == pytest.approx(expected_delta, abs=1e-9)
            assert cosine_gap(E) == pytest.approx(min(max(1.0 - max(dots), 0.0), 2.0), abs=1e-9)

    def test_gram_schmidt_delta_matches_qr(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            n, d = int(rng.integers(1, 5)), 5
            B = rng.normal(size=(n, d))
            B /= np.linalg.norm(B, axis=1, keepdims=True)
            R = np.linalg.qr(B.T)[1]
            assert gram_schmidt_delta(B) == pytest.approx(float(np.min(np.abs(np.diag(R)))), abs=1e-9)
