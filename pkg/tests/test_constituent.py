"""Constituent pipeline: bilinear scores, neighbour softmax, link
probabilities, and the log-space span matrix, each against an independent
oracle."""

import numpy as np
import pytest

from consattn.constituent import (
    LINK_PROB_FLOOR,
    NeighborProbs,
    constituent_matrix,
    constituent_scores,
    link_probability,
    neighbor_softmax,
    pair_scores,
    span_log_matrix,
)
from consattn.gradcheck import finite_diff_grad, max_rel_err
from consattn.tensor import Graph, ParamStore, ShapeError, Tensor, exp, mul, sum_all


def direct_span_products(probs):
    """Oracle: running products per row, no logs anywhere."""
    n = len(probs) + 1
    out = np.ones((n, n))
    for i in range(n):
        running = 1.0
        for j in range(i + 1, n):
            running *= probs[j - 1]
            out[i, j] = running
            out[j, i] = running
    return out


class TestPairScores:
    def test_identity_bilinear_form(self):
        e1 = np.zeros(3)
        e1[0] = 1.0
        feats = np.stack([e1, e1])
        out = pair_scores(Tensor(feats), Tensor(np.eye(3)))
        np.testing.assert_allclose(out.data, [1.0])

    def test_zero_map(self):
        rng = np.random.default_rng(0)
        out = pair_scores(Tensor(rng.normal(size=(4, 3))), Tensor(np.zeros((3, 3))))
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(1)
        feats = rng.normal(size=(3, 2))
        w = rng.normal(size=(2, 2))
        out = pair_scores(Tensor(feats), Tensor(w)).data
        for k in range(2):
            expected = 0.0
            for a in range(2):
                for b in range(2):
                    expected += feats[k, a] * w[a, b] * feats[k + 1, b]
            assert abs(out[k] - expected) < 1e-12

    def test_single_token_is_empty(self):
        out = pair_scores(Tensor(np.ones((1, 2))), Tensor(np.eye(2)))
        assert out.data.shape == (0,)

    def test_weight_shape_error(self):
        with pytest.raises(ShapeError):
            pair_scores(Tensor(np.ones((3, 2))), Tensor(np.eye(3)))


class TestNeighborSoftmax:
    def test_symmetric_interior(self):
        probs = neighbor_softmax(Tensor(np.zeros(2)), 3)
        assert probs.pr_left.data[1] == pytest.approx(0.5)
        assert probs.pr_right.data[1] == pytest.approx(0.5)

    def test_singleton_sequence(self):
        probs = neighbor_softmax(Tensor(np.zeros(0)), 1)
        np.testing.assert_array_equal(probs.pr_right.data, [1.0])
        np.testing.assert_array_equal(probs.pr_left.data, [1.0])

    def test_log_ratio_instance(self):
        probs = neighbor_softmax(Tensor(np.log([4.0, 1.0])), 3)
        assert probs.pr_left.data[1] == pytest.approx(0.8, abs=1e-12)
        assert probs.pr_right.data[1] == pytest.approx(0.2, abs=1e-12)

    def test_boundary_convention(self):
        rng = np.random.default_rng(2)
        probs = neighbor_softmax(Tensor(rng.normal(size=4)), 5)
        assert probs.pr_right.data[0] == 1.0 and probs.pr_left.data[0] == 0.0
        assert probs.pr_left.data[-1] == 1.0 and probs.pr_right.data[-1] == 0.0

    def test_interior_normalization(self):
        rng = np.random.default_rng(3)
        probs = neighbor_softmax(Tensor(rng.normal(size=9) * 5), 10)
        total = probs.pr_left.data[1:-1] + probs.pr_right.data[1:-1]
        np.testing.assert_allclose(total, 1.0, atol=1e-12)
        for arr in (probs.pr_left.data, probs.pr_right.data):
            assert ((arr >= 0.0) & (arr <= 1.0)).all()

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            neighbor_softmax(Tensor(np.zeros(3)), 3)


class TestLinkProbability:
    def test_geometric_mean(self):
        probs = NeighborProbs(pr_left=Tensor([0.0, 0.2]), pr_right=Tensor([0.8, 0.0]))
        out = link_probability(probs)
        np.testing.assert_allclose(out.data, [0.4])

    def test_two_token_boundary_pair_is_one(self):
        probs = neighbor_softmax(Tensor(np.zeros(1)), 2)
        out = link_probability(probs)
        np.testing.assert_array_equal(out.data, [1.0])

    def test_clamp_floor_keeps_log_finite(self):
        probs = NeighborProbs(pr_left=Tensor([0.0, 1.0]), pr_right=Tensor([1e-20, 0.0]))
        out = link_probability(probs)
        assert out.data[0] == LINK_PROB_FLOOR
        assert np.isfinite(np.log(out.data)).all()


class TestConstituentMatrix:
    def test_direct_product_values(self):
        scores = constituent_matrix(Tensor([0.5, 0.5]))
        spans = np.exp(scores.log_spans.data)
        assert spans[0, 2] == pytest.approx(0.25, abs=1e-15)
        assert spans[0, 1] == pytest.approx(0.5, abs=1e-15)
        assert spans[1, 2] == pytest.approx(0.5, abs=1e-15)
        np.testing.assert_array_equal(np.diag(spans), np.ones(3))

    def test_single_token(self):
        scores = constituent_matrix(Tensor(np.zeros(0)))
        np.testing.assert_array_equal(np.exp(scores.log_spans.data), [[1.0]])

    def test_matches_direct_product_oracle_n64(self):
        rng = np.random.default_rng(4)
        probs = rng.uniform(1e-9, 1.0, size=63)
        spans = np.exp(constituent_matrix(Tensor(probs)).log_spans.data)
        np.testing.assert_allclose(spans, direct_span_products(probs), atol=1e-10)

    def test_below_floor_rejected(self):
        with pytest.raises(ValueError, match="floor"):
            constituent_matrix(Tensor([0.5, 1e-12]))

    def test_symmetry_exact_and_diagonal_zero(self):
        rng = np.random.default_rng(5)
        logs = span_log_matrix(Tensor(np.log(rng.uniform(1e-9, 1.0, size=20)))).data
        assert (logs == logs.T).all()
        assert (np.diag(logs) == 0.0).all()

    def test_span_monotone_non_increasing(self):
        rng = np.random.default_rng(6)
        spans = np.exp(span_log_matrix(
            Tensor(np.log(rng.uniform(1e-6, 1.0, size=15)))).data)
        for i in range(16):
            right = spans[i, i:]
            left = spans[i, :i + 1]
            assert (np.diff(right) <= 1e-15).all()
            assert (np.diff(left) >= -1e-15).all()


class TestFullPipeline:
    def test_permutation_sensitivity(self):
        rng = np.random.default_rng(7)
        feats = rng.normal(size=(6, 4))
        w = rng.normal(size=(4, 4))
        base = constituent_scores(Tensor(feats), Tensor(w)).log_spans.data
        shuffled = constituent_scores(Tensor(feats[::-1].copy()), Tensor(w)).log_spans.data
        assert not np.allclose(base, shuffled)

    def test_entries_in_unit_interval(self):
        rng = np.random.default_rng(8)
        scores = constituent_scores(Tensor(rng.normal(size=(8, 4))),
                                    Tensor(rng.normal(size=(4, 4))))
        spans = np.exp(scores.log_spans.data)
        assert ((spans > 0.0) & (spans <= 1.0)).all()
        probs = scores.link_probs.data
        assert ((probs >= LINK_PROB_FLOOR) & (probs <= 1.0)).all()

    def test_span32_gradient_through_full_span(self):
        """Loss reading the [0, 31] span score still trains the bilinear W."""
        rng = np.random.default_rng(9)
        feats = Tensor(rng.normal(size=(32, 6)))
        store = ParamStore()
        store.add("w", 0.02 * rng.normal(size=(6, 6)))
        pick = np.zeros((32, 32))
        pick[0, 31] = 1.0
        lift = 2.0 ** 31

        def build(s):
            scores = constituent_scores(feats, s["w"])
            return sum_all(mul(exp(scores.log_spans), Tensor(pick)))

        store.zero_grad()
        with Graph() as g:
            g.backward(build(store))
        numeric = finite_diff_grad(lambda s: lift * build(s).item(), store, 1e-6)
        assert np.abs(store["w"].grad).max() > 0.0
        assert max_rel_err(lift * store["w"].grad, numeric["w"]) < 1e-4

    def test_pipeline_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(10)
        feats = Tensor(rng.normal(size=(7, 4)))
        store = ParamStore()
        store.add("w", 0.3 * rng.normal(size=(4, 4)))
        target = Tensor(rng.normal(size=(7, 7)))

        def build(s):
            scores = constituent_scores(feats, s["w"])
            return sum_all(mul(exp(scores.log_spans), target))

        store.zero_grad()
        with Graph() as g:
            g.backward(build(store))
        numeric = finite_diff_grad(lambda s: build(s).item(), store, 1e-6)
        assert max_rel_err(store["w"].grad, numeric["w"]) < 1e-4
