"""Constituent structure over a token sequence.

Adjacent tokens get a learned bilinear relation score; each token splits one
unit of relational mass between its two neighbours by softmax; the link
probability of an adjacent pair is the geometric mean of the two directed
masses; and the probability that a whole span forms one constituent is the
product of its link probabilities, kept in log space so long spans neither
underflow nor starve the bilinear weights of gradient.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import (
    ShapeError,
    Tensor,
    _accum,
    _as_tensor,
    _record,
    clamp,
    concat_rows,
    get_col,
    log,
    matmul,
    mul,
    row_sums,
    slice_rows,
    softmax_rows,
    sqrt,
    stack_cols,
)

LINK_PROB_FLOOR = 1e-9


@dataclass
class NeighborProbs:
    """Per-token softmax mass toward each neighbour.

    Boundary convention: a token with a single neighbour gives it all its
    mass (softmax over a singleton), so pr_right[0] = 1 and pr_left[-1] = 1.
    A one-token sequence degenerates to pr_right = pr_left = [1].
    """

    pr_left: Tensor
    pr_right: Tensor


@dataclass
class ConstituentScores:
    """Link probabilities and the symmetric log-space span score matrix."""

    link_probs: Tensor   # (n-1,), entries in [LINK_PROB_FLOOR, 1]
    log_spans: Tensor    # (n, n), log_spans[i, j] = sum of link logs over [i, j)


def pair_scores(features, weight):
    """Bilinear relation score of each adjacent token pair.

    features: (n, d) token rows; weight: (d, d).  Returns a rank-1 tensor of
    length n-1 with entry k = features[k] . weight . features[k+1]; empty for
    a single token.
    """
    features = _as_tensor(features)
    weight = _as_tensor(weight)
    n, d = features.data.shape
    if weight.data.shape != (d, d):
        raise ShapeError(
            f"bilinear weight shape {weight.data.shape} does not match feature width ({d}, {d})")
    if n < 2:
        return Tensor(np.zeros(0))
    left = slice_rows(features, 0, n - 1)
    right = slice_rows(features, 1, n)
    return row_sums(mul(matmul(left, weight), right))


def neighbor_softmax(relations, n):
    """Distribute each token's relational mass between its two neighbours.

    Interior token i splits softmax(relations[i-1], relations[i]) into
    (left, right) mass; boundary tokens follow the singleton convention.
    """
    relations = _as_tensor(relations)
    if relations.data.shape != (max(n - 1, 0),):
        raise ShapeError(
            f"expected {max(n - 1, 0)} relation scores for {n} tokens, got shape {relations.data.shape}")
    if n == 1:
        return NeighborProbs(pr_left=Tensor([1.0]), pr_right=Tensor([1.0]))
    if n == 2:
        pr_right, _ = concat_rows([Tensor([1.0]), Tensor([0.0])])
        pr_left, _ = concat_rows([Tensor([0.0]), Tensor([1.0])])
        return NeighborProbs(pr_left=pr_left, pr_right=pr_right)
    pairs = stack_cols([slice_rows(relations, 0, n - 2), slice_rows(relations, 1, n - 1)])
    sm = softmax_rows(pairs)
    pr_left, _ = concat_rows([Tensor([0.0]), get_col(sm, 0), Tensor([1.0])])
    pr_right, _ = concat_rows([Tensor([1.0]), get_col(sm, 1), Tensor([0.0])])
    return NeighborProbs(pr_left=pr_left, pr_right=pr_right)


def link_probability(probs):
    """Geometric mean of the two directed masses across each adjacent pair,
    floored at LINK_PROB_FLOOR so the log stays finite."""
    n = probs.pr_right.data.shape[0]
    if n < 2:
        return Tensor(np.zeros(0))
    toward_right = slice_rows(probs.pr_right, 0, n - 1)
    toward_left = slice_rows(probs.pr_left, 1, n)
    product = clamp(mul(toward_right, toward_left), LINK_PROB_FLOOR ** 2, 1.0)
    return clamp(sqrt(product), LINK_PROB_FLOOR, 1.0)


def span_log_matrix(link_logs):
    """(n-1,) link logs -> (n, n) symmetric span-sum matrix, zero diagonal.

    Built from prefix sums, O(n^2) total; the backward pass scatters each
    span's gradient back onto the links it covers in O(n^2) as well.
    """
    link_logs = _as_tensor(link_logs)
    if link_logs.data.ndim != 1:
        raise ShapeError(f"link logs must be rank 1, got shape {link_logs.data.shape}")
    out = Tensor(kernels.span_log_matrix(link_logs.data))

    def push(g):
        _accum(link_logs, kernels.span_log_matrix_grad(g))

    _record(out, push)
    return out


def constituent_matrix(link_probs):
    """Assemble ConstituentScores from link probabilities in [floor, 1]."""
    link_probs = _as_tensor(link_probs)
    if link_probs.data.size and link_probs.data.min() < LINK_PROB_FLOOR:
        raise ValueError(
            f"link probability {link_probs.data.min()} below the floor {LINK_PROB_FLOOR}; clamp first")
    return ConstituentScores(link_probs=link_probs, log_spans=span_log_matrix(log(link_probs)))


def constituent_scores(features, weight):
    """Full pipeline from token features to ConstituentScores."""
    features = _as_tensor(features)
    relations = pair_scores(features, weight)
    probs = neighbor_softmax(relations, features.data.shape[0])
    return constituent_matrix(link_probability(probs))
