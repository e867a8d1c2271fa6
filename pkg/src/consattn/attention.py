"""Multi-head self-attention with constituent re-correction.

The attention matrix is gated by the exponentiated span score matrix through
an element-wise product.  Both factors are exponentials, so the gate can only
remove attention mass, never add it, and no renormalization follows: the
gated scores multiply the values directly.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    _as_tensor,
    bmm,
    exp,
    matmul,
    merge_heads,
    mul,
    reshape,
    scale,
    softmax_rows,
    split_heads,
    tile_heads,
    transpose_last2,
)


@dataclass
class AttentionConfig:
    d_model: int
    n_heads: int
    use_attn: bool = True    # content-based scores
    use_spans: bool = True   # constituent gate
    scale_mode: str = "model"  # "model": 1/sqrt(d_model); "head": 1/sqrt(d_head)

    def __post_init__(self):
        if self.d_model <= 0 or self.n_heads <= 0 or self.d_model % self.n_heads:
            raise ValueError(
                f"d_model {self.d_model} must be a positive multiple of n_heads {self.n_heads}")
        if not (self.use_attn or self.use_spans):
            raise ValueError("at least one of use_attn/use_spans must be set")
        if self.scale_mode not in ("model", "head"):
            raise ValueError(f"unknown scale_mode {self.scale_mode!r}")


def project_qkv(features, w_query, w_key, w_value, n_heads):
    """Project token rows and split each projection into contiguous head slices."""
    features = _as_tensor(features)
    q = split_heads(matmul(features, w_query), n_heads)
    k = split_heads(matmul(features, w_key), n_heads)
    v = split_heads(matmul(features, w_value), n_heads)
    return q, k, v


def attention_scores(q, k, cfg, mask=None):
    """Row-softmaxed scaled dot products, (h, n, n); masked keys get zero mass."""
    h, n, dh = q.data.shape
    if k.data.shape != (h, n, dh):
        raise ShapeError(f"query/key shapes differ: {q.data.shape} vs {k.data.shape}")
    width = cfg.d_model if cfg.scale_mode == "model" else dh
    raw = scale(bmm(q, transpose_last2(k)), 1.0 / np.sqrt(width))
    flat = reshape(raw, (h * n, n))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise ShapeError(f"key mask shape {mask.shape} does not match {n} tokens")
        full = np.broadcast_to(mask, (h * n, n))
    else:
        full = None
    return reshape(softmax_rows(flat, full), (h, n, n))


def gate(attn, log_spans, cfg, mask=None):
    """Combine attention with span scores per the config's flags.

    Both on: element-wise product, the span matrix broadcast across heads.
    Attention only: the attention matrix passes through untouched.  Spans
    only: the exponentiated span matrix itself, masked keys zeroed.
    """
    if cfg.use_attn and not cfg.use_spans:
        return attn
    h = attn.data.shape[0]
    n = log_spans.data.shape[0]
    if log_spans.data.shape != (n, n) or attn.data.shape != (h, n, n):
        raise ShapeError(f"gate shapes differ: attn {attn.data.shape}, spans {log_spans.data.shape}")
    spans = exp(log_spans)
    if not cfg.use_attn:
        if mask is not None:
            keep = Tensor(np.broadcast_to(np.asarray(mask, dtype=float), (n, n)).copy())
            spans = mul(spans, keep)
        return tile_heads(spans, h)
    return mul(attn, tile_heads(spans, h))


def attend(scores, v, w_out):
    """Apply gated scores to values, merge heads, project: (h,n,n),(h,n,dh) -> (n,d)."""
    return matmul(merge_heads(bmm(scores, v)), w_out)


def gated_self_attention(features, params, prefix, cfg, log_spans=None, mask=None):
    """One full layer over token rows (n, d) -> (n, d).

    ``params`` supplies ``{prefix}.wq/.wk/.wv/.wo``; ``log_spans`` is required
    when the config enables the span gate.
    """
    q, k, v = project_qkv(
        features, params[prefix + ".wq"], params[prefix + ".wk"], params[prefix + ".wv"],
        cfg.n_heads)
    attn = attention_scores(q, k, cfg, mask)
    if cfg.use_spans and log_spans is None:
        raise ValueError("span gate enabled but no span matrix was provided")
    scores = gate(attn, log_spans, cfg, mask)
    return attend(scores, v, params[prefix + ".wo"])
