"""Desk-scale end-to-end network.

Embeddings feed a constituent-gated self-attention layer over the scene-text
rows (mixed back residually by default), the three blocks fuse into one
sequence, a small pre-norm transformer encoder runs over it, and two heads
come out: answer logits from mean-pooled rows, and per-link boundary logits
taken directly as the log-odds of the link probabilities.

Examples are duck-typed: any object with ocr_appearance, ocr_boxes,
ocr_tokens, obj_appearance, obj_boxes, question_tokens, boundaries, answer
(and optionally obj_labels) attributes works.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention import AttentionConfig, gated_self_attention
from .constituent import LINK_PROB_FLOOR, constituent_scores
from .embeddings import embed_objects, embed_question, embed_scene_texts, fuse
from .tensor import (
    Graph,
    ParamStore,
    Tensor,
    add,
    add_rowvec,
    bce_with_logits,
    clamp,
    cross_entropy_logits,
    dropout,
    layer_norm,
    log,
    matmul,
    mean_rows,
    relu,
    reshape,
    scale,
    slice_rows,
    sub,
)


@dataclass
class ModelConfig:
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_fr: int = 32
    token_vocab: int = 40
    question_vocab: int = 48
    n_answers: int = 24
    obj_label_vocab: int = 0        # > 0 enables the object-label term
    dropout: float = 0.0
    use_attn: bool = True
    use_spans: bool = True
    scale_mode: str = "model"
    ln_token_term: bool = False
    span_layer_mix: str = "residual"  # how the gated layer re-enters: residual|replace
    pool: str = "all"                 # answer readout: mean over all rows | question rows
    ln_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_layers", "d_fr", "token_vocab",
                     "question_vocab", "n_answers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.span_layer_mix not in ("residual", "replace"):
            raise ValueError(f"unknown span_layer_mix {self.span_layer_mix!r}")
        if self.pool not in ("all", "question"):
            raise ValueError(f"unknown pool mode {self.pool!r}")
        if not (self.use_attn or self.use_spans):
            raise ValueError("at least one of use_attn/use_spans must be set")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModelOutput:
    answer_logits: Tensor      # (n_answers,)
    boundary_logits: Tensor    # (n_ocr - 1,)
    link_probs: Tensor         # (n_ocr - 1,), in [LINK_PROB_FLOOR, 1]
    fused: Optional[object] = field(default=None, repr=False)


def _init_linear(rng, d_in, d_out):
    bound = 1.0 / np.sqrt(d_in)
    return rng.uniform(-bound, bound, size=(d_in, d_out))


def _init_table(rng, rows, d):
    return rng.normal(0.0, 0.02, size=(rows, d))


class Model:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.params = ParamStore()
        self.span_cfg = AttentionConfig(cfg.d_model, cfg.n_heads, cfg.use_attn,
                                        cfg.use_spans, cfg.scale_mode)
        self.plain_cfg = AttentionConfig(cfg.d_model, cfg.n_heads, True, False, cfg.scale_mode)
        self._build(np.random.default_rng(cfg.seed))

    def _ln(self, name, d):
        self.params.add(name + ".gain", np.ones(d))
        self.params.add(name + ".bias", np.zeros(d))

    def _attn(self, rng, prefix, d):
        for w in ("wq", "wk", "wv", "wo"):
            self.params.add(f"{prefix}.{w}", _init_linear(rng, d, d))

    def _build(self, rng):
        cfg = self.cfg
        d = cfg.d_model
        self.params.add("obj.w_fr", _init_linear(rng, cfg.d_fr, d))
        self._ln("obj.ln_fr", d)
        self.params.add("obj.w_bx", _init_linear(rng, 4, d))
        self._ln("obj.ln_bx", d)
        if cfg.obj_label_vocab:
            self.params.add("obj.label_table", _init_table(rng, cfg.obj_label_vocab, d))
            self._ln("obj.ln_label", d)
        self.params.add("ocr.w_fr", _init_linear(rng, cfg.d_fr, d))
        self._ln("ocr.ln_fr", d)
        self.params.add("ocr.w_bx", _init_linear(rng, 4, d))
        self._ln("ocr.ln_bx", d)
        self.params.add("ocr.token_table", _init_table(rng, cfg.token_vocab, d))
        self.params.add("ocr.w_tok", _init_linear(rng, d, d))
        if cfg.ln_token_term:
            self._ln("ocr.ln_tok", d)
        self.params.add("question.table", _init_table(rng, cfg.question_vocab, d))
        self.params.add("link.w", _init_linear(rng, d, d))
        self._attn(rng, "span_attn", d)
        for i in range(cfg.n_layers):
            self._ln(f"enc{i}.ln1", d)
            self._attn(rng, f"enc{i}.attn", d)
            self._ln(f"enc{i}.ln2", d)
            self.params.add(f"enc{i}.ffn.w1", _init_linear(rng, d, 4 * d))
            self.params.add(f"enc{i}.ffn.b1", np.zeros(4 * d))
            self.params.add(f"enc{i}.ffn.w2", _init_linear(rng, 4 * d, d))
            self.params.add(f"enc{i}.ffn.b2", np.zeros(d))
        self._ln("final_ln", d)
        self.params.add("head.w", _init_linear(rng, d, cfg.n_answers))
        self.params.add("head.b", np.zeros(cfg.n_answers))

    def _encoder_block(self, x, i, training, rng):
        p = self.params
        cfg = self.cfg
        h = layer_norm(x, p[f"enc{i}.ln1.gain"], p[f"enc{i}.ln1.bias"], cfg.ln_eps)
        a = gated_self_attention(h, p, f"enc{i}.attn", self.plain_cfg)
        if training and cfg.dropout > 0.0:
            a = dropout(a, cfg.dropout, rng)
        x = add(x, a)
        h = layer_norm(x, p[f"enc{i}.ln2.gain"], p[f"enc{i}.ln2.bias"], cfg.ln_eps)
        f = relu(add_rowvec(matmul(h, p[f"enc{i}.ffn.w1"]), p[f"enc{i}.ffn.b1"]))
        f = add_rowvec(matmul(f, p[f"enc{i}.ffn.w2"]), p[f"enc{i}.ffn.b2"])
        if training and cfg.dropout > 0.0:
            f = dropout(f, cfg.dropout, rng)
        return add(x, f)

    def forward(self, ex, training=False, rng=None):
        p = self.params
        cfg = self.cfg
        if training and cfg.dropout > 0.0 and rng is None:
            raise ValueError("dropout is active; forward needs an rng in training mode")
        labels = getattr(ex, "obj_labels", None) if cfg.obj_label_vocab else None
        f_obj = embed_objects(ex.obj_appearance, ex.obj_boxes, p, labels=labels, eps=cfg.ln_eps)
        f_ocr = embed_scene_texts(ex.ocr_appearance, ex.ocr_boxes, ex.ocr_tokens, p,
                                  eps=cfg.ln_eps, ln_token_term=cfg.ln_token_term)
        f_q = embed_question(ex.question_tokens, p["question.table"])

        spans = constituent_scores(f_ocr, p["link.w"])
        gated = gated_self_attention(f_ocr, p, "span_attn", self.span_cfg, spans.log_spans)
        ocr_rows = add(f_ocr, gated) if cfg.span_layer_mix == "residual" else gated

        fused = fuse(f_obj, ocr_rows, f_q)
        x = fused.features
        for i in range(cfg.n_layers):
            x = self._encoder_block(x, i, training, rng)
        x = layer_norm(x, p["final_ln.gain"], p["final_ln.bias"], cfg.ln_eps)
        if cfg.pool == "question" and ex.question_tokens.shape[0]:
            lo, hi = fused.segments["question"]
            pooled = mean_rows(slice_rows(x, lo, hi))
        else:
            pooled = mean_rows(x)
        logits = add(reshape(matmul(reshape(pooled, (1, cfg.d_model)), p["head.w"]),
                             (cfg.n_answers,)), p["head.b"])

        n_links = spans.link_probs.data.shape[0]
        if n_links:
            away = clamp(sub(Tensor(np.ones(n_links)), spans.link_probs), LINK_PROB_FLOOR, 1.0)
            boundary_logits = sub(log(spans.link_probs), log(away))
        else:
            boundary_logits = Tensor(np.zeros(0))
        return ModelOutput(answer_logits=logits, boundary_logits=boundary_logits,
                           link_probs=spans.link_probs, fused=fused)

    def loss(self, out, gold_answer, gold_boundaries, boundary_weight=0.5, batch_scale=1.0):
        """Answer cross-entropy plus weighted mean link BCE; scalar >= 0."""
        if boundary_weight < 0:
            raise ValueError(f"boundary loss weight must be >= 0, got {boundary_weight}")
        total = cross_entropy_logits(out.answer_logits, gold_answer)
        if boundary_weight > 0 and out.boundary_logits.data.size:
            bce = bce_with_logits(out.boundary_logits, np.asarray(gold_boundaries, dtype=np.float64))
            total = add(total, scale(bce, boundary_weight))
        if batch_scale != 1.0:
            total = scale(total, batch_scale)
        return total


def train_step(model, optimizer, batch, boundary_weight=0.5, rng=None):
    """One Adam update from the mean loss over a batch of examples."""
    model.params.zero_grad()
    total = 0.0
    n = len(batch)
    for ex in batch:
        with Graph() as g:
            out = model.forward(ex, training=True, rng=rng)
            loss = model.loss(out, ex.answer, ex.boundaries, boundary_weight,
                              batch_scale=1.0 / n)
            g.backward(loss)
        total += loss.item()
    if not np.isfinite(total):
        raise FloatingPointError(
            f"non-finite batch loss {total} at optimizer step {optimizer.t + 1}")
    optimizer.step()
    return total
