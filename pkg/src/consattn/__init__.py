"""Constituent-gated self-attention over OCR token sequences.

A small, self-contained research codebase: a float64 tensor core with
reverse-mode gradients, the constituent/attention/embedding operations, a
desk-scale model with Adam training, answer metrics, and a synthetic
data + training + ablation harness behind the ``consattn`` CLI.
"""

from .attention import AttentionConfig, attend, attention_scores, gate, project_qkv
from .constituent import (
    ConstituentScores,
    NeighborProbs,
    constituent_matrix,
    constituent_scores,
    link_probability,
    neighbor_softmax,
    pair_scores,
    span_log_matrix,
)
from .embeddings import FusedSequence, embed_objects, embed_question, embed_scene_texts, fuse
from .gradcheck import finite_diff_grad, max_rel_err
from .metrics import boundary_f1, corpus_scores, exact_match, f1_token
from .model import Model, ModelConfig, ModelOutput, train_step
from .optim import Adam
from .tensor import (
    ContractError,
    DegenerateRowError,
    DomainError,
    Graph,
    ParamStore,
    ShapeError,
    Tensor,
    backward,
    concat_rows,
    elementwise,
    layer_norm,
    matmul,
    softmax_rows,
)

__version__ = "0.1.0"
