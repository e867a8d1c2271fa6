"""Feature rows for objects, scene-text tokens, and question tokens, and
their fusion into one sequence.

Object rows are the sum of two normalized projections (appearance and box).
Scene-text rows add a third, projected token-embedding term that is *not*
layer-normalized; ``ln_token_term`` normalizes it too, for comparison only.
Question rows are plain table lookups.  Fusion concatenates the three blocks
in object, scene-text, question order and keeps a segment map.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    _as_tensor,
    add,
    concat_rows,
    gather_rows,
    layer_norm,
    matmul,
)


@dataclass
class FusedSequence:
    features: Tensor
    segments: dict        # name -> (start, stop), disjoint and covering
    mask: np.ndarray      # bool per row

    def segment(self, name):
        lo, hi = self.segments[name]
        return self.features.data[lo:hi]


def validate_boxes(boxes):
    """Boxes are rows (x_min, y_min, x_max, y_max), all in [0, 1], min <= max."""
    b = np.asarray(boxes, dtype=np.float64)
    if b.ndim != 2 or b.shape[1] != 4:
        raise ShapeError(f"boxes must be (m, 4), got shape {b.shape}")
    if b.size:
        if b.min() < 0.0 or b.max() > 1.0:
            raise ValueError("box coordinates must lie in [0, 1]")
        if (b[:, 0] > b[:, 2]).any() or (b[:, 1] > b[:, 3]).any():
            raise ValueError("box min coordinates exceed max coordinates")
    return b


def embed_objects(appearance, boxes, params, labels=None, eps=1e-6):
    """(m, d_fr) appearances and (m, 4) boxes -> (m, d_model) object rows.

    Object label text is deliberately not part of the default row; when
    ``labels`` is given (config-gated) a normalized label-table term is added.
    """
    appearance = _as_tensor(appearance)
    boxes = Tensor(validate_boxes(boxes))
    fr = layer_norm(matmul(appearance, params["obj.w_fr"]),
                    params["obj.ln_fr.gain"], params["obj.ln_fr.bias"], eps)
    bx = layer_norm(matmul(boxes, params["obj.w_bx"]),
                    params["obj.ln_bx.gain"], params["obj.ln_bx.bias"], eps)
    out = add(fr, bx)
    if labels is not None:
        lab = layer_norm(gather_rows(params["obj.label_table"], labels),
                         params["obj.ln_label.gain"], params["obj.ln_label.bias"], eps)
        out = add(out, lab)
    return out


def embed_scene_texts(appearance, boxes, token_ids, params, eps=1e-6, ln_token_term=False):
    """Scene-text rows: two normalized projections plus a raw projected
    token-embedding term (normalized only under the comparison flag)."""
    appearance = _as_tensor(appearance)
    boxes = Tensor(validate_boxes(boxes))
    fr = layer_norm(matmul(appearance, params["ocr.w_fr"]),
                    params["ocr.ln_fr.gain"], params["ocr.ln_fr.bias"], eps)
    bx = layer_norm(matmul(boxes, params["ocr.w_bx"]),
                    params["ocr.ln_bx.gain"], params["ocr.ln_bx.bias"], eps)
    tok = matmul(gather_rows(params["ocr.token_table"], token_ids), params["ocr.w_tok"])
    if ln_token_term:
        tok = layer_norm(tok, params["ocr.ln_tok.gain"], params["ocr.ln_tok.bias"], eps)
    return add(add(fr, bx), tok)


def embed_question(token_ids, table):
    """Row i = table[token_ids[i]]; empty questions give a zero-row tensor."""
    return gather_rows(table, token_ids)


def fuse(f_obj, f_ocr, f_q):
    """Concatenate the three blocks in object, scene-text, question order."""
    features, ranges = concat_rows([f_obj, f_ocr, f_q])
    segments = {"objects": ranges[0], "ocr": ranges[1], "question": ranges[2]}
    mask = np.ones(features.data.shape[0], dtype=bool)
    return FusedSequence(features=features, segments=segments, mask=mask)
