"""Answer metrics (exact match and token-level F1) and boundary-detection F1.

Answers are compared as normalized token sequences: Unicode NFC, case-fold,
whitespace collapse.  Token F1 uses multiset intersection, so repeated tokens
are credited at most once per occurrence.
"""

import json
import unicodedata
from collections import Counter


def normalize_answer(text):
    text = unicodedata.normalize("NFC", text).casefold()
    return " ".join(text.split())


def answer_tokens(value):
    """Token list from a string (normalized) or an already-split list."""
    if isinstance(value, str):
        return normalize_answer(value).split()
    return [normalize_answer(t) for t in value]


def exact_match(predicted, gold):
    """1 iff the normalized token sequences are identical, else 0."""
    return int(answer_tokens(predicted) == answer_tokens(gold))


def f1_token(predicted, gold):
    """Harmonic mean of token precision and recall under multiset overlap.

    Both sides empty scores 1; exactly one empty scores 0.
    """
    p = answer_tokens(predicted)
    g = answer_tokens(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(g)
    return 2.0 * precision * recall / (precision + recall)


def corpus_scores(pairs):
    """Mean EM and mean token F1 over (predicted, gold) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("corpus_scores needs at least one answer pair")
    em = sum(exact_match(p, g) for p, g in pairs) / len(pairs)
    f1 = sum(f1_token(p, g) for p, g in pairs) / len(pairs)
    return em, f1


def boundary_f1(pred, gold):
    """Binary F1 on the positive (same-word link) class.

    With no positives anywhere (gold and prediction both all-negative) there
    is nothing to find and the score is defined as 1.
    """
    pred = [bool(x) for x in pred]
    gold = [bool(x) for x in gold]
    if len(pred) != len(gold):
        raise ValueError(f"boundary vectors differ in length: {len(pred)} vs {len(gold)}")
    tp = sum(p and g for p, g in zip(pred, gold))
    fp = sum(p and not g for p, g in zip(pred, gold))
    fn = sum(g and not p for p, g in zip(pred, gold))
    if tp + fp + fn == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def _best_over_golds(predicted, gold, metric):
    golds = gold if isinstance(gold, list) else [gold]
    return max(metric(predicted, g) for g in golds)


def score_records(records, multi_gold=False):
    """Score prediction records [{id, predicted, gold}, ...].

    ``gold`` may be a list of reference answers when ``multi_gold`` is set,
    in which case each example takes its best score over the references.
    """
    records = list(records)
    if not records:
        raise ValueError("no prediction records to score")
    per_example = []
    for rec in records:
        pred, gold = rec["predicted"], rec["gold"]
        if multi_gold:
            em = _best_over_golds(pred, gold, exact_match)
            f1 = _best_over_golds(pred, gold, f1_token)
        else:
            if isinstance(gold, list):
                gold = gold[0]
            em = exact_match(pred, gold)
            f1 = f1_token(pred, gold)
        per_example.append({"id": rec["id"], "em": em, "f1_token": f1})
    return {
        "n": len(per_example),
        "em": sum(r["em"] for r in per_example) / len(per_example),
        "f1_token": sum(r["f1_token"] for r in per_example) / len(per_example),
        "per_example": per_example,
    }


def score_predictions_file(path, multi_gold=False):
    """Score a predictions file of one JSON record per line."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return score_records(records, multi_gold=multi_gold)
