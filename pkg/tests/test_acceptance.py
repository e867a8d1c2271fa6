"""Acceptance suite: one test per shipping criterion, each printing a
PASS/FAIL line with its measured numbers (run pytest -s or -v to see them).

The ablation criterion trains nine full models and dominates the runtime
(tens of minutes on one core); everything else finishes in seconds.
"""

import time

import numpy as np
import pytest

from consattn import dataio, harness, metrics
from consattn.attention import AttentionConfig, gated_self_attention
from consattn.constituent import span_log_matrix
from consattn.harness import make_random_example
from consattn.model import Model, ModelConfig
from consattn.tensor import ParamStore, Tensor


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    print("\n" + line)
    assert ok, line


def attn_store(rng, d, prefix):
    store = ParamStore()
    for w in ("wq", "wk", "wv", "wo"):
        store.add(f"{prefix}.{w}", 0.5 * rng.normal(size=(d, d)))
    return store


def test_criterion_1_log_space_equals_direct_product():
    """exp of span log sums matches running products, 1000 cases, n <= 64."""
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 65))
        probs = rng.uniform(1e-9, 1.0, size=n - 1)
        spans = np.exp(span_log_matrix(Tensor(np.log(probs))).data)
        direct = np.ones((n, n))
        for i in range(n):
            direct[i, i + 1:] = np.cumprod(probs[i:])
        direct = np.triu(direct, 1)
        direct = direct + direct.T + np.eye(n)
        worst = max(worst, float(np.abs(spans - direct).max()))
    elapsed = time.perf_counter() - start
    report("criterion 1 (log-space product equivalence)",
           worst < 1e-10 and elapsed < 5.0,
           f"max abs err {worst:.3e}, {elapsed:.1f}s over 1000 cases")


def test_criterion_2_span_matrix_invariants():
    """Symmetry, unit diagonal, (0,1] range, distance monotonicity; 10k cases."""
    rng = np.random.default_rng(102)
    start = time.perf_counter()
    ok = True
    for case in range(10_000):
        n = int(rng.integers(1, 41)) if case % 50 else 64
        probs = rng.uniform(1e-9, 1.0, size=n - 1)
        logs = span_log_matrix(Tensor(np.log(probs))).data
        spans = np.exp(logs)
        ok &= (logs == logs.T).all()
        ok &= (np.diag(spans) == 1.0).all()
        ok &= ((spans > 0.0) & (spans <= 1.0)).all()
        if n > 1:
            diff = np.diff(spans, axis=1)
            cols = np.arange(n - 1)[None, :]
            rows = np.arange(n)[:, None]
            ok &= (diff[cols >= rows] <= 1e-15).all()
            ok &= (diff[cols < rows - 1] >= -1e-15).all()
        if not ok:
            break
    elapsed = time.perf_counter() - start
    report("criterion 2 (span matrix invariant suite)",
           ok and elapsed < 10.0, f"10k instances, {elapsed:.1f}s")


def test_criterion_3_gradient_fidelity():
    """Tape vs central differences on the stated tiny model, every group,
    plus the span-32 loss on the bilinear weight."""
    start = time.perf_counter()
    result = harness.run_gradcheck({}, out_dir=None, log=None)
    elapsed = time.perf_counter() - start
    worst_group = max(result["groups"].items(), key=lambda kv: kv[1]["max_rel_err"])
    cfg = result["config"]
    shape_ok = (cfg["d_model"], cfg["n_heads"], cfg["n_ocr"], cfg["n_objects"],
                cfg["n_question"]) == (8, 2, 6, 2, 3)
    report("criterion 3 (gradient fidelity)",
           result["pass"] and shape_ok and elapsed < 60.0,
           f"worst group {worst_group[0]} rel err {worst_group[1]['max_rel_err']:.2e}, "
           f"long-span rel err {result['long_span']['max_rel_err']:.2e}, {elapsed:.1f}s")


def test_criterion_4_gating_identity():
    """All-ones span gate is bit-identical to plain attention; the
    attention-only arm ignores span scores entirely."""
    rng = np.random.default_rng(104)
    d, h, n = 8, 2, 5
    f = Tensor(rng.normal(size=(n, d)))
    store = attn_store(rng, d, "layer")
    both = AttentionConfig(d, h, use_attn=True, use_spans=True)
    plain = AttentionConfig(d, h, use_attn=True, use_spans=False)

    gated = gated_self_attention(f, store, "layer", both, Tensor(np.zeros((n, n))))
    ungated = gated_self_attention(f, store, "layer", plain)
    ones_identical = (gated.data == ungated.data).all()

    random_spans = Tensor(-rng.random((n, n)))
    ignoring = gated_self_attention(f, store, "layer", plain, random_spans)
    attn_only_identical = (ignoring.data == ungated.data).all()

    ex = make_random_example(np.random.default_rng(0), n_ocr=2)
    model_both = Model(ModelConfig(d_model=8, n_heads=2, n_layers=1, d_fr=8,
                                   token_vocab=10, question_vocab=12, n_answers=6, seed=3))
    model_plain = Model(ModelConfig(d_model=8, n_heads=2, n_layers=1, d_fr=8,
                                    token_vocab=10, question_vocab=12, n_answers=6,
                                    use_spans=False, seed=3))
    two_token_identical = (model_both.forward(ex).answer_logits.data ==
                           model_plain.forward(ex).answer_logits.data).all()

    report("criterion 4 (gating identity)",
           bool(ones_identical and attn_only_identical and two_token_identical),
           "bit-identical on all three comparisons")


def test_criterion_5_metric_fidelity():
    hand = (
        metrics.exact_match("tạp hóa", "tạp hóa") == 1,
        metrics.exact_match("tạp hóa", "hóa tạp") == 0,
        metrics.exact_match("", "") == 1,
        metrics.f1_token("a b", "b c") == 0.5,
        metrics.f1_token("x", "x") == 1.0,
        abs(metrics.f1_token("a a b", "a b b") - 2.0 / 3.0) < 1e-12,
        metrics.boundary_f1([1, 0, 1], [1, 1, 1]) == pytest.approx(0.8),
        metrics.boundary_f1([0, 0], [0, 0]) == 1.0,
        metrics.corpus_scores([("a", "a"), ("a", "b")]) == (0.5, 0.5),
    )
    rng = np.random.default_rng(105)
    vocab = ["an", "bo", "ca", "du", "ek", "fo"]
    start = time.perf_counter()
    sym_ok = em_ok = True
    for _ in range(10_000):
        p = " ".join(rng.choice(vocab, size=rng.integers(0, 5)))
        g = " ".join(rng.choice(vocab, size=rng.integers(0, 5)))
        f_pg = metrics.f1_token(p, g)
        sym_ok &= f_pg == metrics.f1_token(g, p)
        em_ok &= metrics.exact_match(p, g) == 0 or f_pg == 1.0
        if not (sym_ok and em_ok):
            break
    elapsed = time.perf_counter() - start
    report("criterion 5 (metric fidelity)",
           all(hand) and sym_ok and em_ok and elapsed < 5.0,
           f"9 hand values exact, 10k property pairs, {elapsed:.1f}s")


def test_criterion_6_synthetic_ablation(tmp_path):
    """Three arms x three seeds on the default config: the gated arm wins the
    per-seed majority on answer accuracy, and with link supervision the
    thresholded link probabilities recover word boundaries at F1 >= 0.90."""
    start = time.perf_counter()
    summary = harness.run_ablate({}, tmp_path, log=None)
    elapsed = time.perf_counter() - start
    sup = summary["supervised"]
    ok = (summary["gated_wins"] >= 2 and sup["boundary_f1"] >= 0.90
          and elapsed < 1800.0)
    per_seed = {r["seed"]: {} for r in summary["runs"]}
    for r in summary["runs"]:
        per_seed[r["seed"]][r["arm"]] = r["answer_acc"]
    detail = "; ".join(
        f"seed {s}: " + " ".join(f"{a}={v:.3f}" for a, v in sorted(arms.items()))
        for s, arms in sorted(per_seed.items()))
    report("criterion 6 (ablation ordering + boundary recovery)", ok,
           f"gated wins {summary['gated_wins']}/3, supervised boundary F1 "
           f"{sup['boundary_f1']:.3f}, {elapsed / 60:.1f} min | {detail}")


def test_criterion_7_checkpoint_roundtrip(tmp_path):
    from consattn.synth import SynthConfig, gen_synthetic

    start = time.perf_counter()
    train = tmp_path / "train.jsonl"
    val = tmp_path / "val.jsonl"
    dataio.write_dataset(gen_synthetic(SynthConfig(
        n_examples=40, vocab=20, n_words=12, d_fr=8, n_objects=1, seed=70)), train)
    dataio.write_dataset(gen_synthetic(SynthConfig(
        n_examples=16, vocab=20, n_words=12, d_fr=8, n_objects=1, seed=71)), val)
    values = dict(train_data=str(train), val_data=str(val), d_model=12, n_heads=2,
                  n_layers=1, lr=2e-3, batch_size=16, max_epochs=2, patience=1, seed=0)
    trained = harness.run_train(values, tmp_path / "run", log=None)

    from consattn.checkpoint import load, save
    ckpt = tmp_path / "run" / "model.ckpt"
    resaved = tmp_path / "resaved.ckpt"
    save(resaved, load(ckpt))
    bytes_identical = ckpt.read_bytes() == resaved.read_bytes()

    evaluated = harness.run_eval({"checkpoint": str(ckpt), "data": str(val)},
                                 tmp_path / "eval", log=None)
    metrics_equal = all(evaluated[k] == trained[k]
                        for k in ("em", "f1_token", "boundary_f1", "answer_acc"))
    elapsed = time.perf_counter() - start
    report("criterion 7 (checkpoint roundtrip)",
           bytes_identical and metrics_equal and elapsed < 10.0,
           f"save-load-save byte-identical, eval report reproduced, {elapsed:.1f}s")
