"""Run orchestration: training with early stopping, evaluation, the
three-arm ablation, gradient checking, and a quick self-test battery.

Every runner takes a flat dict of config values (see the *_SCHEMA tables)
and an output directory, and writes a report that records the exact config
and seed needed to reproduce the run.
"""

import hashlib
import os
import time
from dataclasses import replace

import numpy as np

from . import dataio
from .checkpoint import load as load_checkpoint, save as save_checkpoint
from .config import ConfigError
from .constituent import constituent_scores
from .gradcheck import finite_diff_grad, max_rel_err
from .metrics import boundary_f1, corpus_scores, exact_match, f1_token
from .model import Model, ModelConfig, train_step
from .optim import Adam
from .synth import SynthConfig, SyntheticExample, gen_synthetic
from .tensor import Graph, ParamStore, Tensor, exp, mul, sum_all

GRAD_TOL = 1e-4

SYNTH_SCHEMA = {
    "n_examples": "int",
    "vocab": "int",
    "n_words": "int",
    "word_len_probs": "float_list",
    "max_words_per_line": "int",
    "line_len_weights": "float_list",
    "confuser_prob": "float",
    "damage_prob": "float",
    "damage_adversarial": "float",
    "sibling_frac": "float",
    "n_objects": "int",
    "d_fr": "int",
    "rho": "float",
    "answer_scheme": "str",
    "obj_label_vocab": "int",
    "inventory_seed": "int",
    "seed": "int",
}

_MODEL_SCHEMA = {
    "d_model": "int",
    "n_heads": "int",
    "n_layers": "int",
    "dropout": "float",
    "use_attn": "bool",
    "use_spans": "bool",
    "scale_mode": "str",
    "ln_token_term": "bool",
    "span_layer_mix": "str",
    "pool": "str",
    "use_object_labels": "bool",
}

_FIT_SCHEMA = {
    "lr": "float",
    "batch_size": "int",
    "max_epochs": "int",
    "patience": "int",
    "boundary_weight": "float",
    "seed": "int",
}

TRAIN_SCHEMA = {"train_data": "str", "val_data": "str", **_MODEL_SCHEMA, **_FIT_SCHEMA}

TRAIN_DEFAULTS = {
    "d_model": 32,
    "n_heads": 2,
    "n_layers": 2,
    "dropout": 0.0,
    "use_attn": True,
    "use_spans": True,
    "scale_mode": "model",
    "ln_token_term": False,
    "span_layer_mix": "residual",
    "pool": "all",
    "use_object_labels": False,
    "lr": 1e-4,
    "batch_size": 32,
    "max_epochs": 20,
    "patience": 3,
    "boundary_weight": 0.5,
    "seed": 0,
}

ABLATE_SCHEMA = {
    **{k: v for k, v in SYNTH_SCHEMA.items() if k not in ("n_examples", "seed")},
    "n_train": "int",
    "n_val": "int",
    "n_test": "int",
    **{k: v for k, v in _MODEL_SCHEMA.items() if k not in ("use_attn", "use_spans")},
    **{k: v for k, v in _FIT_SCHEMA.items() if k != "seed"},
    "seeds": "int_list",
    "supervised_check": "bool",
}

EVAL_SCHEMA = {
    "checkpoint": "str",
    "data": "str",
    "boundary_threshold": "float",
    "seed": "int",
}

GRADCHECK_SCHEMA = {
    "d_model": "int",
    "n_heads": "int",
    "n_layers": "int",
    "d_fr": "int",
    "vocab": "int",
    "question_vocab": "int",
    "n_answers": "int",
    "n_ocr": "int",
    "n_objects": "int",
    "n_question": "int",
    "boundary_weight": "float",
    "step": "float",
    "long_span": "int",
    "seed": "int",
}

GRADCHECK_DEFAULTS = {
    "d_model": 8,
    "n_heads": 2,
    "n_layers": 1,
    "d_fr": 8,
    "vocab": 10,
    "question_vocab": 12,
    "n_answers": 6,
    "n_ocr": 6,
    "n_objects": 2,
    "n_question": 3,
    "boundary_weight": 0.5,
    "step": 1e-6,
    "long_span": 32,
    "seed": 0,
}

ARMS = (
    ("attn-only", True, False),
    ("spans-only", False, True),
    ("attn+spans", True, True),
)


def with_defaults(values, defaults, required=()):
    missing = [key for key in required if key not in values]
    if missing:
        raise ConfigError(f"missing required config keys: {missing}")
    merged = dict(defaults)
    merged.update(values)
    return merged


def dataset_signature(ds):
    """Hash of everything a checkpoint must agree with to evaluate on ds."""
    payload = dataio.dumps({
        "inventory": [list(w) for w in ds.inventory],
        "vocab": ds.config.vocab,
        "d_fr": ds.config.d_fr,
        "obj_label_vocab": ds.config.obj_label_vocab,
    })
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def model_config_from(values, ds):
    if values["use_object_labels"] and not ds.config.obj_label_vocab:
        raise ConfigError("use_object_labels is set but the dataset carries no object labels")
    return ModelConfig(
        d_model=values["d_model"],
        n_heads=values["n_heads"],
        n_layers=values["n_layers"],
        d_fr=ds.config.d_fr,
        token_vocab=ds.config.vocab,
        question_vocab=ds.question_vocab,
        n_answers=ds.n_answers,
        obj_label_vocab=ds.config.obj_label_vocab if values["use_object_labels"] else 0,
        dropout=values["dropout"],
        use_attn=values["use_attn"],
        use_spans=values["use_spans"],
        scale_mode=values["scale_mode"],
        ln_token_term=values["ln_token_term"],
        span_layer_mix=values["span_layer_mix"],
        pool=values["pool"],
        seed=values["seed"],
    )


def arm_name(use_attn, use_spans):
    for name, a, s in ARMS:
        if (a, s) == (use_attn, use_spans):
            return name
    raise ValueError(f"no arm for flags ({use_attn}, {use_spans})")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(model, ds, boundary_threshold=0.5):
    """Corpus metrics plus per-example prediction records."""
    records = []
    pairs = []
    pooled_pred = []
    pooled_gold = []
    correct = 0
    for ex in ds.examples:
        out = model.forward(ex)
        pred = int(np.argmax(out.answer_logits.data))
        correct += pred == ex.answer
        predicted = ds.word_string(pred)
        gold = ds.word_string(ex.answer)
        records.append({"id": ex.example_id, "predicted": predicted, "gold": gold})
        pairs.append((predicted, gold))
        pooled_pred.extend(bool(p >= boundary_threshold) for p in out.link_probs.data)
        pooled_gold.extend(bool(b) for b in ex.boundaries)
    em, f1 = corpus_scores(pairs)
    report = {
        "n": len(ds.examples),
        "em": em,
        "f1_token": f1,
        "boundary_f1": boundary_f1(pooled_pred, pooled_gold),
        "answer_acc": correct / len(ds.examples),
    }
    return report, records


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _fresh_state():
    return {"epoch": 0, "best_val": -1.0, "bad_evals": 0, "epoch_losses": [],
            "best_params": None, "wall_s": 0.0}


def fit(model, optimizer, train_ds, val_ds, values, state=None, log=None):
    """Epoch loop with early stopping on validation answer accuracy.

    ``state`` carries progress across a resume; the loop halts once the
    number of consecutive non-improving evaluations exceeds ``patience``
    (patience 0 stops at the first one).  Returns the state with the
    best-so-far parameter snapshot.
    """
    if state is None:
        state = _fresh_state()
    n = len(train_ds.examples)
    batch_size = values["batch_size"]
    start = time.perf_counter()
    while state["epoch"] < values["max_epochs"]:
        epoch = state["epoch"]
        order = np.random.default_rng([values["seed"], epoch]).permutation(n)
        rng = np.random.default_rng([values["seed"], epoch, 1])
        losses = []
        for lo in range(0, n, batch_size):
            batch = [train_ds.examples[i] for i in order[lo:lo + batch_size]]
            losses.append(train_step(model, optimizer, batch,
                                     boundary_weight=values["boundary_weight"], rng=rng))
        state["epoch_losses"].append(float(np.mean(losses)))
        state["epoch"] = epoch + 1
        val_report, _ = evaluate(model, val_ds)
        acc = val_report["answer_acc"]
        if log:
            log(f"epoch {epoch + 1}: train loss {state['epoch_losses'][-1]:.4f}, "
                f"val acc {acc:.4f}")
        if acc > state["best_val"]:
            state["best_val"] = acc
            state["bad_evals"] = 0
            state["best_params"] = model.params.state_dict()
        else:
            state["bad_evals"] += 1
            if state["bad_evals"] > values["patience"]:
                break
    if state["best_params"] is None:
        state["best_params"] = model.params.state_dict()
    state["wall_s"] += time.perf_counter() - start
    return state


def _trainer_arrays(model, optimizer, state):
    arrays = {f"param.{k}": v for k, v in model.params.state_dict().items()}
    arrays.update(optimizer.state_arrays())
    arrays.update({f"best.param.{k}": v for k, v in state["best_params"].items()})
    return arrays


def _strip_prefix(arrays, prefix):
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def run_train(values, out_dir, resume=None, log=print):
    """Train per config; writes model.ckpt (best), trainer.ckpt (resume),
    meta.json, and report.json under out_dir."""
    values = with_defaults(values, TRAIN_DEFAULTS, required=("train_data", "val_data"))
    train_ds = dataio.read_dataset(values["train_data"])
    val_ds = dataio.read_dataset(values["val_data"])
    signature = dataset_signature(train_ds)
    if dataset_signature(val_ds) != signature:
        raise ConfigError("train and validation datasets disagree on inventory or dimensions")
    mcfg = model_config_from(values, train_ds)
    model = Model(mcfg)
    optimizer = Adam(model.params, lr=values["lr"])
    state = None
    if resume is not None:
        arrays = load_checkpoint(resume)
        meta = dataio.read_report(os.path.join(os.path.dirname(resume), "meta.json"))
        if meta["model_config"] != mcfg.to_dict():
            raise ConfigError("resume checkpoint was trained with a different model config")
        if meta["data_signature"] != signature:
            raise ConfigError("resume checkpoint was trained on different data")
        model.params.load_state_dict(_strip_prefix(arrays, "param."))
        optimizer.load_state_arrays(arrays)
        state = _fresh_state()
        state.update(meta["progress"])
        state["best_params"] = _strip_prefix(arrays, "best.param.")

    state = fit(model, optimizer, train_ds, val_ds, values, state=state, log=log)

    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "trainer.ckpt"),
                    _trainer_arrays(model, optimizer, state))
    save_checkpoint(os.path.join(out_dir, "model.ckpt"),
                    {f"param.{k}": v for k, v in state["best_params"].items()})

    model.params.load_state_dict(state["best_params"])
    val_report, _ = evaluate(model, val_ds)
    report = {
        "arm": arm_name(values["use_attn"], values["use_spans"]),
        "seed": values["seed"],
        "em": val_report["em"],
        "f1_token": val_report["f1_token"],
        "boundary_f1": val_report["boundary_f1"],
        "answer_acc": val_report["answer_acc"],
        "epochs": state["epoch"],
        "wall_s": state["wall_s"],
        "epoch_losses": state["epoch_losses"],
        "config": {k: v for k, v in values.items()},
    }
    meta = {
        "model_config": mcfg.to_dict(),
        "data_signature": signature,
        "progress": {k: state[k] for k in ("epoch", "best_val", "bad_evals",
                                           "epoch_losses", "wall_s")},
    }
    dataio.write_report(meta, os.path.join(out_dir, "meta.json"))
    dataio.write_report(report, os.path.join(out_dir, "report.json"))
    return report


# ---------------------------------------------------------------------------
# evaluation runner
# ---------------------------------------------------------------------------

def run_eval(values, out_dir, log=print):
    values = with_defaults(values, {"boundary_threshold": 0.5, "seed": 0},
                           required=("checkpoint", "data"))
    ds = dataio.read_dataset(values["data"])
    meta = dataio.read_report(os.path.join(os.path.dirname(values["checkpoint"]), "meta.json"))
    if meta["data_signature"] != dataset_signature(ds):
        raise ConfigError("checkpoint/dataset mismatch: config hash differs")
    mcfg = ModelConfig.from_dict(meta["model_config"])
    model = Model(mcfg)
    arrays = load_checkpoint(values["checkpoint"])
    model.params.load_state_dict(_strip_prefix(arrays, "param."))
    report, records = evaluate(model, ds, boundary_threshold=values["boundary_threshold"])
    report = {
        "arm": arm_name(mcfg.use_attn, mcfg.use_spans),
        "seed": mcfg.seed,
        **report,
        "config": {k: v for k, v in values.items()},
    }
    os.makedirs(out_dir, exist_ok=True)
    dataio.write_predictions(records, os.path.join(out_dir, "predictions.jsonl"))
    dataio.write_report(report, os.path.join(out_dir, "report.json"))
    if log:
        log(f"em {report['em']:.4f}  f1_token {report['f1_token']:.4f}  "
            f"boundary_f1 {report['boundary_f1']:.4f}  answer_acc {report['answer_acc']:.4f}")
    return report


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

# The ablation defaults differ from the plain-training defaults where the
# three-arm comparison needs it: question-row pooling for a probe-conditioned
# readout, a faster learning rate suited to the desk-scale model, and no
# boundary supervision (the unsupervised regime is the one the gate ablation
# speaks about; a supervised run covers link-probability quality separately).
ABLATE_DEFAULTS = {
    **{k: getattr(SynthConfig(), k) for k in SYNTH_SCHEMA if k not in ("n_examples", "seed")},
    "n_train": 5000,
    "n_val": 500,
    "n_test": 1000,
    **{k: TRAIN_DEFAULTS[k] for k in _MODEL_SCHEMA if k not in ("use_attn", "use_spans")},
    **{k: TRAIN_DEFAULTS[k] for k in _FIT_SCHEMA if k != "seed"},
    "d_model": 24,
    "pool": "question",
    "lr": 2e-3,
    "max_epochs": 14,
    "patience": 3,
    "boundary_weight": 0.0,
    "seeds": (11, 12, 13),
    "supervised_check": True,
}


def _ablate_splits(values, seed):
    base = SynthConfig(
        n_examples=values["n_train"],
        vocab=values["vocab"],
        n_words=values["n_words"],
        word_len_probs=values["word_len_probs"],
        max_words_per_line=values["max_words_per_line"],
        line_len_weights=values["line_len_weights"],
        confuser_prob=values["confuser_prob"],
        damage_prob=values["damage_prob"],
        damage_adversarial=values["damage_adversarial"],
        sibling_frac=values["sibling_frac"],
        n_objects=values["n_objects"],
        d_fr=values["d_fr"],
        rho=values["rho"],
        answer_scheme=values["answer_scheme"],
        obj_label_vocab=values["obj_label_vocab"],
        inventory_seed=values["inventory_seed"],
        seed=seed * 1000 + 1,
    )
    train_ds = gen_synthetic(base)
    val_ds = gen_synthetic(replace(base, n_examples=values["n_val"], seed=seed * 1000 + 2))
    test_ds = gen_synthetic(replace(base, n_examples=values["n_test"], seed=seed * 1000 + 3))
    return train_ds, val_ds, test_ds


def format_ablation_table(rows):
    """Rows of (arm, metrics dict) -> fixed-width comparison text."""
    cols = ("f1_token", "em", "boundary_f1", "answer_acc")
    head = "arm          " + "  ".join(f"{c:>12s}" for c in cols)
    lines = [head]
    for arm, metrics in rows:
        lines.append(f"{arm:12s} " + "  ".join(f"{metrics[c]:12.4f}" for c in cols))
    return "\n".join(lines) + "\n"


def _one_ablate_run(values, arm, use_attn, use_spans, seed, splits, out_dir, log,
                    boundary_weight=None):
    train_ds, val_ds, test_ds = splits
    run_values = dict(values)
    run_values.update(use_attn=use_attn, use_spans=use_spans, seed=seed)
    if boundary_weight is not None:
        run_values["boundary_weight"] = boundary_weight
    mcfg = model_config_from(run_values, train_ds)
    model = Model(mcfg)
    optimizer = Adam(model.params, lr=values["lr"])
    state = fit(model, optimizer, train_ds, val_ds, run_values)
    model.params.load_state_dict(state["best_params"])
    test_report, _ = evaluate(model, test_ds)
    report = {
        "arm": arm,
        "seed": seed,
        "em": test_report["em"],
        "f1_token": test_report["f1_token"],
        "boundary_f1": test_report["boundary_f1"],
        "answer_acc": test_report["answer_acc"],
        "epochs": state["epoch"],
        "wall_s": state["wall_s"],
        "epoch_losses": state["epoch_losses"],
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in run_values.items()},
    }
    dataio.write_report(report, os.path.join(out_dir, f"report_{arm}_{seed}.json"))
    if log:
        log(f"seed {seed} {arm}: answer_acc {report['answer_acc']:.4f}, "
            f"boundary_f1 {report['boundary_f1']:.4f}, epochs {report['epochs']}")
    return report


def run_ablate(values, out_dir, log=print):
    """Train the three gating arms on identical data per seed; report all.

    With supervised_check set (the default) one extra gated run with link
    supervision on is appended, recording how well thresholded link
    probabilities recover the gold word boundaries.
    """
    values = with_defaults(values, ABLATE_DEFAULTS)
    seeds = list(values["seeds"])
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    os.makedirs(out_dir, exist_ok=True)
    runs = []
    for seed in seeds:
        splits = _ablate_splits(values, seed)
        for arm, use_attn, use_spans in ARMS:
            runs.append(_one_ablate_run(values, arm, use_attn, use_spans, seed,
                                        splits, out_dir, log))

    supervised = None
    if values["supervised_check"]:
        splits = _ablate_splits(values, seeds[0])
        supervised = _one_ablate_run(values, "attn+spans-supervised", True, True,
                                     seeds[0], splits, out_dir, log,
                                     boundary_weight=0.5)

    means = []
    for arm, _, _ in ARMS:
        arm_runs = [r for r in runs if r["arm"] == arm]
        means.append((arm, {k: float(np.mean([r[k] for r in arm_runs]))
                            for k in ("em", "f1_token", "boundary_f1", "answer_acc")}))
    wins = 0
    for seed in seeds:
        by_arm = {r["arm"]: r for r in runs if r["seed"] == seed}
        if by_arm["attn+spans"]["answer_acc"] >= by_arm["attn-only"]["answer_acc"] and \
                by_arm["attn+spans"]["answer_acc"] >= by_arm["spans-only"]["answer_acc"]:
            wins += 1
    summary = {
        "seeds": seeds,
        "runs": runs,
        "means": {arm: m for arm, m in means},
        "gated_wins": wins,
        "gated_majority": wins * 2 > len(seeds),
        "supervised": supervised,
    }
    table = format_ablation_table(means)
    with open(os.path.join(out_dir, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    dataio.write_report(summary, os.path.join(out_dir, "summary.json"))
    if log:
        log(table)
    return summary


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def make_random_example(rng, n_ocr=6, n_objects=2, n_question=3, d_fr=8,
                        vocab=10, question_vocab=12, n_answers=6):
    """A shape-valid random example for gradient and unit tests."""

    def box(_):
        x = np.sort(rng.uniform(0.0, 1.0, size=2))
        y = np.sort(rng.uniform(0.0, 1.0, size=2))
        return [x[0], y[0], x[1], y[1]]

    return SyntheticExample(
        example_id=0,
        ocr_appearance=rng.normal(size=(n_ocr, d_fr)),
        ocr_boxes=np.array([box(i) for i in range(n_ocr)]).reshape(n_ocr, 4),
        ocr_tokens=rng.integers(0, vocab, size=n_ocr),
        obj_appearance=rng.normal(size=(n_objects, d_fr)),
        obj_boxes=np.array([box(i) for i in range(n_objects)]).reshape(n_objects, 4),
        question_tokens=rng.integers(0, question_vocab, size=n_question),
        boundaries=rng.random(size=max(n_ocr - 1, 0)) < 0.5,
        answer=int(rng.integers(0, n_answers)),
        word_ids=np.zeros(0, dtype=np.int64),
    )


def gradcheck_model(model, example, boundary_weight=0.5, h=1e-6, tol=GRAD_TOL,
                    grad_transform=None):
    """Compare tape gradients with central differences, per parameter group.

    ``grad_transform(name, grad) -> grad`` is a fault-injection hook used by
    tests to corrupt one group and confirm the check catches exactly it.
    """
    model.params.zero_grad()
    with Graph() as g:
        out = model.forward(example)
        loss = model.loss(out, example.answer, example.boundaries, boundary_weight)
        g.backward(loss)

    def f(store):
        out = model.forward(example)
        return model.loss(out, example.answer, example.boundaries, boundary_weight).item()

    numeric = finite_diff_grad(f, model.params, h)
    groups = {}
    for name, t in model.params.items():
        analytic = t.grad
        if grad_transform is not None:
            analytic = grad_transform(name, analytic)
        err = max_rel_err(analytic, numeric[name])
        group = name.split(".")[0]
        groups[group] = max(groups.get(group, 0.0), err)
    return {g: {"max_rel_err": err, "pass": err < tol} for g, err in sorted(groups.items())}


def long_span_gradcheck(d_model, span=32, h=1e-6, tol=GRAD_TOL, seed=0):
    """Gradient of a loss that reads the full-span constituent score.

    At a small init the span score is a product of ~span link probabilities
    near 0.5, i.e. around 0.5^span, so the loss is lifted by 2^(span-1) to
    make the finite-difference comparison well conditioned; scaling by a
    constant leaves relative gradient structure untouched.  Passing requires
    both agreement with finite differences and a usably large lifted
    gradient: gradient still flows to the bilinear weight across the span.
    """
    rng = np.random.default_rng(seed)
    features = Tensor(rng.normal(size=(span, d_model)))
    store = ParamStore()
    store.add("link.w", 0.02 * rng.normal(size=(d_model, d_model)))
    pick = np.zeros((span, span))
    pick[0, span - 1] = 1.0
    lift = 2.0 ** (span - 1)

    def f(store):
        scores = constituent_scores(features, store["link.w"])
        return lift * sum_all(mul(exp(scores.log_spans), Tensor(pick))).item()

    store.zero_grad()
    with Graph() as g:
        scores = constituent_scores(features, store["link.w"])
        loss = sum_all(mul(exp(scores.log_spans), Tensor(pick)))
        g.backward(loss)
    analytic = lift * store["link.w"].grad
    numeric = finite_diff_grad(f, store, h)["link.w"]
    err = max_rel_err(analytic, numeric)
    lifted_max = float(np.abs(analytic).max())
    raw_max = float(np.abs(store["link.w"].grad).max())
    return {"max_rel_err": err, "pass": err < tol and raw_max > 0.0 and lifted_max > 1e-2,
            "grad_max_abs": raw_max, "lifted_grad_max_abs": lifted_max, "span": span}


def run_gradcheck(values, out_dir=None, log=print, grad_transform=None):
    values = with_defaults(values, GRADCHECK_DEFAULTS)
    rng = np.random.default_rng(values["seed"])
    cfg = ModelConfig(
        d_model=values["d_model"], n_heads=values["n_heads"], n_layers=values["n_layers"],
        d_fr=values["d_fr"], token_vocab=values["vocab"],
        question_vocab=values["question_vocab"], n_answers=values["n_answers"],
        seed=values["seed"])
    model = Model(cfg)
    example = make_random_example(
        rng, n_ocr=values["n_ocr"], n_objects=values["n_objects"],
        n_question=values["n_question"], d_fr=values["d_fr"], vocab=values["vocab"],
        question_vocab=values["question_vocab"], n_answers=values["n_answers"])
    groups = gradcheck_model(model, example, boundary_weight=values["boundary_weight"],
                             h=values["step"], grad_transform=grad_transform)
    long_span = long_span_gradcheck(values["d_model"], span=values["long_span"],
                                    h=values["step"], seed=values["seed"])
    ok = all(v["pass"] for v in groups.values()) and long_span["pass"]
    report = {"groups": groups, "long_span": long_span, "pass": ok,
              "tolerance": GRAD_TOL, "config": dict(values)}
    if log:
        for name, res in groups.items():
            log(f"{'PASS' if res['pass'] else 'FAIL'} {name:12s} "
                f"max_rel_err {res['max_rel_err']:.3e}")
        log(f"{'PASS' if long_span['pass'] else 'FAIL'} long-span    "
            f"max_rel_err {long_span['max_rel_err']:.3e} "
            f"(|grad|max {long_span['grad_max_abs']:.3e})")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        dataio.write_report(report, os.path.join(out_dir, "gradcheck.json"))
    return report


# ---------------------------------------------------------------------------
# self test
# ---------------------------------------------------------------------------

def run_selftest(log=print):
    """Fast end-to-end battery; returns True when every check passes."""
    import tempfile

    from . import metrics
    from .tensor import elementwise, softmax_rows

    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except Exception as exc:  # noqa: BLE001 - report, don't crash the battery
            checks.append((name, False, f"{type(exc).__name__}: {exc}"))

    def inverse_pair():
        v = elementwise("exp", elementwise("log", Tensor([0.25]))).data[0]
        assert abs(v - 0.25) < 1e-15, v

    def stable_softmax():
        row = softmax_rows(Tensor([[1000.0, 0.0]])).data[0]
        assert np.isfinite(row).all() and abs(row.sum() - 1.0) < 1e-12

    def span_product_equivalence():
        rng = np.random.default_rng(3)
        probs = rng.uniform(1e-9, 1.0, size=31)
        from .constituent import span_log_matrix
        got = np.exp(span_log_matrix(Tensor(np.log(probs))).data)
        n = 32
        for i in range(n):
            running = 1.0
            for j in range(i + 1, n):
                running *= probs[j - 1]
                assert abs(got[i, j] - running) < 1e-10

    def metric_values():
        assert metrics.f1_token("a b", "b c") == 0.5
        assert metrics.exact_match("x y", "y x") == 0
        assert abs(metrics.boundary_f1([1, 0, 1], [1, 1, 1]) - 0.8) < 1e-12

    def checkpoint_roundtrip():
        from .checkpoint import load, save
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "t.ckpt")
            arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(2.5)}
            save(path, arrays)
            again = load(path)
            save(path + "2", again)
            with open(path, "rb") as f1, open(path + "2", "rb") as f2:
                assert f1.read() == f2.read()

    def tiny_gradcheck():
        res = long_span_gradcheck(8, span=16)
        assert res["pass"], res

    check("elementwise inverse pair", inverse_pair)
    check("softmax stability", stable_softmax)
    check("span product equivalence", span_product_equivalence)
    check("metric hand values", metric_values)
    check("checkpoint roundtrip", checkpoint_roundtrip)
    check("long-span gradient", tiny_gradcheck)

    ok = True
    for name, passed, msg in checks:
        ok &= passed
        if log:
            log(f"{'PASS' if passed else 'FAIL'} {name}" + (f": {msg}" if msg else ""))
    return ok
