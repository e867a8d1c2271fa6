"""Command line interface.

Subcommands: gen, train, eval, ablate, gradcheck, selftest.  Every subcommand
accepts --config (flat key = value file), --out, and --seed overrides.
Exit codes: 0 success, 1 validation failure, 2 I/O error.
"""

import argparse
import sys

from . import dataio, harness
from .config import ConfigError, load_config
from .synth import SynthConfig, gen_synthetic


def _parser():
    parser = argparse.ArgumentParser(
        prog="consattn",
        description="constituent-gated attention: synthetic data, training, ablation")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "gen": "generate a synthetic dataset file",
        "train": "train a model from dataset files",
        "eval": "evaluate a checkpoint on a dataset",
        "ablate": "run the three gating arms on shared data",
        "gradcheck": "verify tape gradients against finite differences",
        "selftest": "run the quick self-check battery",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output path (file for gen, directory otherwise)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "train":
            p.add_argument("--resume", help="trainer.ckpt to continue from")
    return parser


def _load(args, schema):
    values = load_config(args.config, schema) if args.config else {}
    if args.seed is not None:
        values["seed"] = args.seed
    return values


def _run(args):
    if args.command == "gen":
        values = _load(args, harness.SYNTH_SCHEMA)
        defaults = {k: getattr(SynthConfig(), k) for k in harness.SYNTH_SCHEMA}
        values = harness.with_defaults(values, defaults)
        out = args.out or "dataset.jsonl"
        ds = gen_synthetic(SynthConfig(**values))
        dataio.write_dataset(ds, out)
        print(f"wrote {len(ds.examples)} examples to {out}")
        return 0
    if args.command == "train":
        if not args.config:
            raise ConfigError("train needs --config with train_data and val_data")
        values = _load(args, harness.TRAIN_SCHEMA)
        report = harness.run_train(values, args.out or "runs/train", resume=args.resume)
        print(f"answer_acc {report['answer_acc']:.4f} after {report['epochs']} epochs")
        return 0
    if args.command == "eval":
        if not args.config:
            raise ConfigError("eval needs --config with checkpoint and data")
        values = _load(args, harness.EVAL_SCHEMA)
        harness.run_eval(values, args.out or "runs/eval")
        return 0
    if args.command == "ablate":
        values = _load(args, harness.ABLATE_SCHEMA)
        if args.seed is not None:
            values.pop("seed", None)
            values["seeds"] = (args.seed,)
        harness.run_ablate(values, args.out or "runs/ablate")
        return 0
    if args.command == "gradcheck":
        values = _load(args, harness.GRADCHECK_SCHEMA)
        report = harness.run_gradcheck(values, out_dir=args.out)
        return 0 if report["pass"] else 1
    if args.command == "selftest":
        return 0 if harness.run_selftest() else 1
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, ValueError, FloatingPointError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
