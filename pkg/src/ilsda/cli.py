"""Command-line front end.

``ilsda run`` fits a model on a pair of feature files and writes a metrics
report; ``ilsda synth`` writes the rotated-Gaussians fixture files.

Exit codes: 0 success, 2 usage, 3 input, 4 configuration, 5 training,
6 output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .experiment import ConfigError, run_experiment, write_outputs
from .io import FeatureFileError, load_features, save_features
from .optim import MODES, SLACK_METRICS, OptimizerConfig
from .pipeline import PAIR_MODES, StageError, TrainConfig
from .synthetic import rotated_gaussians

EXIT_INPUT, EXIT_CONFIG, EXIT_TRAIN, EXIT_OUTPUT = 3, 4, 5, 6

# keys accepted in a --spec file, mapped to argparse destinations
SPEC_KEYS = {
    "source": "source",
    "target": "target",
    "labeled_target": "labeled_target",
    "mode": "mode",
    "labeled_per_class": "labeled_per_class",
    "dim": "dim",
    "lambda": "lam",
    "beta": "beta",
    "optimizer": "optimizer",
    "max_iters": "max_iters",
    "seed": "seed",
    "slack_metric": "slack_metric",
}

log = logging.getLogger("ilsda")


class CliError(Exception):
    def __init__(self, stage, message, code):
        super().__init__(message)
        self.stage = stage
        self.code = code


def _beta(text):
    if text == "auto":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("beta must be 'auto' or a number") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("beta must be positive")
    return value


def _lambdas(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ilsda", description="Invariant latent space domain adaptation."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="fit, classify the target and write a report")
    run.add_argument("--spec", help="JSON file with default values for the options below")
    run.add_argument("--source", help="labeled source feature file")
    run.add_argument("--target", help="target feature file (labels, if any, are withheld)")
    run.add_argument("--labeled-target", help="extra labeled target rows (semi mode)")
    run.add_argument("--mode", choices=PAIR_MODES)
    run.add_argument("--labeled-per-class", type=int, metavar="K")
    run.add_argument("--dim", type=int, metavar="P", help="latent dimension (default 20)")
    run.add_argument("--lambda", dest="lam", type=float, help="statistical loss weight (default 1)")
    run.add_argument("--lambda-sweep", type=_lambdas, metavar="L1,L2,...",
                     help="run once per value, writing to OUT/lambda_<value>/")
    run.add_argument("--beta", type=_beta, help="'auto' (default) or a positive number")
    run.add_argument("--optimizer", choices=MODES)
    run.add_argument("--max-iters", type=int)
    run.add_argument("--slack-metric", choices=SLACK_METRICS,
                     help="metric weight of the slack factor (default mean)")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--export-model", metavar="PATH", help="write the fitted model here")
    run.add_argument("--trace", action="store_true", help="write trace.jsonl")

    synth = sub.add_parser("synth", help="write the rotated-Gaussians fixture")
    synth.add_argument("--out", required=True)
    synth.add_argument("--n-per-class", type=int, default=100)
    synth.add_argument("--classes", type=int, default=2)
    synth.add_argument("--source-dim", type=int, default=10)
    synth.add_argument("--target-dim", type=int)
    synth.add_argument("--angle", type=float, default=30.0)
    synth.add_argument("--shift", type=float, default=3.0)
    synth.add_argument("--seed", type=int, default=7)
    return parser


def _apply_spec(args):
    defaults = {
        "mode": "unsupervised",
        "dim": 20,
        "lam": 1.0,
        "beta": "auto",
        "optimizer": "product",
        "max_iters": 500,
        "seed": 0,
        "slack_metric": "mean",
    }
    if args.spec:
        try:
            with open(args.spec, encoding="utf-8") as fh:
                spec = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("load", f"cannot read spec file: {exc}", EXIT_INPUT) from exc
        unknown = set(spec) - set(SPEC_KEYS)
        if unknown:
            raise CliError("config", f"unknown spec keys: {sorted(unknown)}", EXIT_CONFIG)
        base = os.path.dirname(os.path.abspath(args.spec))
        for key, value in spec.items():
            if key in ("source", "target", "labeled_target") and value is not None:
                value = os.path.join(base, value)
            if key == "beta" and value != "auto":
                value = float(value)
            defaults[SPEC_KEYS[key]] = value
    for dest, value in defaults.items():
        if getattr(args, dest, None) is None:
            setattr(args, dest, value)
    if not args.source or not args.target:
        raise CliError("config", "--source and --target are required", EXIT_CONFIG)


def _train_config(args, lam):
    try:
        opt = OptimizerConfig(
            mode=args.optimizer,
            max_iters=args.max_iters,
            slack_metric=args.slack_metric,
            seed=args.seed,
        )
        return TrainConfig(
            p=args.dim, lam=lam, beta=args.beta, mode=args.mode, optimizer=opt, seed=args.seed
        )
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc), EXIT_CONFIG) from exc


def _load(path, domain):
    try:
        return load_features(path, domain)
    except FileNotFoundError:
        raise CliError("load", f"no such file: {path}", EXIT_INPUT) from None
    except (OSError, FeatureFileError, ValueError) as exc:
        raise CliError("load", str(exc), EXIT_INPUT) from exc


def cmd_run(args):
    _apply_spec(args)
    source = _load(args.source, "source")
    target = _load(args.target, "target")
    labeled = _load(args.labeled_target, "target") if args.labeled_target else None
    if source.labels is None or not source.labeled_mask.all():
        raise CliError("load", f"{args.source}: every source row needs a label", EXIT_INPUT)

    sweep = args.lambda_sweep or [args.lam]
    results = []
    for lam in sweep:
        config = _train_config(args, lam)
        log.info("fitting with lambda=%g", lam)
        try:
            report, model, trace, pred = run_experiment(
                source, target, config, args.labeled_per_class, labeled
            )
        except ConfigError as exc:
            raise CliError("config", str(exc), EXIT_CONFIG) from exc
        except StageError as exc:
            raise CliError(exc.stage, exc.message, EXIT_TRAIN) from exc
        results.append((lam, report, model, trace, pred))

    try:
        for lam, report, model, trace, pred in results:
            out = args.out if args.lambda_sweep is None else os.path.join(args.out, f"lambda_{lam:g}")
            model_path = args.export_model
            if model_path and args.lambda_sweep is not None:
                root, ext = os.path.splitext(model_path)
                model_path = f"{root}_lambda_{lam:g}{ext}"
            write_outputs(out, report, trace if args.trace else None, pred, model, model_path)
        if args.lambda_sweep is not None:
            summary = {
                f"{lam:g}": {
                    "accuracy": r["accuracy"],
                    "statistical_loss": r["final_loss"]["statistical"],
                    "total_loss": r["final_loss"]["total"],
                }
                for lam, r, *_ in results
            }
            with open(os.path.join(args.out, "sweep.json"), "w", encoding="utf-8") as fh:
                json.dump(summary, fh, indent=2, sort_keys=True)
                fh.write("\n")
    except OSError as exc:
        raise CliError("write", str(exc), EXIT_OUTPUT) from exc

    for lam, report, *_ in results:
        acc = report["accuracy"]
        shown = "n/a" if acc is None else f"{acc:.4f}"
        print(f"lambda={lam:g} accuracy={shown} iterations={report['iterations']}")
    return 0


def cmd_synth(args):
    try:
        source, target = rotated_gaussians(
            n_per_class=args.n_per_class,
            n_classes=args.classes,
            source_dim=args.source_dim,
            target_dim=args.target_dim,
            angle=args.angle,
            shift=args.shift,
            seed=args.seed,
        )
    except ValueError as exc:
        raise CliError("config", str(exc), EXIT_CONFIG) from exc
    try:
        os.makedirs(args.out, exist_ok=True)
        save_features(source, os.path.join(args.out, "source.csv"))
        save_features(target, os.path.join(args.out, "target.csv"))
    except OSError as exc:
        raise CliError("write", str(exc), EXIT_OUTPUT) from exc
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_synth(args)
    except CliError as exc:
        print(f"ilsda: error [{exc.stage}]: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
