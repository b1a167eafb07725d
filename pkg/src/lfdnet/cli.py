"""Command-line pipeline: gen, render, split, train, eval, boost, predict.

Exit codes: 0 success, 2 configuration error, 3 missing input artifact,
4 runtime failure.  Flags override values from the JSON config file (see
config.py for the schema and the environment override of its path).
"""

import argparse
import dataclasses
import os
import sys

from .config import load_config, resolve_families
from .errors import ConfigError, MissingArtifactError
from . import pipeline


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _replace(cfg, **changes):
    """dataclasses.replace, skipping None values, ConfigError on bad ones."""
    changes = {k: v for k, v in changes.items() if v is not None}
    try:
        return dataclasses.replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _jobs(args) -> int:
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return args.jobs
    return os.cpu_count() or 1


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    families = cfg.families
    if args.families is not None:
        try:
            families = resolve_families(args.families)
        except ConfigError as exc:
            raise ConfigError(f"--families: {exc}") from exc
    per_class = args.per_class if args.per_class is not None else cfg.per_class
    if per_class < 2:
        raise ConfigError("--per-class must be at least 2")
    seed = args.seed if args.seed is not None else cfg.gen_seed
    pipeline.run_gen(args.out, families, per_class, seed, log=_log)
    return 0


def cmd_render(args) -> int:
    cfg = load_config(args.config)
    render_cfg = _replace(cfg.render, resolution=args.resolution, fill_fraction=args.fill)
    _, failures = pipeline.run_render(
        args.corpus, args.out, render_cfg, jobs=_jobs(args), log=_log
    )
    return 4 if failures else 0


def cmd_split(args) -> int:
    cfg = load_config(args.config)
    fraction = args.train_fraction if args.train_fraction is not None else cfg.train_fraction
    if not 0.0 < fraction < 1.0:
        raise ConfigError("--train-fraction must be in (0, 1)")
    seed = args.seed if args.seed is not None else cfg.split_seed
    pipeline.run_split(args.images, fraction, seed, log=_log)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    weighting = None if args.class_weights is None else args.class_weights == "on"
    train_cfg = _replace(
        cfg.train,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        class_weighting=weighting,
    )
    pipeline.run_train(
        args.images, args.out, cfg.arch_overrides, train_cfg, jobs=_jobs(args), log=_log
    )
    return 0


def cmd_eval(args) -> int:
    pipeline.run_eval(args.images, args.checkpoint, args.out, jobs=_jobs(args), log=_log)
    return 0


def cmd_boost(args) -> int:
    cfg = load_config(args.config)
    boost_cfg = _replace(
        cfg.boost,
        rounds=args.rounds,
        learning_rate=args.learning_rate,
        max_depth=args.max_depth,
        reg_lambda=args.reg_lambda,
    )
    pipeline.run_boost(args.eval_dir, args.out, boost_cfg, log=_log)
    return 0


def cmd_predict(args) -> int:
    result = pipeline.run_predict(args.checkpoint, args.mesh, boost_path=args.boost)
    print(f"prediction: {result.vote_label}")
    if result.boosted_label is not None:
        print(f"boosted prediction: {result.boosted_label}")
    print("top-3:")
    for name, prob in result.top3:
        print(f"  {name} {prob:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfdnet",
        description="Silhouette-based mesh classification pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file path")

    p = sub.add_parser("gen", help="generate the synthetic mesh corpus")
    common(p)
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--families", help="family count or comma-separated names")
    p.add_argument("--per-class", type=int, help="models per family")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("render", help="render 20 silhouette views per model")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus directory (with manifest)")
    p.add_argument("--out", required=True, help="image output directory")
    p.add_argument("--resolution", type=int)
    p.add_argument("--fill", type=float, help="fraction of the frame the model spans")
    p.add_argument("--jobs", type=int, help="worker threads (default: logical cores)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("split", help="assign stratified train/test tags")
    common(p)
    p.add_argument("--images", required=True, help="rendered images directory")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the view classifier")
    common(p)
    p.add_argument("--images", required=True, help="rendered images directory")
    p.add_argument("--out", required=True, help="run directory for checkpoints/metrics")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--class-weights", choices=("on", "off"))
    p.add_argument("--jobs", type=int, help="worker threads for image loading")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; dump probabilities")
    common(p)
    p.add_argument("--images", required=True, help="rendered images directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="evaluation output directory")
    p.add_argument("--jobs", type=int, help="worker threads (default: logical cores)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("boost", help="fit boosted trees on the probability dump")
    common(p)
    p.add_argument("--eval-dir", required=True, help="directory with probability dumps")
    p.add_argument("--out", required=True, help="boost output directory")
    p.add_argument("--rounds", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--reg-lambda", type=float)
    p.set_defaults(func=cmd_boost)

    p = sub.add_parser("predict", help="classify one mesh file")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--boost", help="optional boosted-tree model file")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"error: {exc}")
        return 2
    except MissingArtifactError as exc:
        _log(f"error: {exc}")
        return 3
    except Exception as exc:
        _log(f"error: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
