"""Command-line entry points: gen-data, train, eval, ablate.

Exit status is 0 on success, 1 for invalid input (bad flags, config,
taxonomy or corpus files, refused overwrites, checkpoint mismatches) and 2
for anything that goes wrong after the inputs were accepted.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, apply_overrides, load_config
from .data import CorpusError, SynthSpec, write_corpus
from .hierarchy import CORRUPTION_MODES, HierarchyError
from .runner import CheckpointMismatch, ablate_run, eval_run, train_run

log = logging.getLogger("hiadv")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
SEED_ENV = "HIADV_SEED"


class UsageError(ValueError):
    pass


def _parse_set(items: list[str]) -> dict:
    """``key=value`` pairs; values are parsed as JSON when possible."""
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects dotted.key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def effective_config(args) -> RunConfig:
    """Config file, then HIADV_SEED, then --set flags, then --out."""
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    overrides = {}
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            overrides["training.seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
    overrides.update(_parse_set(args.set))
    if getattr(args, "out", None):
        overrides["paths.output_dir"] = args.out
    return apply_overrides(cfg, overrides) if overrides else cfg


def cmd_gen_data(args) -> int:
    spec = SynthSpec(depth=args.depth, branch=args.branch, paths_min=args.paths_min,
                     paths_max=args.paths_max, tokens_per_label=args.tokens_per_label,
                     noise_vocab=args.noise_vocab, noise_fraction=args.noise_fraction,
                     n_train=args.train, n_dev=args.dev, n_test=args.test, seed=args.seed)
    spec.validate()
    paths = write_corpus(args.out, spec, force=args.force)
    n_nodes = (args.branch ** (args.depth + 1) - 1) // (args.branch - 1)
    print(f"wrote {paths['taxonomy']} ({n_nodes} nodes) and "
          f"{spec.n_train}/{spec.n_dev}/{spec.n_test} train/dev/test samples to {args.out}")
    return EXIT_OK


def _refuse_existing(out: Path, force: bool, marker: str) -> None:
    if (out / marker).exists() and not force:
        raise FileExistsError(f"{out / marker} exists (use --force to overwrite)")


def cmd_train(args) -> int:
    cfg = effective_config(args)
    out = Path(cfg.paths.output_dir)
    _refuse_existing(out, args.force, "curves.csv")
    res = train_run(cfg, out)
    rec = res.records[res.best_epoch - 1]
    print(f"best epoch {res.best_epoch}: dev micro-F1 {rec.dev_micro_f1:.4f}, "
          f"macro-F1 {rec.dev_macro_f1:.4f}; outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = eval_run(args.run, args.data, args.taxonomy, args.out)
    print(f"micro-F1 {report.micro_f1:.4f}, macro-F1 {report.macro_f1:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in CORRUPTION_MODES]
    if not modes or bad:
        raise UsageError(f"--modes must be a comma list drawn from {CORRUPTION_MODES}, got {args.modes!r}")
    cfg = effective_config(args)
    out = Path(cfg.paths.output_dir)
    _refuse_existing(out, args.force, "ablation.csv")
    rows = ablate_run(cfg, modes, out)
    for r in rows:
        print(f"{r['mode']:>8}  micro-F1 {r['dev_micro_f1']:.4f}  macro-F1 {r['dev_macro_f1']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hiadv", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic taxonomy and JSONL splits")
    d = SynthSpec()
    g.add_argument("--depth", type=int, default=d.depth)
    g.add_argument("--branch", type=int, default=d.branch)
    g.add_argument("--train", type=int, default=d.n_train)
    g.add_argument("--dev", type=int, default=d.n_dev)
    g.add_argument("--test", type=int, default=d.n_test)
    g.add_argument("--paths-min", type=int, default=d.paths_min)
    g.add_argument("--paths-max", type=int, default=d.paths_max)
    g.add_argument("--tokens-per-label", type=int, default=d.tokens_per_label)
    g.add_argument("--noise-vocab", type=int, default=d.noise_vocab)
    g.add_argument("--noise-fraction", type=float, default=d.noise_fraction)
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--out", default="data")
    g.add_argument("--force", action="store_true", help="overwrite existing files")
    g.set_defaults(func=cmd_gen_data)

    for name, func, helptext in (("train", cmd_train, "train one model"),
                                 ("ablate", cmd_ablate, "train once per local-hierarchy mode")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON run config (defaults apply to missing keys)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field, e.g. --set training.lambda_adv=0")
        p.add_argument("--out", help="output directory (overrides paths.output_dir)")
        p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
        if name == "ablate":
            p.add_argument("--modes", default=",".join(CORRUPTION_MODES),
                           help="comma-separated subset of full,partial,none,wrong")
        p.set_defaults(func=func)

    e = sub.add_parser("eval", help="score a corpus with a trained generator")
    e.add_argument("--run", required=True, help="run directory written by train")
    e.add_argument("--data", required=True, help="JSONL corpus to evaluate")
    e.add_argument("--taxonomy", help="taxonomy file (default: the one the run trained on)")
    e.add_argument("--out", help="output directory (default: RUN/eval)")
    e.set_defaults(func=cmd_eval)
    return ap


INVALID = (UsageError, ConfigError, HierarchyError, CorpusError, CheckpointMismatch,
           FileExistsError, FileNotFoundError, ValueError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INVALID as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
