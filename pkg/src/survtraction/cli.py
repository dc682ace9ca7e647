"""Command-line entry point.

Subcommands::

    survtraction synth     --out DIR [--n 500] [--signal 2.0] [--seed 0]
    survtraction train     --cohort MANIFEST | --config FILE  [--out DIR] [overrides]
    survtraction eval      RUN_DIR
    survtraction km-plot   FOLD_CSV --out FILE.svg
    survtraction gradcheck [--seed 0]

Exit codes: 0 success, 2 invalid input, 3 numeric fault, 4 gradcheck breach.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from .cohort import CohortError
from .config import ConfigError, RunConfig, apply_ablations, load_config, override
from .harness import GRADCHECK_THRESHOLD, evaluate_dir, gradcheck, read_fold_csv, run_cv, stratify
from .plot import emit_km_svg
from .synth import DEFAULT_SIGNAL, SynthSpec, write_synthetic
from .tensor import ContractViolation, NumericFault

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_BREACH = 0, 2, 3, 4

log = logging.getLogger("survtraction")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--cohort", help="cohort manifest CSV (overrides the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--lambda", dest="lam", type=float, help="MI loss weight")
    p.add_argument("--epochs", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--ablation", help="comma-separated ablation flags")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any other config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survtraction", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--signal", type=float, default=DEFAULT_SIGNAL)
    p.add_argument("--censor-rate", type=float, default=0.3)
    p.add_argument("--k-patches", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="k-fold cross-validated training")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="recompute metrics from a finished run directory")
    p.add_argument("run_dir")

    p = sub.add_parser("km-plot", help="KM plot of a median risk split from a fold CSV")
    p.add_argument("fold_csv")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for name in ("cohort", "seed", "lam", "epochs", "folds", "lr", "batch_size"):
        value = getattr(args, name)
        if value is not None:
            cfg = dataclasses.replace(cfg, **{name: value})
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg = override(cfg, key.strip(), value)
    if args.ablation:
        cfg = apply_ablations(cfg, args.ablation)
    cfg.validate()
    return cfg


def cmd_synth(args) -> int:
    spec = SynthSpec(n=args.n, d=args.d, signal_strength=args.signal, censor_rate=args.censor_rate,
                     k_patches=args.k_patches, seed=args.seed)
    manifest, cohort, _ = write_synthetic(spec, args.out)
    print(f"wrote {len(cohort)} samples to {manifest} "
          f"(censored fraction {cohort.censorship.mean():.3f})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    t0 = time.perf_counter()
    report = run_cv(cfg, out_dir=args.out)
    for f in report.folds:
        p = "n/a" if f.logrank is None else f"{f.logrank.p_value:.3g}"
        print(f"fold {f.fold}: c-index {f.c_index:.4f}  log-rank p {p}")
    print(f"c-index {report.mean:.4f} +/- {report.std:.4f}  ({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    print(json.dumps(evaluate_dir(args.run_dir), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_km_plot(args) -> int:
    _, risks, times, cens = read_fold_csv(args.fold_csv)
    high, low, lr = stratify(risks, times, cens)
    if high is None:
        raise CohortError("median split left one group empty")
    emit_km_svg({"high": high, "low": low}, None if lr is None else lr.p_value, args.out,
                title=args.title)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    err = gradcheck(seed=args.seed, corrupt=args.corrupt)
    ok = err < GRADCHECK_THRESHOLD
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAIL'}, "
          f"threshold {GRADCHECK_THRESHOLD:g}, {time.perf_counter() - t0:.1f} s)")
    return EXIT_OK if ok else EXIT_BREACH


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "km-plot": cmd_km_plot,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CohortError, ContractViolation, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
