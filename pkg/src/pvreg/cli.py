"""Command-line entry point: ``pvreg <command> [options]``.

Exit codes: 0 success, 2 usage/config/ingestion error, 3 training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import OverfitCriterion, run_cell, run_matrix
from .config import ConfigError, RunConfig
from .data import DataError, describe, load_csv, load_schema, plan_splits, save_csv, save_schema, synthesize
from .models import save_checkpoint
from .report import json_ready, load_matrix, render, report_to_dict

EXIT_USAGE = 2
EXIT_TRAINING = 3


class UsageError(Exception):
    pass


def _ratio(text: str) -> float:
    try:
        r = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < r <= 0.5:
        raise argparse.ArgumentTypeError(f"ratio must lie in (0, 0.5], got {r}")
    return r


def _config(args) -> RunConfig:
    return RunConfig.load(getattr(args, "config", None), seed=getattr(args, "seed", None),
                          workers=getattr(args, "workers", None), out=getattr(args, "out", None),
                          tau=getattr(args, "tau", None))


def cmd_stats(args) -> int:
    if args.data:
        if not args.schema:
            raise UsageError("--schema is required with --data")
        frame = load_csv(args.data, load_schema(args.schema))
    else:
        frame = _config(args).load_frame()
    stats = describe(frame)
    cols = ("mean", "median", "std", "skewness", "kurtosis")
    width = max(len(n) for n in stats)
    print(f"{'column':<{width}}  " + "  ".join(f"{c:>12}" for c in cols))
    for name, s in stats.items():
        print(f"{name:<{width}}  " + "  ".join(f"{getattr(s, c):>12.4f}" for c in cols))
    if frame.dropped:
        print(f"({frame.dropped} malformed rows dropped)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "stats.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(("column",) + cols)
            for name, s in stats.items():
                w.writerow([name] + [repr(getattr(s, c)) for c in cols])
    return 0


def cmd_split_plan(args) -> int:
    plan = plan_splits(args.n, args.ratio)
    print(str(plan))
    return 0


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    frame = synthesize(seed, args.n, args.locations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(frame, out / "synth.csv")
    save_schema(frame.schema, out / "schema.yaml")
    print(f"wrote {frame.n} rows to {out / 'synth.csv'} and schema to {out / 'schema.yaml'}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    kind = args.model or cfg.kinds[0]
    regime = args.regime or cfg.regimes[0]
    ratio = args.ratio if args.ratio is not None else cfg.ratios[0]
    frame = cfg.load_frame()
    settings = cfg.settings()
    report, model, _, scaler = run_cell(frame, kind, regime, ratio, settings, cfg.seed, return_model=True)
    if not report.ok:
        if report.error.startswith("DataError"):
            raise DataError(report.error.partition(": ")[2])
        print(f"training failed: {report.error}", file=sys.stderr)
        return EXIT_TRAINING
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint()
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for rec in report.history.records:
            fh.write(json.dumps({"fingerprint": fp, **json_ready(rec.to_dict())}, sort_keys=True) + "\n")
    save_checkpoint(model, out / "checkpoint.npz")
    body = {"fingerprint": fp, "scaler": scaler.to_dict(), **report_to_dict(report)}
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(json_ready(body), sort_keys=True, indent=1, allow_nan=False) + "\n")
    t, e = report.train, report.test
    print(f"{report.kind.label} {report.regime.value} test {ratio:g}: epochs {len(report.history.records)}"
          f" (best {report.history.best_epoch}), train RMSE {t.rmse:.4f}, test RMSE {e.rmse:.4f},"
          f" RMSE_diff {report.diff.rmse_diff:+.4f}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    frame = cfg.load_frame()

    def progress(rep):
        status = "ok" if rep.ok else f"FAILED ({rep.error})"
        print(f"{rep.kind.value:>12} {rep.regime.value} {rep.ratio:g}: {status}", flush=True)

    matrix = run_matrix(cfg.kinds, cfg.regimes, cfg.ratios, frame, cfg.settings(), base_seed=cfg.seed,
                        workers=cfg.workers, fingerprint=cfg.fingerprint(), progress=progress)
    written = render(matrix, cfg.out)
    failed = sum(not r.ok for r in matrix.cells.values())
    print(f"{len(matrix.cells)} cells ({failed} failed); wrote {len(written)} files to {cfg.out}")
    return 0


def cmd_report(args) -> int:
    try:
        matrix = load_matrix(args.matrix)
    except (OSError, ValueError, KeyError) as e:
        raise UsageError(f"cannot read matrix {args.matrix}: {e}") from e
    crit = matrix.criterion
    if args.tau is not None:
        crit = OverfitCriterion(crit.mode, args.tau, crit.k, crit.eps)
    out = args.out or str(Path(args.matrix).parent)
    written = render(matrix, out, crit)
    print(f"wrote {len(written)} files to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pvreg", description="PV forecasting regularization benchmark")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="run configuration (YAML)")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("stats", help="descriptive statistics of a dataset")
    common(sp)
    sp.add_argument("--data", help="CSV dataset (synthetic data when omitted)")
    sp.add_argument("--schema", help="schema YAML for --data")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("split-plan", help="train/validation/test sizes for a row count")
    sp.add_argument("n", type=int)
    sp.add_argument("--ratio", type=_ratio, required=True)
    sp.set_defaults(func=cmd_split_plan)

    sp = sub.add_parser("synth", help="write the synthetic dataset and its schema")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n", type=int, default=21045)
    sp.add_argument("--locations", type=int, default=12)
    sp.add_argument("--out", default="synth")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train and evaluate one cell")
    common(sp)
    sp.add_argument("--model")
    sp.add_argument("--regime")
    sp.add_argument("--ratio", type=_ratio)
    sp.add_argument("--tau", type=float)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("bench", help="run the model x regime x ratio grid")
    common(sp)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--tau", type=float)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("report", help="re-render report files from matrix.json")
    sp.add_argument("matrix")
    sp.add_argument("--out")
    sp.add_argument("--tau", type=float)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DataError, FileNotFoundError, ValueError) as e:
        print(f"pvreg {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
