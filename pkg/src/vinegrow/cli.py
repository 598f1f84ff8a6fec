"""Command-line interface: ``vinegrow {fit,ccc-test,benchmark,alpha-sweep,count,simulate}``.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ccc import CccConfig, ccc_test
from .errors import VineError
from .io import ccc_result_dict, format_table, load_model, load_sample, save_model
from .selection import METHODS, SelectionConfig, ccc_diagnostics, fit, vine_loglik_aic
from .simulation import StudyScenario, alpha_sweep, run_study, sample_from_vine, sample_vine_spec
from .structure import count_structures

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    env = os.environ.get("VINEGROW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"VINEGROW_THREADS must be an integer, got {env!r}") from None
    return 1


def _families(text):
    if text is None:
        return None
    return tuple(f.strip() for f in text.split(",") if f.strip())


def _column(sample, selector: str) -> int:
    if selector in sample.labels:
        return sample.labels.index(selector)
    try:
        j = int(selector) - 1
    except ValueError:
        raise UsageError(f"unknown column {selector!r}") from None
    if not 0 <= j < sample.d:
        raise UsageError(f"column index {selector} out of range 1..{sample.d}")
    return j


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _selection_config(args) -> SelectionConfig:
    kwargs = dict(method=args.method, alpha=args.alpha, r_transform=args.r,
                  indep_test=args.indep_test, level=args.level, seed=args.seed,
                  threads=_threads(args), ccc=CccConfig(split_seed=args.seed or 0, level=args.level))
    fams = _families(args.families)
    if fams:
        kwargs["family_set"] = fams
    return SelectionConfig(**kwargs)


# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    try:
        cfg = _selection_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sample = load_sample(args.data, pit=args.pit)
    vine = fit(sample, cfg)
    meta = {"alpha": cfg.alpha, "seed": args.seed, "r_transform": cfg.r_transform,
            "families": [f.value for f in cfg.family_set], "indep_test": cfg.indep_test,
            "level": cfg.level, "labels": sample.labels, "pit": bool(args.pit), "n": sample.n}
    if "root_order" in vine.info:
        meta["root_order"] = [int(v) + 1 for v in vine.info["root_order"]]
    if args.out:
        save_model(args.out, vine, meta)
    rejected = vine.ccc_rejections(cfg.level)
    if not args.quiet:
        print(vine.summary())
        print(f"loglik {vine.loglik:.6f}  AIC {vine.aic:.6f}  npars {vine.npars}")
        print(f"conditional edges with CCC p < {cfg.level}: {rejected} of {len(vine.ccc)}")
    return 0


def cmd_ccc(args) -> int:
    sample = load_sample(args.data, pit=args.pit)
    cfg = CccConfig(split_seed=args.seed or 0, level=args.level)
    if args.model:
        vine = load_model(args.model)
        if vine.d != sample.d:
            raise UsageError(f"model has dimension {vine.d}, data has {sample.d} columns")
        ll, aic = vine_loglik_aic(vine, sample)
        res = ccc_diagnostics(vine, sample, SelectionConfig(ccc=cfg, threads=_threads(args)))
        edges = [{"edge": e.label(), **ccc_result_dict(r, args.level)} for e, r in res.items()]
        doc = {"loglik": ll, "aic": aic, "edges": edges,
               "rejected": sum(1 for r in res.values() if r.p_value < args.level)}
    else:
        if args.u is None or args.v is None or not args.cond:
            raise UsageError("ccc-test needs --u, --v and --cond (or --model)")
        j, k = _column(sample, args.u), _column(sample, args.v)
        cond = [_column(sample, c) for c in args.cond.split(",")]
        res = ccc_test(sample.data[:, j], sample.data[:, k], sample.data[:, cond], cfg)
        doc = ccc_result_dict(res, args.level)
    _emit(json.dumps(doc, indent=1) + "\n", args.out)
    return 0


def _scenario(args, R) -> StudyScenario:
    kwargs = dict(d=args.d, n=args.n, R=R, alpha=args.alpha, seed=args.seed,
                  sign=args.sign, indep_test=args.indep_test, workers=_threads(args))
    fams = _families(args.families)
    if fams:
        kwargs["families"] = fams
    if getattr(args, "methods", None):
        kwargs["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    try:
        return StudyScenario(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_benchmark(args) -> int:
    scenario = _scenario(args, args.reps)
    report = run_study(scenario)
    summary = report.summary()
    summary["replications"] = report.rows
    text = json.dumps(summary, indent=1) + "\n"
    _emit(text, args.out)
    if args.table:
        row = report.table_row()
        with open(args.table, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
            w.writeheader()
            w.writerow(row)
    if args.out:
        for m, s in summary["methods"].items():
            print(f"{m:10s} better-or-equal {s['better_or_equal_pct']:6.1f}%  "
                  f"equal {s['equal_pct']:6.1f}%  mean AIC {s['mean_aic']:.2f}  "
                  f"mean time {s['mean_seconds']:.3f}s")
        print(f"failed replications: {summary['failed']}")
    return 0


def cmd_sweep(args) -> int:
    scenario = _scenario(args, args.reps)
    alphas = [float(a) for a in args.alphas.split(",")] if args.alphas else None
    res = alpha_sweep(scenario, alphas)
    lines = ["alpha,mean_aic"] + [f"{a!r},{m!r}" for a, m in zip(res["alpha"], res["mean_aic"])]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_count(args) -> int:
    try:
        print(count_structures(args.d, args.kind))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return 0


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    fams = _families(args.families)
    kwargs = {"families": fams} if fams else {}
    try:
        spec = sample_vine_spec(args.d, rng, positive=args.sign == "positive", **kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sample = sample_from_vine(spec, args.n, rng)
    _emit(format_table(sample.data, [f"V{j + 1}" for j in range(args.d)]), args.out)
    if args.model_out:
        from .selection import FittedVine

        truth = FittedVine(spec.structure, spec.copulas, 0.0, "truth")
        truth.loglik = vine_loglik_aic(truth, sample)[0]
        save_model(args.model_out, truth, {"seed": args.seed, "n": args.n})
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vinegrow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=None):
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: $VINEGROW_THREADS or 1)")

    f = sub.add_parser("fit", help="select and fit a vine copula")
    f.add_argument("data", help="CSV file with header row")
    f.add_argument("--method", default="dissmann",
                   choices=[m.replace("_", "-") for m in METHODS] + ["alg2_fast"])
    f.add_argument("--alpha", type=float, default=0.6)
    f.add_argument("--r", default="rank", choices=["rank", "identity", "log", "logarithm"])
    f.add_argument("--indep-test", action="store_true")
    f.add_argument("--level", type=float, default=0.05)
    f.add_argument("--families", default=None, help="comma list, e.g. gaussian,t,clayton")
    f.add_argument("--pit", action="store_true", help="rank-transform raw data first")
    f.add_argument("--out", default=None, help="model JSON path")
    f.add_argument("--quiet", action="store_true")
    common(f)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("ccc-test", help="constant conditional correlation test")
    c.add_argument("data")
    c.add_argument("--u", help="first column (1-based index or header name)")
    c.add_argument("--v", help="second column")
    c.add_argument("--cond", help="comma list of conditioning columns")
    c.add_argument("--model", help="re-diagnose every conditional edge of a model file")
    c.add_argument("--level", type=float, default=0.05)
    c.add_argument("--pit", action="store_true")
    c.add_argument("--out", default=None)
    common(c)
    c.set_defaults(func=cmd_ccc)

    def study_args(sp):
        sp.add_argument("--d", type=int, default=5)
        sp.add_argument("--n", type=int, default=1000)
        sp.add_argument("--reps", type=int, default=20)
        sp.add_argument("--alpha", type=float, default=0.6)
        sp.add_argument("--families", default=None)
        sp.add_argument("--sign", choices=["mixed", "positive"], default="mixed")
        sp.add_argument("--indep-test", action="store_true")
        sp.add_argument("--out", default=None)
        common(sp, seed_default=42)

    b = sub.add_parser("benchmark", help="Monte-Carlo comparison against Dissmann")
    study_args(b)
    b.add_argument("--methods", default="dissmann,alg1,alg2,alg2-fast")
    b.add_argument("--table", default=None, help="CSV with better-or-equal (equal) percentages")
    b.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("alpha-sweep", help="mean alg2 AIC over a grid of alpha values (CSV)")
    study_args(s)
    s.add_argument("--alphas", default=None, help="comma list (default 0,0.1,...,1)")
    s.set_defaults(func=cmd_sweep)

    n = sub.add_parser("count", help="number of vine structures")
    n.add_argument("--d", type=int, required=True)
    n.add_argument("--kind", default="rvine", choices=["rvine", "cvine", "natural_order_matrices"])
    n.set_defaults(func=cmd_count)

    m = sub.add_parser("simulate", help="draw a random vine and sample from it (CSV)")
    m.add_argument("--d", type=int, default=4)
    m.add_argument("--n", type=int, default=500)
    m.add_argument("--families", default=None)
    m.add_argument("--sign", choices=["mixed", "positive"], default="mixed")
    m.add_argument("--out", default=None)
    m.add_argument("--model-out", default=None, help="write the true vine as a model file")
    common(m, seed_default=0)
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"vinegrow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VineError as exc:
        print(f"vinegrow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code in (EXIT_DATA, EXIT_NUMERIC) else EXIT_NUMERIC
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"vinegrow: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
