"""Command-line front door: ingestion flags, recipes and report files.

Exit codes: 0 success, 1 analysis/data error, 2 usage error.  Diagnostics go
to stderr; results go to files under --out-dir plus a stdout summary.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .design import Dataset, build_design, dataset_to_csv, load_table
from .errors import MixedrankError
from .formula import parse_formula
from .inference import DEFAULT_ALPHA
from .lmm import fit_lmm
from .recipes import (anytime_analysis, autorank_replacement,
                      cluster_benchmarks, run_sanity_workflow)
from .report import (emit_json, emit_report, render_cd_diagram,
                     SCHEMA_VERSION)
from .synth import SCENARIOS, GeneratorConfig, generate
from . import design as design_mod
from .lmm import ML, REML


def _add_common(p: argparse.ArgumentParser, needs_input: bool = True):
    if needs_input:
        p.add_argument("--input", required=True, help="CSV file to analyse")
        p.add_argument("--col", action="append", default=[],
                       metavar="ROLE=COLUMN",
                       help="map a CSV column to a role (loss, algorithm, "
                            "benchmark, seed, budget, prior, "
                            "metafeature:<name>, ignore); may repeat. "
                            "Without any --col, header names matching role "
                            "names are mapped automatically.")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--format", choices=("text", "json", "svg", "all"),
                   default="text")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedrank",
        description="Mixed-effects significance analysis of benchmark runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compare", help="autorank-style algorithm comparison")
    _add_common(p)
    p.add_argument("--formula", help="override the model formula")
    p.add_argument("--baseline", choices=("friedman",),
                   help="also run the rank-based baseline")

    p = sub.add_parser("sanity", help="seed / benchmark / budget checks")
    _add_common(p)

    p = sub.add_parser("cluster", help="metafeature clustering of benchmarks")
    _add_common(p)
    p.add_argument("--metafeature", required=True)
    p.add_argument("--pair", required=True, metavar="A,B",
                   help="the two algorithms to compare")

    p = sub.add_parser("anytime", help="compressed anytime comparison")
    _add_common(p)
    p.add_argument("--budget-window", required=True, metavar="LO:HI")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--n-algorithms", type=int, default=3)
    p.add_argument("--n-seeds", type=int, default=50)
    p.add_argument("--n-benchmarks", type=int, default=3)
    p.add_argument("--n-budget-levels", type=int, default=10)
    p.add_argument("--base-mean", type=float, default=2.5)
    p.add_argument("--base-variance", type=float, default=0.55)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("fit", help="fit one model and dump it as JSON")
    _add_common(p)
    p.add_argument("--formula", required=True)
    p.add_argument("--method", choices=(ML, REML), default=ML)
    return parser


def _schema_from_args(col_args: list[str], input_path: str) -> dict[str, str]:
    if col_args:
        schema: dict[str, str] = {}
        for item in col_args:
            if "=" not in item:
                raise MixedrankError(
                    f"--col expects ROLE=COLUMN, got '{item}'")
            role, column = item.split("=", 1)
            schema[column] = role
        return schema
    # auto-map header names that already match role names
    header = Path(input_path).read_text(encoding="utf-8").splitlines()[0]
    names = [h.strip() for h in header.split(",")]
    known = set(design_mod.NUMERIC_ROLES) | set(design_mod.CATEGORICAL_ROLES)
    return {name: name for name in names if name in known}


def _load(args) -> Dataset:
    path = Path(args.input)
    if not path.exists():
        raise MixedrankError(f"input file not found: {path}")
    schema = _schema_from_args(args.col, args.input)
    data = load_table(path, schema)
    if data.n_dropped:
        print(f"warning: dropped {data.n_dropped} rows with missing or "
              f"unparseable values", file=sys.stderr)
    return data


def _write(out_dir: Path, name: str, content: bytes) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_bytes(content)
    return path


def _emit_all(payloads: list[tuple[str, object]], args,
              diagrams: list[tuple[str, bytes]] = ()) -> None:
    out_dir = Path(args.out_dir)
    written: list[Path] = []
    for name, payload in payloads:
        if args.format in ("text", "all"):
            written.append(_write(out_dir, f"{name}.txt",
                                  emit_report(payload, "text")))
        if args.format in ("json", "all"):
            written.append(_write(out_dir, f"{name}.json",
                                  emit_report(payload, "json")))
    if args.format in ("svg", "all"):
        for name, svg in diagrams:
            written.append(_write(out_dir, f"{name}.svg", svg))
    for name, payload in payloads:
        sys.stdout.write(payload.to_text())
    for path in written:
        print(f"wrote {path}", file=sys.stderr)


def _cmd_compare(args) -> int:
    data = _load(args)
    formula = args.formula
    report = autorank_replacement(data, formula=formula, alpha=args.alpha,
                                  baseline=args.baseline == "friedman")
    diagrams = [("compare_cd", render_cd_diagram(report.pairwise, report.emm))]
    if report.baseline is not None:
        diagrams.append(("baseline_cd",
                         render_cd_diagram(report.baseline.pairwise)))
    _emit_all([("compare", report)], args, diagrams)
    return 0


def _cmd_sanity(args) -> int:
    data = _load(args)
    verdicts = run_sanity_workflow(data, alpha=args.alpha)
    payloads = [(v.recipe, v) for v in verdicts]
    _emit_all(payloads, args)
    return 0


def _cmd_cluster(args) -> int:
    data = _load(args)
    pair = tuple(p.strip() for p in args.pair.split(","))
    if len(pair) != 2:
        raise MixedrankError(f"--pair expects two names, got '{args.pair}'")
    verdict = cluster_benchmarks(data, args.metafeature, pair,
                                 alpha=args.alpha)
    _emit_all([("cluster", verdict)], args)
    return 0


def _cmd_anytime(args) -> int:
    data = _load(args)
    raw = args.budget_window
    try:
        lo, hi = (float(v) for v in raw.split(":", 1))
    except ValueError:
        raise MixedrankError(
            f"--budget-window expects LO:HI numbers, got '{raw}'") from None
    report = anytime_analysis(data, (lo, hi), alpha=args.alpha)
    diagrams = [("anytime_cd", render_cd_diagram(report.pairwise, report.emm))]
    _emit_all([("anytime", report)], args, diagrams)
    return 0


def _cmd_synth(args) -> int:
    cfg = GeneratorConfig(
        rng_seed=args.rng_seed, n_algorithms=args.n_algorithms,
        n_seeds=args.n_seeds, n_benchmarks=args.n_benchmarks,
        n_budget_levels=args.n_budget_levels, base_mean=args.base_mean,
        base_variance=args.base_variance, scenario=args.scenario)
    data = generate(cfg)
    path = _write(Path(args.out_dir), f"{args.scenario}.csv",
                  dataset_to_csv(data))
    print(f"wrote {path} ({data.n_rows} rows)")
    return 0


def _cmd_fit(args) -> int:
    data = _load(args)
    ast = parse_formula(args.formula)
    dm = build_design(ast, data)
    fit = fit_lmm(dm, method=args.method)
    payload = {
        "schema": SCHEMA_VERSION,
        "kind": "fit",
        "formula": fit.formula,
        "method": fit.method,
        "n_obs": fit.n_obs,
        "n_params": fit.n_params,
        "loglik": fit.loglik,
        "deviance": fit.deviance,
        "sigma2": fit.sigma2,
        "converged": fit.converged,
        "singular": fit.singular,
        "beta": {lab: float(b) for lab, b in zip(fit.x_labels, fit.beta)},
        "theta": [float(t) for t in fit.theta],
        "vcov_beta": [[float(v) for v in row] for row in fit.vcov_beta],
        "random_effects": [{
            "term": s.term,
            "group": s.group,
            "variances": s.variances,
            "covariance": [[float(v) for v in row] for row in s.covariance],
            "blups": {
                lvl: [float(b) for b in blup]
                for lvl, blup in zip(block.group_levels, blups)},
        } for s, blups, block in zip(fit.ranef_variances, fit.blups,
                                     dm.random_blocks)],
    }
    out = emit_json(payload)
    _write(Path(args.out_dir), "fit.json", out)
    sys.stdout.write(out.decode("utf-8"))
    return 0


_COMMANDS = {
    "compare": _cmd_compare,
    "sanity": _cmd_sanity,
    "cluster": _cmd_cluster,
    "anytime": _cmd_anytime,
    "synth": _cmd_synth,
    "fit": _cmd_fit,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except MixedrankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
