"""Command-line interface.

    ratiotables fit-tables FILE [--model odds|ratio|conditional] ...
    ratiotables fit-survival FILE [--grid-step H] [--basis 100,200] ...
    ratiotables simulate SCENARIO [--replicates R] [--seed S] [--out PREFIX]

Fit commands print a JSON report.  Exit status is 0 on success, 1 for
unreadable input or bad options, and 2 when the fit itself fails.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .conditional import fit_conditional
from .errors import FitError, ParseError, RatioTablesError
from .io import SCHEMA_VERSION, dumps, fit_report, read_survival_csv, read_tables_csv
from .odds import OddsVariance, OddsWeight, fit_odds
from .ratio import RatioVariance, fit_ratio, logrank, score_test
from .simulation import bundled_scenarios, load_scenario, run
from .survival import (
    CensoringConvention,
    TimeBasis,
    TimeGrid,
    build_panel,
    discretize,
    fit_survival_odds,
    fit_survival_ratio,
    km_curve,
)

EXIT_OK, EXIT_INPUT, EXIT_FIT = 0, 1, 2


def _floats(text):
    text = (text or "").strip()
    if text in ("", "1", "constant"):
        return []
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParseError(f"expected comma-separated numbers, got {text!r}") from None


def _tests(ds, args):
    if not args.score_test:
        return {}
    out = {}
    st = score_test(ds)
    out["score_test"] = {"statistic": st.statistic, "df": st.df, "pvalue": st.pvalue, "score": st.score}
    if ds.p == 1:
        z, num, var = logrank(ds)
        out["score_test"]["z"] = st.z
        out["logrank"] = {"z": z, "numerator": num, "variance": var}
    return {"tests": out}


def _fit_tables(args):
    ds = read_tables_csv(args.file)
    if args.model == "odds":
        fit = fit_odds(ds, args.weight, robust=args.variance or "robust", model_based=args.model_variance or "robins")
    elif args.model == "ratio":
        fit = fit_ratio(ds, robust=RatioVariance.ROBUST_CORRECTED, model_based=args.model_variance or "model")
    else:
        fit = fit_conditional(ds)
    report = fit_report(fit, model=args.model, **_tests(ds, args))
    return report


def _fit_survival(args):
    data = read_survival_csv(args.file)
    if args.grid_step is not None or args.grid:
        if args.grid:
            grid = TimeGrid([0.0] + _floats(args.grid))
        else:
            grid = TimeGrid.regular(args.grid_step, float(np.max(data.time)))
        data = discretize(data, grid, args.convention, boundary=args.boundary)
    basis = TimeBasis(_floats(args.basis))
    panel = build_panel(data, basis, min_at_risk=args.min_at_risk)
    if args.model == "ratio":
        fit = fit_survival_ratio(panel)
    elif args.model == "odds":
        fit = fit_survival_odds(panel, args.weight)
    else:
        fit = fit_conditional(panel.dataset)
    km = {str(z): {"time": t, "survival": s} for z, (t, s) in km_curve(data).items()}
    return fit_report(fit, model=args.model, panel=panel.summary(), km_curves=km, **_tests(panel.dataset, args))


def _simulate(args):
    spec = load_scenario(args.scenario, replicates=args.replicates, seed=args.seed)
    summary = run(spec, workers=args.workers)
    header = ["estimator", "coefficient", "point", "sd", "bse", "rse", "n_ok", "failures"]
    rows = [[getattr(r, h) for h in header] for r in summary.rows]
    lines = [f"{spec.name}: {spec.replicates} replicates, seed {spec.seed}"]
    lines.append(f"{'':8s}{'coef':>5s}{'Point':>9s}{'SD':>9s}{'bSE':>9s}{'rSE':>9s}{'fail':>6s}")
    for r in summary.rows:
        rse = "NA" if not np.isfinite(r.rse) else f"{r.rse:.4f}"
        lines.append(f"{r.estimator:8s}{r.coefficient:5d}{r.point:9.4f}{r.sd:9.4f}{r.bse:9.4f}{rse:>9s}{r.failures:6d}")
    print("\n".join(lines))
    report = {
        "schema_version": SCHEMA_VERSION,
        "scenario": spec.name,
        "family": spec.family,
        "replicates": spec.replicates,
        "seed": spec.seed,
        "rows": [dict(zip(header, row)) for row in rows],
    }
    if args.out:
        prefix = Path(args.out)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        with open(prefix.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
        prefix.with_suffix(".json").write_text(dumps(report))
    return None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ratiotables", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_output(p):
        p.add_argument("-o", "--output", help="write the JSON report here instead of stdout")
        p.add_argument(
            "--score-test",
            action="store_true",
            help="add the score test of no group effect (and the log-rank z for one covariate)",
        )

    t = sub.add_parser("fit-tables", help="fit stratified 2x2 tables from a CSV file")
    t.add_argument("file", help="CSV with header stratum_id,n11,n12,n21,n22[,x1,...]")
    t.add_argument("--model", choices=["odds", "ratio", "conditional"], default="odds")
    t.add_argument("--weight", choices=[w.value for w in OddsWeight], default="wmh", help="odds model weights")
    t.add_argument(
        "--variance",
        choices=[OddsVariance.ROBUST_CORRECTED.value, OddsVariance.ROBUST_SIMPLE.value],
        help="model-robust component for the odds model (default robust)",
    )
    t.add_argument(
        "--model-variance",
        choices=[
            OddsVariance.MODEL_BASED_ROBINS.value,
            OddsVariance.MODEL_BASED_FLANDERS.value,
            RatioVariance.MODEL_BASED.value,
            RatioVariance.LEGACY_INVERSE_HESSIAN.value,
        ],
        help="model-based component: robins or flanders (odds), model or legacy (ratio)",
    )
    add_output(t)
    t.set_defaults(handler=_fit_tables)

    s = sub.add_parser("fit-survival", help="fit two-sample survival data from a CSV file")
    s.add_argument("file", help="CSV with header time,status,group")
    s.add_argument("--model", choices=["ratio", "odds", "conditional"], default="ratio")
    s.add_argument("--weight", choices=[w.value for w in OddsWeight], default="wmh")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--grid-step", type=float, help="discretize on 0, h, 2h, ...")
    g.add_argument("--grid", help="comma-separated grid points t1 < t2 < ... (t0 = 0 implied)")
    s.add_argument("--convention", choices=[c.value for c in CensoringConvention], default="late")
    s.add_argument(
        "--boundary",
        choices=["keep", "advance"],
        default="keep",
        help="censoring exactly at a grid point: keep it there, or advance it to the next grid point",
    )
    s.add_argument("--basis", default="", help="breakpoints b1,b2,... of x(t) = (1, 1{b1<t<=b2}, ..., 1{t>bK})")
    s.add_argument("--min-at-risk", type=int, default=1, help="stop tables once a group has fewer at risk")
    add_output(s)
    s.set_defaults(handler=_fit_survival)

    m = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    m.add_argument("scenario", help=f"INI file or bundled name ({', '.join(bundled_scenarios())})")
    m.add_argument("--replicates", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--workers", type=int, default=1)
    m.add_argument("--out", help="write PREFIX.csv and PREFIX.json")
    m.set_defaults(handler=_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = args.handler(args)
    except FitError as exc:
        print(f"fit failed ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_FIT
    except (RatioTablesError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if report is not None:
        text = dumps(report)
        if getattr(args, "output", None):
            Path(args.output).write_text(text)
        else:
            sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
