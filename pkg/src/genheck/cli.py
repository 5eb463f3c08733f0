"""Command-line front end.

Every subcommand reads a CSV with a header row, builds the four designs from
column names, and writes machine-readable output (JSON for fits and tests,
CSV for vectors) to ``--out`` or stdout. The effective configuration is
echoed to stderr as a ``# config:`` line.

Exit codes: 0 success, 1 input error, 2 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from .diagnostics import cook_distance, envelope, residuals_csv, score_residuals
from .errors import GenHeckError, NonConvergence, ParseError, SchemaError
from .estimate import FitOptions, FitResult, fit, fit_classic, summary
from .infer import test_zero
from .model import Dataset
from .simulate import make_scenario, monte_carlo, normal_stream, scenario, scenario_designs, size_power

log = logging.getLogger("genheck")

EQUATIONS = {"beta": "outcome", "gamma": "selection", "lambda": "dispersion", "kappa": "correlation"}
_BLOCK_OF = {v: k for k, v in EQUATIONS.items()}
MISSING = {"", "NA"}


@dataclass
class ModelConfig:
    """Column-name description of the four regression structures."""

    outcome: str
    selection: str
    outcome_covariates: list = field(default_factory=list)
    selection_covariates: list = field(default_factory=list)
    dispersion_covariates: list = field(default_factory=list)
    correlation_covariates: list = field(default_factory=list)
    intercepts: dict = field(default_factory=lambda: {e: True for e in EQUATIONS.values()})

    def __post_init__(self):
        self.intercepts = {e: bool(self.intercepts.get(e, True)) for e in EQUATIONS.values()}

    def covariates(self, equation: str) -> list:
        return getattr(self, f"{equation}_covariates")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise SchemaError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


def _parse_float(text, row, col):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"row {row}, column {col!r}: cannot parse {text!r} as a number") from None


def ingest(csv_path, config: ModelConfig) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    Rows are numbered from 1 after the header. Empty fields and ``NA`` are
    missing; the outcome may be missing only where the selection indicator
    is 0. Intercept columns are prepended where configured.

    Raises
    ------
    SchemaError
        Empty file or a configured column absent from the header.
    ParseError
        Non-numeric content (row and column named).
    ValueError
        Non-binary selection value or missing outcome on a selected row.
    """
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{csv_path}: empty file, header row required") from None
        rows = list(reader)
    needed = [config.outcome, config.selection]
    for eq in EQUATIONS.values():
        needed += config.covariates(eq)
    missing = [c for c in dict.fromkeys(needed) if c not in header]
    if missing:
        raise SchemaError(f"columns not in header: {missing}")
    pos = {h: j for j, h in enumerate(header)}

    n = len(rows)
    y = np.full(n, np.nan)
    u = np.zeros(n, dtype=int)
    cov_names = list(dict.fromkeys(c for eq in EQUATIONS.values() for c in config.covariates(eq)))
    cols = {c: np.empty(n) for c in cov_names}
    for i, rec in enumerate(rows):
        row = i + 1
        if len(rec) != len(header):
            raise ParseError(f"row {row}: expected {len(header)} fields, found {len(rec)}")
        s_text = rec[pos[config.selection]].strip()
        if s_text in MISSING:
            raise ValueError(f"row {row}: selection indicator {config.selection!r} is missing")
        s_val = _parse_float(s_text, row, config.selection)
        if s_val not in (0.0, 1.0):
            raise ValueError(f"row {row}: selection indicator must be 0 or 1, got {s_text!r}")
        u[i] = int(s_val)
        y_text = rec[pos[config.outcome]].strip()
        if y_text in MISSING:
            if u[i] == 1:
                raise ValueError(f"row {row}: outcome {config.outcome!r} missing on a selected row")
        elif u[i] == 1:
            y[i] = _parse_float(y_text, row, config.outcome)
        for c in cov_names:
            text = rec[pos[c]].strip()
            if text in MISSING:
                raise ParseError(f"row {row}, column {c!r}: missing covariate value")
            cols[c][i] = _parse_float(text, row, c)

    mats, names = {}, {}
    for block, eq in EQUATIONS.items():
        parts, labels = [], []
        if config.intercepts[eq]:
            parts.append(np.ones(n))
            labels.append("(Intercept)")
        for c in config.covariates(eq):
            parts.append(cols[c])
            labels.append(c)
        mats[block] = np.column_stack(parts) if parts else np.empty((n, 0))
        names[block] = labels
    data = Dataset(y, u, mats["beta"], mats["gamma"], mats["lambda"], mats["kappa"], names=names)
    log.info("read %d rows, %d censored", data.n, data.n - data.n_selected)
    return data


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def fit_report(result: FitResult, config: ModelConfig | None = None, level: float = 0.95) -> dict:
    """JSON-ready fit report (see ``schemas/fit_report.schema.json``)."""
    if result.converged:
        rows = [
            {"equation": EQUATIONS[r.equation], "name": r.name, "estimate": r.estimate,
             "std_error": _num(r.std_error), "z": _num(r.z_value), "p": _num(r.p_value),
             "ci_low": _num(r.ci_low), "ci_high": _num(r.ci_high)}
            for r in summary(result, level)
        ]
    else:
        rows = [
            {"equation": EQUATIONS[b], "name": nm, "estimate": float(est), "std_error": _num(se),
             "z": None, "p": None, "ci_low": None, "ci_high": None}
            for (b, nm), est, se in zip(result.labels, result.params, result.std_errors)
        ]
    report = {
        "model": result.model,
        "coefficients": rows,
        "loglik": result.loglik,
        "n": result.n,
        "n_selected": result.n_selected,
        "converged": result.converged,
        "iterations": result.iterations,
        "grad_norm": result.grad_norm,
        "boundary_warning": result.boundary_warning,
        "level": level,
        "message": result.message,
    }
    if config is not None:
        report["config"] = asdict(config)
    return report


def load_schema() -> dict:
    text = resources.files("genheck").joinpath("schemas/fit_report.schema.json").read_text()
    return json.loads(text)


def _split(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _config_from_args(args) -> ModelConfig:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    for key, attr in [("outcome", "outcome"), ("selection", "selection")]:
        if getattr(args, attr):
            base[key] = getattr(args, attr)
    for eq in EQUATIONS.values():
        val = getattr(args, f"{eq}_covariates")
        if val is not None:
            base[f"{eq}_covariates"] = _split(val)
    if args.no_intercept:
        ic = dict(base.get("intercepts", {}))
        for eq in _split(args.no_intercept):
            if eq not in EQUATIONS.values():
                raise SchemaError(f"--no-intercept expects equation names, got {eq!r}")
            ic[eq] = False
        base["intercepts"] = ic
    if "outcome" not in base or "selection" not in base:
        raise SchemaError("outcome and selection columns are required (--outcome/--selection or --config)")
    return ModelConfig.from_dict(base)


def _emit(text: str, path):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _provenance(args, **extra):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    cfg["version"] = __version__
    print("# config: " + json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)


def _exclusion_warning(config: ModelConfig):
    if set(config.selection_covariates) <= set(config.outcome_covariates):
        print("warning: no exclusion restriction (every selection covariate is also an outcome "
              "covariate); estimates may be poorly identified", file=sys.stderr)


def _prepare(args):
    config = _config_from_args(args)
    _provenance(args, model_config=asdict(config))
    _exclusion_warning(config)
    return config, ingest(args.csv, config)


def _run_fit(args, data):
    fitter = fit_classic if args.model == "classic" else fit
    return fitter(data, FitOptions(max_iter=args.max_iter))


def _fit_from_args(args):
    config, data = _prepare(args)
    return config, data, _run_fit(args, data)


def cmd_fit(args):
    config, data = _prepare(args)
    try:
        result = _run_fit(args, data)
    except NonConvergence as exc:
        if exc.result is not None:
            _emit(json.dumps(fit_report(exc.result, config, args.level), indent=2) + "\n", args.out)
        raise
    _emit(json.dumps(fit_report(result, config, args.level), indent=2) + "\n", args.out)
    return 0


def cmd_test(args):
    config, data, full = _fit_from_args(args)
    eq, _, cols = args.restrict.partition(":")
    if eq not in _BLOCK_OF:
        raise SchemaError(f"--restrict equation must be one of {list(_BLOCK_OF)}")
    block = _BLOCK_OF[eq]
    names = data.names[block] if args.model == "generalized" else (
        data.names[block] if block in ("beta", "gamma") else ["(Intercept)"])
    if cols:
        wanted = _split(cols)
        bad = [c for c in wanted if c not in names]
        if bad:
            raise SchemaError(f"{bad} are not {eq} coefficients ({names})")
        idx = [names.index(c) for c in wanted]
    else:
        idx = None
    res = test_zero(data, block, idx, args.model, fit_full=full)
    out = {
        "model": args.model,
        "restriction": {"equation": eq, "coefficients": [names[i] for i in (idx or range(len(names)))]},
        "loglik_full": res["fit_full"].loglik,
        "loglik_restricted": res["fit_restricted"].loglik,
        "tests": [asdict(res[k]) for k in ("LR", "Gradient", "Wald")],
    }
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return 0


def cmd_residuals(args):
    _, data, result = _fit_from_args(args)
    _emit(residuals_csv(score_residuals(result, data), kind=args.kind), args.out)
    return 0


def cmd_envelope(args):
    _, data, result = _fit_from_args(args)
    band = envelope(result, data, n_sim=args.n_sim, level=args.level, seed=args.seed,
                    kind=args.kind, threads=args.threads)
    if band.n_failed:
        print(f"warning: {band.n_failed} of {band.n_sim} envelope simulations failed", file=sys.stderr)
    _emit(residuals_csv(score_residuals(result, data), band), args.out)
    return 0


def cmd_cook(args):
    _, data, result = _fit_from_args(args)
    rows = None
    if args.subsample and args.subsample < data.n:
        keys = normal_stream(args.seed, data.n)
        rows = np.sort(np.argsort(keys, kind="stable")[: args.subsample])
    gcd = cook_distance(result, data, rows=rows, weight=args.weight, threads=args.threads)
    rows = range(data.n) if rows is None else rows.tolist()
    lines = ["index,gcd,threshold,flagged"]
    for i in rows:
        v = gcd.values[i]
        lines.append(f"{i},{'' if np.isnan(v) else repr(float(v))},{gcd.threshold!r},{int(v > gcd.threshold)}")
    n_failed = int(np.isnan(gcd.values[list(rows)]).sum())
    if n_failed:
        print(f"warning: {n_failed} deletion refits failed (empty gcd field)", file=sys.stderr)
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_simulate(args):
    _provenance(args)
    spec = make_scenario(args.scenario, args.n, kappa=(0.0, 0.0) if args.null else None)
    data = scenario(spec, args.seed)
    cov = scenario_designs(spec, args.seed)["covariates"]
    lines = ["y,u,x1,x2,x3"]
    for i in range(data.n):
        yv = repr(float(data.y[i])) if data.u[i] else ""
        lines.append(f"{yv},{int(data.u[i])},{float(cov['x1'][i])!r},{float(cov['x2'][i])!r},{float(cov['x3'][i])!r}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_mc(args):
    _provenance(args)
    spec = make_scenario(args.scenario, args.n, kappa=(0.0, 0.0) if args.null else None)
    if args.tests:
        res = size_power(spec, args.reps, args.seed, model=args.model, threads=args.threads)
    else:
        res = monte_carlo(spec, args.reps, args.seed, model=args.model, threads=args.threads)
    if res.n_failed:
        print(f"warning: {res.n_failed} of {res.n_reps} replicates failed", file=sys.stderr)
    _emit(res.estimates_csv(), args.out)
    if args.tests and args.rejection_out:
        _emit(res.rejection_csv(), args.rejection_out)
    if args.json:
        _emit(res.to_json() + "\n", args.json)
    return 0


def _default_threads():
    try:
        return max(1, int(os.environ.get("GENHECK_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="genheck", description="Generalized Heckman selection model", allow_abbrev=False)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, allow_abbrev=False)

    def common(sp, data=True):
        sp.add_argument("--out", help="output file (default stdout)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=_default_threads())
        if data:
            sp.add_argument("csv", help="input CSV with header row")
            sp.add_argument("--config", help="JSON model configuration")
            sp.add_argument("--outcome")
            sp.add_argument("--selection")
            for eq in EQUATIONS.values():
                sp.add_argument(f"--{eq}-covariates", metavar="COLS", help=f"{eq} covariates, comma separated")
            sp.add_argument("--no-intercept", help="equations without intercept, comma separated")
            sp.add_argument("--model", choices=["generalized", "classic"], default="generalized")
            sp.add_argument("--max-iter", type=int, default=500)
            sp.add_argument("--level", type=float, default=0.95)

    sp = add("fit", "fit and write a JSON report")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = add("test", "LR, gradient and Wald tests of a zero restriction")
    common(sp)
    sp.add_argument("--restrict", default="correlation",
                    help="EQUATION[:coef1,coef2], e.g. correlation or correlation:Fem,Totchr")
    sp.set_defaults(func=cmd_test)

    for name, func, help_ in [("residuals", cmd_residuals, "score residuals as CSV"),
                              ("envelope", cmd_envelope, "score residuals with simulated envelope")]:
        sp = add(name, help_)
        common(sp)
        sp.add_argument("--kind", choices=["standardized", "all_obs"], default="standardized")
        if name == "envelope":
            sp.add_argument("--n-sim", type=int, default=100)
        sp.set_defaults(func=func)

    sp = add("cook", "generalized Cook distance by case deletion")
    common(sp)
    sp.add_argument("--subsample", type=int, default=0, help="only delete this many random rows")
    sp.add_argument("--weight", choices=["information", "covariance"], default="information")
    sp.set_defaults(func=cmd_cook)

    sp = add("simulate", "write a scenario dataset as CSV")
    common(sp, data=False)
    sp.add_argument("--scenario", type=int, default=1)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--null", action="store_true", help="generate with kappa = 0")
    sp.set_defaults(func=cmd_simulate)

    sp = add("mc", "Monte Carlo mean/RMSE (and test rejection) tables")
    common(sp, data=False)
    sp.add_argument("--scenario", type=int, default=1)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--reps", type=int, default=100)
    sp.add_argument("--model", choices=["generalized", "classic"], default="generalized")
    sp.add_argument("--null", action="store_true", help="generate with kappa = 0")
    sp.add_argument("--tests", action="store_true", help="also run LR/gradient/Wald tests of kappa = 0")
    sp.add_argument("--rejection-out", help="CSV file for the rejection-rate table")
    sp.add_argument("--json", help="also write the summary as JSON to this file")
    sp.set_defaults(func=cmd_mc)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NonConvergence as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (GenHeckError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
