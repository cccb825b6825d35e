"""Command line front end.

Subcommands: ``detect``, ``ci``, ``spectrum``, ``simulate``, ``quantiles``.
Exit status is 0 on success, 2 for input or configuration errors and 3 when
the data make the requested statistic undefined.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import __version__
from .detection import DetectionConfig, detect, prepare_series, refit_models
from .errors import CPDError, DegeneracyError, GridTooSmallWarning, InputError, InvalidInput
from .inference import (
    DEFAULT_PROBS,
    MonteCarloSettings,
    confidence_interval,
    nuisance_estimates,
    probs_for_levels,
    simulate_argmax_quantiles,
)
from .simulation import ScenarioSpec, run_replications
from .tscore import ar_spectral_density

log = logging.getLogger("spectralcp")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 2, 3

_MODEL = {
    "type": "object",
    "required": ["p", "phi", "sigma2"],
    "properties": {
        "p": {"type": "integer", "minimum": 0},
        "phi": {"type": "array", "items": {"type": "number"}},
        "sigma2": {"type": "number", "minimum": 0},
    },
}
_CURVE = {
    "type": "object",
    "required": ["k", "loss"],
    "properties": {
        "k": {"type": "array", "items": {"type": "integer"}},
        "loss": {"type": "array", "items": {"type": ["number", "null"]}},
    },
}

#: JSON schema of the ``detect`` report.
DETECT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "command", "status", "T", "detection"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"enum": ["detect", "ci"]},
        "status": {"enum": ["ok", "no_jump", "degenerate"]},
        "input": {"type": ["string", "null"]},
        "column": {"type": ["string", "integer", "null"]},
        "T": {"type": "integer", "minimum": 1},
        "message": {"type": "string"},
        "detection": {
            "type": "object",
            "required": ["k_hat", "k_tilde", "p_common", "model_pre", "model_post"],
            "properties": {
                "k_hat": {"type": "integer"},
                "k_tilde": {"type": "integer"},
                "p_common": {"type": "integer", "minimum": 0},
                "lags_stage1": {"type": "array", "items": {"type": "integer"}},
                "min_segment": {"type": "integer"},
                "demeaned": {"type": "boolean"},
                "model_pre": _MODEL,
                "model_post": _MODEL,
                "loss_curve_stage1": _CURVE,
                "loss_curve_stage2": _CURVE,
            },
        },
        "nuisance": {
            "type": ["object", "null"],
            "properties": {
                "xi2": {"type": "number", "minimum": 0},
                "sigma1_sq": {"type": "number", "minimum": 0},
                "sigma2_sq": {"type": "number", "minimum": 0},
                "sigma1_star_sq": {"type": "number", "minimum": 0},
                "sigma2_star_sq": {"type": "number", "minimum": 0},
                "resid_var_pre": {"type": "number", "minimum": 0},
                "resid_var_post": {"type": "number", "minimum": 0},
                "scale": {"type": "number"},
            },
        },
        "confidence_intervals": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["level", "lower", "upper"],
                "properties": {
                    "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "lower": {"type": "integer", "minimum": 1},
                    "upper": {"type": "integer", "minimum": 1},
                    "scale_c": {"type": "number"},
                },
            },
        },
        "quantile_table": {"type": ["object", "null"]},
    },
}


# ---------------------------------------------------------------- CSV I/O


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_series(path: str, column: str | int | None = 0) -> np.ndarray:
    """Read one numeric column from a comma separated file.

    A header row is assumed when the first non-blank row is not entirely
    numeric; ``column`` may then be a header name. Blank lines are skipped.
    """
    if path == "-":
        text = sys.stdin.read()
    else:
        with open(path, newline="", encoding="utf-8") as fh:
            text = fh.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if not rows:
        raise InvalidInput(f"{path}: no data")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    col = 0 if column is None else column
    if isinstance(col, str) and not col.lstrip("-").isdigit():
        if header is None or col not in header:
            raise InvalidInput(f"{path}: no column named {col!r}")
        idx = header.index(col)
    else:
        idx = int(col)
    values = []
    for lineno, r in enumerate(rows, start=2 if header else 1):
        try:
            values.append(float(r[idx]))
        except (IndexError, ValueError):
            raise InvalidInput(f"{path}: row {lineno} has no numeric value in column {col!r}") from None
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{path}: column {col!r} contains non-finite values")
    return arr


def write_series(path: str, values, header: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(header + "\n")
        for v in values:
            fh.write(repr(float(v)) + "\n")


def _write_text(text: str, output: str | None) -> None:
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _sanitize(o):
    """Replace non-finite floats with None so documents stay valid JSON."""
    if isinstance(o, dict):
        return {k: _sanitize(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_sanitize(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return None
    return o


def _dump(doc: dict) -> str:
    return json.dumps(_sanitize(doc), indent=2, default=_json_default) + "\n"


# ---------------------------------------------------------------- parsing


def _levels(text: str):
    try:
        levels = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None
    if not levels or any(not 0 < lv < 1 for lv in levels):
        raise argparse.ArgumentTypeError("levels must lie strictly between 0 and 1")
    return sorted(set(levels))


def _column(text: str):
    return int(text) if text.lstrip("-").isdigit() else text


def _add_mc(p):
    p.add_argument("--mc-R", type=float, default=200.0, help="grid half-width (default 200)")
    p.add_argument("--mc-delta", type=float, default=0.05, help="grid step (default 0.05)")
    p.add_argument("--mc-reps", type=int, default=50000, help="Monte Carlo paths (default 50000)")
    p.add_argument("--seed", type=int, default=0)


def _add_detection(p, demean_default):
    p.add_argument("--lag", default="aic", help="aic, aic:PMAX or fixed:P (default aic)")
    p.add_argument("--min-segment", type=int, default=None)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--demean", action=argparse.BooleanOptionalAction, default=demean_default)
    p.add_argument("--no-refit-lags", dest="refit_lags", action="store_false")


def _add_io(p):
    p.add_argument("--input", required=True, help="CSV file ('-' for stdin)")
    p.add_argument("--column", type=_column, default=0, help="column name or 0-based index")


def _config(args) -> DetectionConfig:
    return DetectionConfig.from_lag_string(
        args.lag,
        min_segment=args.min_segment,
        sweep_stride=args.stride,
        demean=args.demean,
        refit_lags=args.refit_lags,
    )


def _mc(args) -> MonteCarloSettings:
    mc = MonteCarloSettings(args.mc_R, args.mc_delta, args.mc_reps, args.seed)
    mc.validate()
    return mc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectralcp",
        description="Single change point detection and inference in the spectral density of a time series.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (
        ("detect", "estimate the change point, nuisance quantities and intervals"),
        ("ci", "as detect, but report only the intervals"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_io(p)
        _add_detection(p, demean_default=True)
        p.add_argument("--levels", type=_levels, default=[0.90, 0.95, 0.99])
        p.add_argument("--factorized", action="store_true", help="factorized noise-interaction variances")
        p.add_argument("--no-curves", dest="curves", action="store_false", help="omit loss curves")
        _add_mc(p)
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--output", default=None)

    p = sub.add_parser("spectrum", help="AR spectral densities before and after the change")
    _add_io(p)
    _add_detection(p, demean_default=True)
    p.add_argument("--k", type=int, default=None, help="split index (default: detected k_tilde)")
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--output", default="spectrum", help="output prefix: PREFIX_pre.csv, PREFIX_post.csv")

    p = sub.add_parser("simulate", help="replicate a simulation scenario and report AB/RMSE/coverage")
    p.add_argument("--scenario", required=True, choices=["I", "II", "III", "IV", "V"])
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--phi", type=float, default=None)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--kstar", type=int, default=None, help="true change index (default T // 2)")
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--splice", choices=("continuous", "restart"), default="continuous")
    p.add_argument("--reps", type=int, default=100)
    _add_detection(p, demean_default=False)
    p.add_argument("--levels", type=_levels, default=[0.90, 0.95, 0.99])
    p.add_argument("--factorized", action="store_true")
    _add_mc(p)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--output", default=None)

    p = sub.add_parser("quantiles", help="Monte Carlo quantiles of the limiting argmax law")
    p.add_argument("--sigma1", type=float, default=1.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--sigma1-star", type=float, default=1.0)
    p.add_argument("--sigma2-star", type=float, default=1.0)
    p.add_argument("--probs", type=_levels, default=None)
    _add_mc(p)
    p.add_argument("--output", default=None)
    return parser


# ---------------------------------------------------------------- commands


def _analyse(args, x):
    """Run detection and inference; returns the report and exit status."""
    cfg = _config(args)
    mc = _mc(args)
    res = detect(x, cfg)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "status": "ok",
        "input": args.input,
        "column": args.column,
        "T": int(x.size),
        "detection": res.to_dict(curves=getattr(args, "curves", True) and args.command == "detect"),
        "nuisance": None,
        "confidence_intervals": [],
        "quantile_table": None,
    }
    arr = prepare_series(x, cfg)
    try:
        nuis = nuisance_estimates(arr, res.k_tilde, res.model_pre, res.model_post, res.p_common, args.factorized)
    except DegeneracyError as exc:
        doc["status"] = "no_jump"
        doc["message"] = str(exc)
        return doc, EXIT_DEGENERATE
    doc["nuisance"] = nuis.to_dict()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridTooSmallWarning)
        table = simulate_argmax_quantiles(
            nuis.params, mc.R, mc.delta, mc.M, mc.seed, probs=probs_for_levels(args.levels)
        )
    doc["quantile_table"] = table.to_dict()
    doc["confidence_intervals"] = [
        confidence_interval(res.k_tilde, x.size, nuis, table, lv).to_dict() for lv in args.levels
    ]
    return doc, EXIT_OK


def cmd_detect(args) -> int:
    x = read_series(args.input, args.column)
    doc, status = _analyse(args, x)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k_hat", "k_tilde", "level", "lower", "upper"])
        det = doc["detection"]
        for ci in doc["confidence_intervals"]:
            w.writerow([det["k_hat"], det["k_tilde"], ci["level"], ci["lower"], ci["upper"]])
        if not doc["confidence_intervals"]:
            w.writerow([det["k_hat"], det["k_tilde"], "", "", ""])
        _write_text(buf.getvalue(), args.output)
    else:
        _write_text(_dump(doc), args.output)
    return status


def cmd_spectrum(args) -> int:
    x = read_series(args.input, args.column)
    cfg = _config(args)
    arr = prepare_series(x, cfg)
    k = args.k
    if k is None:
        k = detect(arr, replace(cfg, demean=False)).k_tilde
    m1, m2, _ = refit_models(arr, k, cfg)
    lam = np.linspace(0.0, np.pi, args.points)
    for suffix, model in (("pre", m1), ("post", m2)):
        f = ar_spectral_density(model, lam)
        with open(f"{args.output}_{suffix}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "f"])
            for a, b in zip(lam, f):
                w.writerow([repr(float(a)), repr(float(b))])
    log.info("wrote %s_pre.csv and %s_post.csv (split %d)", args.output, args.output, k)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = ScenarioSpec(
        id=args.scenario,
        T=args.T,
        k_star=args.T // 2 if args.kstar is None else args.kstar,
        theta=args.theta,
        phi=args.phi,
        sigma=args.sigma,
        burn_in=args.burn_in,
        splice=args.splice,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridTooSmallWarning)
        report = run_replications(
            spec, _config(args), args.levels, args.reps, args.seed, _mc(args), factorized=args.factorized
        )
    if args.format == "csv":
        _write_text(report.to_csv(), args.output)
    else:
        doc = {"command": "simulate", "scenario": spec.id, "row": report.table_row(), **report.to_dict()}
        _write_text(_dump(doc), args.output)
    return EXIT_OK


def cmd_quantiles(args) -> int:
    mc = _mc(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridTooSmallWarning)
        table = simulate_argmax_quantiles(
            (args.sigma1, args.sigma2, args.sigma1_star, args.sigma2_star),
            mc.R,
            mc.delta,
            mc.M,
            mc.seed,
            probs=args.probs if args.probs is not None else DEFAULT_PROBS,
        )
    _write_text(_dump({"command": "quantiles", **table.to_dict()}), args.output)
    return EXIT_OK


COMMANDS = {
    "detect": cmd_detect,
    "ci": cmd_detect,
    "spectrum": cmd_spectrum,
    "simulate": cmd_simulate,
    "quantiles": cmd_quantiles,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DegeneracyError as exc:
        print(f"degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except CPDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
