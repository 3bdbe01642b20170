"""Command-line interface: ``mstcure {compare-np,fit-cure,compare-sp,simulate,curves}``.

Exit codes: 0 success, 2 input or validation error, 3 nonparametric
inference failure, 4 EM failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .data import CsvSchema, TwoSampleDataset, parse_csv, validate_dataset
from .exceptions import DegenerateError, FitError, InputError, MstCureError, ResamplingError
from .resampling import WORKERS_ENV, check_seed, default_workers, entropy_seed

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NP, EXIT_EM = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _cols(text):
    return tuple(c.strip() for c in text.split(",") if c.strip()) if text else ()


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _alpha(text):
    a = float(text)
    if not 0 < a < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return a


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _resolve_seed(args):
    if args.seed is None:
        args.seed = entropy_seed()
        print(f"seed: {args.seed}", file=sys.stderr)
    else:
        args.seed = check_seed(args.seed)
    return args.seed


def _read_two_sample(args) -> TwoSampleDataset:
    schema = CsvSchema(args.time_col, args.status_col, args.group_col, _cols(getattr(args, "x_cols", "")),
                       _cols(getattr(args, "z_cols", "")))
    ds = parse_csv(args.input, schema)
    if not isinstance(ds, TwoSampleDataset):
        raise CliError("a group column is required", EXIT_INPUT)
    return ds


def _dump(obj, fmt, out=None):
    out = out or sys.stdout
    if fmt == "json":
        # strict JSON: non-finite numbers become null
        obj = json.loads(json.dumps(obj, default=_jsonable), parse_constant=lambda _: None)
        out.write(json.dumps(obj, indent=2, allow_nan=False) + "\n")
    else:
        out.write(obj if isinstance(obj, str) else json.dumps(obj, default=_jsonable))


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _result_rows(results: dict) -> list[list]:
    rows = [["analysis", "estimate", "ci_lower", "ci_upper", "p_two_sided", "p_greater", "p_less", "B", "discarded"]]
    for name, r in results.items():
        rows.append([name, r.estimate, r.ci_lower, r.ci_upper, r.p_two_sided, r.p_greater, r.p_less,
                     r.n_replicates_used if r.n_replicates_used is not None else "",
                     r.n_replicates_discarded if r.n_replicates_discarded is not None else ""])
    return rows


def _csv_text(rows) -> str:
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------- compare-np


def run_compare_np(args) -> int:
    from .inference import asymptotic_inference, cure_fraction_test, permutation_inference
    from .km import fit_km
    from .mst import two_sample_estimate

    seed = _resolve_seed(args)
    ds = _read_two_sample(args)
    try:
        diag = validate_dataset(ds, args.plateau_threshold)
    except DegenerateError as exc:
        raise CliError(f"validation failed: {exc}", EXIT_INPUT) from exc
    try:
        f1, f2 = fit_km(ds.sample1), fit_km(ds.sample2)
        est = two_sample_estimate(f1, f2)
        results = {
            "cure_fraction_test": cure_fraction_test(f1, f2, args.alpha),
            "asymptotic": asymptotic_inference(est, args.alpha, args.null),
        }
        if args.permutations > 0 or args.exhaustive:
            results["permutation"] = permutation_inference(
                ds, args.alpha, args.permutations, seed, args.null,
                exhaustive=args.exhaustive, workers=args.workers,
            )
    except (DegenerateError, ResamplingError) as exc:
        raise CliError(f"inference failed: {exc}", EXIT_NP) from exc

    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "compare-np",
        "groups": list(ds.group_values),
        "seed": seed,
        "diagnostics": diag.to_dict(),
        "estimate": est.to_dict(),
        "cure_fractions": [f1.cure_fraction, f2.cure_fraction],
        "results": {k: v.to_dict() for k, v in results.items()},
    }
    if args.format == "json":
        _dump(report, "json")
    elif args.format == "csv":
        sys.stdout.write(_csv_text(_result_rows(results)))
    else:
        lines = [f"groups: {ds.group_values[0]} (n={ds.n1}) vs {ds.group_values[1]} (n={ds.n2}); seed {seed}"]
        for d in diag.samples:
            lines.append(f"  sample {d.label}: censoring {d.censoring_rate:.1%}, last event {d.last_event_time:g}, "
                         f"plateau {d.plateau_fraction:.1%}")
        lines += [f"  warning: {w}" for w in diag.warnings]
        lines.append(f"cure fractions: {f1.cure_fraction:.4f} vs {f2.cure_fraction:.4f}")
        lines.append(f"MST uncured: {est.mst1:.6g} vs {est.mst2:.6g}; m_hat = {est.m_hat:.6g}, sigma_hat = {est.sigma_hat:.6g}")
        for name, r in results.items():
            lines.append(f"{name:<20} est {r.estimate:.6g}  CI [{r.ci_lower:.6g}, {r.ci_upper:.6g}]  "
                         f"p2 {r.p_two_sided:.4g}  p> {r.p_greater:.4g}  p< {r.p_less:.4g}")
        sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- fit-cure


def _fit_cure_samples(args):
    schema = CsvSchema(args.time_col, args.status_col, args.group_col, _cols(args.x_cols), _cols(args.z_cols))
    data = parse_csv(args.input, schema)
    if isinstance(data, TwoSampleDataset):
        return data, [(data.group_values[0], data.sample1), (data.group_values[1], data.sample2)]
    return None, [("all", data)]


def _em_config(args):
    from .cure import EmConfig

    return EmConfig(tol=args.tol, max_iter=args.max_iter)


def _fit_or_fail(sample, config):
    from .cure import fit_logistic_cox

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            fit = fit_logistic_cox(sample, config=config)
        except FitError as exc:
            raise CliError(f"EM failure: {exc}", EXIT_EM) from exc
        except DegenerateError as exc:
            raise CliError(f"EM failure: {exc}", EXIT_EM) from exc
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if not fit.converged:
        raise CliError(f"EM failure: no convergence after {fit.em_iterations} iterations "
                       f"(last log-likelihood {fit.loglik:.6g})", EXIT_EM)
    return fit


def run_fit_cure(args) -> int:
    _, samples = _fit_cure_samples(args)
    config = _em_config(args)
    out = {"schema_version": SCHEMA_VERSION, "command": "fit-cure", "fits": {}}
    for name, sample in samples:
        out["fits"][name] = _fit_or_fail(sample, config).to_dict()
    if args.format == "json":
        _dump(out, "json")
    elif args.format == "csv":
        rows = [["group", "parameter", "estimate"]]
        for name, fit in out["fits"].items():
            rows += [[name, f"gamma{j}", v] for j, v in enumerate(fit["gamma"])]
            rows += [[name, f"beta{j + 1}", v] for j, v in enumerate(fit["beta"])]
        sys.stdout.write(_csv_text(rows))
    else:
        for name, fit in out["fits"].items():
            sys.stdout.write(f"group {name}: gamma {np.round(fit['gamma'], 4).tolist()}, beta "
                             f"{np.round(fit['beta'], 4).tolist()}, {fit['iterations']} iterations, "
                             f"loglik {fit['loglik']:.6g}\n")
    return EXIT_OK


# ---------------------------------------------------------------- compare-sp


def _parameter_block(names_x, names_z, fits, se):
    rows = []
    k = 0
    for g, fit in enumerate(fits, start=1):
        labels = ["incidence:(intercept)"] + [f"incidence:{c}" for c in names_x] + [f"latency:{c}" for c in names_z]
        values = list(fit.gamma) + list(fit.beta)
        for label, v in zip(labels, values):
            s = float(se[k]) if se is not None else float("nan")
            p = float(2 * norm.sf(abs(v / s))) if se is not None and s > 0 else float("nan")
            rows.append({"group": g, "parameter": label, "estimate": float(v), "se": s, "p_value": p})
            k += 1
    return rows


def run_compare_sp(args) -> int:
    from .conditional import bootstrap_replicates, compare_conditional_mst, m_z_hat, permutation_inference_sp

    seed = _resolve_seed(args)
    ds = _read_two_sample(args)
    q = ds.sample1.z.shape[1]
    if q == 0:
        raise CliError("compare-sp needs latency covariates (--z-cols)", EXIT_INPUT)
    if not args.z:
        raise CliError("at least one --z vector is required", EXIT_INPUT)
    for zz in args.z:
        if len(zz) != q:
            raise CliError(f"z vector {zz} has dimension {len(zz)}, expected {q}", EXIT_INPUT)
    grid = np.asarray(args.z, dtype=float)
    config = _em_config(args)
    fits = (_fit_or_fail(ds.sample1, config), _fit_or_fail(ds.sample2, config))
    m = m_z_hat(fits[0], fits[1], grid)
    report = {"schema_version": SCHEMA_VERSION, "command": "compare-sp", "groups": list(ds.group_values),
              "seed": seed, "B_boot": args.boot, "B_perm": args.permutations}
    try:
        if args.boot == 0:
            print("warning: --boot 0: no variance estimate, inference suppressed", file=sys.stderr)
            report["parameters"] = _parameter_block(_cols(args.x_cols), _cols(args.z_cols), fits, None)
            report["inference"] = [{"z": zz.tolist(), "estimate": float(mm)} for zz, mm in zip(grid, m)]
        else:
            draws = bootstrap_replicates(ds, grid, args.boot, seed, config, workers=args.workers)
            report["parameters"] = _parameter_block(_cols(args.x_cols), _cols(args.z_cols), fits, draws.coef_se())
            asym = compare_conditional_mst(ds, grid, args.alpha, args.boot, seed, config, workers=args.workers,
                                           fits=fits, draws=draws)
            perm = None
            if args.permutations > 0:
                perm = permutation_inference_sp(ds, grid, args.alpha, args.permutations, args.boot, seed, config,
                                                workers=args.workers)
            report["inference"] = [
                {"z": zz.tolist(), "asymptotic": a.to_dict(), **({"permutation": perm[j].to_dict()} if perm else {})}
                for j, (zz, a) in enumerate(zip(grid, asym))
            ]
    except (FitError, ResamplingError) as exc:
        raise CliError(f"EM failure during resampling: {exc}", EXIT_EM) from exc
    except DegenerateError as exc:
        raise CliError(f"inference failed: {exc}", EXIT_NP) from exc

    if args.format == "json":
        _dump(report, "json")
    elif args.format == "csv":
        rows = [["z", "method", "estimate", "ci_lower", "ci_upper", "p_two_sided"]]
        for item in report["inference"]:
            ztxt = ";".join(repr(v) for v in item["z"])
            for method in ("asymptotic", "permutation"):
                if method in item:
                    r = item[method]
                    rows.append([ztxt, method, r["estimate"], r["ci"][0], r["ci"][1], r["p_two_sided"]])
            if "estimate" in item:
                rows.append([ztxt, "point", item["estimate"], "", "", ""])
        sys.stdout.write(_csv_text(rows))
    else:
        lines = [f"{'group':<6}{'parameter':<28}{'estimate':>10}{'se':>10}{'p':>10}"]
        for r in report["parameters"]:
            lines.append(f"{r['group']:<6}{r['parameter']:<28}{r['estimate']:>10.4f}{r['se']:>10.4f}{r['p_value']:>10.4f}")
        for item in report["inference"]:
            if "estimate" in item:
                lines.append(f"z={item['z']}: m_z = {item['estimate']:.6g}")
                continue
            for method in ("asymptotic", "permutation"):
                if method in item:
                    r = item[method]
                    lines.append(f"z={item['z']} {method:<12} m_z {r['estimate']:.6g}  CI [{r['ci'][0]:.6g}, "
                                 f"{r['ci'][1]:.6g}]  p {r['p_two_sided']:.4g}")
        sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def run_simulate(args) -> int:
    from .sim import SETTINGS, monte_carlo_table

    if args.setting not in SETTINGS:
        raise CliError(f"unknown setting {args.setting!r}; choose from {', '.join(SETTINGS)}", EXIT_INPUT)
    seed = _resolve_seed(args)
    sizes = list(zip(args.n1, args.n2)) if len(args.n1) == len(args.n2) else None
    if sizes is None:
        raise CliError("--n1 and --n2 need the same number of values", EXIT_INPUT)
    report = monte_carlo_table(SETTINGS[args.setting], sizes, args.reps, args.alpha, args.permutations, args.boot,
                               seed, workers=args.workers)
    csv_text, text = report.to_csv(), report.to_text()
    if args.output:
        prefix = Path(args.output)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{prefix}.csv").write_text(csv_text)
        Path(f"{prefix}.txt").write_text(text)
    if args.format == "json":
        _dump({"schema_version": SCHEMA_VERSION, "command": "simulate", "setting": report.setting,
               "reps": report.reps, "seed": report.seed, "alpha": report.alpha, "test": report.test,
               "cells": [c.__dict__ for c in report.cells]}, "json")
    elif args.format == "csv":
        sys.stdout.write(csv_text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- curves


def curves_svg(fits: dict, width: int = 640, height: int = 420) -> str:
    """Static SVG overlay of Kaplan-Meier step curves, one path per group."""
    margin = 50
    t_max = max(f.event_times[-1] for f in fits.values()) * 1.05
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]

    def px(t):
        return margin + (width - 2 * margin) * t / t_max

    def py(s):
        return height - margin - (height - 2 * margin) * s

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{py(0):.2f}" x2="{width - margin}" y2="{py(0):.2f}" stroke="black"/>',
        f'<line x1="{margin}" y1="{py(0):.2f}" x2="{margin}" y2="{py(1):.2f}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" font-size="13">time</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {height / 2:.0f})">survival</text>',
    ]
    for v in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(f'<text x="{margin - 6}" y="{py(v) + 4:.2f}" text-anchor="end" font-size="11">{v:g}</text>')
    for v in np.linspace(0, t_max, 5):
        parts.append(f'<text x="{px(v):.2f}" y="{py(0) + 16:.2f}" text-anchor="middle" font-size="11">{v:.3g}</text>')
    for j, (name, fit) in enumerate(fits.items()):
        color = colors[j % len(colors)]
        d = [f"M{px(0):.2f},{py(1):.2f}"]
        prev = 1.0
        for t, s in zip(fit.event_times, fit.survival):
            d.append(f"H{px(t):.2f}V{py(s):.2f}")
            prev = s
        d.append(f"H{px(t_max):.2f}")
        parts.append(f'<path d="{"".join(d)}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        ly = margin + 18 * j
        parts.append(f'<line x1="{width - margin - 110}" y1="{ly}" x2="{width - margin - 90}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width - margin - 84}" y="{ly + 4}" font-size="12">group {name} '
                     f'(p={prev:.2f})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def run_curves(args) -> int:
    from .km import fit_km

    schema = CsvSchema(args.time_col, args.status_col, args.group_col)
    data = parse_csv(args.input, schema)
    samples = ([(data.group_values[0], data.sample1), (data.group_values[1], data.sample2)]
               if isinstance(data, TwoSampleDataset) else [("all", data)])
    try:
        fits = {name: fit_km(s) for name, s in samples}
    except DegenerateError as exc:
        raise CliError(f"validation failed: {exc}", EXIT_INPUT) from exc
    rows = ["group,time,survival,at_risk,events,v_hat"]
    for name, fit in fits.items():
        rows += [f"{name},{line}" for line in fit.to_csv().splitlines()[1:]]
    csv_text = "\n".join(rows) + "\n"
    if args.csv:
        Path(args.csv).write_text(csv_text)
    if args.svg:
        Path(args.svg).write_text(curves_svg(fits))
    if not args.csv:
        sys.stdout.write(csv_text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mstcure", description="Mean survival time of the uncured: two-sample inference.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, randomized=True):
        p.add_argument("--format", choices=("json", "csv", "text"), default="text")
        if randomized:
            p.add_argument("--seed", type=int, default=None, help="master seed (printed to stderr when omitted)")
            p.add_argument("--workers", type=int, default=None,
                           help=f"worker processes (default ${WORKERS_ENV} or 1)")

    def columns(p, group_required=True):
        p.add_argument("input", help="CSV file with a header row")
        p.add_argument("--time-col", default="time")
        p.add_argument("--status-col", default="status")
        p.add_argument("--group-col", default="group" if group_required else None)

    p = sub.add_parser("compare-np", help="nonparametric MST comparison")
    columns(p)
    common(p)
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--permutations", "-B", type=_nonneg_int, default=500)
    p.add_argument("--exhaustive", action="store_true", help="enumerate every split instead of sampling")
    p.add_argument("--null", type=float, default=0.0, help="null value m0")
    p.add_argument("--plateau-threshold", type=float, default=0.05)
    p.set_defaults(func=run_compare_np)

    def em_opts(p):
        p.add_argument("--x-cols", default="", help="comma-separated incidence covariates")
        p.add_argument("--z-cols", default="", help="comma-separated latency covariates")
        p.add_argument("--tol", type=float, default=1e-7)
        p.add_argument("--max-iter", type=int, default=500)

    p = sub.add_parser("fit-cure", help="fit logistic-Cox cure models")
    columns(p, group_required=False)
    em_opts(p)
    common(p, randomized=False)
    p.set_defaults(func=run_fit_cure)

    p = sub.add_parser("compare-sp", help="covariate-specific MST comparison")
    columns(p)
    em_opts(p)
    common(p)
    p.add_argument("--z", type=_floats, action="append", default=[], help="covariate vector, e.g. --z 1,0 (repeatable)")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--boot", "--bootstrap", dest="boot", type=_nonneg_int, default=100)
    p.add_argument("--permutations", "-B", type=_nonneg_int, default=500)
    p.set_defaults(func=run_compare_sp)

    p = sub.add_parser("simulate", help="Monte Carlo coverage and rejection tables")
    common(p)
    p.add_argument("--setting", required=True)
    p.add_argument("--n1", type=int, nargs="+", default=[200])
    p.add_argument("--n2", type=int, nargs="+", default=[200])
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--permutations", "-B", type=_nonneg_int, default=500)
    p.add_argument("--boot", "--bootstrap", dest="boot", type=_nonneg_int, default=100)
    p.add_argument("--output", help="path prefix for <prefix>.csv and <prefix>.txt")
    p.set_defaults(func=run_simulate)

    p = sub.add_parser("curves", help="Kaplan-Meier curves as CSV and SVG")
    columns(p, group_required=False)
    p.add_argument("--csv", help="write the curve table here instead of stdout")
    p.add_argument("--svg", help="write an SVG overlay plot here")
    p.set_defaults(func=run_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    if getattr(args, "workers", None) is None and hasattr(args, "workers"):
        args.workers = default_workers()
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FitError as exc:
        print(f"error: EM failure: {exc}", file=sys.stderr)
        return EXIT_EM
    except MstCureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NP


if __name__ == "__main__":
    sys.exit(main())
