"""Command-line entry point: ``srlab <subcommand> ...``.

Exit status: 0 on success, 1 on a domain error, 2 on a usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .endpoint import d_endpoint_operator
from .errors import SRLabError
from .extremal import goh_diagnostics, reconstruct, shoot_normal
from .flow import DEFAULT_SEGMENTS, DEFAULT_SUBSTEPS, Control, integrate
from .geodesic import SolverOptions, solve_geodesic
from .index import (OscProbe, goh_quadratic, index_report, kernel_basis, openness_experiment,
                    restricted_form)
from .nonsmooth import comparison_check, dichotomy_scan, scan_to_csv
from .probe import ProbeConfig, default_config, run_probe
from .srgeom import PRESETS, bracket_span, load_frame, pre_medium_fat_scan, preset


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Prints the full schema and exits 2 on any usage error."""

    def error(self, message):
        self.print_help(sys.stderr)
        sys.stderr.write(f"\nerror: {message}\n")
        raise SystemExit(2)


def _vec(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()], float)
    except ValueError as exc:
        raise UsageError(f"cannot parse vector {text!r}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _emit(payload, out=None):
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _frame(args):
    if getattr(args, "frame", None):
        return load_frame(args.frame)
    return preset(args.preset, n=args.n)


def _x0(args, frame):
    return np.zeros(frame.dim_n) if args.start is None else _vec(args.start)


def _control(args, frame):
    if getattr(args, "control", None):
        return Control.from_csv(args.control)
    if getattr(args, "constant", None):
        return Control.constant(_vec(args.constant), args.segments)
    raise UsageError("give --control FILE or --constant VALUES")


def _add_frame(p, need_start=True):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=PRESETS + ("flat",), default="heisenberg")
    g.add_argument("--frame", help="frame JSON file")
    p.add_argument("--n", type=int, default=2, help="dimension for flat-rn")
    if need_start:
        p.add_argument("--from", dest="start", help="start point, comma separated (default 0)")


def _add_control(p):
    p.add_argument("--control", help="control CSV (header u1..um)")
    p.add_argument("--constant", help="constant control value, comma separated")
    p.add_argument("--segments", type=int, default=DEFAULT_SEGMENTS)
    p.add_argument("--substeps", type=int, default=DEFAULT_SUBSTEPS)


# --------------------------------------------------------------------------
# subcommands

def cmd_geodesic(args):
    frame = _frame(args)
    opts = SolverOptions(segments=args.segments, restarts=args.restarts, tol=args.tol,
                         seed=args.seed)
    res = solve_geodesic(frame, _x0(args, frame), _vec(args.to), opts)
    if args.control_out:
        res.control.to_csv(args.control_out)
    _emit(res.to_dict(), args.out)


def cmd_shoot(args):
    frame = _frame(args)
    ext = shoot_normal(frame, _x0(args, frame), _vec(args.p), args.steps)
    if args.out:
        ext.to_csv(args.out, frame)
    else:
        sys.stdout.write(ext.csv_text(frame))


def cmd_abnormal(args):
    frame = _frame(args)
    u = _control(args, frame)
    b = integrate(frame, u, _x0(args, frame), args.substeps)
    op = d_endpoint_operator(b)
    covs = op.null_covectors()
    rep = {"corank": op.corank, "singular_values": op.singular_values, "covectors": covs}
    if op.corank:
        ext = reconstruct(b, covs[0], 0)
        g = goh_diagnostics(ext, frame, op.corank, op, args.goh_tol)
        rep.update(goh_residual=g.normalized, goh_holds=g.goh_holds, goh_rank=g.goh_rank)
    else:
        rep.update(goh_residual=None, goh_holds=None, goh_rank=0)
    _emit(rep, args.out)


def cmd_goh_form(args):
    frame = _frame(args)
    u = _control(args, frame)
    b = integrate(frame, u, _x0(args, frame), args.substeps)
    op = d_endpoint_operator(b)
    lam = _vec(args.covector)
    probe = OscProbe(args.t_bar, args.delta, args.i, args.j, tuple(_vec(args.coeffs)))
    goh = goh_quadratic(b, lam, probe)
    form = restricted_form(b, lam, kernel_basis(op, args.dim_cap))
    _emit(index_report(op, form, goh), args.out)


def cmd_index(args):
    frame = _frame(args)
    u = _control(args, frame)
    b = integrate(frame, u, _x0(args, frame), args.substeps)
    op = d_endpoint_operator(b)
    lam = _vec(args.covector)
    form = restricted_form(b, lam, kernel_basis(op, args.dim_cap))
    _emit(index_report(op, form, tol=args.tol), args.out)


def cmd_probe(args):
    if args.config:
        cfg = ProbeConfig.from_json(args.config)
        if args.preset and cfg.frame is None and cfg.preset != args.preset:
            raise UsageError("--preset disagrees with the config file")
    elif args.preset:
        cfg = default_config(args.preset)
    else:
        raise UsageError("give --config FILE or --preset NAME")
    csv_path = args.csv or cfg.csv_path or "probe_report.csv"
    json_path = args.json or cfg.json_path or "probe_report.json"
    rep = run_probe(replace(cfg, csv_path=csv_path, json_path=json_path))
    _emit(rep.aggregates)


SCAN_FUNCTIONS = {
    "abs": np.abs,
    "negabs": lambda x: -np.abs(x),
    "sqrt": lambda x: np.sqrt(np.abs(x)),
    "sin": np.sin,
    "xsin": lambda x: np.where(np.asarray(x) == 0, 0.0,
                               np.asarray(x) * np.sin(1.0 / np.where(np.asarray(x) == 0, 1.0, x))),
    "weierstrass": lambda x: sum(2.0 ** (-k / 2) * np.cos(2.0 ** k * np.asarray(x))
                                 for k in range(21)),
}


def cmd_scan1d(args):
    a, b = _vec(args.interval)
    rows = dichotomy_scan(SCAN_FUNCTIONS[args.function], (a, b), args.n_points)
    if args.out:
        scan_to_csv(rows, args.out)
    labels = [r[1] for r in rows]
    _emit({lab: labels.count(lab) / len(labels)
           for lab in ("differentiable", "local-min-accumulation", "undecided")})


def cmd_compare(args):
    data = np.loadtxt(args.samples, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2:
        raise UsageError("samples CSV must have two columns: s,h")
    s, h = data[:, 0], data[:, 1]
    out = comparison_check(h, float(s[0]), float(s[-1]), args.eps, args.sigma, grid=s,
                           tol=args.tol)
    _emit(out, args.out)


def cmd_openness(args):
    frame = _frame(args)
    u = _control(args, frame)
    dirs = None
    if args.directions:
        dirs = [_vec(d) for d in args.directions.split(";")]
    rep = openness_experiment(frame, u, args.n_targets, tuple(_vec(args.radii)),
                              x0=_x0(args, frame), directions=dirs, seed=args.seed,
                              substeps=args.substeps)
    _emit(rep, args.out)


def cmd_premedium(args):
    frame = _frame(args)
    x = _vec(args.point)
    scan = pre_medium_fat_scan(frame, x, args.samples)
    c = scan["worst_section"]
    rep = bracket_span(frame, x, c)
    _emit({"dim_delta": rep.dim_delta, "dim_delta2": rep.dim_delta2,
           "dim_with_section": rep.dim_with_section, "section_coeffs": rep.section_coeffs,
           **scan})


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="srlab", description="Sub-Riemannian geodesics, extremals and probes.")
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser, required=True)

    s = sub.add_parser("geodesic", help="minimizing geodesic between two points (JSON)")
    _add_frame(s)
    s.add_argument("--to", required=True)
    s.add_argument("--segments", type=int, default=DEFAULT_SEGMENTS)
    s.add_argument("--restarts", type=int, default=8)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--control-out", help="write the minimizing control CSV here")
    s.add_argument("--out")
    s.set_defaults(run=cmd_geodesic)

    s = sub.add_parser("shoot", help="normal extremal from an initial covector (CSV)")
    _add_frame(s)
    s.add_argument("--p", required=True, help="initial covector")
    s.add_argument("--steps", type=int, default=256)
    s.add_argument("--out")
    s.set_defaults(run=cmd_shoot)

    s = sub.add_parser("abnormal", help="annihilating covectors and Goh data of a control")
    _add_frame(s)
    _add_control(s)
    s.add_argument("--goh-tol", type=float, default=1e-6)
    s.add_argument("--out")
    s.set_defaults(run=cmd_abnormal)

    s = sub.add_parser("goh-form", help="Goh quadratic form on an oscillatory probe")
    _add_frame(s)
    _add_control(s)
    s.add_argument("--covector", required=True)
    s.add_argument("--t-bar", type=float, required=True)
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--i", type=int, default=1)
    s.add_argument("--j", type=int, default=2)
    s.add_argument("--coeffs", default="1")
    s.add_argument("--dim-cap", type=int, default=40)
    s.add_argument("--out")
    s.set_defaults(run=cmd_goh_form)

    s = sub.add_parser("index", help="negative index of covector . D^2E on Ker D_uE")
    _add_frame(s)
    _add_control(s)
    s.add_argument("--covector", required=True)
    s.add_argument("--dim-cap", type=int, default=40)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--out")
    s.set_defaults(run=cmd_index)

    s = sub.add_parser("probe", help="grid sweep with per-sample classification")
    s.add_argument("--preset", choices=("heisenberg", "martinet", "flat-rn", "flat"))
    s.add_argument("--config", help="ProbeConfig JSON")
    s.add_argument("--csv")
    s.add_argument("--json")
    s.set_defaults(run=cmd_probe)

    s = sub.add_parser("scan1d", help="Dini/dichotomy scan of a 1-D test function")
    s.add_argument("--function", choices=sorted(SCAN_FUNCTIONS), required=True)
    s.add_argument("--interval", required=True, help="a,b")
    s.add_argument("--n-points", type=int, default=1000)
    s.add_argument("--out")
    s.set_defaults(run=cmd_scan1d)

    s = sub.add_parser("compare", help="comparison verifier on sampled h (CSV s,h)")
    s.add_argument("--samples", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--out")
    s.set_defaults(run=cmd_compare)

    s = sub.add_parser("openness", help="split-norm openness experiment around a control")
    _add_frame(s)
    _add_control(s)
    s.add_argument("--n-targets", type=int, default=8)
    s.add_argument("--radii", default="0.1,0.03,0.01,0.003")
    s.add_argument("--directions", help="unit directions separated by ';'")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(run=cmd_openness)

    s = sub.add_parser("premedium", help="bracket span dimensions at a point")
    _add_frame(s, need_start=False)
    s.add_argument("--point", required=True)
    s.add_argument("--samples", type=int, default=64)
    s.set_defaults(run=cmd_premedium)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "preset", None) == "flat":
        args.preset = "flat-rn"
    try:
        args.run(args)
    except UsageError as exc:
        parser.print_help(sys.stderr)
        sys.stderr.write(f"\nerror: {exc}\n")
        return 2
    except (SRLabError, ValueError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
