"""Command-line front end.

Exit codes: 0 success (no nonclassicality certified), 2 nonclassicality
certified, 1 any error (bad arguments, schema violations, domain errors).
"""

import argparse
import json
import math
import sys

import numpy as np

from . import __version__
from .core import (
    DomainError, PhasePoint, SeriesConvergenceError, TruncationError, distribution, nexp_many,
    nonlinear_pair_expectation,
)
from .detector import bootstrap_det, estimate_matrix, lo_to_alpha
from .io import (
    DETECTOR_SCHEMA, POINTS_SCHEMA, SCAN_SCHEMA, SCHEME_SCHEMA, SEARCH_SCHEMA, STATE_SCHEMA,
    InputError, csv_text, load_json, parse_detector, parse_points, parse_scan, parse_scheme,
    parse_search, parse_state, run_record, write_text,
)
from .optimize import Bound, SearchSpec, minimize, scan
from .states import CutoffError, StateSpec, analytic_q, make_state, optimal_point
from .witness import build_matrix, normalization_scale, qq_multi, qq_pair, report

EXIT_OK, EXIT_ERROR, EXIT_NONCLASSICAL = 0, 1, 2
VERDICT_TOL = 1e-9
FIGURES = ("fig2", "fig3", "fig4b", "fig5", "fig6")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would read as "nonclassical"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _emit(text: str, out) -> None:
    if out:
        write_text(out, text)
    else:
        sys.stdout.write(text)


def _emit_record(record: dict, out) -> None:
    _emit(json.dumps(record, indent=2, sort_keys=False) + "\n", out)


def _state(args):
    spec = parse_state(load_json(args.state, STATE_SCHEMA, "state"), args.cutoff)
    return spec, make_state(spec)


def _parse_grid(text: str, default_radius: float, default_points: int):
    if text is None:
        return default_radius, default_points
    try:
        if ":" in text:
            radius, points = text.split(":")
            radius, points = float(radius), int(points)
        else:
            radius, points = default_radius, int(text)
    except ValueError as exc:
        raise InputError(f"--grid expects RADIUS:POINTS or POINTS, got {text!r}") from exc
    if radius <= 0 or points < 2:
        raise InputError("--grid needs a positive radius and at least 2 points")
    return radius, points


# -- commands -----------------------------------------------------------------

def cmd_eval(args) -> int:
    spec, state = _state(args)
    data = load_json(args.points, POINTS_SCHEMA, "points")
    points = parse_points(data)
    tol = data.get("tolerance", VERDICT_TOL)
    matrix = build_matrix(state, points)
    rep = report(matrix, tol)
    outputs = rep.to_dict()
    outputs["normalized_determinant"] = rep.determinant * normalization_scale(points)
    outputs["matrix"] = matrix.hadamard
    params = {"points": [{"alpha": list(p.amplitudes), "sigma": list(p.widths)}
                         for p in points], "tolerance": tol}
    _emit_record(run_record("eval", spec, params, outputs, None, __version__), args.out)
    return EXIT_NONCLASSICAL if rep.nonclassical else EXIT_OK


def cmd_qfunc(args) -> int:
    spec, state = _state(args)
    radius, n = _parse_grid(args.grid, 4.0, 81)
    axis = np.linspace(-radius, radius, n)
    sigma = args.sigma
    meta = {"command": "qfunc", "state": json.dumps(spec.to_dict(), sort_keys=True),
            "sigma": format(sigma, ".17g")}
    if state.mode_count == 1:
        re, im = np.meshgrid(axis, axis, indexing="ij")
        vals = sigma / math.pi * nexp_many(state, re + 1j * im, sigma)
        rows = zip(re.ravel(), im.ravel(), vals.ravel())
        text = csv_text(["re_alpha", "im_alpha", "value"], rows, meta)
    elif state.mode_count == 2:
        # real amplitudes in both modes, the slice shown for two-mode Husimi surfaces
        rows = [(x, y, distribution(state, PhasePoint([x, y], [sigma, sigma])))
                for x in axis for y in axis]
        text = csv_text(["alpha1", "alpha2", "value"], rows, meta)
    else:
        raise InputError("qfunc supports one- and two-mode states")
    _emit(text, args.out)
    return EXIT_OK


def cmd_scan(args) -> int:
    spec, state = _state(args)
    criterion, axes, fixed = parse_scan(load_json(args.search, SCAN_SCHEMA, "scan"))
    table = scan(state, criterion, axes, fixed)
    meta = {"command": "scan", "criterion": criterion,
            "state": json.dumps(spec.to_dict(), sort_keys=True),
            "fixed": json.dumps({k: repr(v) for k, v in fixed.items()}, sort_keys=True),
            "failed_cells": len(table.errors)}
    _emit(csv_text(list(table.handles) + ["value"], table.rows(), meta), args.out)
    for idx, msg in table.errors:
        print(f"cell {idx}: {msg}", file=sys.stderr)
    finite = table.values[np.isfinite(table.values)]
    return EXIT_NONCLASSICAL if finite.size and finite.min() < -VERDICT_TOL else EXIT_OK


def cmd_optimize(args) -> int:
    spec, state = _state(args)
    search = parse_search(load_json(args.search, SEARCH_SCHEMA, "search"), args.seed)
    result = minimize(state, search)
    outputs = result.to_dict()
    outputs["nonclassical"] = result.best_value < -VERDICT_TOL
    params = {"criterion": search.criterion,
              "free": [[b.handle, b.low, b.high] for b in search.free],
              "fixed": search.fixed, "strategy": search.strategy,
              "grid_resolution": search.grid_resolution, "max_iters": search.max_iters,
              "restarts": search.restarts}
    _emit_record(run_record("optimize", spec, params, outputs, search.seed, __version__),
                 args.out)
    return EXIT_NONCLASSICAL if outputs["nonclassical"] else EXIT_OK


def cmd_simulate(args) -> int:
    spec, state = _state(args)
    det = parse_detector(load_json(args.detector, DETECTOR_SCHEMA, "detector"))
    scheme_data = load_json(args.scheme, SCHEME_SCHEMA, "scheme")
    config = parse_scheme(scheme_data, args.seed)
    resamples = scheme_data.get("resamples", 2000)
    est = estimate_matrix(state, det, config)
    boot = bootstrap_det(est, resamples, config.seed)
    outputs = {"estimated_matrix": est.to_dict(), "bootstrap": boot.to_dict(),
               "alphas": lo_to_alpha(config),
               "width": det.eta * config.width_scale}
    params = {"detector": {"eta": det.eta, "delta": det.delta, "chi": det.chi},
              "scheme": {"t": config.t, "r": config.r,
                         "lo_amplitudes": list(config.lo_amplitudes),
                         "shots": config.shots, "resamples": resamples}}
    _emit_record(run_record("simulate", spec, params, outputs, config.seed, __version__),
                 args.out)
    return EXIT_NONCLASSICAL if boot.nonclassical else EXIT_OK


# -- figure datasets ----------------------------------------------------------

def fock_closed_form(n: int) -> float:
    """Minimal two-point Husimi determinant of ``|n>`` with ``alpha_1 = 0``."""
    return -math.exp(-2 * n) * (n / 2) ** (2 * n) / (math.pi * math.factorial(n)) ** 2


def figure_fig2(resolution):
    rows = []
    for n in range(1, 11):
        state = make_state(StateSpec("fock", {"n": n}))
        a2 = math.sqrt(2 * n)
        rows.append((n, a2, qq_pair(state, 0, a2), fock_closed_form(n)))
    meta = {"figure": "fig2", "criterion": "qq_pair", "state": "fock n=1..10",
            "points": "alpha1=0, alpha2=sqrt(2n)"}
    return ["n", "alpha2", "det", "det_closed_form"], rows, meta


def squeezed_minimum(r: float, resolution: int = 41, radius: float = 4.0):
    spec = StateSpec("squeezed_vacuum", {"r": r})
    search = SearchSpec("qq_pair", (Bound("a2", -radius, radius),
                                    Bound("a2.im", -radius, radius)),
                        {"a1": 0}, grid_resolution=resolution)
    return minimize(analytic_q(spec), search)


def figure_fig3(resolution):
    rows = []
    for r in np.round(np.arange(151) * 0.01, 2):
        res = squeezed_minimum(float(r))
        spec = StateSpec("squeezed_vacuum", {"r": float(r)})
        a_closed = optimal_point(spec)
        rows.append((float(r), 10 * math.log10(math.exp(-2 * r)), res.best_params["a2"],
                     res.best_params["a2.im"], res.best_value, a_closed.real,
                     qq_pair(analytic_q(spec), 0, a_closed)))
    meta = {"figure": "fig3", "criterion": "qq_pair",
            "state": "squeezed_vacuum phi=0, r=0..1.5 step 0.01",
            "search": "alpha1=0, alpha2 in [-4,4]x[-4,4]"}
    header = ["r", "squeezing_db", "alpha2_re", "alpha2_im", "det_min",
              "alpha2_closed_form", "det_closed_form"]
    return header, rows, meta


def figure_fig4b(resolution):
    spec = StateSpec("phase_diffused_tmsv", {"lam": math.sqrt(0.5)})
    q = analytic_q(spec)
    axis = np.linspace(0, 2.5, resolution)
    rows = [(a, b, qq_multi(q, [a, 0], [0, b])) for a in axis for b in axis]
    meta = {"figure": "fig4b", "criterion": "qq_multi",
            "state": "phase_diffused_tmsv |lambda|^2=1/2",
            "points": "p1=(alpha,0), p2=(0,beta)"}
    return ["abs_alpha", "abs_beta", "det"], rows, meta


def figure_fig5(resolution):
    rows = []
    axis = np.linspace(-3, 3, resolution)
    for g in np.round(np.arange(1, 21) * 0.1, 1):
        q = analytic_q(StateSpec("cat", {"gamma": float(g), "modes": 3, "parity": -1}))
        for a in axis:
            d = qq_multi(q, [a] * 3, [0] * 3)
            rows.append((float(g), a, d, 1e4 * d))
    meta = {"figure": "fig5", "criterion": "qq_multi", "state": "cat modes=3 parity=-1",
            "points": "p1=(alpha1,alpha1,alpha1), p2=(0,0,0)"}
    return ["gamma", "alpha1", "det", "det_x1e4"], rows, meta


def figure_fig6(resolution):
    state = make_state(StateSpec("cat", {"gamma": 1.0}))
    eta, chi = 1.0, 0.01
    axis = np.linspace(-3, 3, resolution)
    diag1 = {x: nonlinear_pair_expectation(state, x, x, eta, chi) for x in axis}
    diag2 = {y: nonlinear_pair_expectation(state, 1j * y, 1j * y, eta, chi) for y in axis}
    rows = []
    for x in axis:
        for y in axis:
            cross = nonlinear_pair_expectation(state, x, 1j * y, eta, chi)
            rows.append((x, y, diag1[x] * diag2[y] - cross ** 2))
    meta = {"figure": "fig6", "criterion": "nonlinear_pair_criterion",
            "state": "cat gamma=1 modes=1 parity=+1", "eta": eta, "chi": chi}
    return ["re_alpha1", "im_alpha2", "det"], rows, meta


_FIGURES = {"fig2": figure_fig2, "fig3": figure_fig3, "fig4b": figure_fig4b,
            "fig5": figure_fig5, "fig6": figure_fig6}


def cmd_reproduce(args) -> int:
    _, resolution = _parse_grid(args.grid, 4.0, 81)
    header, rows, meta = _FIGURES[args.figure](resolution)
    _emit(csv_text(header, rows, meta), args.out)
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psmatrix", description="Phase-space matrix nonclassicality tests")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, state=True):
        if state:
            p.add_argument("--state", required=True, help="state JSON file")
            p.add_argument("--cutoff", type=int, help="Fock cutoff per mode (overrides file)")
        p.add_argument("--out", help="output file (default: standard output)")

    p = sub.add_parser("eval", help="build a phase-space matrix and test it")
    common(p)
    p.add_argument("--points", required=True, help="points JSON file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("qfunc", help="dump P(alpha; sigma) on a grid as CSV")
    common(p)
    p.add_argument("--sigma", type=float, default=1.0, help="width (1 = Husimi, 2 = Wigner)")
    p.add_argument("--grid", help="RADIUS:POINTS (default 4:81)")
    p.set_defaults(func=cmd_qfunc)

    p = sub.add_parser("scan", help="tabulate a criterion on a 1-D or 2-D grid")
    common(p)
    p.add_argument("--search", required=True, help="scan JSON file")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("optimize", help="minimize a criterion over free parameters")
    common(p)
    p.add_argument("--search", required=True, help="search JSON file")
    p.add_argument("--seed", type=int, help="override the search seed")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="Monte Carlo click-detector measurement")
    common(p)
    p.add_argument("--detector", required=True, help="detector JSON file")
    p.add_argument("--scheme", required=True, help="scheme JSON file")
    p.add_argument("--seed", type=int, help="override the scheme seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce", help="write a figure dataset as CSV")
    p.add_argument("figure", choices=FIGURES)
    p.add_argument("--grid", help="points per axis for 2-D datasets (default 81)")
    common(p, state=False)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "seed", None) is not None and args.seed < 0:
            parser.error("--seed must be nonnegative")
    except SystemExit as exc:
        # usage errors and --help/--version end here; return their code
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    try:
        return args.func(args)
    except (InputError, CutoffError, DomainError, TruncationError, SeriesConvergenceError,
            ValueError, ArithmeticError, OSError) as exc:
        print(f"psmatrix {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
