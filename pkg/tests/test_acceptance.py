"""End-to-end acceptance checks, one test per criterion.

The terminal summary (see conftest.py) prints a PASS/FAIL line per criterion.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from _support import fock_minimum, random_amplitude, random_classical_state
from psmatrix import witness
from psmatrix.cli import squeezed_minimum
from psmatrix.core import (
    PhasePoint,
    _mode_operator,
    check_normalization,
    gaussian_pair_expectation,
    nexp,
    nonlinear_pair_expectation,
    nonlinear_pair_expectation_fd,
    pair_geometry,
)
from psmatrix.detector import DetectorModel, SchemeConfig, bootstrap_det, estimate_matrix
from psmatrix.optimize import Bound, SearchSpec, minimize
from psmatrix.states import StateSpec, analytic_q, make_state, optimal_point


def test_criterion_01_fock_optimum():
    start = time.perf_counter()
    for n in range(1, 9):
        state = make_state(StateSpec("fock", {"n": n}))
        spec = SearchSpec("qq_pair", (Bound("a2", -5, 5), Bound("a2.im", -5, 5)), {"a1": 0})
        res = minimize(state, spec.phase_reduced())
        assert "a2.im" not in res.best_params
        assert abs(res.best_params["a2"] - math.sqrt(2 * n)) < 1e-3
        exact = fock_minimum(n)
        assert abs(res.best_value - exact) <= 1e-10 * abs(exact)
    assert time.perf_counter() - start < 10


def test_criterion_02_squeezed_optimum_location():
    start = time.perf_counter()
    rs = np.round(np.arange(5, 151) * 0.01, 2)
    values = np.array([squeezed_minimum(float(r)).best_value for r in rs])
    assert np.all(values < 0)
    r_best = rs[np.argmin(values)]
    assert 0.50 <= r_best <= 0.65
    # 4.95 dB of squeezing
    assert abs(r_best - 0.57) <= 0.01
    assert time.perf_counter() - start < 60


@pytest.mark.parametrize("r", [0.2, 0.57, 1.0])
def test_criterion_03_closed_form_optimizer(r):
    spec = StateSpec("squeezed_vacuum", {"r": r})
    res = squeezed_minimum(r)
    found = complex(res.best_params["a2"], res.best_params["a2.im"])
    closed = optimal_point(spec)
    assert abs(abs(found) - abs(closed)) < 1e-3
    assert res.best_value <= witness.qq_pair(analytic_q(spec), 0, closed) + 1e-15


ORACLE_FAMILIES = [
    StateSpec("fock", {"n": 3}),
    StateSpec("fock", {"n": [1, 2]}),
    StateSpec("coherent", {"beta": 1.2 - 0.4j}),
    StateSpec("thermal", {"nbar": 0.8}),
    StateSpec("squeezed_vacuum", {"r": 0.57}),
    StateSpec("squeezed_vacuum", {"r": 0.8, "phi": 1.1}),
    StateSpec("cat", {"gamma": 1.0, "modes": 1, "parity": 1}),
    StateSpec("cat", {"gamma": 0.7 + 0.3j, "modes": 1, "parity": -1}),
    StateSpec("cat", {"gamma": 1.0, "modes": 3, "parity": -1}),
    StateSpec("phase_diffused_tmsv", {"lam": math.sqrt(0.5)}),
    StateSpec("coherent_mixture", {"betas": [1, -1j, 0.5], "weights": [0.2, 0.3, 0.5]}),
]


@pytest.mark.parametrize("spec", ORACLE_FAMILIES, ids=lambda s: s.kind)
def test_criterion_04_analytic_q_matches_oracle(spec):
    rng = np.random.default_rng(4)
    state, q = make_state(spec), analytic_q(spec)
    n = spec.mode_count
    for _ in range(100):
        amps = [random_amplitude(rng, 4.0) for _ in range(n)]
        oracle = nexp(state, PhasePoint(amps, [1.0] * n))
        assert abs(oracle - math.pi ** n * q(amps)) < 1e-8


def test_criterion_05_pair_factorization():
    rng = np.random.default_rng(5)
    for _ in range(100):
        beta = random_amplitude(rng, 2.0)
        a1, a2 = random_amplitude(rng, 2.5), random_amplitude(rng, 2.5)
        s1, s2 = rng.uniform(0, 1.0, size=2)
        direct = math.exp(-s1 * abs(beta - a1) ** 2) * math.exp(-s2 * abs(beta - a2) ** 2)
        g = pair_geometry(a1, s1, a2, s2)
        factored = (math.exp(-g.reduced_width * abs(g.delta_alpha) ** 2)
                    * math.exp(-g.total_width * abs(beta - g.barycenter) ** 2))
        assert abs(direct - factored) <= 1e-10 * direct
        state = make_state(StateSpec("coherent", {"beta": beta}))
        via_state = gaussian_pair_expectation(state, (a1, s1), (a2, s2))
        # the Fock sum carries an absolute rounding floor near 1e-16
        assert abs(via_state - direct) <= 1e-10 * direct + 1e-14


def _draw_soundness(criterion, rng, i):
    """One random (state, value) draw for ``criterion`` on a classical state."""
    modes = 2 if criterion in ("qq_multi", "wigner_husimi_two_mode") else 1
    _, state = random_classical_state(rng, i, modes)
    amp = lambda: random_amplitude(rng, 3.0)  # noqa: E731
    if criterion == "qq_pair":
        return witness.qq_pair(state, amp(), amp())
    if criterion == "pair_criterion":
        s1, s2 = rng.uniform(0.05, 1.0, size=2)
        return witness.pair_criterion(state, (amp(), s1), (amp(), s2))
    if criterion == "three_by_three":
        s1, s2 = rng.uniform(0.05, 1.0, size=2)
        return witness.three_by_three(state, (amp(), s1), (amp(), s2))
    if criterion == "chebyshev_criterion":
        count = int(rng.integers(2, 5))
        sigmas = rng.uniform(0.05, 2.0 / count, size=count)
        return witness.chebyshev_criterion(state, amp(), sigmas)
    if criterion == "qq_multi":
        return witness.qq_multi(state, [amp(), amp()], [amp(), amp()])
    if criterion == "wigner_husimi_two_mode":
        return witness.wigner_husimi_two_mode(state, amp(), amp())
    if criterion == "nonlinear_pair_criterion":
        eta, chi = rng.uniform(0.9, 1.0), rng.uniform(0.0, 0.01)
        return witness.nonlinear_pair_criterion(state, amp(), amp(), eta, chi)
    raise AssertionError(criterion)


@pytest.mark.parametrize("criterion", [
    "qq_pair", "pair_criterion", "three_by_three", "chebyshev_criterion",
    "qq_multi", "wigner_husimi_two_mode", "nonlinear_pair_criterion"])
def test_criterion_06_classical_soundness(criterion):
    rng = np.random.default_rng(6)
    values = np.array([_draw_soundness(criterion, rng, i) for i in range(500)])
    assert values.min() >= -1e-9, f"{criterion}: min {values.min():.3g}"


def test_criterion_07_coherent_saturation():
    rng = np.random.default_rng(7)
    for trial in range(100):
        modes = 1 + trial % 3
        beta = [random_amplitude(rng, 1.5) for _ in range(modes)]
        state = make_state(StateSpec("coherent", {"beta": beta}))
        k = int(rng.integers(2, 6))
        points = [PhasePoint([random_amplitude(rng, 2.5) for _ in range(modes)],
                             rng.uniform(0, 1, size=modes)) for _ in range(k)]
        m = witness.build_matrix(state, points).hadamard
        for i in range(k):
            for j in range(i + 1, k):
                for p in range(k):
                    for q in range(p + 1, k):
                        minor = m[i, p] * m[j, q] - m[i, q] * m[j, p]
                        assert abs(minor) < 1e-10


def test_criterion_08_phase_diffused_tmsv():
    spec = StateSpec("phase_diffused_tmsv", {"lam": math.sqrt(0.5)})
    q, state = analytic_q(spec), make_state(spec)
    assert witness.qq_multi(q, [1, 0], [0, 1]) < 0
    assert witness.qq_multi(state, [1, 0], [0, 1]) < 0
    axis = np.linspace(0, 2.5, 26)
    grid = np.array([[witness.qq_multi(q, [a, 0], [0, b]) for b in axis] for a in axis])
    assert np.all(grid[1:, 1:] < 0)
    # magnitude peaks with both amplitudes around one
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    assert 0.5 <= axis[i] <= 1.5 and 0.5 <= axis[j] <= 1.5


def test_criterion_09_tripartite_odd_cat():
    gammas = [0.1, 0.5, 1.0, 1.5, 2.0]
    axis = np.linspace(-3, 3, 121)
    minima = {}
    for g in gammas:
        spec = StateSpec("cat", {"gamma": g, "modes": 3, "parity": -1})
        q = analytic_q(spec)
        values = np.array([witness.qq_multi(q, [a] * 3, [0] * 3) for a in axis])
        minima[g] = values.min()
        a_best = axis[np.argmin(values)]
        oracle = witness.qq_multi(make_state(spec), [a_best] * 3, [0] * 3)
        assert abs(oracle - minima[g]) <= 1e-8 * abs(minima[g])
    assert all(v < 0 for v in minima.values())
    # the violation fades for large gamma; below gamma ~ 0.4 it is not monotone
    tail = [abs(minima[g]) for g in (0.5, 1.0, 1.5, 2.0)]
    assert all(a > b for a, b in zip(tail, tail[1:]))
    assert abs(minima[2.0]) < abs(minima[0.1])


def test_criterion_10_nonlinear_criterion():
    state = make_state(StateSpec("cat", {"gamma": 1.0}))
    eta, chi = 1.0, 0.01
    axis = np.linspace(-3, 3, 7)
    grid = np.array([[witness.nonlinear_pair_criterion(state, x, 1j * y, eta, chi)
                      for y in axis] for x in axis])
    assert grid.min() < -1e-3
    for a1, a2 in [(0.0, -0.5j), (1.0, 1.0j), (-2.0, 0.5j), (0.5, -2.0j)]:
        for p, q in [(a1, a1), (a2, a2), (a1, a2)]:
            series = nonlinear_pair_expectation(state, p, q, eta, chi)
            fd = nonlinear_pair_expectation_fd(state, p, q, eta, chi)
            assert abs(series - fd) < 1e-6


NORMALIZATION_FAMILIES = [
    StateSpec("fock", {"n": 3}),
    StateSpec("coherent", {"beta": 1 + 1j}),
    StateSpec("thermal", {"nbar": 1.0}),
    StateSpec("squeezed_vacuum", {"r": 0.57}),
    StateSpec("cat", {"gamma": 1.0, "parity": 1}),
    StateSpec("cat", {"gamma": 1.0, "parity": -1}),
    StateSpec("coherent_mixture", {"betas": [1, -1j, 0.5], "weights": [0.2, 0.3, 0.5]}),
]


def _tmsv_normalization(state, sigma, radius=10.0, points=501):
    # phase-diffused states depend on |alpha_1|, |alpha_2| only: radial quadrature
    r = np.linspace(0, radius, points)
    diag = np.array([np.real(np.diag(_mode_operator(complex(x), sigma, state.cutoff)))
                     for x in r])
    pops = np.diag(state.populations)
    values = (diag * pops) @ diag.T * (sigma / math.pi) ** 2
    ring = 2 * math.pi * r
    inner = np.trapezoid(values * ring[None, :], r, axis=1)
    return float(np.trapezoid(inner * ring, r))


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_criterion_11_normalization_and_limit(sigma):
    for spec in NORMALIZATION_FAMILIES:
        state = make_state(spec)
        assert abs(check_normalization(state, sigma) - 1) < 1e-4, spec.kind
    tmsv = make_state(StateSpec("phase_diffused_tmsv", {"lam": math.sqrt(0.5)}))
    assert abs(_tmsv_normalization(tmsv, sigma) - 1) < 1e-4
    # (pi/sigma) P -> 1 as sigma -> 0, within 5 sigma <n>
    for spec in NORMALIZATION_FAMILIES + [StateSpec("phase_diffused_tmsv", {"lam": 0.7})]:
        state = make_state(spec)
        n = state.mode_count
        mean_n = sum(state.mean_photon_number(m) for m in range(n))
        for small in (1e-3, 1e-4):
            value = nexp(state, PhasePoint([0] * n, [small] * n))
            assert abs(value - 1) < max(5 * small * mean_n, 1e-14)


def _certifications(spec, delta, seeds):
    state = make_state(spec)
    det = DetectorModel(eta=1.0, delta=delta)
    hits = 0
    for seed in seeds:
        config = SchemeConfig.for_points([0, math.sqrt(2)], shots=10 ** 6, seed=seed)
        boot = bootstrap_det(estimate_matrix(state, det, config), 2000, seed)
        hits += boot.nonclassical
    return hits


def test_criterion_12_simulator_fidelity():
    start = time.perf_counter()
    seeds = range(100)
    fock = StateSpec("fock", {"n": 1})
    control = StateSpec("coherent", {"beta": 1.0})
    counts = {(name, delta): _certifications(spec, delta, seeds)
              for name, spec in (("fock", fock), ("coherent", control))
              for delta in (0.0, 0.1)}
    print("certified out of 100 seeds:", counts)
    assert time.perf_counter() - start < 300
    assert counts["fock", 0.0] >= 95
    assert counts["fock", 0.1] >= 95
    assert counts["coherent", 0.0] == 0, f"coherent control certified: {counts}"
    assert counts["coherent", 0.1] == 0, f"coherent control certified: {counts}"


def _run_cli(args, tmp_path, name):
    out = tmp_path / name
    proc = subprocess.run([sys.executable, "-m", "psmatrix.cli", *args, "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode in (0, 2), proc.stderr
    text = out.read_text()
    if text.startswith("{"):
        record = json.loads(text)
        record.pop("timestamp")
        return proc.returncode, json.dumps(record, sort_keys=True)
    return proc.returncode, text


def test_criterion_13_determinism(tmp_path):
    files = {
        "state.json": {"kind": "fock", "n": 1},
        "coh.json": {"kind": "coherent", "beta": [0.5, 0.5]},
        "points.json": {"points": [{"alpha": 0, "sigma": 0.5},
                                   {"alpha": [1.414, 0], "sigma": 0.5}]},
        "search.json": {"criterion": "qq_pair", "free": [{"handle": "a2", "low": -3, "high": 3},
                                                         {"handle": "a2.im", "low": -3, "high": 3}],
                        "fixed": {"a1": 0}, "grid_resolution": 9, "seed": 3},
        "scan.json": {"criterion": "qq_pair", "axes": [{"handle": "a2", "start": 0, "stop": 3,
                                                        "num": 7}], "fixed": {"a1": 0}},
        "detector.json": {"eta": 1.0, "delta": 0.1},
        "scheme.json": {"points": [0, 1.4142135623730951], "shots": 100000, "seed": 11,
                        "resamples": 500},
    }
    for name, data in files.items():
        (tmp_path / name).write_text(json.dumps(data))
    p = lambda name: str(tmp_path / name)  # noqa: E731
    commands = [
        ["eval", "--state", p("state.json"), "--points", p("points.json")],
        ["qfunc", "--state", p("coh.json"), "--grid", "2:9"],
        ["scan", "--state", p("state.json"), "--search", p("scan.json")],
        ["optimize", "--state", p("state.json"), "--search", p("search.json")],
        ["optimize", "--state", p("state.json"), "--search", p("search.json"), "--seed", "8"],
        ["simulate", "--state", p("state.json"), "--detector", p("detector.json"),
         "--scheme", p("scheme.json")],
        ["simulate", "--state", p("coh.json"), "--detector", p("detector.json"),
         "--scheme", p("scheme.json"), "--seed", "5"],
        ["reproduce", "fig2"],
        ["reproduce", "fig4b", "--grid", "6"],
        ["reproduce", "fig5", "--grid", "5"],
        ["reproduce", "fig6", "--grid", "3"],
    ]
    for i, cmd in enumerate(commands):
        first = _run_cli(cmd, tmp_path, f"a{i}")
        second = _run_cli(cmd, tmp_path, f"b{i}")
        assert first == second, cmd
