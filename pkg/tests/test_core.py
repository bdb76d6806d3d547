import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.special import eval_genlaguerre

from psmatrix.core import (
    DensityMatrix,
    DomainError,
    GridSpec,
    PhasePoint,
    SeriesConvergenceError,
    _laguerre_table,
    check_normalization,
    displaced_poly_gaussian,
    displacement_block,
    distribution,
    fd_weights,
    gaussian_pair_expectation,
    nexp,
    nexp_many,
    nonlinear_pair_expectation,
    nonlinear_pair_expectation_fd,
    pair_geometry,
    poly_moments,
    s_from_sigma,
    sigma_from_s,
)
from psmatrix.states import StateSpec, make_state

from _support import coherent_overlap_q

finite_amp = st.complex_numbers(max_magnitude=3.0, allow_nan=False, allow_infinity=False)


def fock(n, cutoff=None):
    return make_state(StateSpec("fock", {"n": n}, cutoff))


def vacuum():
    return fock(0)


# -- width parameter ----------------------------------------------------------

@pytest.mark.parametrize("s, sigma", [(-1, 1.0), (0, 2.0), (-3, 0.5)])
def test_sigma_from_s_examples(s, sigma):
    assert sigma_from_s(s) == sigma


@given(st.floats(min_value=-1e6, max_value=0.999, allow_nan=False))
def test_s_sigma_round_trip(s):
    assert s_from_sigma(sigma_from_s(s)) == pytest.approx(s, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("s", [1, 1.5])
def test_sigma_from_s_rejects_p_function(s):
    with pytest.raises(DomainError):
        sigma_from_s(s)


# -- phase points and geometry ------------------------------------------------

def test_phase_point_promotes_scalars_and_checks_lengths():
    p = PhasePoint(1 + 1j, 0.5)
    assert p.amplitudes == (1 + 1j,) and p.widths == (0.5,)
    assert PhasePoint([0, 1], 1).widths == (1.0, 1.0)
    with pytest.raises(ValueError):
        PhasePoint([0, 1, 2], [1, 1])
    with pytest.raises(DomainError):
        PhasePoint(0, -1)


@pytest.mark.parametrize("args, expected", [
    ((0, 0, 1.5, 0.7), (1.5, 1.5, 0.0, 0.7)),
    ((1j, 0.4, 1j, 0.4), (0, 1j, 0.2, 0.8)),
    ((1, 1, -1, 1), (-2, 0, 0.5, 2)),
    ((1, 0, 3, 0), (2, 2, 0.0, 0.0)),
])
def test_pair_geometry_examples(args, expected):
    g = pair_geometry(*args)
    assert (g.delta_alpha, g.barycenter, g.reduced_width, g.total_width) == pytest.approx(
        expected)


@given(finite_amp, st.floats(0.01, 2), finite_amp, st.floats(0.01, 2))
def test_pair_geometry_identity(a1, s1, a2, s2):
    # s1|b-a1|^2 + s2|b-a2|^2 = s~|da|^2 + S|b-A|^2 at any b
    g = pair_geometry(a1, s1, a2, s2)
    b = 0.3 - 0.2j
    lhs = s1 * abs(b - a1) ** 2 + s2 * abs(b - a2) ** 2
    rhs = g.reduced_width * abs(g.delta_alpha) ** 2 + g.total_width * abs(b - g.barycenter) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


# -- displacement elements ----------------------------------------------------

@pytest.mark.parametrize("alpha", [0.3, 1 - 0.5j, -2j, 2.5 + 1j])
def test_displacement_block_matches_matrix_exponential(alpha):
    d = 80
    a = np.diag(np.sqrt(np.arange(1, d)), 1)
    dense = expm(alpha * a.conj().T - np.conj(alpha) * a)
    block = displacement_block(alpha, 20, 20)
    assert np.abs(block - dense[:20, :20]).max() < 1e-12


def test_laguerre_table_matches_scipy():
    x = np.array([0.0, 0.5, 3.0, 12.0])
    table = _laguerre_table(x, 30, 25)
    j, k = np.meshgrid(np.arange(30), np.arange(25), indexing="ij")
    for g, xv in enumerate(x):
        ref = eval_genlaguerre(j, k, xv)
        assert np.allclose(table[g], ref, rtol=1e-11, atol=1e-11)


# -- nexp and distributions -----------------------------------------------------

@pytest.mark.parametrize("sigma", [0.0, 0.3, 1.0, 2.0])
def test_vacuum_at_origin_is_one(sigma):
    assert nexp(vacuum(), (0, sigma)) == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(finite_amp, finite_amp, st.floats(0.0, 2.0))
def test_coherent_state_is_gaussian(beta, alpha, sigma):
    state = make_state(StateSpec("coherent", {"beta": beta}))
    expected = math.exp(-sigma * abs(beta - alpha) ** 2)
    assert nexp(state, (alpha, sigma)) == pytest.approx(expected, rel=1e-9, abs=1e-13)


@pytest.mark.parametrize("sigma", [0.1, 0.5, 1.0, 1.7, 2.0])
def test_fock_one_at_origin(sigma):
    assert nexp(fock(1), (0, sigma)) == pytest.approx(1 - sigma, abs=1e-13)


@pytest.mark.parametrize("n", [0, 1, 4, 9])
def test_fock_husimi_closed_form(n):
    state = fock(n)
    for alpha in (0.4, 1.1 - 0.7j, 2.5j):
        x = abs(alpha) ** 2
        q = x ** n * math.exp(-x) / (math.pi * math.factorial(n))
        assert distribution(state, (alpha, 1.0)) == pytest.approx(q, rel=1e-10, abs=1e-15)


def test_wigner_of_fock_one_at_origin():
    assert distribution(fock(1), (0, 2.0)) == pytest.approx(-2 / math.pi, abs=1e-13)


def test_distribution_rejects_zero_width():
    with pytest.raises(DomainError):
        distribution(vacuum(), (0, 0.0))


@pytest.mark.parametrize("spec", [
    StateSpec("squeezed_vacuum", {"r": 0.57}),
    StateSpec("thermal", {"nbar": 1.3}),
    StateSpec("cat", {"gamma": 1.2 - 0.4j, "parity": -1}),
    StateSpec("coherent_mixture", {"betas": [1, -1j], "weights": [0.4, 0.6]}),
], ids=lambda s: s.kind)
def test_husimi_equals_coherent_overlap(spec):
    state = make_state(spec)
    for alpha in (0, 0.8 - 0.3j, -1.5 + 1j):
        assert distribution(state, (alpha, 1.0)) == pytest.approx(
            coherent_overlap_q(state, alpha), abs=1e-10)


def test_wide_widths_rejected_on_unbounded_states():
    state = make_state(StateSpec("thermal", {"nbar": 0.5}))
    with pytest.raises(DomainError):
        nexp(state, (0, 2.5))
    # bounded photon number is fine at any width
    assert nexp(fock(1), (0, 3.0)) == pytest.approx(-2.0)


def test_mode_count_mismatch():
    with pytest.raises(ValueError):
        nexp(vacuum(), PhasePoint([0, 0], [1, 1]))


def test_zero_width_point_is_identity():
    state = make_state(StateSpec("squeezed_vacuum", {"r": 0.4}))
    assert nexp(state, (1 + 1j, 0.0)) == 1.0


@pytest.mark.parametrize("spec", [
    StateSpec("squeezed_vacuum", {"r": 0.57}),
    StateSpec("cat", {"gamma": 1.0}),
    StateSpec("thermal", {"nbar": 0.7}),
], ids=lambda s: s.kind)
def test_cutoff_convergence(spec):
    state = make_state(spec)
    bigger = make_state(StateSpec(spec.kind, spec.params, int(state.cutoff * 1.25)))
    for point in [(0.5, 1.0), (-1 + 1j, 0.6), (0.2j, 2.0)]:
        assert abs(nexp(state, point) - nexp(bigger, point)) < 1e-8


def test_nexp_many_matches_nexp():
    state = make_state(StateSpec("cat", {"gamma": 1.3, "parity": -1}))
    alphas = np.array([[0, 0.5 + 0.1j], [-1.2j, 2 - 1j]])
    for sigma in (0.5, 1.0, 2.0):
        many = nexp_many(state, alphas, sigma)
        single = np.array([[nexp(state, (a, sigma)) for a in row] for row in alphas])
        assert np.allclose(many, single, atol=1e-12)


def test_multimode_product_state_factorizes():
    state = make_state(StateSpec("fock", {"n": [1, 2]}))
    a, b = 0.7, -0.4 + 1j
    joint = nexp(state, PhasePoint([a, b], [1.0, 0.6]))
    assert joint == pytest.approx(nexp(fock(1), (a, 1.0)) * nexp(fock(2), (b, 0.6)), rel=1e-11)


# -- pair expectation -----------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(finite_amp, finite_amp, finite_amp, st.floats(0, 1), st.floats(0, 1))
def test_pair_expectation_on_coherent_state(beta, a1, a2, s1, s2):
    state = make_state(StateSpec("coherent", {"beta": beta}))
    expected = math.exp(-s1 * abs(beta - a1) ** 2 - s2 * abs(beta - a2) ** 2)
    got = gaussian_pair_expectation(state, (a1, s1), (a2, s2))
    assert got == pytest.approx(expected, rel=1e-9, abs=1e-14)


def test_pair_expectation_zero_second_width():
    state = make_state(StateSpec("squeezed_vacuum", {"r": 0.3}))
    assert gaussian_pair_expectation(state, (0.4, 0.8), (2.0, 0.0)) == pytest.approx(
        nexp(state, (0.4, 0.8)), abs=1e-14)


def test_thermal_pair_at_origin():
    # Tr[rho_th (1 - 2)^n] = 1 / (1 + 2 nbar)
    nbar = 0.8
    state = make_state(StateSpec("thermal", {"nbar": nbar}))
    assert gaussian_pair_expectation(state, (0, 1.0), (0, 1.0)) == pytest.approx(
        1 / (1 + 2 * nbar), rel=1e-10)


# -- polynomial moments ----------------------------------------------------------

def test_poly_moments_examples():
    state = make_state(StateSpec("squeezed_vacuum", {"r": 0.5}))
    assert displaced_poly_gaussian(state, 0.3, 0.7, 0, 0) == pytest.approx(
        nexp(state, (0.3, 0.7)), abs=1e-13)
    assert abs(displaced_poly_gaussian(vacuum(), 0, 0.5, 1, 1)) < 1e-14
    beta = 1.2 - 0.5j
    coh = make_state(StateSpec("coherent", {"beta": beta}))
    assert displaced_poly_gaussian(coh, 0, 0.0, 1, 1) == pytest.approx(abs(beta) ** 2, rel=1e-10)


@pytest.mark.parametrize("p, q", [(0, 2), (3, 1), (2, 2)])
def test_poly_moments_on_coherent_state(p, q):
    beta, A, S = 0.9 + 0.4j, 0.2 - 0.1j, 0.6
    coh = make_state(StateSpec("coherent", {"beta": beta}))
    d = beta - A
    expected = np.conj(d) ** p * d ** q * math.exp(-S * abs(d) ** 2)
    table = poly_moments(coh, A, S, 3)
    assert table[p, q] == pytest.approx(expected, rel=1e-10)
    assert np.allclose(table, table.conj().T, atol=1e-13)


# -- nonlinear expectation ---------------------------------------------------------

def test_nonlinear_reduces_to_gaussian_at_zero_chi():
    state = make_state(StateSpec("cat", {"gamma": 1.0}))
    assert nonlinear_pair_expectation(state, 0.3, 1j, 0.8, 0.0) == gaussian_pair_expectation(
        state, (0.3, 0.8), (1j, 0.8))


@pytest.mark.parametrize("a1, a2", [(0, 0), (0.5, -0.7j), (1.5, 1.0)])
def test_nonlinear_vacuum_two_routes(a1, a2):
    eta, chi = 1.0, 0.01
    series = nonlinear_pair_expectation(vacuum(), a1, a2, eta, chi)
    fd = nonlinear_pair_expectation_fd(vacuum(), a1, a2, eta, chi)
    assert series == pytest.approx(fd, abs=1e-8)
    # first-order correction around exp(-eta |a1|^2 - eta |a2|^2)
    base = math.exp(-eta * (abs(a1) ** 2 + abs(a2) ** 2))
    first = base * (1 + chi * (abs(a1) ** 4 + abs(a2) ** 4))
    assert series == pytest.approx(first, rel=5 * chi ** 2 * 100 + 1e-12)


def test_nonlinear_coherent_state_closed_form():
    beta, eta, chi = 0.6 - 0.2j, 0.9, 0.008
    state = make_state(StateSpec("coherent", {"beta": beta}))
    omega = lambda a: math.exp(-eta * abs(beta - a) ** 2 + chi * abs(beta - a) ** 4)  # noqa: E731
    for a1, a2 in [(0, 0), (1j, -0.5), (2, 0.4j)]:
        got = nonlinear_pair_expectation(state, a1, a2, eta, chi)
        assert got == pytest.approx(omega(a1) * omega(a2), rel=1e-9)


def test_nonlinear_fixed_order_that_is_too_low_raises():
    state = make_state(StateSpec("coherent", {"beta": 2.0}))
    with pytest.raises(SeriesConvergenceError):
        nonlinear_pair_expectation(state, -1.0, -1.0, 1.0, 0.01, order=1)


def test_nonlinear_warns_outside_validity_bound():
    with pytest.warns(RuntimeWarning, match="validity"):
        nonlinear_pair_expectation(vacuum(), 0, 0, 0.2, 0.01)


def test_nonlinear_rejects_negative_chi():
    with pytest.raises(DomainError):
        nonlinear_pair_expectation(vacuum(), 0, 0, 1.0, -0.01)


@pytest.mark.parametrize("derivative, nodes", [(1, 3), (2, 5), (4, 9)])
def test_fd_weights_are_exact_on_polynomials(derivative, nodes):
    offsets = np.arange(nodes) - nodes // 2
    w = fd_weights(offsets * 0.1, derivative)
    for power in range(nodes):
        exact = math.factorial(power) if power == derivative else 0.0
        assert w @ (offsets * 0.1) ** power == pytest.approx(exact, abs=1e-6)


# -- normalization -------------------------------------------------------------------

def test_vacuum_normalization_on_radius_six_grid():
    assert abs(check_normalization(vacuum(), 1.0, GridSpec(6.0, 121)) - 1) < 1e-6


@pytest.mark.parametrize("spec", [StateSpec("fock", {"n": 3}),
                                  StateSpec("squeezed_vacuum", {"r": 0.57})],
                         ids=lambda s: s.kind)
def test_husimi_normalization(spec):
    assert abs(check_normalization(make_state(spec), 1.0) - 1) < 1e-4


def test_small_grid_warns_about_missing_mass():
    with pytest.warns(RuntimeWarning, match="cuts the distribution"):
        value = check_normalization(fock(3), 1.0, GridSpec(1.5, 31))
    assert value < 0.9


@pytest.mark.parametrize("sigma", [1e-3, 1e-4])
def test_zero_width_limit(sigma):
    state = make_state(StateSpec("thermal", {"nbar": 1.5}))
    value = math.pi / sigma * distribution(state, (0, sigma))
    assert abs(value - 1) < 5 * sigma * 1.5


# -- density matrix ---------------------------------------------------------------

def test_density_matrix_checks():
    with pytest.raises(ValueError, match="normalized"):
        DensityMatrix(1, 3, populations=[0.5, 0.2, 0.1])
    with pytest.raises(ValueError, match="Hermitian"):
        DensityMatrix.from_elements(np.array([[0.5, 0.1], [0.2, 0.5]]))
    with pytest.raises(ValueError, match="negative eigenvalue"):
        DensityMatrix.from_elements(np.array([[1.2, 0], [0, -0.2]]))


def test_reduced_state_of_product():
    state = make_state(StateSpec("coherent", {"beta": [0.5, -1j]}))
    marginal = state.reduced([1])
    ref = make_state(StateSpec("coherent", {"beta": -1j}, state.cutoff))
    assert np.allclose(marginal.elements, ref.elements, atol=1e-12)
