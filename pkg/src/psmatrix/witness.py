"""Phase-space matrices and the nonclassicality criteria built from them.

A list of phase points ``(alpha_i; sigma_i)`` defines the matrix

    M_ij = <: exp(-sigma_i n(alpha_i)) exp(-sigma_j n(alpha_j)) :>,

which is positive semidefinite for every classical state.  Each entry splits
into a classical Gaussian factor and a quantum expectation at the pair
barycenter, ``M = M_c * M_q`` (entrywise).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DensityMatrix,
    DomainError,
    PhasePoint,
    distribution,
    nexp,
    nonlinear_pair_expectation,
    pair_geometry,
)
from .states import AnalyticQ

__all__ = [
    "PhaseSpaceMatrix",
    "WitnessReport",
    "build_matrix",
    "report",
    "normalization_scale",
    "qq_pair",
    "qq_multi",
    "wq_criterion",
    "pair_criterion",
    "three_by_three",
    "chebyshev_criterion",
    "wigner_husimi_two_mode",
    "nonlinear_pair_criterion",
    "nonlinear_matrix",
    "criterion_matrix",
]

SYMMETRY_TOL = 1e-8


@dataclass(frozen=True)
class PhaseSpaceMatrix:
    """Row/column labels plus the classical, quantum and combined matrices."""

    points: tuple
    classical: np.ndarray
    quantum: np.ndarray
    hadamard: np.ndarray

    @property
    def size(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class WitnessReport:
    determinant: float
    leading_minors: tuple
    min_eigenvalue: float
    nonclassical: bool
    margin: float
    tolerance: float = 1e-9
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "determinant": self.determinant,
            "leading_minors": list(self.leading_minors),
            "min_eigenvalue": self.min_eigenvalue,
            "nonclassical": self.nonclassical,
            "margin": self.margin,
            "tolerance": self.tolerance,
        }
        out.update(self.extras)
        return out


def _as_points(points):
    out = []
    for p in points:
        out.append(p if isinstance(p, PhasePoint) else PhasePoint(*p))
    if not out:
        raise ValueError("need at least one phase point")
    if len({p.mode_count for p in out}) != 1:
        raise ValueError("all points must share a mode count")
    return tuple(out)


def build_matrix(state: DensityMatrix, points) -> PhaseSpaceMatrix:
    """Assemble ``M_c``, ``M_q`` and ``M = M_c * M_q`` for the given points.

    ``points`` holds :class:`PhasePoint` values or ``(amplitudes, widths)`` pairs.
    """
    points = _as_points(points)
    if points[0].mode_count != state.mode_count:
        raise ValueError(
            f"points have {points[0].mode_count} modes, state has {state.mode_count}")
    k = len(points)
    mc = np.ones((k, k))
    mq = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            factor, amps, wids = 1.0, [], []
            for a1, s1, a2, s2 in zip(points[i].amplitudes, points[i].widths,
                                      points[j].amplitudes, points[j].widths):
                geo = pair_geometry(a1, s1, a2, s2)
                factor *= math.exp(-geo.reduced_width * abs(geo.delta_alpha) ** 2)
                amps.append(geo.barycenter)
                wids.append(geo.total_width)
            mc[i, j] = mc[j, i] = factor
            mq[i, j] = mq[j, i] = nexp(state, PhasePoint(amps, wids))
    for a in (mc, mq):
        a.setflags(write=False)
    had = mc * mq
    had.setflags(write=False)
    return PhaseSpaceMatrix(points, mc, mq, had)


def report(matrix, tolerance: float = 1e-9) -> WitnessReport:
    """Determinant, leading principal minors and smallest eigenvalue of ``matrix``.

    ``matrix`` is a :class:`PhaseSpaceMatrix` or any square array.  The state
    is flagged nonclassical when the smallest diagnostic is below ``-tolerance``.
    """
    m = matrix.hadamard if isinstance(matrix, PhaseSpaceMatrix) else np.asarray(matrix, float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    asym = np.abs(m - m.T).max(initial=0.0)
    if asym > SYMMETRY_TOL:
        raise ValueError(f"matrix is not symmetric (max |M - M^T| = {asym:.3g})")
    minors = tuple(float(np.linalg.det(m[:k, :k])) for k in range(1, m.shape[0] + 1))
    det = minors[-1]
    lam = float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])
    worst = min(det, lam, *minors)
    return WitnessReport(det, minors, lam, bool(worst < -tolerance), max(0.0, -worst),
                         tolerance)


def normalization_scale(points) -> float:
    """``prod (2 sigma / pi)`` over every positive width in ``points``.

    Multiplying a 2x2 determinant by this factor gives the distribution-level
    form of the criterion (e.g. the two-point Husimi test for widths 1/2).
    """
    scale = 1.0
    for p in _as_points(points):
        for s in p.widths:
            if s > 0:
                scale *= 2 * s / math.pi
    return scale


# -- Husimi-based criteria (oracle or closed-form route) ----------------------

def _q(source, amps) -> float:
    if isinstance(source, AnalyticQ):
        return float(source(np.asarray(amps, dtype=complex)))
    if isinstance(source, DensityMatrix):
        n = source.mode_count
        return nexp(source, PhasePoint(amps, [1.0] * n)) / math.pi ** n
    raise TypeError(f"expected DensityMatrix or AnalyticQ, got {type(source).__name__}")


def _modes(source) -> int:
    return source.mode_count


def qq_multi(source, p1, p2) -> float:
    """``Q(p1) Q(p2) - exp(-sum |p2 - p1|^2 / 2) Q((p1 + p2)/2)^2`` for N-mode points."""
    p1 = np.atleast_1d(np.asarray(p1, dtype=complex))
    p2 = np.atleast_1d(np.asarray(p2, dtype=complex))
    if p1.shape != p2.shape or p1.size != _modes(source):
        raise ValueError(f"points must have {_modes(source)} amplitudes each")
    mid = (p1 + p2) / 2
    gauss = math.exp(-np.sum(np.abs(p2 - p1) ** 2) / 2)
    return _q(source, p1) * _q(source, p2) - gauss * _q(source, mid) ** 2


def qq_pair(source, a1: complex, a2: complex) -> float:
    """Two-point Husimi test; negative values certify nonclassicality.

    Equals ``det(M) / pi^2`` for the points ``(a1; 1/2)`` and ``(a2; 1/2)``.
    """
    if _modes(source) != 1:
        raise ValueError("qq_pair is single-mode; use qq_multi")
    return qq_multi(source, [a1], [a2])


# -- general-width criteria (oracle route) ------------------------------------

def _single(state: DensityMatrix, name: str):
    if not isinstance(state, DensityMatrix):
        raise TypeError(f"{name} needs a DensityMatrix")
    if state.mode_count != 1:
        raise ValueError(f"{name} is single-mode")


def _p(state, alpha, sigma):
    return distribution(state, PhasePoint(alpha, sigma))


def wq_criterion(state: DensityMatrix, alpha: complex, sigma: float) -> float:
    """``P(alpha; 2 sigma) - (2 pi / sigma) P(alpha; sigma)^2``; at ``sigma=1`` this is ``W - 2 pi Q^2``."""
    _single(state, "wq_criterion")
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    return _p(state, alpha, 2 * sigma) - 2 * math.pi / sigma * _p(state, alpha, sigma) ** 2


def _pair_parts(state, p1, p2):
    p1 = p1 if isinstance(p1, PhasePoint) else PhasePoint(*p1)
    p2 = p2 if isinstance(p2, PhasePoint) else PhasePoint(*p2)
    if p1.mode_count != 1 or p2.mode_count != 1:
        raise ValueError("single-mode points expected")
    (a1,), (s1,) = p1.amplitudes, p1.widths
    (a2,), (s2,) = p2.amplitudes, p2.widths
    if s1 <= 0 or s2 <= 0:
        raise DomainError("widths must be positive")
    return a1, s1, a2, s2, pair_geometry(a1, s1, a2, s2)


def pair_criterion(state: DensityMatrix, p1, p2) -> float:
    """``P(a1;2s1) P(a2;2s2) - (4 s~/S) [exp(-s~|da|^2) P(A;S)]^2`` for two phase points."""
    _single(state, "pair_criterion")
    a1, s1, a2, s2, g = _pair_parts(state, p1, p2)
    cross = math.exp(-g.reduced_width * abs(g.delta_alpha) ** 2) * _p(state, g.barycenter,
                                                                     g.total_width)
    return (_p(state, a1, 2 * s1) * _p(state, a2, 2 * s2)
            - 4 * g.reduced_width / g.total_width * cross ** 2)


def three_by_three(state: DensityMatrix, p1, p2) -> float:
    """``det(M) / pi^2`` for the points ``p1``, ``p2`` and ``(0; 0)``, in factored form."""
    _single(state, "three_by_three")
    a1, s1, a2, s2, g = _pair_parts(state, p1, p2)
    r1 = _p(state, a1, s1) / s1
    r2 = _p(state, a2, s2) / s2
    d1 = _p(state, a1, 2 * s1) / (2 * s1) - math.pi * r1 ** 2
    d2 = _p(state, a2, 2 * s2) / (2 * s2) - math.pi * r2 ** 2
    cross = (math.exp(-g.reduced_width * abs(g.delta_alpha) ** 2)
             * _p(state, g.barycenter, g.total_width) / g.total_width - math.pi * r1 * r2)
    return d1 * d2 - cross ** 2


def chebyshev_criterion(state: DensityMatrix, alpha: complex, sigmas) -> float:
    """``P(alpha; S) - (S/pi) prod_i (pi/s_i) P(alpha; s_i)`` with ``S = sum(sigmas)``."""
    _single(state, "chebyshev_criterion")
    sigmas = [float(s) for s in sigmas]
    if len(sigmas) < 2 or min(sigmas) <= 0:
        raise DomainError("need at least two positive widths")
    total = sum(sigmas)
    prod = math.prod(math.pi / s * _p(state, alpha, s) for s in sigmas)
    return _p(state, alpha, total) - total / math.pi * prod


def wigner_husimi_two_mode(state: DensityMatrix, a1: complex, a2: complex) -> float:
    """``det(M) / pi^4`` of the two-mode 3x3 test from joint and marginal W and Q.

    ``[W1/2pi - Q1^2][W2/2pi - Q2^2] - [Q12 - Q1 Q2]^2`` with the marginals taken
    from partial traces.
    """
    if not isinstance(state, DensityMatrix) or state.mode_count != 2:
        raise ValueError("wigner_husimi_two_mode needs a two-mode DensityMatrix")
    m1, m2 = state.reduced([0]), state.reduced([1])
    w1, w2 = _p(m1, a1, 2.0), _p(m2, a2, 2.0)
    q1, q2 = _p(m1, a1, 1.0), _p(m2, a2, 1.0)
    q12 = distribution(state, PhasePoint([a1, a2], [1.0, 1.0]))
    return ((w1 / (2 * math.pi) - q1 ** 2) * (w2 / (2 * math.pi) - q2 ** 2)
            - (q12 - q1 * q2) ** 2)


# -- nonlinear detector -------------------------------------------------------

def nonlinear_matrix(state: DensityMatrix, alphas, eta: float, chi: float,
                     order=None) -> np.ndarray:
    """``<: Omega(a_i) Omega(a_j) :>`` for ``Omega = :exp(-eta n + chi n^2):``."""
    k = len(alphas)
    m = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            m[i, j] = m[j, i] = nonlinear_pair_expectation(state, alphas[i], alphas[j],
                                                           eta, chi, order)
    return m


def nonlinear_pair_criterion(state: DensityMatrix, a1: complex, a2: complex,
                             eta: float = 1.0, chi: float = 0.01, order=None) -> float:
    """``<:O1 O1:><:O2 O2:> - <:O1 O2:>^2`` with ``O_i = :exp(-eta n(a_i) + chi n(a_i)^2):``."""
    if state.mode_count != 1:
        raise ValueError("nonlinear_pair_criterion is single-mode")
    m = nonlinear_matrix(state, [a1, a2], eta, chi, order)
    return m[0, 0] * m[1, 1] - m[0, 1] ** 2


# -- matrix layouts behind the closed forms -----------------------------------

def criterion_matrix(name: str, state: DensityMatrix, **kw):
    """Return ``(matrix, scale)`` whose ``scale * det`` equals criterion ``name``.

    Supported: ``qq_pair(a1, a2)``, ``qq_multi(p1, p2)``, ``wq_criterion(alpha,
    sigma)``, ``pair_criterion(p1, p2)``, ``three_by_three(p1, p2)``,
    ``wigner_husimi_two_mode(a1, a2)``.
    """
    if name == "qq_pair":
        pts = [([kw["a1"]], 0.5), ([kw["a2"]], 0.5)]
        return build_matrix(state, pts), 1 / math.pi ** 2
    if name == "qq_multi":
        p1, p2 = np.atleast_1d(kw["p1"]), np.atleast_1d(kw["p2"])
        pts = [(p1, 0.5), (p2, 0.5)]
        return build_matrix(state, pts), 1 / math.pi ** (2 * len(p1))
    if name == "wq_criterion":
        sigma = kw["sigma"]
        return build_matrix(state, [(0, 0), (kw["alpha"], sigma)]), 2 * sigma / math.pi
    if name == "pair_criterion":
        pts = _as_points([kw["p1"], kw["p2"]])
        return build_matrix(state, pts), normalization_scale(pts)
    if name == "three_by_three":
        pts = list(_as_points([kw["p1"], kw["p2"]])) + [PhasePoint(0, 0)]
        return build_matrix(state, pts), 1 / math.pi ** 2
    if name == "wigner_husimi_two_mode":
        pts = [([0, 0], [0, 0]), ([kw["a1"], 0], [1, 0]), ([0, kw["a2"]], [0, 1])]
        return build_matrix(state, pts), 1 / math.pi ** 4
    raise ValueError(f"no matrix layout for criterion {name!r}")
