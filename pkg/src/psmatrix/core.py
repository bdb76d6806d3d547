"""Truncated Fock-basis numerics for normally ordered Gaussian expectations.

Everything here evaluates quantities of the form

    < : prod_m exp(-sigma_m n_m(alpha_m)) : >

for a bosonic state stored in a truncated number basis.  The identity
``:exp(-s a^dag a): = (1 - s)^n`` turns the normally ordered Gaussian into a
diagonal operator, so each expectation reduces to a photon-number sum over the
displaced state ``D(-alpha) rho D(-alpha)^dag``.  Displacement matrix elements
come from their associated-Laguerre closed form.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Sequence

import numpy as np
from scipy.signal import convolve2d
from scipy.special import eval_genlaguerre, gammaln

log = logging.getLogger(__name__)

DEFAULT_CUTOFF = 32
#: Largest width sum allowed on states with geometric photon-number tails.
GAUSSIAN_WIDTH_LIMIT = 2.0
#: Absolute bound on the neglected photon-number tail of a displaced sum.
SUM_TAIL_TOL = 1e-17
MAX_INNER_DIM = 4096
#: Relative size of the last chi-series order at which the adaptive series stops.
SERIES_STOP = 1e-10
DENSE_LIMIT = 4096

__all__ = [
    "DomainError",
    "TruncationError",
    "SeriesConvergenceError",
    "PhasePoint",
    "PairGeometry",
    "DensityMatrix",
    "GridSpec",
    "sigma_from_s",
    "s_from_sigma",
    "displacement_block",
    "nexp",
    "distribution",
    "pair_geometry",
    "gaussian_pair_expectation",
    "displaced_poly_gaussian",
    "poly_moments",
    "nonlinear_pair_expectation",
    "nonlinear_pair_expectation_fd",
    "check_normalization",
    "fd_weights",
]


class DomainError(ValueError):
    """A width, amplitude or parameter lies outside the supported domain."""


class TruncationError(RuntimeError):
    """The Fock truncation is too small for the requested evaluation."""


class SeriesConvergenceError(ArithmeticError):
    """A truncated power series did not reach the requested tolerance."""


def sigma_from_s(s: float) -> float:
    """Width parameter of the s-parametrized distribution, ``2 / (1 - s)``."""
    if not s < 1:
        raise DomainError(f"s must be < 1 (s = 1 is the singular P function), got {s}")
    return 2.0 / (1.0 - s)


def s_from_sigma(sigma: float) -> float:
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0 to map onto a finite s, got {sigma}")
    return 1.0 - 2.0 / sigma


@dataclass(frozen=True)
class PhasePoint:
    """One row/column label of a phase-space matrix.

    ``amplitudes[m]`` and ``widths[m]`` are the coherent amplitude and width
    probed in mode ``m``.  Scalars are promoted to single-mode tuples.
    """

    amplitudes: tuple
    widths: tuple

    def __post_init__(self):
        amps = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex)).ravel()
        wids = np.atleast_1d(np.asarray(self.widths, dtype=float)).ravel()
        if wids.size == 1 and amps.size > 1:
            wids = np.repeat(wids, amps.size)
        if amps.size != wids.size:
            raise ValueError(
                f"amplitudes and widths differ in length ({amps.size} != {wids.size})")
        if amps.size == 0:
            raise ValueError("a phase point needs at least one mode")
        if not np.all(np.isfinite(amps)):
            raise DomainError("amplitudes must be finite")
        if np.any(~np.isfinite(wids)) or np.any(wids < 0):
            raise DomainError(f"widths must be finite and nonnegative, got {wids.tolist()}")
        object.__setattr__(self, "amplitudes", tuple(complex(a) for a in amps))
        object.__setattr__(self, "widths", tuple(float(w) for w in wids))

    @property
    def mode_count(self) -> int:
        return len(self.amplitudes)


@dataclass(frozen=True)
class PairGeometry:
    delta_alpha: complex
    barycenter: complex
    reduced_width: float
    total_width: float


def pair_geometry(a1: complex, s1: float, a2: complex, s2: float) -> PairGeometry:
    """Relative position, barycenter, reduced and total width of two points."""
    if s1 < 0 or s2 < 0:
        raise DomainError("widths must be nonnegative")
    total = s1 + s2
    if total == 0:
        return PairGeometry(complex(a2 - a1), complex(a1 + a2) / 2, 0.0, 0.0)
    return PairGeometry(
        delta_alpha=complex(a2 - a1),
        barycenter=complex(s1 * a1 + s2 * a2) / total,
        reduced_width=s1 * s2 / total,
        total_width=total,
    )


class DensityMatrix:
    """A normalized multimode state in a truncated Fock basis.

    Two storage forms are supported, both immutable:

    * ``kets``/``weights``: ``rho = sum_r weights[r] |kets[r]><kets[r]|``;
      used for pure states and finite mixtures of pure states.
    * ``populations``: a Fock-diagonal state with ``populations[n_1, ..., n_N]``
      on ``|n_1..n_N><n_1..n_N|``.

    ``width_limit`` is the largest per-mode width sum for which normally
    ordered Gaussians have a convergent photon-number expansion on this state.
    """

    def __init__(self, mode_count, cutoff, *, kets=None, weights=None,
                 populations=None, width_limit=GAUSSIAN_WIDTH_LIMIT, label=""):
        if mode_count < 1 or cutoff < 1:
            raise ValueError("mode_count and cutoff must be positive")
        self.mode_count = int(mode_count)
        self.cutoff = int(cutoff)
        self.width_limit = float(width_limit)
        self.label = label
        dim = self.cutoff ** self.mode_count
        if (kets is None) == (populations is None):
            raise ValueError("give exactly one of kets or populations")
        if populations is not None:
            pops = np.array(populations, dtype=float).reshape((self.cutoff,) * self.mode_count)
            if np.any(pops < -1e-15):
                raise ValueError("populations must be nonnegative")
            pops.setflags(write=False)
            self._pops = pops
            self._kets = None
            self._weights = None
        else:
            kets = np.array(kets, dtype=complex)
            if kets.ndim == 1:
                kets = kets[None, :]
            if kets.shape[1] != dim:
                raise ValueError(f"kets must have dimension cutoff**mode_count = {dim}")
            w = np.ones(len(kets)) if weights is None else np.array(weights, dtype=float)
            if w.shape != (len(kets),) or np.any(w < 0):
                raise ValueError("weights must be nonnegative, one per ket")
            kets.setflags(write=False)
            w.setflags(write=False)
            self._kets, self._weights, self._pops = kets, w, None
        tr = self.trace
        if abs(tr - 1) > 1e-10:
            raise ValueError(f"state is not normalized (trace = {tr!r})")

    @classmethod
    def pure(cls, ket, mode_count=1, cutoff=None, **kw):
        ket = np.asarray(ket, dtype=complex).ravel()
        if cutoff is None:
            cutoff = round(ket.size ** (1 / mode_count))
        return cls(mode_count, cutoff, kets=ket, **kw)

    @classmethod
    def from_elements(cls, rho, mode_count=1, **kw):
        """Wrap a dense Hermitian matrix by eigendecomposition."""
        rho = np.asarray(rho, dtype=complex)
        if not np.allclose(rho, rho.conj().T, atol=1e-12, rtol=0):
            raise ValueError("density matrix is not Hermitian")
        vals, vecs = np.linalg.eigh(rho)
        if vals.min() < -1e-10:
            raise ValueError(f"density matrix has a negative eigenvalue {vals.min():.3g}")
        keep = vals > 1e-15
        cutoff = round(rho.shape[0] ** (1 / mode_count))
        return cls(mode_count, cutoff, kets=vecs[:, keep].T, weights=vals[keep], **kw)

    @property
    def dim(self) -> int:
        return self.cutoff ** self.mode_count

    @property
    def is_diagonal(self) -> bool:
        return self._pops is not None

    @property
    def kets(self):
        return self._kets

    @property
    def weights(self):
        return self._weights

    @property
    def populations(self):
        """Joint photon-number distribution, shape ``(cutoff,) * mode_count``."""
        if self._pops is not None:
            return self._pops
        amp2 = np.abs(self._kets) ** 2
        return (self._weights @ amp2).reshape((self.cutoff,) * self.mode_count)

    @property
    def trace(self) -> float:
        if self._pops is not None:
            return float(self._pops.sum())
        return float(self._weights @ np.sum(np.abs(self._kets) ** 2, axis=1))

    @property
    def elements(self) -> np.ndarray:
        """Dense ``dim x dim`` matrix; refused above a few thousand levels."""
        if self.dim > DENSE_LIMIT:
            raise MemoryError(f"refusing to densify a {self.dim}-dimensional state")
        if self._pops is not None:
            return np.diag(self._pops.ravel()).astype(complex)
        return (self._kets.T * self._weights) @ self._kets.conj()

    def mean_photon_number(self, mode: int = 0) -> float:
        pops = self.populations
        other = tuple(i for i in range(self.mode_count) if i != mode)
        marginal = pops.sum(axis=other) if other else pops
        return float(np.arange(self.cutoff) @ marginal)

    def reduced(self, keep) -> "DensityMatrix":
        """Partial trace onto the modes listed in ``keep`` (in that order)."""
        keep = [keep] if np.isscalar(keep) else list(keep)
        n = self.mode_count
        if sorted(set(keep)) != sorted(keep) or any(not 0 <= k < n for k in keep):
            raise ValueError(f"invalid modes {keep} for a {n}-mode state")
        traced = [m for m in range(n) if m not in keep]
        kw = dict(width_limit=self.width_limit, label=self.label)
        if self._pops is not None:
            pops = self._pops.sum(axis=tuple(traced)) if traced else self._pops
            pops = np.transpose(pops, np.argsort(np.argsort(keep))) if len(keep) > 1 else pops
            return DensityMatrix(len(keep), self.cutoff, populations=pops, **kw)
        d, r = self.cutoff, len(self._kets)
        psi = self._kets.reshape((r,) + (d,) * n)
        psi = np.moveaxis(psi, [k + 1 for k in keep], list(range(1, len(keep) + 1)))
        psi = psi.reshape(r, d ** len(keep), -1)
        rho = np.einsum("r,rik,rjk->ij", self._weights, psi, psi.conj())
        rho = (rho + rho.conj().T) / 2
        vals, vecs = np.linalg.eigh(rho)
        good = vals > 1e-16
        return DensityMatrix(len(keep), d, kets=vecs[:, good].T, weights=vals[good], **kw)

    def expect_product(self, ops) -> complex:
        """``Tr[rho (ops[0] x ops[1] x ...)]``; ``None`` entries mean identity."""
        if len(ops) != self.mode_count:
            raise ValueError("one operator per mode required")
        if self._pops is not None:
            diags = [np.ones(self.cutoff) if op is None else np.real(np.diag(op))
                     for op in ops]
            val = self._pops
            for diag in reversed(diags):
                val = val @ diag
            return complex(val)
        d, r, n = self.cutoff, len(self._kets), self.mode_count
        psi = self._kets.reshape((r,) + (d,) * n)
        phi = psi
        for m, op in enumerate(ops):
            if op is None:
                continue
            phi = np.moveaxis(np.tensordot(op, phi, axes=([1], [m + 1])), 0, m + 1)
        per_ket = np.einsum("ri,ri->r", psi.reshape(r, -1).conj(), phi.reshape(r, -1))
        return complex(self._weights @ per_ket)

    def __repr__(self):
        form = "diagonal" if self.is_diagonal else f"{len(self._kets)} kets"
        return (f"DensityMatrix({self.label or 'state'}, modes={self.mode_count}, "
                f"cutoff={self.cutoff}, {form})")


def displacement_block(alpha: complex, rows: int, cols: int) -> np.ndarray:
    """Matrix elements ``<m|D(alpha)|n>`` for ``m < rows`` and ``n < cols``.

    Uses the associated-Laguerre closed form with the factorial prefactor in
    log space, so it stays finite for a few hundred levels.
    """
    alpha = complex(alpha)
    if alpha == 0:
        return np.eye(rows, cols, dtype=complex)
    m = np.arange(rows)[:, None]
    n = np.arange(cols)[None, :]
    lo, hi = np.minimum(m, n), np.maximum(m, n)
    k = hi - lo
    x = abs(alpha) ** 2
    lag = eval_genlaguerre(lo, k, x)
    with np.errstate(divide="ignore"):
        logmag = (0.5 * (gammaln(lo + 1) - gammaln(hi + 1)) + k * math.log(abs(alpha))
                  - x / 2 + np.log(np.abs(lag)))
    theta = math.atan2(alpha.imag, alpha.real)
    phase = np.where(m >= n, np.exp(1j * theta * k), (-1.0) ** k * np.exp(-1j * theta * k))
    return np.sign(lag) * np.exp(logmag) * phase


def _inner_dim(alpha: complex, cutoff: int, extra: int = 0) -> int:
    # past the peak of the displaced photon distribution of |cutoff - 1>
    spread = math.sqrt(cutoff) + abs(alpha)
    return int(math.ceil(spread ** 2 + 12 * spread + 20)) + extra


def _displaced_columns(alpha: complex, sigma: float, cutoff: int, power: int = 0):
    """Return ``(B, w)`` with ``B[k, j] = <k|D(-alpha)|j>`` and ``w = (1-sigma)^k``.

    The inner dimension grows until the weighted photon-number tail, including
    a ``k**power`` polynomial factor, is below ``SUM_TAIL_TOL``.
    """
    base = 1.0 - sigma
    K = _inner_dim(alpha, cutoff, 2 * power)
    if abs(base) < 0.999:
        # |D| <= 1 entrywise, so a small geometric weight alone ends the sum
        k = np.arange(1, K + 1)
        ok = np.flatnonzero(10 * np.abs(base) ** k * k ** power < SUM_TAIL_TOL)
        if ok.size:
            K = max(int(ok[0]) + 11, 12)
    while True:
        B = displacement_block(-alpha, K, cutoff)
        k = np.arange(K)
        w = base ** k
        tail = (np.abs(w[-10:]) * (k[-10:] + 1.0) ** power)[:, None] * np.abs(B[-10:]) ** 2
        if tail.sum(axis=0).max() < SUM_TAIL_TOL:
            return B, w
        K = int(K * 1.5)
        if K > MAX_INNER_DIM:
            raise TruncationError(
                f"photon-number sum for alpha={alpha}, sigma={sigma} did not converge "
                f"within {MAX_INNER_DIM} levels")


@lru_cache(maxsize=4096)
def _mode_operator(alpha: complex, sigma: float, cutoff: int) -> np.ndarray:
    """Truncated matrix of ``D(alpha) (1-sigma)^n D(alpha)^dag`` on ``cutoff`` levels."""
    if sigma == 2:
        # displaced parity needs no inner truncation
        op = displacement_block(2 * alpha, cutoff, cutoff) * (-1.0) ** np.arange(cutoff)
    else:
        B, w = _displaced_columns(alpha, sigma, cutoff)
        op = (B.conj().T * w) @ B
    op.setflags(write=False)
    return op


def _check_widths(state: DensityMatrix, widths) -> None:
    for total in widths:
        if total > state.width_limit + 1e-12:
            raise DomainError(
                f"width sum {total:g} exceeds {state.width_limit:g}: the normally ordered "
                f"Gaussian diverges on {state.label or 'this state'} (unbounded photon tail)")


def _point_args(point) -> PhasePoint:
    if isinstance(point, PhasePoint):
        return point
    alpha, sigma = point
    return PhasePoint(alpha, sigma)


def nexp(state: DensityMatrix, point) -> float:
    """``< : prod_m exp(-sigma_m n_m(alpha_m)) : >`` evaluated in the Fock basis.

    ``point`` is a :class:`PhasePoint` or an ``(amplitudes, widths)`` pair.
    Zero-width modes contribute the identity, so an all-zero point returns 1.
    """
    point = _point_args(point)
    if point.mode_count != state.mode_count:
        raise ValueError(
            f"point has {point.mode_count} modes, state has {state.mode_count}")
    _check_widths(state, point.widths)
    if not any(point.widths):
        return 1.0
    ops = [None if s == 0 else _mode_operator(a, s, state.cutoff)
           for a, s in zip(point.amplitudes, point.widths)]
    val = state.expect_product(ops)
    if abs(val.imag) > 1e-10:
        raise ArithmeticError(f"normally ordered expectation has imaginary part {val.imag:g}")
    return val.real


def distribution(state: DensityMatrix, point) -> float:
    """``P(alpha; sigma) = prod_m (sigma_m / pi) * nexp``; Husimi at 1, Wigner at 2."""
    point = _point_args(point)
    if min(point.widths) <= 0:
        raise DomainError("distribution needs strictly positive widths; use nexp for zero widths")
    return math.prod(s / math.pi for s in point.widths) * nexp(state, point)


def gaussian_pair_expectation(state: DensityMatrix, p1, p2) -> float:
    """``<: exp(-sigma_1 n(alpha_1)) exp(-sigma_2 n(alpha_2)) :>`` in factored form.

    The classical factor ``exp(-reduced_width |delta_alpha|^2)`` of each mode
    multiplies a single Gaussian expectation at the barycenters.
    """
    p1, p2 = _point_args(p1), _point_args(p2)
    if p1.mode_count != p2.mode_count:
        raise ValueError("points must share a mode count")
    factor, amps, wids = 1.0, [], []
    for a1, s1, a2, s2 in zip(p1.amplitudes, p1.widths, p2.amplitudes, p2.widths):
        geo = pair_geometry(a1, s1, a2, s2)
        factor *= math.exp(-geo.reduced_width * abs(geo.delta_alpha) ** 2)
        amps.append(geo.barycenter)
        wids.append(geo.total_width)
    return factor * nexp(state, PhasePoint(amps, wids))


def poly_moments(state: DensityMatrix, A: complex, Sigma: float, max_power: int) -> np.ndarray:
    """Table ``T[p, q] = <:(a^dag - A*)^p (a - A)^q exp(-Sigma n(A)):>``, ``p, q <= max_power``."""
    if state.mode_count != 1:
        raise ValueError("polynomial moments are single-mode only")
    _check_widths(state, [Sigma])
    B, w = _displaced_columns(complex(A), float(Sigma), state.cutoff, power=max_power)
    if state.is_diagonal:
        phi = B.T  # one displaced column per Fock level
        weights = state.populations
    else:
        phi = state.kets @ B.T
        weights = state.weights
    K = B.shape[0]
    lowered = np.empty((len(phi), max_power + 1, K), dtype=complex)
    lowered[:, 0] = phi
    root = np.sqrt(np.arange(1, K))
    for q in range(max_power):
        lowered[:, q + 1, :-1] = lowered[:, q, 1:] * root
        lowered[:, q + 1, -1] = 0
    # sum over kets r and levels k as one matrix product
    flat = lowered.transpose(1, 0, 2).reshape(max_power + 1, -1)
    scale = np.outer(weights, w).ravel()
    return (flat.conj() * scale) @ flat.T


def displaced_poly_gaussian(state: DensityMatrix, A: complex, Sigma: float,
                            p: int, q: int) -> complex:
    if p < 0 or q < 0:
        raise ValueError("powers must be nonnegative")
    return complex(poly_moments(state, A, Sigma, max(p, q))[p, q])


def _quartic(c: complex) -> np.ndarray:
    """Coefficients ``C[i, j]`` of ``w^i conj(w)^j`` in ``|w + c|^4``."""
    lin = np.array([c * c, 2 * c, 1.0], dtype=complex)
    return np.outer(lin, lin.conj())


def _exp_terms(c: complex, chi: float, order: int) -> list:
    """Terms ``chi^k |w+c|^{4k} / k!`` for ``k = 0..order`` as ``w^i conj(w)^j`` tables."""
    u = _quartic(c)
    terms = [np.ones((1, 1), dtype=complex)]
    for k in range(1, order + 1):
        terms.append(convolve2d(terms[-1], u) * (chi / k))
    return terms


def _check_chi(state, eta, chi):
    bound = math.e * eta ** 2 / (4 * state.cutoff)
    if chi > bound:
        warnings.warn(
            f"chi={chi:g} exceeds e*eta^2/(4*cutoff)={bound:.3g}; the two-photon "
            "absorption model is outside its validity range", RuntimeWarning, stacklevel=3)


def _series_blocks(state, a1, a2, eta1, eta2, chi, order):
    """Contributions ``B[k1, k2]`` of term ``k1`` of factor 1 times term ``k2`` of factor 2.

    Both factors are expanded around the barycenter ``A``, so each product of
    monomials ``w^i conj(w)^j`` maps onto one polynomial moment at ``A``.
    """
    geo = pair_geometry(a1, eta1, a2, eta2)
    A = geo.barycenter
    t1 = _exp_terms(A - a1, chi, order)
    t2 = _exp_terms(A - a2, chi, order)
    T = poly_moments(state, A, geo.total_width, 4 * order)
    factor = math.exp(-geo.reduced_width * abs(geo.delta_alpha) ** 2)
    blocks = np.empty((order + 1, order + 1), dtype=complex)
    for k1, u1 in enumerate(t1):
        # H[a, b] = sum_ij u1[i, j] T[j + b, i + a]
        H = convolve2d(T.T, u1[::-1, ::-1], mode="valid")
        for k2, u2 in enumerate(t2):
            n = u2.shape[0]
            blocks[k1, k2] = np.sum(u2 * H[:n, :n])
    return factor * blocks


def _partial_sums(blocks):
    """Series value truncated at each order, ``S[k] = sum_{k1, k2 <= k} B``."""
    c = np.cumsum(np.cumsum(blocks, axis=0), axis=1)
    return np.diagonal(c)


def nonlinear_pair_expectation(state: DensityMatrix, a1: complex, a2: complex,
                               eta: float, chi: float, order=None, *,
                               rtol: float = 1e-6, atol: float = 1e-10,
                               max_order: int = 12) -> float:
    """``<: Omega(a1) Omega(a2) :>`` with ``Omega = :exp(-eta n + chi n^2):``.

    Each factor ``exp(chi n(a_i)^2)`` is expanded to ``order`` terms around the
    pair barycenter and the resulting polynomial-Gaussian moments are summed.
    With ``order=None`` the order starts at 3 and grows until the last order's
    contribution drops below ``SERIES_STOP`` of the sum.  If rounding stalls
    the series first, the order with the smallest last contribution is used
    (``max_order >= 3``).
    Either way a last-order contribution above ``rtol * |sum| + atol`` raises
    :class:`SeriesConvergenceError`; ``atol`` keeps rounding noise on very
    small expectations from counting as divergence.
    """
    if chi < 0:
        raise DomainError("chi must be nonnegative")
    if chi == 0:
        return gaussian_pair_expectation(state, (a1, eta), (a2, eta))
    _check_chi(state, eta, chi)
    if order is not None and order < 1:
        raise ValueError("order must be >= 1")
    a1, a2 = complex(a1), complex(a2)
    if order is not None:
        k = order
        sums = _partial_sums(_series_blocks(state, a1, a2, eta, eta, chi, order))
    else:
        # a cheap pass at order 8 settles most cases; the moment table for
        # max_order is only built when it does not
        for top in sorted({min(8, max_order), max_order}):
            sums = _partial_sums(_series_blocks(state, a1, a2, eta, eta, chi, top))
            last = np.abs(np.diff(sums))
            k = next((k for k in range(3, top + 1)
                      if last[k - 1] <= SERIES_STOP * abs(sums[k].real)), None)
            if k is not None:
                break
        else:
            # rounding floor reached before the target: keep the smallest step
            k = 3 + int(np.argmin(last[2:]))
    total, last = sums[k], abs(sums[k] - sums[k - 1])
    if abs(total.imag) > 1e-10 * max(1.0, abs(total)):
        raise ArithmeticError(f"nonlinear expectation has imaginary part {total.imag:g}")
    if last > rtol * abs(total.real) + atol:
        raise SeriesConvergenceError(
            f"chi-series at order {k} has last-order contribution {last:.3g}, "
            f"above {rtol:g} of the sum {total.real:.6g}")
    return float(total.real)


def fd_weights(offsets, derivative: int) -> np.ndarray:
    """Finite-difference weights on arbitrary nodes (Fornberg's recursion)."""
    x = np.asarray(offsets, dtype=float)
    n = len(x)
    if derivative >= n:
        raise ValueError("need more nodes than the derivative order")
    c = np.zeros((n, derivative + 1))
    c[0, 0] = 1.0
    c1, c4 = 1.0, x[0]
    for i in range(1, n):
        mn = min(i, derivative)
        c2, c5, c4 = 1.0, c4, x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, derivative]


def nonlinear_pair_expectation_fd(state: DensityMatrix, a1: complex, a2: complex,
                                  eta: float, chi: float, order: int = 4, *,
                                  step: float = 0.05, nodes: int | None = None) -> float:
    """Same quantity as :func:`nonlinear_pair_expectation` by differentiating in the widths.

    ``<: n(a1)^{2k} n(a2)^{2l} e^{-eta1 n(a1) - eta2 n(a2)} :>`` equals the mixed
    derivative of the Gaussian pair expectation, taken here with central
    stencils on a ``nodes x nodes`` grid of widths.  The step is large on
    purpose: derivatives of order 2*order need it to stay above rounding, and
    the wide stencil keeps the truncation error near 1e-9 at order 4.
    """
    if nodes is None:
        nodes = 2 * order + 7
    half = nodes // 2
    offsets = np.arange(-half, half + 1) * step
    grid = np.empty((len(offsets), len(offsets)))
    for i, d1 in enumerate(offsets):
        for j, d2 in enumerate(offsets):
            grid[i, j] = gaussian_pair_expectation(state, (a1, eta + d1), (a2, eta + d2))
    weights = {m: fd_weights(offsets, m) for m in range(0, 2 * order + 1, 2)}
    total = 0.0
    for k1 in range(order + 1):
        for k2 in range(order + 1):
            deriv = weights[2 * k1] @ grid @ weights[2 * k2]
            total += chi ** (k1 + k2) / (math.factorial(k1) * math.factorial(k2)) * deriv
    return float(total)


@dataclass(frozen=True)
class GridSpec:
    """Square quadrature grid ``[-radius, radius]^2`` with ``points`` nodes per axis."""

    radius: float
    points: int

    def __post_init__(self):
        if self.radius <= 0 or self.points < 3:
            raise ValueError("grid needs radius > 0 and at least 3 points per axis")

    @classmethod
    def default(cls, state: DensityMatrix, sigma: float, spacing: float = 0.2,
                edge_tol: float = 1e-13):
        """Grid whose inscribed circle sees ``|P| < edge_tol`` (single mode)."""
        nbar = state.mean_photon_number()
        radius = math.sqrt(nbar) + 1 + math.sqrt(30 / sigma)
        ring = np.exp(2j * np.pi * np.arange(64) / 64)
        for _ in range(20):
            edge = sigma / math.pi * np.abs(nexp_many(state, radius * ring, sigma)).max()
            if edge < edge_tol:
                break
            radius *= 1.2
        return cls(radius, 2 * int(math.ceil(radius / spacing)) + 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.radius, self.radius, self.points)


def _laguerre_table(x: np.ndarray, degrees: int, orders: int) -> np.ndarray:
    """``L_j^{(k)}(x_g)`` for ``j < degrees`` and ``k < orders``, shape ``(G, degrees, orders)``.

    Runs the three-term recurrence in the degree once for all orders at once.
    """
    x = np.asarray(x, dtype=float)[:, None]
    k = np.arange(orders)[None, :]
    out = np.empty((x.shape[0], degrees, orders))
    out[:, 0] = 1.0
    if degrees > 1:
        out[:, 1] = 1.0 + k - x
    for j in range(1, degrees - 1):
        out[:, j + 1] = ((2 * j + 1 + k - x) * out[:, j] - (j + k) * out[:, j - 1]) / (j + 1)
    return out


def _displacement_stack(betas: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """``<m|D(beta)|n>`` for a 1-D array of amplitudes, shape ``(len(betas), rows, cols)``."""
    m = np.arange(rows)[:, None]
    n = np.arange(cols)[None, :]
    lo, hi = np.minimum(m, n), np.maximum(m, n)
    k = hi - lo
    half_log_fact = 0.5 * (gammaln(lo + 1) - gammaln(hi + 1))
    sign_below = np.where(m >= n, 1.0, (-1.0) ** k)
    direction = np.where(m >= n, 1.0, -1.0)
    r = np.abs(betas)[:, None, None]
    x = r ** 2
    lag = _laguerre_table(np.abs(betas) ** 2, min(rows, cols), max(rows, cols))[:, lo, k]
    with np.errstate(divide="ignore", invalid="ignore"):
        logmag = half_log_fact + k * np.log(r) - x / 2 + np.log(np.abs(lag))
        theta = np.angle(betas)[:, None, None]
        B = np.sign(lag) * np.exp(logmag) * sign_below * np.exp(1j * theta * k * direction)
    B[np.abs(betas) == 0] = np.eye(rows, cols)
    return B


def nexp_many(state: DensityMatrix, alphas, sigma: float, chunk: int = 256) -> np.ndarray:
    """Vectorized single-mode :func:`nexp` over an array of amplitudes."""
    if state.mode_count != 1:
        raise ValueError("nexp_many is single-mode only")
    _check_widths(state, [sigma])
    alphas = np.asarray(alphas, dtype=complex)
    flat = alphas.ravel()
    out = np.empty(flat.size)
    d = state.cutoff
    if sigma == 0:
        return np.ones(alphas.shape)
    if sigma == 2:
        # displaced parity: D(a) (-1)^n D(a)^dag = D(2a) (-1)^n, exact on d levels
        parity = (-1.0) ** np.arange(d)
        for start in range(0, flat.size, chunk):
            B = _displacement_stack(2 * flat[start:start + chunk], d, d) * parity
            if state.is_diagonal:
                vals = np.einsum("gnn,n->g", B, state.populations)
            else:
                vals = np.einsum("rm,gmn,rn,r->g", state.kets.conj(), B, state.kets,
                                 state.weights)
            out[start:start + chunk] = vals.real
        return out.reshape(alphas.shape)
    # the tail test only depends on |alpha|, so the largest amplitude sets K
    _, w = _displaced_columns(complex(np.abs(flat).max(initial=0.0)), sigma, d)
    K = len(w)
    for start in range(0, flat.size, chunk):
        B = _displacement_stack(-flat[start:start + chunk], K, d)
        if state.is_diagonal:
            vals = np.einsum("gkn,k,n->g", np.abs(B) ** 2, w, state.populations)
        else:
            phi = np.einsum("gkn,rn->grk", B, state.kets)
            vals = np.einsum("grk,k,r->g", np.abs(phi) ** 2, w, state.weights)
        out[start:start + chunk] = vals
    return out.reshape(alphas.shape)


def check_normalization(state: DensityMatrix, sigma: float, grid: GridSpec | None = None) -> float:
    """Trapezoidal integral of ``P(alpha; sigma)`` over a square grid (single mode)."""
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    grid = grid or GridSpec.default(state, sigma)
    axis = grid.axis
    h = axis[1] - axis[0]
    re, im = np.meshgrid(axis, axis, indexing="ij")
    values = sigma / math.pi * nexp_many(state, re + 1j * im, sigma)
    edge = np.concatenate([values[0], values[-1], values[:, 0], values[:, -1]])
    peak = np.abs(values).max()
    if np.abs(edge).max() > 1e-9 * peak:
        # crude tail: one boundary ring times the remaining radius
        tail = np.abs(edge).mean() * 2 * math.pi * grid.radius / (2 * sigma * grid.radius)
        warnings.warn(f"grid radius {grid.radius:g} cuts the distribution; "
                      f"estimated missing mass ~{tail:.2g}", RuntimeWarning, stacklevel=2)
    wts = np.ones(grid.points)
    wts[[0, -1]] = 0.5
    return float(h * h * wts @ values @ wts)


def kron_all(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, vectors)
