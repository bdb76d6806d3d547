"""Example bosonic states and their closed-form Husimi functions."""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln, i0e, xlogy
from scipy.stats import poisson

from .core import DEFAULT_CUTOFF, DensityMatrix, DomainError, PhasePoint, kron_all

#: Truncated probability mass above which a requested cutoff is rejected.
TAIL_THRESHOLD = 1e-10
#: Tail mass targeted when the cutoff is chosen automatically.
AUTO_TAIL = 1e-13
#: Automatic target for pure components.  A dropped amplitude tail of norm
#: ``sqrt(tail)`` enters expectation values linearly through cross terms.
AUTO_TAIL_KET = 1e-20
_KET_KINDS = ("coherent", "squeezed_vacuum", "cat", "coherent_mixture")
MAX_CUTOFF = 1024

KINDS = ("fock", "coherent", "thermal", "squeezed_vacuum", "cat",
         "phase_diffused_tmsv", "coherent_mixture")

__all__ = ["StateSpec", "AnalyticQ", "CutoffError", "make_state", "analytic_q",
           "optimal_point", "rotationally_invariant", "coherent_ket", "KINDS"]


class CutoffError(ValueError):
    def __init__(self, message, suggested=None):
        super().__init__(message)
        self.suggested = suggested


def _as_list(value, kind=complex):
    if np.ndim(value) == 0:
        return [kind(value)]
    return [kind(v) for v in value]


@dataclass(frozen=True)
class StateSpec:
    """Declarative description of one of the supported states.

    ``params`` by kind:

    ========================  ================================================
    fock                      ``n`` (int or one int per mode)
    coherent                  ``beta`` (complex or one per mode)
    thermal                   ``nbar`` (float or one per mode)
    squeezed_vacuum           ``r``, optional ``phi`` (default 0)
    cat                       ``gamma``, ``modes`` (N >= 1), ``parity`` (+1/-1)
    phase_diffused_tmsv       ``lam`` (complex, ``|lam| < 1``)
    coherent_mixture          ``betas`` (per component, one amplitude per mode),
                              ``weights``
    ========================  ================================================
    """

    kind: str
    params: dict = field(default_factory=dict)
    cutoff: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown state kind {self.kind!r}; expected one of {KINDS}")
        p = dict(self.params)
        k = self.kind
        if k == "fock":
            p["n"] = _as_list(p.get("n", 0), int)
            if min(p["n"]) < 0:
                raise DomainError("photon numbers must be >= 0")
        elif k == "coherent":
            p["beta"] = _as_list(p.get("beta", 0))
        elif k == "thermal":
            p["nbar"] = _as_list(p.get("nbar", 0), float)
            if min(p["nbar"]) < 0:
                raise DomainError("mean photon numbers must be >= 0")
        elif k == "squeezed_vacuum":
            p["r"] = float(p.get("r", 0.0))
            p["phi"] = float(p.get("phi", 0.0))
        elif k == "cat":
            p["gamma"] = complex(p.get("gamma", 1.0))
            p["modes"] = int(p.get("modes", 1))
            p["parity"] = int(p.get("parity", 1))
            if p["modes"] < 1:
                raise DomainError("cat states need at least one mode")
            if p["parity"] not in (1, -1):
                raise DomainError("cat parity must be +1 or -1")
            if p["parity"] == -1 and p["gamma"] == 0:
                raise DomainError("the odd cat state is undefined at gamma = 0")
        elif k == "phase_diffused_tmsv":
            p["lam"] = complex(p.get("lam", 0.0))
            if not abs(p["lam"]) < 1:
                raise DomainError("|lambda| must be < 1")
        elif k == "coherent_mixture":
            betas = [_as_list(b) for b in p["betas"]]
            if len({len(b) for b in betas}) != 1:
                raise ValueError("all mixture components need the same mode count")
            w = np.asarray(p.get("weights", np.ones(len(betas))), dtype=float)
            if len(w) != len(betas) or np.any(w < 0) or w.sum() <= 0:
                raise DomainError("mixture weights must be nonnegative, one per component")
            p["betas"] = betas
            p["weights"] = [float(x) for x in w / w.sum()]
        if self.cutoff is not None and self.cutoff < 1:
            raise ValueError("cutoff must be positive")
        object.__setattr__(self, "params", p)

    @property
    def mode_count(self) -> int:
        p, k = self.params, self.kind
        if k == "fock":
            return len(p["n"])
        if k == "coherent":
            return len(p["beta"])
        if k == "thermal":
            return len(p["nbar"])
        if k == "cat":
            return p["modes"]
        if k == "phase_diffused_tmsv":
            return 2
        if k == "coherent_mixture":
            return len(p["betas"][0])
        return 1

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, complex):
                return [v.real, v.imag]
            if isinstance(v, list):
                return [enc(x) for x in v]
            return v
        out = {"kind": self.kind}
        out.update({k: enc(v) for k, v in self.params.items()})
        if self.cutoff is not None:
            out["cutoff"] = self.cutoff
        return out


def coherent_ket(beta: complex, cutoff: int) -> np.ndarray:
    n = np.arange(cutoff)
    if beta == 0:
        return np.eye(1, cutoff, dtype=complex).ravel()
    logmag = n * math.log(abs(beta)) - abs(beta) ** 2 / 2 - 0.5 * gammaln(n + 1)
    return np.exp(logmag + 1j * n * np.angle(beta))


def _squeezed_ket(r: float, phi: float, cutoff: int) -> np.ndarray:
    ket = np.zeros(cutoff, dtype=complex)
    lam = math.tanh(r)
    if lam == 0:
        ket[0] = 1
        return ket
    m = np.arange((cutoff + 1) // 2)
    logmag = (-0.5 * math.log(math.cosh(r)) + m * math.log(lam / 2)
              + 0.5 * gammaln(2 * m + 1) - gammaln(m + 1))
    ket[2 * m] = np.exp(logmag) * (-np.exp(1j * phi)) ** m
    return ket


def _auto_cutoff(tail: Callable[[int], float], floor: int, target: float = AUTO_TAIL) -> int:
    d = floor
    while tail(d) > target:
        d = int(d * 1.25) + 1
        if d > MAX_CUTOFF:
            raise CutoffError(f"no cutoff up to {MAX_CUTOFF} reaches tail mass {target:g}")
    return d


def _mode_tails(spec: StateSpec) -> list:
    """Per-mode tail-mass functions ``d -> P(n >= d)`` for the marginal of each mode."""
    p, k = spec.params, spec.kind
    if k == "fock":
        return [lambda d, n=n: 0.0 if d > n else 1.0 for n in p["n"]]
    if k == "coherent":
        return [lambda d, b=b: float(poisson.sf(d - 1, abs(b) ** 2)) for b in p["beta"]]
    if k == "thermal":
        return [lambda d, nb=nb: (nb / (1 + nb)) ** d for nb in p["nbar"]]
    if k == "squeezed_vacuum":
        r = p["r"]

        def sq_tail(d):
            # terms decay like tanh(r)^n, so a doubled window holds the tail
            ket = _squeezed_ket(r, 0.0, 2 * d + 200)
            return float(np.sum(np.abs(ket[d:]) ** 2))
        return [sq_tail]
    if k == "cat":
        g = abs(p["gamma"]) ** 2
        # each branch is Poissonian; the superposition norm is >= |1 - e^{-2N g}|
        norm = 1 + p["parity"] * math.exp(-2 * p["modes"] * g)
        return [lambda d: float(poisson.sf(d - 1, g)) / norm] * p["modes"]
    if k == "phase_diffused_tmsv":
        x = abs(p["lam"]) ** 2
        return [lambda d: x ** d] * 2
    if k == "coherent_mixture":
        tails = []
        for m in range(spec.mode_count):
            amps = [b[m] for b in p["betas"]]
            tails.append(lambda d, amps=amps: max(float(poisson.sf(d - 1, abs(b) ** 2))
                                                  for b in amps))
        return tails
    raise AssertionError(k)


def _choose_cutoff(spec: StateSpec) -> int:
    tails = _mode_tails(spec)
    if spec.cutoff is not None:
        worst = max(t(spec.cutoff) for t in tails)
        if worst > TAIL_THRESHOLD:
            suggested = max(_auto_cutoff(t, spec.cutoff) for t in tails)
            raise CutoffError(
                f"cutoff {spec.cutoff} leaves tail mass {worst:.3g} > {TAIL_THRESHOLD:g}; "
                f"use cutoff >= {suggested}", suggested)
        return spec.cutoff
    floor = DEFAULT_CUTOFF
    p = spec.params
    if spec.kind == "fock":
        floor = max(floor, max(p["n"]) + 1)
    if spec.kind == "cat":
        g = abs(p["gamma"])
        floor = max(floor, math.ceil(g * g + 6 * g + 10))
    target = AUTO_TAIL_KET if spec.kind in _KET_KINDS else AUTO_TAIL
    return max(_auto_cutoff(t, floor, target) for t in tails)


def _normalized(vec):
    return vec / np.linalg.norm(vec)


def make_state(spec: StateSpec) -> DensityMatrix:
    """Realize ``spec`` as a truncated :class:`DensityMatrix`.

    The truncated tail (below ``TAIL_THRESHOLD``) is renormalized away.
    """
    d = _choose_cutoff(spec)
    p, k, n_modes = spec.params, spec.kind, spec.mode_count
    label = k
    if k == "fock":
        pops = np.zeros((d,) * n_modes)
        pops[tuple(p["n"])] = 1.0
        return DensityMatrix(n_modes, d, populations=pops, width_limit=math.inf, label=label)
    if k == "coherent":
        ket = kron_all([coherent_ket(b, d) for b in p["beta"]])
        return DensityMatrix(n_modes, d, kets=_normalized(ket), width_limit=math.inf,
                             label=label)
    if k == "thermal":
        factors = []
        for nb in p["nbar"]:
            x = nb / (1 + nb)
            factors.append((1 - x) * x ** np.arange(d))
        pops = kron_all(factors).reshape((d,) * n_modes)
        return DensityMatrix(n_modes, d, populations=pops / pops.sum(), label=label)
    if k == "squeezed_vacuum":
        ket = _squeezed_ket(p["r"], p["phi"], d)
        return DensityMatrix(1, d, kets=_normalized(ket), label=label)
    if k == "cat":
        g, N, s = p["gamma"], p["modes"], p["parity"]
        plus = kron_all([coherent_ket(g, d)] * N)
        minus = kron_all([coherent_ket(-g, d)] * N)
        # analytic norm 2(1 +- e^{-2N|g|^2}); expm1 keeps the odd case accurate at small |g|
        norm2 = 2 * (2 + math.expm1(-2 * N * abs(g) ** 2)) if s == 1 \
            else -2 * math.expm1(-2 * N * abs(g) ** 2)
        ket = (plus + s * minus) / math.sqrt(norm2)
        return DensityMatrix(N, d, kets=_normalized(ket), width_limit=math.inf, label=label)
    if k == "phase_diffused_tmsv":
        x = abs(p["lam"]) ** 2
        pops = np.zeros((d, d))
        n = np.arange(d)
        pops[n, n] = (1 - x) * x ** n
        return DensityMatrix(2, d, populations=pops / pops.sum(), label=label)
    if k == "coherent_mixture":
        kets = [_normalized(kron_all([coherent_ket(b, d) for b in comp])) for comp in p["betas"]]
        return DensityMatrix(n_modes, d, kets=np.array(kets), weights=p["weights"],
                             width_limit=math.inf, label=label)
    raise AssertionError(k)


@dataclass(frozen=True)
class AnalyticQ:
    """Closed-form Husimi function of a :class:`StateSpec`.

    Calling it with an amplitude, a sequence of per-mode amplitudes, an array
    whose last axis runs over modes, or a :class:`PhasePoint` returns ``Q``.
    """

    evaluator: Callable
    family: str
    mode_count: int

    def __call__(self, alphas):
        if isinstance(alphas, PhasePoint):
            alphas = alphas.amplitudes
        arr = np.asarray(alphas, dtype=complex)
        if self.mode_count == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
            arr = arr[..., None]
        if arr.shape[-1] != self.mode_count:
            raise ValueError(f"expected {self.mode_count} amplitudes per point")
        out = self.evaluator(arr)
        return float(out) if np.ndim(out) == 0 else out


def analytic_q(spec: StateSpec) -> AnalyticQ:
    p, k, N = spec.params, spec.kind, spec.mode_count
    pi = math.pi

    if k == "fock":
        n = np.array(p["n"])

        def q(a):
            x = np.abs(a) ** 2
            return np.exp(np.sum(xlogy(n, x) - x - gammaln(n + 1), axis=-1)) / pi ** N
    elif k == "coherent":
        beta = np.array(p["beta"])

        def q(a):
            return np.exp(-np.sum(np.abs(a - beta) ** 2, axis=-1)) / pi ** N
    elif k == "thermal":
        nb = np.array(p["nbar"])

        def q(a):
            return np.prod(np.exp(-np.abs(a) ** 2 / (1 + nb)) / (pi * (1 + nb)), axis=-1)
    elif k == "squeezed_vacuum":
        r, phi = p["r"], p["phi"]
        lam = math.tanh(r)

        def q(a):
            a = a[..., 0]
            expo = -np.abs(a) ** 2 - lam * np.real(np.exp(1j * phi) * np.conj(a) ** 2)
            return np.exp(expo) / (pi * math.cosh(r))
    elif k == "cat":
        g, s = p["gamma"], p["parity"]
        g2 = abs(g) ** 2
        norm = 1 + s * math.exp(-2 * N * g2)

        def q(a):
            total = np.conj(g) * np.sum(a, axis=-1)
            rad = np.sum(np.abs(a) ** 2, axis=-1) + N * g2
            # cosh(x) e^{-rad} written without overflow
            x = 2 * np.real(total)
            ch = 0.5 * (np.exp(x - rad) + np.exp(-x - rad))
            return (ch + s * np.cos(2 * np.imag(total)) * np.exp(-rad)) / (pi ** N * norm)
    elif k == "phase_diffused_tmsv":
        lam = abs(p["lam"])

        def q(a):
            r1, r2 = np.abs(a[..., 0]), np.abs(a[..., 1])
            z = 2 * lam * r1 * r2
            return (1 - lam ** 2) / pi ** 2 * np.exp(-r1 ** 2 - r2 ** 2 + z) * i0e(z)
    elif k == "coherent_mixture":
        betas = np.array(p["betas"])
        weights = np.array(p["weights"])

        def q(a):
            d2 = np.sum(np.abs(a[..., None, :] - betas) ** 2, axis=-1)
            return np.exp(-d2) @ weights / pi ** N
    else:
        raise AssertionError(k)
    return AnalyticQ(q, k, N)


def rotationally_invariant(spec: StateSpec) -> bool:
    """True when the state is invariant under phase rotations of every mode."""
    if spec.kind in ("fock", "phase_diffused_tmsv"):
        return True
    if spec.kind == "thermal":
        return True
    if spec.kind == "coherent":
        return all(b == 0 for b in spec.params["beta"])
    if spec.kind == "squeezed_vacuum":
        return spec.params["r"] == 0
    return False


def optimal_point(spec: StateSpec) -> complex:
    """Closed-form minimizer ``alpha_2`` of the two-point Husimi test with ``alpha_1 = 0``."""
    if spec.kind == "fock" and spec.mode_count == 1:
        return complex(math.sqrt(2 * spec.params["n"][0]))
    if spec.kind == "squeezed_vacuum":
        lam = math.tanh(spec.params["r"])
        if lam == 0:
            t = 1.0  # limit of the formula; every point is saturated for vacuum
        else:
            t = (2 / lam) * math.log((1 + lam) / (1 + lam / 2))
        return math.sqrt(t) * complex(np.exp(0.5j * spec.params["phi"]))
    raise ValueError(
        f"no closed-form optimum for {spec.kind!r}; search numerically with psmatrix.optimize")
