"""Monte Carlo model of the click-detector correlation measurement.

The signal is split on a 50:50 beam splitter; each half is mixed with a
local oscillator ``beta_i`` on a ``|t|^2:|r|^2`` beam splitter and sent to an
on/off detector with no-click element ``:exp(-eta n - delta + chi n^2):``.
The joint no-click probability of two detectors is a phase-space matrix
entry at ``alpha_i = -r sqrt(2) beta_i / t`` with width ``eta |t|^2 / 2``.
Shots are drawn from that exact probability.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    DensityMatrix,
    DomainError,
    gaussian_pair_expectation,
    nonlinear_pair_expectation,
)

__all__ = [
    "DetectorModel",
    "SchemeConfig",
    "EstimatedMatrix",
    "BootstrapSummary",
    "noclick_eigenvalues",
    "lo_to_alpha",
    "alpha_to_lo",
    "joint_noclick_probability",
    "sample_probability",
    "sample_entry",
    "estimate_matrix",
    "bootstrap_det",
]


def noclick_eigenvalues(eta: float, chi: float, delta: float, levels: int) -> np.ndarray:
    """Eigenvalues ``pi_m`` of ``:exp(-eta n + chi n^2):`` times ``exp(-delta)``.

    ``pi_m = m! [z^m] exp((1 - eta) z + chi z^2)``, i.e.
    ``pi_m = (1 - eta) pi_{m-1} + 2 chi (m - 1) pi_{m-2}``.
    """
    out = np.empty(levels)
    out[0] = 1.0
    if levels > 1:
        out[1] = 1.0 - eta
    for m in range(2, levels):
        out[m] = (1.0 - eta) * out[m - 1] + 2 * chi * (m - 1) * out[m - 2]
    return math.exp(-delta) * out


@dataclass(frozen=True)
class DetectorModel:
    """On/off detector: efficiency ``eta``, dark-count parameter ``delta``, nonlinearity ``chi``."""

    eta: float
    delta: float = 0.0
    chi: float = 0.0
    cutoff: int = 32

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise DomainError("eta must lie in (0, 1]")
        if self.delta < 0 or self.chi < 0:
            raise DomainError("delta and chi must be nonnegative")
        bound = math.e * self.eta ** 2 / (4 * self.cutoff)
        if self.chi > bound:
            raise DomainError(
                f"chi={self.chi:g} exceeds e*eta^2/(4*cutoff)={bound:.4g}; the two-photon "
                f"absorption element is not a valid POVM up to {self.cutoff} photons")
        ev = self.eigenvalues()
        if ev.min() < -1e-12 or ev.max() > 1 + 1e-12:
            raise DomainError("no-click eigenvalues leave [0, 1]; lower chi or the cutoff")

    def eigenvalues(self) -> np.ndarray:
        return noclick_eigenvalues(self.eta, self.chi, self.delta, self.cutoff)


@dataclass(frozen=True)
class SchemeConfig:
    """Beam-splitter amplitudes, local-oscillator amplitudes and sampling setup."""

    t: complex
    r: complex
    lo_amplitudes: tuple
    shots: int = 10 ** 6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "t", complex(self.t))
        object.__setattr__(self, "r", complex(self.r))
        object.__setattr__(self, "lo_amplitudes", tuple(complex(b) for b in self.lo_amplitudes))
        if abs(abs(self.t) ** 2 + abs(self.r) ** 2 - 1) > 1e-12:
            raise DomainError("beam splitter needs |t|^2 + |r|^2 = 1")
        if int(self.shots) != self.shots or self.shots < 1:
            raise DomainError("shots must be a positive integer")
        if not self.lo_amplitudes:
            raise ValueError("need at least one local-oscillator amplitude")

    @classmethod
    def for_points(cls, alphas, transmissivity: float = 0.999, **kw):
        """Config whose oscillators probe ``alphas`` on a real beam splitter."""
        t = math.sqrt(transmissivity)
        r = math.sqrt(1 - transmissivity)
        return cls(t, r, tuple(alpha_to_lo(alphas, t, r)), **kw)

    @property
    def width_scale(self) -> float:
        """Factor from detector efficiency to phase-space width, ``|t|^2 / 2``."""
        return abs(self.t) ** 2 / 2


def lo_to_alpha(config: SchemeConfig) -> list:
    if config.t == 0:
        raise DomainError("t = 0 leaves no signal at the detectors")
    return [-config.r * math.sqrt(2) * b / config.t for b in config.lo_amplitudes]


def alpha_to_lo(alphas, t: complex, r: complex) -> list:
    if r == 0:
        raise DomainError("r = 0 cannot displace the signal")
    return [-complex(t) * complex(a) / (complex(r) * math.sqrt(2)) for a in np.atleast_1d(alphas)]


def joint_noclick_probability(state: DensityMatrix, det: DetectorModel, a_i: complex,
                              a_j: complex, eta_i: float | None = None,
                              eta_j: float | None = None) -> float:
    """``exp(-2 delta) <: Pi(n(a_i)) Pi(n(a_j)) :>`` with widths ``eta_i``, ``eta_j``.

    Widths default to ``det.eta``.  The nonlinear response needs equal widths.
    """
    if state.mode_count != 1:
        raise ValueError("the correlation scheme takes a single-mode signal")
    eta_i = det.eta if eta_i is None else eta_i
    eta_j = det.eta if eta_j is None else eta_j
    if det.chi == 0:
        p = gaussian_pair_expectation(state, (a_i, eta_i), (a_j, eta_j))
    else:
        if eta_i != eta_j:
            raise ValueError("the nonlinear detector model uses one width for both detectors")
        p = nonlinear_pair_expectation(state, a_i, a_j, eta_i, det.chi)
    p *= math.exp(-2 * det.delta)
    if p < -1e-10 or p > 1 + 1e-10:
        warnings.warn(f"joint no-click probability {p:.3g} outside [0, 1]; clamped",
                      RuntimeWarning, stacklevel=2)
    return min(max(p, 0.0), 1.0)


def sample_probability(p: float, shots: int, rng: np.random.Generator):
    """Frequency of successes in ``shots`` Bernoulli trials and its binomial standard error."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    hits = rng.binomial(int(shots), min(max(p, 0.0), 1.0))
    est = hits / shots
    return est, math.sqrt(est * (1 - est) / shots)


def sample_entry(state, det, a_i, a_j, shots: int, seed, eta_i=None, eta_j=None):
    p = joint_noclick_probability(state, det, a_i, a_j, eta_i, eta_j)
    return sample_probability(p, shots, np.random.default_rng(seed))


@dataclass(frozen=True)
class EstimatedMatrix:
    values: np.ndarray
    std_errors: np.ndarray
    shots: int
    exact: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {"values": self.values.tolist(), "std_errors": self.std_errors.tolist(),
               "shots": self.shots}
        if self.exact is not None:
            out["exact"] = self.exact.tolist()
        return out


def estimate_matrix(state, det: DetectorModel, config: SchemeConfig) -> EstimatedMatrix:
    """Sample every entry ``(i, j)``, ``i <= j``, once with its own derived seed."""
    alphas = lo_to_alpha(config)
    width = det.eta * config.width_scale
    k = len(alphas)
    children = np.random.SeedSequence(config.seed).spawn(k * (k + 1) // 2)
    values = np.empty((k, k))
    errors = np.empty((k, k))
    exact = np.empty((k, k))
    c = 0
    for i in range(k):
        for j in range(i, k):
            p = joint_noclick_probability(state, det, alphas[i], alphas[j], width, width)
            est, err = sample_probability(p, config.shots, np.random.default_rng(children[c]))
            c += 1
            values[i, j] = values[j, i] = est
            errors[i, j] = errors[j, i] = err
            exact[i, j] = exact[j, i] = p
    return EstimatedMatrix(values, errors, int(config.shots), exact)


@dataclass(frozen=True)
class BootstrapSummary:
    det_estimate: float
    det_mean: float
    ci_low: float
    ci_high: float
    resamples: int

    @property
    def nonclassical(self) -> bool:
        return self.ci_high < 0

    def to_dict(self) -> dict:
        return {"det_estimate": self.det_estimate, "det_mean": self.det_mean,
                "ci_low": self.ci_low, "ci_high": self.ci_high,
                "resamples": self.resamples, "nonclassical": self.nonclassical}


def bootstrap_det(est: EstimatedMatrix, resamples: int = 2000, seed=0,
                  level: float = 0.95) -> BootstrapSummary:
    """Parametric bootstrap of ``det`` with entries redrawn from ``Normal(p, se)``.

    Each upper-triangle entry is drawn independently, clipped to ``[0, 1]``
    and mirrored.  Returns the determinant mean and a central interval.
    """
    if resamples < 100:
        raise ValueError("use at least 100 resamples")
    rng = np.random.default_rng(seed)
    k = est.values.shape[0]
    iu = np.triu_indices(k)
    draws = rng.normal(est.values[iu], est.std_errors[iu], size=(resamples, len(iu[0])))
    draws = np.clip(draws, 0.0, 1.0)
    mats = np.empty((resamples, k, k))
    mats[:, iu[0], iu[1]] = draws
    mats[:, iu[1], iu[0]] = draws
    dets = np.linalg.det(mats)
    tail = (1 - level) / 2
    lo, hi = np.quantile(dets, [tail, 1 - tail])
    return BootstrapSummary(float(np.linalg.det(est.values)), float(dets.mean()),
                            float(lo), float(hi), int(resamples))
