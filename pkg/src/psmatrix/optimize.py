"""Search phase-space points that make a criterion as negative as possible."""

import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from . import witness
from .core import DomainError

__all__ = ["Bound", "SearchSpec", "SearchResult", "ScanTable", "CRITERIA",
           "evaluate", "minimize", "scan", "parse_handle"]


def _split(z1, z2):
    return complex(z1), complex(z2)


# Flat keyword signatures for each criterion; ``None`` marks a Husimi-only route.
CRITERIA = {
    "qq_pair": (("a1", "a2"),
                lambda st, a1, a2: witness.qq_pair(st, a1, a2)),
    "qq_multi": (("p1", "p2"),
                 lambda st, p1, p2: witness.qq_multi(st, p1, p2)),
    "wq_criterion": (("alpha", "sigma"),
                     lambda st, alpha, sigma: witness.wq_criterion(st, alpha, sigma.real)),
    "pair_criterion": (("a1", "s1", "a2", "s2"),
                       lambda st, a1, s1, a2, s2: witness.pair_criterion(
                           st, (a1, s1.real), (a2, s2.real))),
    "three_by_three": (("a1", "s1", "a2", "s2"),
                       lambda st, a1, s1, a2, s2: witness.three_by_three(
                           st, (a1, s1.real), (a2, s2.real))),
    "chebyshev_criterion": (("alpha", "sigmas"),
                            lambda st, alpha, sigmas: witness.chebyshev_criterion(
                                st, alpha, [s.real for s in sigmas])),
    "wigner_husimi_two_mode": (("a1", "a2"),
                               lambda st, a1, a2: witness.wigner_husimi_two_mode(st, a1, a2)),
    "nonlinear_pair_criterion": (("a1", "a2", "eta", "chi"),
                                 lambda st, a1, a2, eta, chi: witness.nonlinear_pair_criterion(
                                     st, a1, a2, eta.real, chi.real)),
}

_HANDLE = re.compile(r"^(?P<name>[a-z_][a-z0-9_]*)(\[(?P<index>\d+)\])?(?P<im>\.im)?$")


def parse_handle(handle: str):
    """Split ``"name"``, ``"name.im"``, ``"name[i]"`` or ``"name[i].im"`` into parts."""
    m = _HANDLE.match(handle)
    if not m:
        raise ValueError(f"bad parameter handle {handle!r}")
    index = m.group("index")
    return m.group("name"), (None if index is None else int(index)), bool(m.group("im"))


@dataclass(frozen=True)
class Bound:
    handle: str
    low: float
    high: float

    def __post_init__(self):
        parse_handle(self.handle)
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.low > self.high:
            raise ValueError(f"bounds for {self.handle} must be finite with low <= high")


@dataclass(frozen=True)
class SearchSpec:
    """What to minimize and how.

    ``free`` lists the searched real coordinates; ``fixed`` supplies every
    other criterion argument (complex scalars or lists of them).
    """

    criterion: str
    free: tuple
    fixed: dict = field(default_factory=dict)
    strategy: str = "grid_then_simplex"
    grid_resolution: int = 41
    max_iters: int = 2000
    seed: int = 0
    restarts: int = 3

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}; known: {sorted(CRITERIA)}")
        if self.strategy not in ("grid", "simplex", "grid_then_simplex"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.grid_resolution < 3:
            raise ValueError("grid_resolution must be >= 3")
        free = tuple(b if isinstance(b, Bound) else Bound(*b) for b in self.free)
        if not free:
            raise ValueError("at least one free parameter is required")
        object.__setattr__(self, "free", free)
        names = CRITERIA[self.criterion][0]
        for b in free:
            if parse_handle(b.handle)[0] not in names:
                raise ValueError(f"{b.handle!r} is not an argument of {self.criterion}")

    def phase_reduced(self) -> "SearchSpec":
        """Drop the phase of the first free amplitude (valid for phase-invariant states).

        Rotating every mode leaves such states unchanged, so one amplitude can
        be taken real and nonnegative.
        """
        for b in self.free:
            name, index, im = parse_handle(b.handle)
            if not im:
                break
        else:
            return self
        base = b.handle
        imag = f"{base}.im"
        free = []
        for c in self.free:
            if c.handle == imag:
                continue
            if c.handle == base:
                lim = max(abs(c.low), abs(c.high))
                c = Bound(base, max(0.0, c.low), lim)
            free.append(c)
        return SearchSpec(self.criterion, tuple(free), dict(self.fixed), self.strategy,
                          self.grid_resolution, self.max_iters, self.seed, self.restarts)


def _assemble(spec: SearchSpec, x) -> dict:
    args = {}
    for k, v in spec.fixed.items():
        args[k] = [complex(z) for z in v] if isinstance(v, (list, tuple)) else complex(v)
    for b, value in zip(spec.free, x):
        name, index, im = parse_handle(b.handle)
        delta = complex(0, value) if im else complex(value, 0)
        if index is None:
            cur = args.get(name, 0j)
            if isinstance(cur, list):
                raise ValueError(f"{name} is a list; use {name}[i]")
            args[name] = (complex(cur.real, value) if im else complex(value, cur.imag))
        else:
            cur = args.setdefault(name, [])
            while len(cur) <= index:
                cur.append(0j)
            z = cur[index]
            cur[index] = complex(z.real, delta.imag) if im else complex(delta.real, z.imag)
    missing = [n for n in CRITERIA[spec.criterion][0] if n not in args]
    if missing:
        raise ValueError(f"{spec.criterion} is missing arguments {missing}")
    return args


def evaluate(state, criterion: str, args: dict) -> float:
    names, fn = CRITERIA[criterion]
    return float(fn(state, *(args[n] for n in names)))


@dataclass(frozen=True)
class SearchResult:
    best_value: float
    best_params: dict
    evaluations: int
    strategy: str
    trace: tuple = ()

    def to_dict(self) -> dict:
        return {"best_value": self.best_value, "best_params": dict(self.best_params),
                "evaluations": self.evaluations, "strategy": self.strategy}


class _Objective:
    def __init__(self, state, spec, keep_trace):
        self.state, self.spec = state, spec
        self.count = 0
        self.trace = [] if keep_trace else None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        args = _assemble(self.spec, x)
        self.count += 1
        try:
            value = evaluate(self.state, self.spec.criterion, args)
        except (DomainError, ValueError, ArithmeticError) as exc:
            pairs = ", ".join(f"{b.handle}={v:.6g}" for b, v in zip(self.spec.free, x))
            raise type(exc)(f"{self.spec.criterion} failed at {pairs}: {exc}") from exc
        if self.trace is not None:
            self.trace.append((tuple(x.tolist()), value))
        return value


def _key(value, x):
    return (value, tuple(x))


def _grid(obj, spec):
    axes = [np.linspace(b.low, b.high, spec.grid_resolution) for b in spec.free]
    best = None
    for x in itertools.product(*axes):
        v = obj(x)
        if best is None or _key(v, x) < _key(*best):
            best = (v, tuple(float(c) for c in x))
    return best


def _simplex(obj, spec, x0, rng):
    lo = np.array([b.low for b in spec.free])
    hi = np.array([b.high for b in spec.free])
    span = np.where(hi > lo, hi - lo, 1.0)
    x0 = np.clip(np.asarray(x0, float), lo, hi)
    dim = len(x0)
    best = (obj(x0), tuple(x0.tolist()))
    scale = span / max(spec.grid_resolution - 1, 1)
    for restart in range(spec.restarts):
        if restart == 0:
            steps = np.diag(scale)
        else:
            steps = rng.normal(scale=scale, size=(dim, dim))
        start = np.asarray(best[1])
        simplex = np.clip(np.vstack([start, start + steps]), lo, hi)
        fatol = 1e-15 * max(abs(best[0]), 1e-300)
        res = _scipy_minimize(obj, start, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                              options={"initial_simplex": simplex, "xatol": 1e-11,
                                       "fatol": fatol, "maxiter": spec.max_iters,
                                       "maxfev": spec.max_iters * 2})
        cand = (float(res.fun), tuple(np.clip(res.x, lo, hi).tolist()))
        if _key(*cand) < _key(*best):
            best = cand
    return best


def minimize(state, spec: SearchSpec, *, keep_trace: bool = False) -> SearchResult:
    """Minimize ``spec.criterion`` over the free coordinates.

    ``grid`` samples a regular lattice; ``simplex`` runs bounded Nelder-Mead
    from the box center; ``grid_then_simplex`` starts Nelder-Mead from the
    best lattice point and never returns anything worse than it.  Restarts
    use perturbed initial simplices drawn from ``spec.seed``.
    """
    obj = _Objective(state, spec, keep_trace)
    rng = np.random.default_rng(spec.seed)
    if spec.strategy == "grid":
        best = _grid(obj, spec)
    elif spec.strategy == "simplex":
        center = [(b.low + b.high) / 2 for b in spec.free]
        best = _simplex(obj, spec, center, rng)
    else:
        grid_best = _grid(obj, spec)
        refined = _simplex(obj, spec, grid_best[1], rng)
        best = min(grid_best, refined, key=lambda b: _key(*b))
    args = _assemble(spec, best[1])
    check = evaluate(state, spec.criterion, args)
    if abs(check - best[0]) > 1e-12 * max(1.0, abs(check)):
        raise ArithmeticError("criterion is not reproducible at the reported optimum")
    params = {b.handle: v for b, v in zip(spec.free, best[1])}
    return SearchResult(check, params, obj.count, spec.strategy,
                        tuple(obj.trace) if keep_trace else ())


@dataclass(frozen=True)
class ScanTable:
    """Dense criterion values on a 1-D or 2-D grid (row-major, first axis outer)."""

    criterion: str
    handles: tuple
    axes: tuple
    values: np.ndarray
    errors: tuple = ()

    def rows(self):
        for idx in itertools.product(*(range(len(a)) for a in self.axes)):
            yield tuple(float(a[i]) for a, i in zip(self.axes, idx)) + (float(self.values[idx]),)


def scan(state, criterion: str, axes: dict, fixed: dict | None = None) -> ScanTable:
    """Evaluate ``criterion`` on the outer product of ``axes`` (``handle -> values``).

    Cells that raise are stored as NaN and listed in ``errors``; the scan goes on.
    """
    if not 1 <= len(axes) <= 2:
        raise ValueError("scan takes one or two axes")
    handles = tuple(axes)
    grids = tuple(np.asarray(axes[h], dtype=float) for h in handles)
    spec = SearchSpec(criterion, tuple(Bound(h, float(g.min()), float(g.max()))
                                       for h, g in zip(handles, grids)), dict(fixed or {}),
                      strategy="grid")
    values = np.full(tuple(len(g) for g in grids), np.nan)
    errors = []
    for idx in itertools.product(*(range(len(g)) for g in grids)):
        x = [g[i] for g, i in zip(grids, idx)]
        try:
            values[idx] = evaluate(state, criterion, _assemble(spec, x))
        except (DomainError, ValueError, ArithmeticError) as exc:
            errors.append((idx, str(exc)))
    values.setflags(write=False)
    return ScanTable(criterion, handles, grids, values, tuple(errors))
