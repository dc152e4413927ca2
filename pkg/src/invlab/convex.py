"""Convex scalar functions, growth flags, Legendre conjugates and weights.

All numeric checks run on a log-spaced grid. Functions are plain vectorized
callables; ``ConvexFunctionSpec`` bundles one with its grid and the flags
re-derived from that grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEFAULT_GRID = np.logspace(-6, 6, 2048)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# Thresholds used by the growth-flag tests (see README for why they differ
# from a naive "ratio > 1e6" reading).
BLOWUP_RATIO = 1e3
SUPERLINEAR_RATIO = 10.0
DOUBLING_LIMIT = 1e6


class ConvexError(ValueError):
    pass


@dataclass(frozen=True)
class FlagReport:
    convex: bool
    convexity_defect: float
    blow_up_at_zero: bool
    superlinear_at_infinity: bool
    doubling: bool
    doubling_constant: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class ConvexFunctionSpec:
    """A convex function on ``(0, inf)`` (or ``[0, inf)`` if ``closed_at_zero``)."""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    derivative: Callable[[np.ndarray], np.ndarray] | None = None
    closed_at_zero: bool = False
    grid: np.ndarray = field(default_factory=lambda: DEFAULT_GRID.copy())
    flags: FlagReport | None = None

    def __call__(self, t):
        return self.func(np.asarray(t, dtype=float))

    def with_flags(self) -> "ConvexFunctionSpec":
        return ConvexFunctionSpec(
            self.name, self.func, self.params, self.derivative, self.closed_at_zero, self.grid, verify_flags(self)
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "params": self.params,
                "grid": [float(self.grid[0]), float(self.grid[-1]), len(self.grid)],
                "flags": None if self.flags is None else self.flags.as_dict(),
            }
        )


def custom(name: str, func, derivative=None, closed_at_zero=False, grid=None, **params) -> ConvexFunctionSpec:
    spec = ConvexFunctionSpec(
        name, func, params, derivative, closed_at_zero, DEFAULT_GRID.copy() if grid is None else np.asarray(grid)
    )
    return spec.with_flags()


def make_builtin(name: str, **params) -> ConvexFunctionSpec:
    """Named convex functions used throughout the package.

    ``phi_balanced``   t + 1/t - 1, blows up at 0, only linear at infinity.
    ``phi_identityish`` t^2 + 1/t, blows up at 0 and is superlinear.
    ``power_A``        t^beta (``beta`` > 1, default 2), optional ``scale``.
    ``plog_A``         t log(e + t).
    """
    if name == "phi_balanced":
        f = lambda t: t + 1.0 / t - 1.0
        df = lambda t: 1.0 - 1.0 / t**2
        closed = False
    elif name == "phi_identityish":
        f = lambda t: t**2 + 1.0 / t
        df = lambda t: 2.0 * t - 1.0 / t**2
        closed = False
    elif name == "power_A":
        beta = float(params.setdefault("beta", 2.0))
        scale = float(params.setdefault("scale", 1.0))
        if beta <= 1.0:
            raise ConvexError("power_A needs beta > 1")
        f = lambda t: scale * t**beta
        df = lambda t: scale * beta * t ** (beta - 1.0)
        closed = True
    elif name == "plog_A":
        f = lambda t: t * np.log(np.e + t)
        df = lambda t: np.log(np.e + t) + t / (np.e + t)
        closed = True
    else:
        raise ConvexError(f"unknown builtin {name!r}")
    spec = ConvexFunctionSpec(name, f, dict(params), df, closed)
    return spec.with_flags()


def _values(spec: ConvexFunctionSpec, t: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        v = np.asarray(spec(t), dtype=float)
    if np.any(np.isnan(v)) or np.any(v == -np.inf):
        raise ConvexError(f"{spec.name}: evaluator is not finite on the grid")
    if np.any(np.isinf(v) & (t >= 1.0)):
        raise ConvexError(f"{spec.name}: evaluator overflows away from zero")
    return v


def verify_flags(spec: ConvexFunctionSpec) -> FlagReport:
    """Re-derive convexity and growth flags from grid evidence.

    +inf is tolerated below t = 1 (a function may overflow while blowing up
    at zero); NaN or -inf anywhere is an error.
    """
    t = np.asarray(spec.grid, dtype=float)
    v = _values(spec, t)
    # midpoint convexity on consecutive grid triples and on the midpoints themselves
    mid = 0.5 * (t[:-1] + t[1:])
    vm = _values(spec, mid)
    ok = np.isfinite(v[:-1]) & np.isfinite(v[1:]) & np.isfinite(vm)
    with np.errstate(invalid="ignore"):
        scale = 1.0 + np.abs(v[:-1]) + np.abs(v[1:])
        defect = np.where(ok, (vm - 0.5 * (v[:-1] + v[1:])) / scale, 0.0)
    convexity_defect = float(max(defect.max(), 0.0))

    one = float(_values(spec, np.array([1.0]))[0])
    small = v[0]
    near_zero = v[: max(3, len(v) // 8)]
    finite_near = near_zero[np.isfinite(near_zero)]
    decreasing = bool(np.all(np.diff(finite_near) <= 0))
    blow_up = bool(one > 0 and decreasing and (not np.isfinite(small) or small > BLOWUP_RATIO * one))

    ratio = v / t
    top = ratio[-max(3, len(v) // 12) :]
    superlinear = bool(
        np.isfinite(one)
        and one != 0
        and np.all(np.diff(top) > 0)
        and ratio[-1] > SUPERLINEAR_RATIO * abs(one)
    )

    inner = t[t * 2.0 <= t[-1]]
    v1 = _values(spec, inner)
    v2 = _values(spec, 2.0 * inner)
    both = np.isfinite(v1) & np.isfinite(v2) & (v1 > 0) & (v2 > 0)
    if both.any():
        fwd = v2[both] / v1[both]
        doubling_constant = float(max(fwd.max(), (1.0 / fwd).max()))
    else:
        doubling_constant = math.inf
    if not np.all(both):
        doubling_constant = math.inf
    return FlagReport(
        convex=convexity_defect <= 1e-9,
        convexity_defect=convexity_defect,
        blow_up_at_zero=blow_up,
        superlinear_at_infinity=superlinear,
        doubling=doubling_constant < DOUBLING_LIMIT,
        doubling_constant=doubling_constant,
    )


# ---------------------------------------------------------------------------
# Legendre conjugate


def _golden_max(obj, lo: np.ndarray, hi: np.ndarray, iters: int = 80) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized golden-section maximization of a concave objective."""
    a, b = lo.copy(), hi.copy()
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = obj(c), obj(d)
    for _ in range(iters):
        left = fc >= fd
        # keep the surviving interior point, evaluate one new point
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        keep_x = np.where(left, c, d)
        keep_f = np.where(left, fc, fd)
        new_x = np.where(left, b - _GOLDEN * (b - a), a + _GOLDEN * (b - a))
        new_f = obj(new_x)
        c = np.where(left, new_x, keep_x)
        fc = np.where(left, new_f, keep_f)
        d = np.where(left, keep_x, new_x)
        fd = np.where(left, keep_f, new_f)
    x = 0.5 * (a + b)
    return x, obj(x)


def conjugate_values(A: ConvexFunctionSpec, s: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """``sup_t (s t - A(t))`` by grid search plus golden-section refinement."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.asarray(A.grid, dtype=float)
    if A.closed_at_zero:
        t = np.concatenate([[0.0], t])
    with np.errstate(over="ignore", divide="ignore"):
        at = np.asarray(A(t), dtype=float)
    out = np.empty_like(s)
    for lo in range(0, len(s), chunk):
        sc = s[lo : lo + chunk]
        vals = sc[:, None] * t[None, :] - at[None, :]
        i = np.argmax(vals, axis=1)
        best = vals[np.arange(len(sc)), i]
        left = t[np.maximum(i - 1, 0)]
        right = t[np.minimum(i + 1, len(t) - 1)]

        def obj(x, sc=sc):
            with np.errstate(over="ignore", divide="ignore"):
                return sc * x - np.asarray(A(x), dtype=float)

        _, refined = _golden_max(obj, left, right)
        out[lo : lo + chunk] = np.maximum(best, np.where(np.isfinite(refined), refined, -np.inf))
    return out


def legendre_conjugate(A: ConvexFunctionSpec) -> ConvexFunctionSpec:
    """Conjugate ``A'(s) = sup_t (s t - A(t))`` as a new spec on ``[0, inf)``."""
    flags = A.flags or verify_flags(A)
    if not flags.superlinear_at_infinity:
        raise ConvexError(f"{A.name} is not superlinear; its conjugate is infinite")
    func = lambda s: conjugate_values(A, s)
    spec = ConvexFunctionSpec(f"conj({A.name})", func, {"of": A.name}, None, True, A.grid.copy())
    return spec


def inverse_increasing(func, values: np.ndarray, lo: float = 0.0, hi: float = 1.0, iters: int = 200) -> np.ndarray:
    """Smallest ``s >= lo`` with ``func(s) >= v`` for an eventually increasing ``func``."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    hi_arr = np.full_like(values, hi)
    for _ in range(200):
        short = func(hi_arr) < values
        if not short.any():
            break
        hi_arr = np.where(short, hi_arr * 2.0, hi_arr)
    a = np.full_like(values, lo)
    b = hi_arr
    for _ in range(iters):
        m = 0.5 * (a + b)
        up = func(m) >= values
        b = np.where(up, m, b)
        a = np.where(up, a, m)
        if np.all(b - a <= 1e-14 * np.maximum(1.0, b)):
            break
    return b


# ---------------------------------------------------------------------------
# weight b / B


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """Tabulated ``b`` on a log grid and ``B(t) = t b(t)``."""

    grid: np.ndarray
    table: np.ndarray
    provenance: dict

    def b(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        lt = np.log(np.clip(t, self.grid[0], self.grid[-1]))
        out = np.interp(lt, np.log(self.grid), self.table)
        return np.where(t <= 1.0, 0.0, out)

    def B(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return t * self.b(t)

    def to_csv(self) -> str:
        rows = [f"{g:.17g},{v:.17g}" for g, v in zip(self.grid, self.table)]
        return "t,b\n" + "\n".join(rows) + "\n"


def construct_b(
    A: ConvexFunctionSpec,
    phi: ConvexFunctionSpec,
    cap_threshold: float = 10.0,
    grid: np.ndarray | None = None,
) -> WeightFunction:
    """Subadditive weight ``b <= a`` with ``B(t) = t b(t)`` superlinear.

    Writes ``A(t) = t a(t)`` and runs, on the grid:
    psi_bar = a / log t (t > 1); t0 = first point with psi_bar <= 1;
    psi = 1 before t0 and the running minimum of psi_bar after;
    b_bar = psi log t (0 for t <= 1); b = reverse running minimum of b_bar.

    For t >= ``cap_threshold``, ``a`` is first lowered to
    ``(A*)^{-1}(phi(1/t))``, with ``A*`` the convex conjugate, so that the final ``b`` also respects that bound
    while keeping monotonicity and subadditivity.
    """
    g = np.asarray(A.grid if grid is None else grid, dtype=float)
    g = np.unique(np.concatenate([g, [1.0]]))
    if len(g) < 16 or np.max(np.diff(np.log(g))) > 0.5:
        raise ConvexError("log grid too coarse")
    a = np.asarray(A(g), dtype=float) / g
    if np.any(~np.isfinite(a)) or np.any(a <= 0):
        raise ConvexError("a(t) = A(t)/t must be positive on the grid")

    cap = np.full_like(g, np.inf)
    big = g >= cap_threshold
    if big.any():
        conj = legendre_conjugate(A)
        with np.errstate(over="ignore", divide="ignore"):
            target = np.asarray(phi(1.0 / g[big]), dtype=float)
        cap[big] = inverse_increasing(conj.func, target)
    a_eff = np.minimum(a, cap)

    above = g > 1.0
    lg = np.log(g)
    psi_bar = np.full_like(g, np.inf)
    psi_bar[above] = a_eff[above] / lg[above]
    hits = np.flatnonzero(above & (psi_bar <= 1.0))
    psi = np.ones_like(g)
    t0 = None
    if len(hits):
        i0 = int(hits[0])
        t0 = float(g[i0])
        psi[i0:] = np.minimum.accumulate(psi_bar[i0:])
    b_bar = np.where(above, psi * lg, 0.0)
    b = np.minimum.accumulate(b_bar[::-1])[::-1]
    return WeightFunction(
        g,
        b,
        {
            "A": A.name,
            "phi": phi.name,
            "t0": t0,
            "cap_threshold": cap_threshold,
            "cap_active": bool(np.any(cap < a)),
            "a": a,
        },
    )
