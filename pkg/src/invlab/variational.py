"""Energies of PL deformations and a feasibility-preserving descent harness.

A density is a sum of terms, each a scalar function of one minor block of
``F = Df``: the matrix itself (order 1), its cofactor (order n-1) or its
determinant (order n). Norms are Frobenius. Derivatives are constant per
simplex, so every integral below is exact for the PL map.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._rng import stream
from .convex import ConvexFunctionSpec
from .degree import BallSpec
from .densities import EnergyReport, cof_norm_and_grad, frobenius
from .inv import InvReport, check_inv
from .mesh import PiecewiseAffineMap, cofactor_matrix, integrate_jacobian


class VariationalError(ValueError):
    pass


def _fd_derivative(func: Callable) -> Callable:
    def d(t):
        t = np.asarray(t, dtype=float)
        h = 1e-6 * np.maximum(1.0, np.abs(t))
        return (func(t + h) - func(t - h)) / (2 * h)

    return d


def power(p: float) -> tuple[Callable, Callable]:
    return (lambda t: t**p), (lambda t: p * t ** (p - 1.0))


@dataclass(frozen=True)
class MinorTerm:
    """``weight * func(m)`` with ``m`` the norm of the order-k minors (or det for k = n)."""

    name: str
    order: int | str
    func: Callable
    derivative: Callable | None = None
    weight: float = 1.0

    @classmethod
    def from_spec(cls, name: str, order, spec: ConvexFunctionSpec, weight: float = 1.0) -> "MinorTerm":
        return cls(name, order, spec.func, spec.derivative, weight)

    def _order(self, n: int) -> int:
        return {"n": n, "n-1": n - 1}.get(self.order, self.order)

    def argument(self, F, J, C, nf):
        k = self._order(F.shape[-1])
        if k == F.shape[-1]:
            return J
        if k == 1:
            return nf
        if k == F.shape[-1] - 1:
            return frobenius(C)
        return minor_norm(F, k)

    def value(self, F, J, C, nf):
        return self.weight * self.func(self.argument(F, J, C, nf))

    def grad(self, F, J, C, nf):
        n = F.shape[-1]
        k = self._order(n)
        d = self.derivative or _fd_derivative(self.func)
        if k == n:
            return (self.weight * d(J))[..., None, None] * C
        if k == 1:
            dn = F / nf[..., None, None]
            return (self.weight * d(nf))[..., None, None] * dn
        if k == n - 1:
            norm, dn = cof_norm_and_grad(F, J, C)
            return (self.weight * d(norm))[..., None, None] * dn
        raise VariationalError("gradients are available for orders 1, n-1 and n")


@dataclass(frozen=True)
class DistortionTerm:
    """``(|F|^n / J)^(1/(n-1))``."""

    name: str = "distortion"
    weight: float = 1.0

    def value(self, F, J, C, nf):
        n = F.shape[-1]
        return self.weight * (nf**n / J) ** (1.0 / (n - 1))

    def grad(self, F, J, C, nf):
        n = F.shape[-1]
        q = 1.0 / (n - 1)
        g = nf**n / J
        dg = (n * nf ** (n - 2) / J)[..., None, None] * F - (nf**n / J**2)[..., None, None] * C
        return (self.weight * q * g ** (q - 1.0))[..., None, None] * dg


def minor_norm(F: np.ndarray, k: int) -> np.ndarray:
    """Euclidean norm of the vector of all k x k minors, by enumeration."""
    n = F.shape[-1]
    if k == n:
        return np.abs(np.linalg.det(F))
    combos = list(itertools.combinations(range(n), k))
    total = np.zeros(F.shape[:-2])
    for r in combos:
        sub = F[..., r, :]
        for c in combos:
            total += np.linalg.det(sub[..., list(c)]) ** 2
    return np.sqrt(total)


@dataclass(frozen=True)
class PolyconvexDensity:
    """``W(F) = constant + sum of terms``, and ``+inf`` when ``det F <= 0``.

    Each term is convex in its minor block, so W is polyconvex by
    construction. ``minors_used`` lists the orders that appear.
    """

    terms: tuple
    constant: float = 0.0

    @property
    def minors_used(self) -> tuple:
        return tuple(sorted({str(t.order) for t in self.terms}))

    def __call__(self, F: np.ndarray, path: str = "minors") -> np.ndarray:
        F = np.asarray(F, dtype=float)
        n = F.shape[-1]
        J = np.linalg.det(F)
        out = np.full(F.shape[:-2], float(self.constant))
        ok = J > 0
        Fo, Jo = F[ok], J[ok]
        if path == "minors":
            for t in self.terms:
                k = t._order(n)
                arg = Jo if k == n else minor_norm(Fo, k)
                out[ok] += t.weight * t.func(arg)
        elif path == "direct":
            C = cofactor_matrix(Fo)
            nf = frobenius(Fo)
            for t in self.terms:
                out[ok] += t.value(Fo, Jo, C, nf)
        else:
            raise VariationalError(f"unknown evaluation path {path!r}")
        out[~ok] = math.inf
        return out


@dataclass(frozen=True)
class EnergyModel:
    """A named list of density terms.

    ``kind`` is ``F_model``, ``G_model`` or ``E_polyconvex``. For the last,
    ``W`` carries the polyconvex density and ``minors_used`` records which
    minor orders W depends on; representability is not checked.
    """

    kind: str
    terms: tuple
    n: int
    p: float
    phi: ConvexFunctionSpec | None = None
    A: ConvexFunctionSpec | None = None
    W: PolyconvexDensity | None = None
    meta: dict = field(default_factory=dict)

    @property
    def minors_used(self) -> tuple:
        if self.W is not None:
            return self.W.minors_used
        return tuple(sorted({str(getattr(t, "order", "distortion")) for t in self.terms}))


def f_model(n: int, phi=None, A=None, p=None) -> EnergyModel:
    """``|Df|^p + A(|cof Df|) + phi(J)`` with ``p = n - 1`` by default.

    Leaving out ``phi`` and ``A`` gives the pure gradient-power model.
    """
    p = float(n - 1 if p is None else p)
    f, df = power(p)
    terms = [MinorTerm("grad_p", 1, f, df)]
    if A is not None:
        terms.append(MinorTerm.from_spec("A_cof", "n-1", A))
    if phi is not None:
        terms.append(MinorTerm.from_spec("phi_J", "n", phi))
    return EnergyModel("F_model", tuple(terms), n, p, phi, A)


def g_model(n: int, phi=None, p=None) -> EnergyModel:
    """``|Df|^p + (|Df|^n/J)^(1/(n-1)) + phi(J)``."""
    p = float(n - 1 if p is None else p)
    f, df = power(p)
    terms = [MinorTerm("grad_p", 1, f, df), DistortionTerm()]
    if phi is not None:
        terms.append(MinorTerm.from_spec("phi_J", "n", phi))
    return EnergyModel("G_model", tuple(terms), n, p, phi)


def e_model(n: int, W: PolyconvexDensity, phi=None, A=None) -> EnergyModel:
    return EnergyModel("E_polyconvex", tuple(W.terms), n, float(n - 1), phi, A, W, {"constant": W.constant})


def standard_polyconvex(n: int, phi: ConvexFunctionSpec, A: ConvexFunctionSpec, C: float = 1.0, p=None) -> PolyconvexDensity:
    """``C (|F|^p + phi(det F) + A(|cof F|) - 1)``."""
    p = float(n - 1 if p is None else p)
    f, df = power(p)
    return PolyconvexDensity(
        (
            MinorTerm("grad_p", 1, f, df, C),
            MinorTerm("A_cof", "n-1", A.func, A.derivative, C),
            MinorTerm("phi_J", "n", phi.func, phi.derivative, C),
        ),
        -C,
    )


# ---------------------------------------------------------------------------
# evaluation


class _Kinematics:
    """Reference edge inverses so that ``F = E(y) X^{-1}`` per simplex."""

    def __init__(self, fmap: PiecewiseAffineMap):
        mesh = fmap.mesh
        if not mesh.is_solid:
            raise VariationalError("energies need a solid mesh")
        self.mesh = mesh
        self.Xinv = np.linalg.inv(np.swapaxes(mesh.edge_matrices(), 1, 2))
        self.vol = mesh.volumes
        self.S = mesh.simplices

    def F(self, Y: np.ndarray) -> np.ndarray:
        P = Y[self.S]
        E = np.swapaxes(P[:, 1:, :] - P[:, :1, :], 1, 2)
        return E @ self.Xinv

    def nodal(self, dF: np.ndarray) -> np.ndarray:
        """Pull per-simplex ``dE/dF`` back to nodal values."""
        dE = dF @ np.swapaxes(self.Xinv, 1, 2)  # (S, n, n): column j -> vertex j+1
        n = dE.shape[1]
        local = np.concatenate([-dE.sum(axis=2, keepdims=True), dE], axis=2)  # (S, n, n+1)
        G = np.zeros((self.mesh.n_vertices, n))
        for k in range(n + 1):
            np.add.at(G, self.S[:, k], local[:, :, k])
        return G


def _density(model: EnergyModel, F: np.ndarray, with_grad: bool):
    J = np.linalg.det(F)
    C = cofactor_matrix(F)
    nf = frobenius(F)
    vals = {t.name: t.value(F, J, C, nf) for t in model.terms}
    grad = None
    if with_grad:
        grad = sum(t.grad(F, J, C, nf) for t in model.terms)
    return J, vals, grad


def energy(fmap: PiecewiseAffineMap, model: EnergyModel) -> EnergyReport:
    """Exact per-simplex integrals of each term; ``inf`` total if any ``J <= 0``."""
    kin = _Kinematics(fmap)
    F = kin.F(fmap.nodal_values)
    J = np.linalg.det(F)
    jmin = float(J.min())
    meta = {"kind": model.kind, "p": model.p, "jac_min": jmin, "minors_used": list(model.minors_used)}
    if jmin <= 0:
        terms = {t.name: math.inf for t in model.terms}
        if model.W is not None:
            terms = {"W": math.inf}
        return EnergyReport(terms, math.inf, False, metadata=meta)
    _, vals, _ = _density(model, F, False)
    terms = {k: math.fsum((v * kin.vol).tolist()) for k, v in vals.items()}
    if model.W is not None:
        terms = {"W": math.fsum(terms.values()) + model.W.constant * float(kin.vol.sum())}
    return EnergyReport(terms, math.fsum(terms.values()), True, metadata=meta)


def energy_G(fmap: PiecewiseAffineMap, phi=None) -> EnergyReport:
    return energy(fmap, g_model(fmap.mesh.n, phi))


def energy_and_gradient(fmap: PiecewiseAffineMap, model: EnergyModel, kin: _Kinematics | None = None):
    """Total energy and its gradient with respect to all nodal values."""
    kin = kin or _Kinematics(fmap)
    F = kin.F(fmap.nodal_values)
    J, vals, grad = _density(model, F, True)
    if J.min() <= 0:
        return math.inf, None
    total = sum(float(np.sum(v * kin.vol)) for v in vals.values())
    if model.W is not None:
        total += model.W.constant * float(kin.vol.sum())
    return total, kin.nodal(grad * kin.vol[:, None, None])


# ---------------------------------------------------------------------------
# coercivity


@dataclass(frozen=True)
class CoercivityReport:
    trials: int
    violations: int
    max_violation: float
    negative_trials: int
    negative_to_inf_fraction: float

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.negative_to_inf_fraction == 1.0


def random_matrices(rng: np.random.Generator, count: int, n: int, sign: int = 1, spread: float = 2.0) -> np.ndarray:
    """``Q1 diag(s) Q2`` with log-uniform singular values; the sign of det is fixed."""
    Q1, _ = np.linalg.qr(rng.standard_normal((count, n, n)))
    Q2, _ = np.linalg.qr(rng.standard_normal((count, n, n)))
    s = 10.0 ** rng.uniform(-spread, spread, (count, n))
    F = Q1 * s[:, None, :] @ Q2
    flip = np.sign(np.linalg.det(F)) != sign
    F[flip, :, 0] *= -1
    return F


def coercivity_check(W: Callable, C: float, phi, A, trials: int = 10_000, seed: int = 0, n: int = 3, p=None) -> CoercivityReport:
    """Sample ``W(F) >= C (|F|^p + phi(det F) + A(|cof F|) - 1)`` over det F > 0.

    Matrices with negative determinant are also drawn; they count as
    handled when W returns ``+inf``.
    """
    if trials < 1:
        raise VariationalError("trials must be positive")
    p = float(n - 1 if p is None else p)
    rng = stream(seed, "coercivity", n)
    F = random_matrices(rng, trials, n, 1)
    J = np.linalg.det(F)
    rhs = C * (frobenius(F) ** p + phi(J) + A(frobenius(cofactor_matrix(F))) - 1.0)
    w = np.asarray(W(F), dtype=float)
    gap = rhs - w
    tol = 1e-12 * np.maximum(1.0, np.abs(rhs))
    bad = gap > tol
    Fneg = random_matrices(rng, max(1, trials // 10), n, -1)
    wneg = np.asarray(W(Fneg), dtype=float)
    return CoercivityReport(
        trials,
        int(bad.sum()),
        float(max(gap.max(), 0.0)),
        len(Fneg),
        float(np.mean(np.isposinf(wneg))),
    )


# ---------------------------------------------------------------------------
# minimization


@dataclass
class MinimizeResult:
    final_map: PiecewiseAffineMap
    energy_trace: list
    iterations: int
    backtracks: int
    inv_reports: list
    jac_min: float
    jac_min_trace: list
    converged: bool

    @property
    def inv_violations(self) -> int:
        return sum(r.violations for r in self.inv_reports)

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "backtracks": self.backtracks,
            "final_energy": self.energy_trace[-1],
            "jac_min": self.jac_min,
            "converged": self.converged,
            "inv": [r.as_dict() for r in self.inv_reports],
        }


@dataclass(frozen=True)
class MinimizeOptions:
    max_iter: int = 2000
    tol: float = 1e-10
    step0: float = 1.0
    seed: int = 0
    armijo: float = 1e-4
    min_step: float = 1e-14
    inv_balls: int = 5
    inv_samples: int = 2000


def sample_balls(mesh, count: int, seed: int) -> list[BallSpec]:
    """Balls well inside the bounding box of the mesh."""
    rng = stream(seed, "minimize-balls")
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    w = float((hi - lo).min())
    balls = []
    for _ in range(count):
        r = w * rng.uniform(0.05, 0.2)
        c = rng.uniform(lo + r + 0.05 * w, hi - r - 0.05 * w)
        balls.append(BallSpec(tuple(c), float(r)))
    return balls


def minimize(model: EnergyModel, f0: PiecewiseAffineMap, options: MinimizeOptions | None = None) -> MinimizeResult:
    """Gradient descent on interior nodal values with Armijo backtracking.

    Trial steps start from the Barzilai-Borwein length and are halved until
    every Jacobian is positive and the sufficient-decrease test holds, so the
    energy trace never increases and boundary values are never written.
    """
    opt = options or MinimizeOptions()
    kin = _Kinematics(f0)
    interior = ~f0.mesh.boundary_vertex_mask
    Y = f0.nodal_values.copy()
    E, G = energy_and_gradient(f0, model, kin)
    if not math.isfinite(E):
        raise VariationalError("initial guess has a non-positive Jacobian")

    def jmin(vals):
        return float(np.linalg.det(kin.F(vals)).min())

    trace, jtrace = [E], [jmin(Y)]
    backtracks = 0
    step = opt.step0
    converged = False
    prev = None
    it = 0
    for it in range(1, opt.max_iter + 1):
        d = np.zeros_like(Y)
        d[interior] = -G[interior]
        gg = float(np.sum(d * d))
        if gg == 0.0 or math.sqrt(gg) <= 1e-15 * max(1.0, abs(E)):
            converged = True
            it -= 1
            break
        if prev is not None:
            s, yv = prev
            sy = float(np.sum(s * yv))
            if sy > 0:
                step = float(np.sum(s * s)) / sy
        t = step
        while True:
            trial = Y.copy()
            trial[interior] = Y[interior] + t * d[interior]
            Et, Gt = energy_and_gradient(f0.with_values(trial), model, kin)
            if math.isfinite(Et) and Et <= E - opt.armijo * t * gg:
                break
            t *= 0.5
            backtracks += 1
            if t < opt.min_step:
                raise VariationalError(f"line search stalled at iteration {it}")
        prev = (trial[interior] - Y[interior], (Gt - G)[interior])
        decrease = (E - Et) / max(abs(E), 1e-300)
        Y, E, G = trial, Et, Gt
        trace.append(E)
        jtrace.append(jmin(Y))
        if decrease < opt.tol:
            converged = True
            break
    final = f0.with_values(Y, f"min({f0.label})")
    reports: list[InvReport] = []
    if opt.inv_balls > 0:
        for k, ball in enumerate(sample_balls(f0.mesh, opt.inv_balls, opt.seed)):
            reports.append(check_inv(final, ball, opt.inv_samples, opt.seed + k, raster_resolution=128))
    return MinimizeResult(final, trace, it, backtracks, reports, min(jtrace), jtrace, converged)


def _local_energy(model: EnergyModel, kin: _Kinematics, Y: np.ndarray, sel: np.ndarray) -> float:
    """Energy of the simplices ``sel`` only; differences of it equal those of the total."""
    P = Y[kin.S[sel]]
    F = np.swapaxes(P[:, 1:, :] - P[:, :1, :], 1, 2) @ kin.Xinv[sel]
    _, vals, _ = _density(model, F, False)
    return math.fsum(float(np.sum(v * kin.vol[sel])) for v in vals.values())


def gradient_check(model: EnergyModel, fmap: PiecewiseAffineMap, samples: int = 20, h_fd: float = 1e-6, seed: int = 0) -> float:
    """Max relative error of the analytic gradient against central differences.

    Differences are taken on the star of the perturbed vertex, which avoids
    cancellation in the global sum.
    """
    if not 1e-7 <= h_fd <= 1e-4:
        raise VariationalError("h_fd must lie in [1e-7, 1e-4]")
    kin = _Kinematics(fmap)
    E, G = energy_and_gradient(fmap, model, kin)
    if G is None:
        raise VariationalError("map is not feasible")
    rng = stream(seed, "gradient-check")
    idx = np.flatnonzero(~fmap.mesh.boundary_vertex_mask)
    if len(idx) == 0:
        raise VariationalError("no interior vertices")
    picks = rng.choice(idx, size=samples)
    coords = rng.integers(0, fmap.mesh.n, size=samples)
    worst = 0.0
    for v, c in zip(picks, coords):
        Yp = fmap.nodal_values.copy()
        Ym = fmap.nodal_values.copy()
        Yp[v, c] += h_fd
        Ym[v, c] -= h_fd
        star = np.flatnonzero(np.any(kin.S == v, axis=1))
        Ep = _local_energy(model, kin, Yp, star)
        Em = _local_energy(model, kin, Ym, star)
        fd = (Ep - Em) / (2 * h_fd)
        an = G[v, c]
        denom = max(abs(an), abs(fd), 1e-12)
        worst = max(worst, abs(fd - an) / denom)
    return worst


# ---------------------------------------------------------------------------
# weak convergence of Jacobians


def weak_jacobian_limit(maps, limit: PiecewiseAffineMap, boxes: int = 10, seed: int = 0) -> np.ndarray:
    """Relative errors of ``int_E J_{f_m}`` against ``int_E J_f`` on random boxes.

    Boxes are unions of whole grid cells, so they are unions of simplices on
    the Kuhn meshes used by the fixtures. Returns shape ``(len(maps), boxes)``.
    """
    rng = stream(seed, "weak-limit")
    n = limit.mesh.n
    out = np.empty((len(maps), boxes))
    res = [round(1.0 / float(np.min(np.diff(np.unique(f.mesh.vertices[:, 0]))))) for f in maps]
    coarse = math.gcd(*res)
    for b in range(boxes):
        a = rng.integers(0, coarse // 2, n)
        w = rng.integers(coarse // 4, coarse // 2 + 1, n)
        lo, hi = a / coarse, (a + w) / coarse

        def inside(c, lo=lo, hi=hi):
            return np.all((c > lo) & (c < hi), axis=1)

        ref = integrate_jacobian(limit, inside)
        for i, f in enumerate(maps):
            out[i, b] = abs(integrate_jacobian(f, inside) - ref) / abs(ref)
    return out
