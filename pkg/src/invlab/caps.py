"""Coordinate-wise p-Dirichlet minimizers on spherical caps.

Caps are solved in stereographic coordinates centered at the cap. A
tangential gradient on the sphere of radius R relates to the chart gradient
through the conformal factor ``lam(u) = 2R / (1 + |u|^2)``, so the surface
energy is ``sum_T |grad v|^p lam^(d-p) |T|`` with ``d = n - 1``; for
``p = d`` the factor drops out.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.linalg import cg
from scipy.spatial.distance import pdist

from .mesh import PiecewiseAffineMap, SimplicialMesh, build_ball_mesh

EPS = 1e-10


class CapError(ValueError):
    pass


def _tangent_basis(z: np.ndarray) -> np.ndarray:
    """Rows spanning the orthogonal complement of the unit vector ``z``."""
    q, _ = np.linalg.qr(np.column_stack([z, np.eye(len(z))]))
    return q[:, 1:].T


def stereo_chart(points: np.ndarray, center, radius: float, z: np.ndarray) -> np.ndarray:
    """Stereographic coordinates (projection from ``-z``)."""
    E = _tangent_basis(z)
    w = (np.asarray(points, dtype=float) - center) / radius
    return (w @ E.T) / (1.0 + w @ z)[:, None]


def stereo_inverse(u: np.ndarray, center, radius: float, z: np.ndarray) -> np.ndarray:
    E = _tangent_basis(z)
    uu = np.einsum("ij,ij->i", u, u)
    w = (2.0 * (u @ E) + (1.0 - uu)[:, None] * z) / (1.0 + uu)[:, None]
    return np.asarray(center, dtype=float) + radius * w


@dataclass(frozen=True, eq=False)
class CapProblem:
    """Dirichlet data for one cap.

    ``chart`` holds flat coordinates of the cap vertices; ``mesh`` the same
    connectivity embedded on the sphere. ``boundary`` lists the vertices whose
    values are prescribed.
    """

    mesh: SimplicialMesh
    chart: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray
    p: float
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def interior(self) -> np.ndarray:
        mask = np.ones(self.mesh.n_vertices, dtype=bool)
        mask[self.boundary] = False
        return np.flatnonzero(mask)

    def to_json(self) -> str:
        return json.dumps(
            {
                "vertices": self.mesh.vertices.tolist(),
                "simplices": self.mesh.simplices.tolist(),
                "chart": self.chart.tolist(),
                "boundary": self.boundary.tolist(),
                "boundary_values": self.boundary_values.tolist(),
                "p": self.p,
            }
        )


@dataclass(frozen=True)
class CapSolution:
    values: np.ndarray
    energy: np.ndarray
    iterations: int
    residual: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "values": self.values.tolist(),
                "energy": self.energy.tolist(),
                "iterations": self.iterations,
                "residual": self.residual,
            }
        )


class _Operator:
    """Element gradient operators of a flat simplicial chart mesh."""

    def __init__(self, chart: np.ndarray, simplices: np.ndarray):
        P = chart[simplices]
        X = np.swapaxes(P[:, 1:, :] - P[:, :1, :], 1, 2)
        det = np.linalg.det(X)
        d = chart.shape[1]
        self.area = np.abs(det) / math.factorial(d)
        if np.any(self.area <= 1e-300):
            raise CapError("degenerate cap mesh")
        T = np.linalg.inv(X)
        G = np.concatenate([-T.sum(axis=1, keepdims=True), T], axis=1)  # (S, d+1, d)
        self.G = G
        self.simplices = simplices
        self.nv = len(chart)

    def grads(self, v: np.ndarray) -> np.ndarray:
        """Element gradients of nodal fields ``v`` (V, m) -> (S, m, d)."""
        return np.einsum("skd,skm->smd", self.G, v[self.simplices])

    def stiffness(self, coef: np.ndarray) -> csr_matrix:
        local = np.einsum("s,skd,sld->skl", coef * self.area, self.G, self.G)
        S = self.simplices
        rows = np.repeat(S, S.shape[1], axis=1).ravel()
        cols = np.tile(S, (1, S.shape[1])).ravel()
        return coo_matrix((local.ravel(), (rows, cols)), shape=(self.nv, self.nv)).tocsr()


def cap_energy(problem: CapProblem, values: np.ndarray) -> np.ndarray:
    """Per-coordinate discrete energy of nodal ``values`` on the cap."""
    op = _Operator(problem.chart, problem.mesh.simplices)
    g = op.grads(np.asarray(values, dtype=float))
    return np.einsum("sm,s->m", np.linalg.norm(g, axis=2) ** problem.p, problem.weights * op.area)


def _weights(chart: np.ndarray, simplices: np.ndarray, radius: float, p: float) -> np.ndarray:
    d = chart.shape[1]
    if p == d:
        return np.ones(len(simplices))
    c = chart[simplices].mean(axis=1)
    lam = 2.0 * radius / (1.0 + np.einsum("ij,ij->i", c, c))
    return lam ** (d - p)


def make_cap_problem(
    sphere_center,
    sphere_radius: float,
    axis,
    cap_angle: float,
    boundary_data,
    refinement: int = 4,
    layers: int = 8,
    p: float | None = None,
) -> CapProblem:
    """Geodesic cap of angular radius ``cap_angle`` around direction ``axis``.

    ``boundary_data`` is an array of ring values or a callable evaluated at the
    embedded ring points.
    """
    c = np.asarray(sphere_center, dtype=float)
    n = len(c)
    if n not in (2, 3):
        raise CapError("caps are supported for n = 2, 3")
    if not 0 < cap_angle < math.pi / 2:
        raise CapError("cap angle must lie in (0, pi/2)")
    z = np.asarray(axis, dtype=float)
    z = z / np.linalg.norm(z)
    d = n - 1
    rho = math.tan(cap_angle / 2.0)
    if d == 1:
        m = 2 * layers
        chart = np.linspace(-rho, rho, m + 1)[:, None]
        simplices = np.column_stack([np.arange(m), np.arange(1, m + 1)])
        boundary = np.array([0, m])
    else:
        disk = build_ball_mesh(2, np.zeros(2), rho, refinement, layers)
        chart = disk.vertices
        simplices = disk.simplices
        k = 4 * 2**refinement
        boundary = np.arange(len(chart) - k, len(chart))
    emb = stereo_inverse(chart, c, sphere_radius, z)
    mesh = SimplicialMesh(emb, simplices, check=False)
    pts = emb[boundary]
    vals = boundary_data(pts) if callable(boundary_data) else np.asarray(boundary_data, dtype=float)
    if vals.shape != (len(boundary), n) or not np.all(np.isfinite(vals)):
        raise CapError("boundary data must be finite with one row per ring vertex")
    p = float(d if p is None else p)
    return CapProblem(
        mesh, chart, boundary, vals, p, _weights(chart, simplices, sphere_radius, p),
        {"center": c.tolist(), "radius": sphere_radius, "axis": z.tolist(), "angle": cap_angle},
    )


def solve_cap(problem: CapProblem, tol: float = 1e-10, max_iter: int = 200) -> CapSolution:
    """Damped Kacanov iteration for each coordinate of the p-Dirichlet problem.

    Every sweep freezes ``(|grad v|^2 + eps^2)^((p-2)/2)`` per element, solves
    the weighted Laplace system by CG and accepts the largest step in
    ``{1, 1/2, ...}`` that does not raise the energy. Stops when the relative
    energy change falls below ``tol``.
    """
    if problem.p < 1.5:
        raise CapError("p must be at least 1.5")
    op = _Operator(problem.chart, problem.mesh.simplices)
    interior = problem.interior
    bnd = problem.boundary
    m = problem.boundary_values.shape[1]
    V = np.empty((problem.mesh.n_vertices, m))
    V[bnd] = problem.boundary_values
    V[interior] = problem.boundary_values.mean(axis=0)
    if len(interior) == 0:
        return CapSolution(V, cap_energy(problem, V), 0, 0.0)
    p = problem.p
    w = problem.weights

    def energy(vals):
        g = op.grads(vals)
        return np.einsum("sm,s->m", np.linalg.norm(g, axis=2) ** p, w * op.area)

    def linear_step(coef, col):
        K = op.stiffness(coef)
        Kii = K[interior][:, interior]
        rhs = -K[interior][:, bnd] @ V[bnd, col]
        pre = diags(1.0 / Kii.diagonal())
        x, info = cg(Kii, rhs, x0=V[interior, col], rtol=1e-14, atol=0.0, M=pre, maxiter=20 * len(interior) + 100)
        if info != 0:
            x, info = cg(Kii, rhs, x0=x, rtol=1e-12, atol=0.0, M=pre, maxiter=50 * len(interior) + 100)
        return x

    E = energy(V)
    residual = math.inf
    for it in range(1, max_iter + 1):
        g = op.grads(V)
        E_old = E.copy()
        for col in range(m):
            coef = w * (np.sum(g[:, col, :] ** 2, axis=1) + EPS**2) ** ((p - 2.0) / 2.0)
            target = linear_step(coef, col)
            cur = V[interior, col].copy()
            theta = 1.0
            for _ in range(40):
                V[interior, col] = cur + theta * (target - cur)
                e = energy(V)[col]
                if e <= E_old[col] * (1 + 1e-15) + 1e-300:
                    break
                theta *= 0.5
            else:
                V[interior, col] = cur
        E = energy(V)
        residual = float(np.max(np.abs(E_old - E) / np.maximum(np.abs(E), 1e-300)))
        if np.all(E <= 1e-300):
            residual = 0.0
        if residual < tol:
            return CapSolution(V, E, it, residual)
    raise CapError(f"cap solver did not converge in {max_iter} iterations (residual {residual:.3g})")


def diameter(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(pdist(points).max())


def oscillation_check(solution: CapSolution, problem: CapProblem) -> tuple[float, float, bool]:
    """``diam h(S) <= sqrt(n) diam f(T)`` for the solved cap."""
    n = problem.boundary_values.shape[1]
    lhs = diameter(solution.values)
    rhs = math.sqrt(n) * diameter(problem.boundary_values)
    return lhs, rhs, bool(lhs <= rhs + 1e-9)


# ---------------------------------------------------------------------------
# cap covers and replacement


@dataclass(frozen=True, eq=False)
class CapCover:
    """Cap centers on a sphere mesh and the facet footprint of each cap."""

    sphere_center: np.ndarray
    sphere_radius: float
    centers: np.ndarray
    cap_radius: float
    assignment: np.ndarray

    @property
    def footprints(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == j) for j in range(len(self.centers))]


def build_cap_cover(sphere: SimplicialMesh, sphere_center, sphere_radius: float, cap_radius: float, check_size: bool = True) -> CapCover:
    """Greedy cover by balls ``B(z_j, rho)`` with ``B(z_j, rho/5)`` disjoint.

    Centers are sphere vertices picked in index order when they keep distance
    at least ``2 rho / 5`` from earlier centers. Footprints take each facet to
    the first cap containing its centroid.
    """
    n = sphere.n
    if check_size and 2.0 * cap_radius >= sphere_radius / (4.0 * n):
        raise CapError("cap too large: diameter must stay below r/(4n)")
    V = sphere.vertices
    chosen: list[int] = []
    sep = 0.4 * cap_radius
    taken = np.empty((0, n))
    for i in range(len(V)):
        if len(taken) == 0 or np.min(np.linalg.norm(taken - V[i], axis=1)) >= sep:
            chosen.append(i)
            taken = np.vstack([taken, V[i]])
    centers = V[chosen]
    cents = sphere.centroids
    assign = np.full(sphere.n_simplices, -1, dtype=np.int64)
    for j, z in enumerate(centers):
        free = (assign < 0) & (np.linalg.norm(cents - z, axis=1) < cap_radius)
        assign[free] = j
    if np.any(assign < 0):
        raise CapError("cover leaves uncovered facets")
    return CapCover(np.asarray(sphere_center, dtype=float), float(sphere_radius), centers, float(cap_radius), assign)


def footprint_problem(sphere_map: PiecewiseAffineMap, cover: CapCover, j: int, p: float | None = None):
    """Cap problem on footprint ``j`` with the current map values as data."""
    mesh = sphere_map.mesh
    facets = mesh.simplices[cover.assignment == j]
    verts, local = np.unique(facets, return_inverse=True)
    local = local.reshape(facets.shape)
    d = mesh.dim
    # boundary of the footprint: faces of the facets used exactly once
    faces = np.concatenate([np.delete(local, i, axis=1) for i in range(d + 1)])
    keys, counts = np.unique(np.sort(faces, axis=1), axis=0, return_counts=True)
    bmask = np.zeros(len(verts), dtype=bool)
    bmask[keys[counts == 1].ravel()] = True
    z = cover.centers[j] - cover.sphere_center
    z = z / np.linalg.norm(z)
    chart = stereo_chart(mesh.vertices[verts], cover.sphere_center, cover.sphere_radius, z)
    p = float(d if p is None else p)
    sub = SimplicialMesh(mesh.vertices[verts], local, check=False)
    boundary = np.flatnonzero(bmask)
    prob = CapProblem(
        sub, chart, boundary, sphere_map.nodal_values[verts][boundary], p,
        _weights(chart, local, cover.sphere_radius, p), {"cap": j},
    )
    return prob, verts


def replace_on_caps_with_stats(sphere_map: PiecewiseAffineMap, cover: CapCover, p=None, tol=1e-10, max_iter=200):
    """Replace the map inside every footprint by its cap minimizer.

    Returns the new map and a list of per-cap dicts with input and output
    energies and their ratio.
    """
    if sphere_map.mesh.dim != sphere_map.mesh.n - 1:
        raise CapError("expected a map on a sphere mesh")
    if len(cover.assignment) != sphere_map.mesh.n_simplices or np.any(cover.assignment < 0):
        raise CapError("cover leaves uncovered facets")
    out = sphere_map.nodal_values.copy()
    stats = []
    for j in range(len(cover.centers)):
        if not np.any(cover.assignment == j):
            continue
        prob, verts = footprint_problem(sphere_map, cover, j, p)
        if len(prob.interior) == 0:
            continue
        e_in = cap_energy(prob, sphere_map.nodal_values[verts])
        sol = solve_cap(prob, tol, max_iter)
        out[verts[prob.interior]] = sol.values[prob.interior]
        stats.append(
            {
                "cap": j,
                "energy_in": float(e_in.sum()),
                "energy_out": float(sol.energy.sum()),
                "ratio": float(sol.energy.sum() / e_in.sum()) if e_in.sum() > 0 else 0.0,
            }
        )
    return PiecewiseAffineMap(sphere_map.mesh, out, f"caps({sphere_map.label})"), stats


def replace_on_caps(sphere_map: PiecewiseAffineMap, cover: CapCover, p=None, tol=1e-10, max_iter=200) -> PiecewiseAffineMap:
    return replace_on_caps_with_stats(sphere_map, cover, p, tol, max_iter)[0]
