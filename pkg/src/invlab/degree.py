"""Brouwer degree of piecewise-affine sphere maps and related integrals.

The combinatorial degree counts signed crossings of the ray ``y + t e_1``
(t > 0) with the image facets. Ties are resolved by simulation of simplicity:
the query point is treated as if shifted by an infinitesimal ``(0, 1, eps)``
in the coordinates transverse to the ray, so every shared edge is decided the
same way by both incident facets.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from ._index import BoxIndex
from ._rng import stream
from .mesh import (
    MeshError,
    PiecewiseAffineMap,
    SimplicialMesh,
    build_sphere_mesh,
    cofactor_matrix,
    evaluate,
    grid_centers,
)
from .quadrature import simplex_rule

ON_IMAGE_TOL = 1e-9
JITTER = 1e-7
RETRIES = 8


class DegreeError(ValueError):
    pass


@dataclass(frozen=True)
class BallSpec:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise DegreeError("ball radius must be positive")

    @property
    def n(self) -> int:
        return len(self.center)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(pts) - np.array(self.center), axis=1) < self.radius


@dataclass(frozen=True, eq=False)
class DegreeField:
    """Degree values at the centers of a uniform grid on ``[lo, hi]``."""

    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray
    source: str = ""
    ball: BallSpec | None = None

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod((self.hi - self.lo) / np.array(self.resolution)))

    def centers(self) -> np.ndarray:
        return grid_centers(self.lo, self.hi, self.resolution)

    def nonzero_measure(self) -> float:
        return int(np.count_nonzero(self.values)) * self.cell_volume

    def same_grid(self, other) -> bool:
        return (
            tuple(self.resolution) == tuple(other.resolution)
            and np.allclose(self.lo, other.lo, rtol=0, atol=0)
            and np.allclose(self.hi, other.hi, rtol=0, atol=0)
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        n = len(self.lo)
        buf.write("cell," + ",".join(f"y{i}" for i in range(n)) + ",degree\n")
        centers = self.centers()
        for k, (c, v) in enumerate(zip(centers, self.values.ravel())):
            buf.write(f"{k}," + ",".join(f"{x:.12g}" for x in c) + f",{int(v)}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class TangentialCofactor:
    facet_index: int
    value: np.ndarray


# ---------------------------------------------------------------------------
# geometry helpers


def _check_hypersurface(boundary_map: PiecewiseAffineMap) -> None:
    mesh = boundary_map.mesh
    if mesh.dim != mesh.n - 1 or boundary_map.nodal_values.shape[1] != mesh.n:
        raise DegreeError("expected a map on a closed (n-1)-dimensional mesh into R^n")


def facet_images(boundary_map: PiecewiseAffineMap) -> np.ndarray:
    return boundary_map.nodal_values[boundary_map.mesh.simplices]


def _edge_sign(u: np.ndarray, v: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Sign of orient(u, v, p) in the plane with a symbolic tie-break."""
    swap = (v[:, 0] < u[:, 0]) | ((v[:, 0] == u[:, 0]) & (v[:, 1] < u[:, 1]))
    a = np.where(swap[:, None], v, u)
    b = np.where(swap[:, None], u, v)
    d = b - a
    o = d[:, 0] * (p[:, 1] - a[:, 1]) - d[:, 1] * (p[:, 0] - a[:, 0])
    tie = np.where(d[:, 1] != 0, -d[:, 1], d[:, 0])
    s = np.sign(np.where(o != 0, o, tie))
    return np.where(swap, -s, s)


def ray_crossings(Z: np.ndarray, pts: np.ndarray, index: BoxIndex | None = None):
    """Crossings of the lines through ``pts`` parallel to e_1 with facets ``Z``.

    Returns ``(point_index, x_star, sign)`` where ``x_star`` is the first
    coordinate of the crossing and ``sign`` the facet orientation seen by the
    ray. Crossings are counted for the whole line; callers keep ``x_star > y_1``.
    """
    n = Z.shape[-1]
    proj = Z[:, :, 1:]
    if index is None:
        index = BoxIndex(proj.min(axis=1), proj.max(axis=1))
    pidx, fidx = index.candidates(pts[:, 1:])
    P = pts[pidx]
    F = Z[fidx]
    if n == 2:
        a, b = F[:, 0, :], F[:, 1, :]
        y = P[:, 1]
        up = (a[:, 1] <= y) & (y < b[:, 1])
        down = (b[:, 1] <= y) & (y < a[:, 1])
        hit = up | down
        a, b, y = a[hit], b[hit], y[hit]
        xs = a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
        sign = np.where(up[hit], 1, -1)
        return pidx[hit], xs, sign
    if n == 3:
        q = P[:, 1:]
        A, B, C = F[:, 0, 1:], F[:, 1, 1:], F[:, 2, 1:]
        s1 = _edge_sign(A, B, q)
        s2 = _edge_sign(B, C, q)
        s3 = _edge_sign(C, A, q)
        hit = (s1 == s2) & (s2 == s3) & (s1 != 0)
        E1 = F[:, 1, :] - F[:, 0, :]
        E2 = F[:, 2, :] - F[:, 0, :]
        N = np.cross(E1, E2)
        hit &= N[:, 0] != 0
        N, F0, P, sgn = N[hit], F[hit, 0, :], P[hit], s1[hit]
        xs = F0[:, 0] - (N[:, 1] * (P[:, 1] - F0[:, 1]) + N[:, 2] * (P[:, 2] - F0[:, 2])) / N[:, 0]
        return pidx[hit], xs, sgn.astype(np.int64)
    raise DegreeError("degree supports n = 2, 3")


def degree_many(boundary_map: PiecewiseAffineMap, Y: np.ndarray) -> np.ndarray:
    """Crossing-count degree for many query points (no perturbation)."""
    _check_hypersurface(boundary_map)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Z = facet_images(boundary_map)
    out = np.zeros(len(Y), dtype=np.int64)
    step = 1 << 16
    proj = Z[:, :, 1:]
    index = BoxIndex(proj.min(axis=1), proj.max(axis=1))
    for lo in range(0, len(Y), step):
        chunk = Y[lo : lo + step]
        p, xs, s = ray_crossings(Z, chunk, index)
        keep = xs > chunk[p, 0]
        np.add.at(out, lo + p[keep], s[keep])
    return out


def _point_segment_dist(p, a, b):
    d = b - a
    L = np.einsum("ij,ij->i", d, d)
    t = np.where(L > 0, np.einsum("ij,ij->i", p - a, d) / np.where(L > 0, L, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * d), axis=1)


def _point_triangle_dist(p, a, b, c):
    e1, e2 = b - a, c - a
    N = np.cross(e1, e2)
    NN = np.einsum("ij,ij->i", N, N)
    w = p - a
    ok = NN > 0
    safe = np.where(ok, NN, 1.0)
    # barycentrics of the orthogonal projection
    u = np.einsum("ij,ij->i", np.cross(w, e2), N) / safe
    v = np.einsum("ij,ij->i", np.cross(e1, w), N) / safe
    inside = ok & (u >= 0) & (v >= 0) & (u + v <= 1)
    plane = np.abs(np.einsum("ij,ij->i", w, N)) / np.sqrt(safe)
    edges = np.minimum(
        np.minimum(_point_segment_dist(p, a, b), _point_segment_dist(p, b, c)), _point_segment_dist(p, c, a)
    )
    return np.where(inside, np.minimum(plane, edges), edges)


def distance_to_image(boundary_map: PiecewiseAffineMap, Y: np.ndarray, max_dist: float) -> np.ndarray:
    """Distance from each point to the image surface, ``inf`` beyond ``max_dist``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Z = facet_images(boundary_map)
    index = BoxIndex(Z.min(axis=1) - max_dist, Z.max(axis=1) + max_dist)
    out = np.full(len(Y), np.inf)
    step = 1 << 15
    for lo in range(0, len(Y), step):
        chunk = Y[lo : lo + step]
        p, f = index.candidates(chunk)
        if not len(p):
            continue
        F = Z[f]
        if Z.shape[-1] == 2:
            d = _point_segment_dist(chunk[p], F[:, 0], F[:, 1])
        else:
            d = _point_triangle_dist(chunk[p], F[:, 0], F[:, 1], F[:, 2])
        best = np.full(len(chunk), np.inf)
        np.minimum.at(best, p, d)
        out[lo : lo + step] = np.where(best <= max_dist, best, np.inf)
    return out


def degree_pl(boundary_map: PiecewiseAffineMap, y) -> int:
    """Brouwer degree of the PL extension at ``y``.

    Points within 1e-9 of the image are moved by a deterministic 1e-7 offset,
    up to eight times, before giving up.
    """
    _check_hypersurface(boundary_map)
    y = np.asarray(y, dtype=float)
    rng = stream(0x5EED, "degree-jitter")
    q = y.copy()
    for _ in range(RETRIES + 1):
        if distance_to_image(boundary_map, q[None, :], 10 * ON_IMAGE_TOL)[0] > ON_IMAGE_TOL:
            return int(degree_many(boundary_map, q[None, :])[0])
        d = rng.standard_normal(len(y))
        q = y + JITTER * d / np.linalg.norm(d)
    raise DegreeError("query point lies on the image of the boundary")


def winding_oracle_2d(boundary_map: PiecewiseAffineMap, y) -> int:
    """Winding number of a closed image polygon around ``y`` by angle summation."""
    _check_hypersurface(boundary_map)
    if boundary_map.mesh.n != 2:
        raise DegreeError("winding oracle is planar only")
    Z = facet_images(boundary_map) - np.asarray(y, dtype=float)
    a, b = Z[:, 0, :], Z[:, 1, :]
    if np.any(np.linalg.norm(a, axis=1) == 0) or np.any(_point_segment_dist(np.zeros_like(a), a, b) <= ON_IMAGE_TOL):
        raise DegreeError("query point lies on the image polygon")
    ang = np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], np.einsum("ij,ij->i", a, b))
    w = ang.sum() / (2.0 * np.pi)
    k = round(w)
    if abs(w - k) > 0.01:
        raise DegreeError(f"angle sum {w} is not near an integer")
    return int(k)


# ---------------------------------------------------------------------------
# weak degree and cofactors


def tangential_cofactors(boundary_map: PiecewiseAffineMap) -> list[TangentialCofactor]:
    """Image area vector per unit reference area, one per facet."""
    _check_hypersurface(boundary_map)
    vals = boundary_map.image_facet_normals() / boundary_map.mesh.volumes[:, None]
    return [TangentialCofactor(i, v) for i, v in enumerate(vals)]


def _check_orientation(mesh: SimplicialMesh) -> None:
    N = mesh.facet_normals
    total = np.abs(N.sum(axis=0)).max()
    if total > 1e-8 * np.linalg.norm(N, axis=1).sum():
        raise DegreeError("inconsistent facet orientation (constant fields have nonzero flux)")


def _check_divergence(u, psi, Z: np.ndarray) -> None:
    lo, hi = Z.reshape(-1, Z.shape[-1]).min(axis=0), Z.reshape(-1, Z.shape[-1]).max(axis=0)
    pts = stream(0x5EED, "div-check").uniform(lo, hi, size=(16, len(lo)))
    h = 1e-5 * max(1.0, float(np.abs(np.concatenate([lo, hi])).max()))
    div = np.zeros(len(pts))
    for i in range(len(lo)):
        e = np.zeros(len(lo))
        e[i] = h
        div += (np.asarray(u(pts + e))[:, i] - np.asarray(u(pts - e))[:, i]) / (2 * h)
    ref = np.asarray(psi(pts), dtype=float)
    if np.max(np.abs(div - ref)) > 1e-4 * (1.0 + np.abs(ref).max()):
        raise DegreeError("psi does not match the divergence of u")


def weak_degree_integral(boundary_map: PiecewiseAffineMap, u, psi=None, order: int = 4) -> float:
    """Flux of ``u`` through the oriented image surface.

    Equals the integral of degree times ``div u`` over the target. ``u`` maps
    ``(P, n)`` arrays to ``(P, n)``; ``psi``, if given, is checked against a
    finite-difference divergence of ``u``.
    """
    _check_hypersurface(boundary_map)
    mesh = boundary_map.mesh
    _check_orientation(mesh)
    Z = facet_images(boundary_map)
    if psi is not None:
        _check_divergence(u, psi, Z)
    bary, w = simplex_rule(mesh.dim, order)
    pts = np.einsum("qk,fkj->fqj", bary, Z)
    vals = np.asarray(u(pts.reshape(-1, mesh.n)), dtype=float).reshape(pts.shape)
    N = boundary_map.image_facet_normals()
    return float(np.einsum("q,fqj,fj->", w, vals, N))


def degree_grid_sum(field: DegreeField, psi) -> float:
    """Sum over cells of degree * psi(center) * cell volume."""
    centers = field.centers()
    return float(np.sum(field.values.ravel() * np.asarray(psi(centers), dtype=float)) * field.cell_volume)


# ---------------------------------------------------------------------------
# topological image


def degree_field(boundary_map: PiecewiseAffineMap, lo, hi, resolution, source: str = "", ball=None) -> DegreeField:
    """Degree at every cell center of a grid, one ray per grid column."""
    _check_hypersurface(boundary_map)
    n = boundary_map.mesh.n
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    res = tuple(int(r) for r in np.broadcast_to(np.asarray(resolution), (n,)))
    h0 = (hi[0] - lo[0]) / res[0]
    x0 = lo[0] + (np.arange(res[0]) + 0.5) * h0
    cols = grid_centers(lo[1:], hi[1:], res[1:])
    col_pts = np.column_stack([np.full(len(cols), -np.inf), cols])
    Z = facet_images(boundary_map)
    acc = np.zeros((len(cols), res[0] + 1), dtype=np.int64)
    p, xs, s = ray_crossings(Z, col_pts)
    # cells strictly left of a crossing see it along +e_1
    k = np.searchsorted(x0, xs, side="left")
    np.add.at(acc, (p, k), s)
    rc = np.cumsum(acc[:, ::-1], axis=1)[:, ::-1]
    vals = rc[:, 1:]
    values = np.moveaxis(vals.reshape(res[1:] + (res[0],)), -1, 0)
    return DegreeField(lo, hi, np.ascontiguousarray(values), source, ball)


def default_refinement(n: int) -> int:
    return 6 if n == 2 else 4


def restrict_to_sphere(fmap: PiecewiseAffineMap, ball: BallSpec, refinement: int | None = None) -> PiecewiseAffineMap:
    """Nodal interpolation of a volume map onto a sphere mesh of the ball."""
    n = fmap.mesh.n
    if ball.n != n:
        raise DegreeError("ball dimension does not match the map")
    r = default_refinement(n) if refinement is None else refinement
    sphere = build_sphere_mesh(n, np.array(ball.center), ball.radius, r)
    try:
        vals = evaluate(fmap, sphere.vertices)
    except MeshError as exc:
        raise DegreeError("ball not inside the map's domain") from exc
    return PiecewiseAffineMap(sphere, vals, f"{fmap.label}|dB")


def topological_image(
    fmap: PiecewiseAffineMap,
    ball: BallSpec,
    resolution=128,
    refinement: int | None = None,
    box=None,
) -> DegreeField:
    """Degree of ``f`` restricted to the sphere of ``ball`` over a target grid.

    The nonzero cells form the grid proxy of the topological image.
    """
    bmap = restrict_to_sphere(fmap, ball, refinement)
    if box is None:
        lo = bmap.nodal_values.min(axis=0)
        hi = bmap.nodal_values.max(axis=0)
        pad = 0.05 * (hi - lo).max()
        lo, hi = lo - pad, hi + pad
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in box)
    return degree_field(bmap, lo, hi, resolution, fmap.label, ball)


# ---------------------------------------------------------------------------
# distributional Jacobian


def _quadrature_points(fmap: PiecewiseAffineMap, sl, bary):
    P = fmap.mesh.vertices[fmap.mesh.simplices[sl]]
    return np.einsum("qk,skj->sqj", bary, P)


def distributional_jacobian(fmap: PiecewiseAffineMap, testfn, grad_testfn, order: int = 3, region=None) -> float:
    """``-int f_1 det[grad phi; grad f_2; ...; grad f_n] dx`` by per-simplex quadrature.

    ``testfn`` must vanish on the mesh boundary (compact support inside the
    domain). ``region`` optionally restricts the sum to a simplex mask.
    """
    mesh = fmap.mesh
    bnd = mesh.vertices[mesh.boundary_vertex_mask]
    scale = max(1.0, float(np.abs(np.asarray(testfn(mesh.vertices))).max()))
    if len(bnd) and np.abs(np.asarray(testfn(bnd), dtype=float)).max() > 1e-12 * scale:
        raise DegreeError("test function support reaches the domain boundary")
    bary, w = simplex_rule(mesh.n, order)
    mask = None if region is None else np.asarray(region, dtype=bool)
    total = 0.0
    for sl, F in fmap.iter_gradients(1 << 16):
        x = _quadrature_points(fmap, sl, bary)
        f1 = np.einsum("qk,sk->sq", bary, fmap.nodal_values[mesh.simplices[sl], 0])
        g = np.asarray(grad_testfn(x.reshape(-1, mesh.n)), dtype=float).reshape(x.shape)
        c0 = cofactor_matrix(F)[:, 0, :]
        integrand = -f1 * np.einsum("sqj,sj->sq", g, c0)
        per = (integrand @ w) * mesh.volumes[sl]
        if mask is not None:
            per = per[mask[sl]]
        total += float(per.sum())
    return total


def jacobian_moment(fmap: PiecewiseAffineMap, weight, order: int = 3, region=None) -> float:
    """``int weight(x) J_f(x) dx`` by per-simplex quadrature."""
    mesh = fmap.mesh
    bary, w = simplex_rule(mesh.n, order)
    mask = None if region is None else np.asarray(region, dtype=bool)
    total = 0.0
    for sl, F in fmap.iter_gradients(1 << 16):
        x = _quadrature_points(fmap, sl, bary)
        vals = np.asarray(weight(x.reshape(-1, mesh.n)), dtype=float).reshape(x.shape[:2])
        per = (vals @ w) * np.linalg.det(F) * mesh.volumes[sl]
        if mask is not None:
            per = per[mask[sl]]
        total += float(per.sum())
    return total


def smooth_bump(center, inner: float, outer: float):
    """C-infinity radial cutoff: 1 on ``|x-c| <= inner``, 0 beyond ``outer``.

    Returns ``(phi, grad_phi)`` as vectorized callables.
    """
    c = np.asarray(center, dtype=float)
    width = outer - inner

    def _g(s):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)

    def _dg(s):
        with np.errstate(divide="ignore", over="ignore"):
            ss = np.where(s > 0, s, 1.0)
            return np.where(s > 0, np.exp(-1.0 / ss) / ss**2, 0.0)

    def phi(x):
        r = np.linalg.norm(np.atleast_2d(x) - c, axis=1)
        s = (outer - r) / width
        a, b = _g(s), _g(1.0 - s)
        return a / (a + b)

    def grad(x):
        x = np.atleast_2d(x)
        d = x - c
        r = np.linalg.norm(d, axis=1)
        s = (outer - r) / width
        a, b = _g(s), _g(1.0 - s)
        da, db = _dg(s), -_dg(1.0 - s)
        dphi_ds = (da * (a + b) - a * (da + db)) / (a + b) ** 2
        dr = np.where(r[:, None] > 0, d / np.where(r > 0, r, 1.0)[:, None], 0.0)
        return (dphi_ds * (-1.0 / width))[:, None] * dr

    return phi, grad


def ball_volume(n: int, r: float) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r**n
