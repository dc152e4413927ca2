"""Analytic and randomized test maps used by the checks and the acceptance suite."""

from __future__ import annotations

import math

import numpy as np

from .mesh import MeshError, PiecewiseAffineMap, SimplicialMesh, build_box_mesh, build_sphere_mesh


def identity_map(mesh: SimplicialMesh, label: str = "identity") -> PiecewiseAffineMap:
    return PiecewiseAffineMap(mesh, mesh.vertices.copy(), label)


def affine_map(mesh: SimplicialMesh, matrix, offset=None, label: str = "affine") -> PiecewiseAffineMap:
    M = np.asarray(matrix, dtype=float)
    b = np.zeros(mesh.n) if offset is None else np.asarray(offset, dtype=float)
    return PiecewiseAffineMap(mesh, mesh.vertices @ M.T + b, label)


def random_circle_map(rng: np.random.Generator, vertices: int = 256, modes: int = 3, scale: float = 1.0) -> PiecewiseAffineMap:
    """Closed polygon from a random trigonometric curve on the unit circle mesh.

    Coefficients of ``e^{ik theta}`` for ``|k| <= modes`` are complex normal
    with variance decaying like ``1/(1+k^2)``; the curve can wind several times.
    """
    mesh = build_sphere_mesh(2, np.zeros(2), 1.0, _circle_refinement(vertices))
    theta = np.arctan2(mesh.vertices[:, 1], mesh.vertices[:, 0])
    k = np.arange(-modes, modes + 1)
    c = (rng.standard_normal(len(k)) + 1j * rng.standard_normal(len(k))) / np.sqrt(1.0 + k**2)
    z = scale * (np.exp(1j * np.outer(theta, k)) @ c)
    return PiecewiseAffineMap(mesh, np.column_stack([z.real, z.imag]), "random-circle")


def _circle_refinement(vertices: int) -> int:
    r = int(round(math.log2(vertices / 4)))
    if 4 * 2**r != vertices:
        raise MeshError("circle meshes have 4 * 2^r vertices")
    return r


def angle_doubling_map(n: int, refinement: int, center=None, radius: float = 1.0) -> PiecewiseAffineMap:
    """Degree-2 map of the sphere: ``theta -> 2 theta`` in the first two coordinates.

    For n = 3 this is ``(x, y, z) -> ((x^2 - y^2)/rho, 2xy/rho, z)`` with
    ``rho = sqrt(x^2 + y^2)`` and the poles fixed.
    """
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    mesh = build_sphere_mesh(n, c, radius, refinement)
    w = mesh.vertices - c
    rho = np.hypot(w[:, 0], w[:, 1])
    out = w.copy()
    nz = rho > 1e-14 * radius
    out[nz, 0] = (w[nz, 0] ** 2 - w[nz, 1] ** 2) / rho[nz]
    out[nz, 1] = 2.0 * w[nz, 0] * w[nz, 1] / rho[nz]
    out[~nz, :2] = 0.0
    return PiecewiseAffineMap(mesh, c + out, "angle-doubling")


def sphere_identity(n: int, refinement: int, center=None, radius: float = 1.0) -> PiecewiseAffineMap:
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    return identity_map(build_sphere_mesh(n, c, radius, refinement), "sphere-identity")


def reflected_sphere_map(n: int, refinement: int, center=None, radius: float = 1.0) -> PiecewiseAffineMap:
    """Reflection in the first coordinate (degree -1 inside)."""
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    mesh = build_sphere_mesh(n, c, radius, refinement)
    vals = mesh.vertices.copy()
    vals[:, 0] = 2 * c[0] - vals[:, 0]
    return PiecewiseAffineMap(mesh, vals, "reflection")


def random_pl_homeomorphism(n: int, resolution: int, rng: np.random.Generator, amplitude: float = 0.3) -> PiecewiseAffineMap:
    """Identity on the unit cube boundary, interior vertices jittered.

    The jitter (in units of the grid spacing) is halved until every simplex
    keeps a positive Jacobian; a PL map with positive Jacobians that fixes the
    boundary is a homeomorphism of the cube.
    """
    mesh = build_box_mesh(n, resolution)
    X = mesh.vertices
    interior = ~mesh.boundary_vertex_mask
    noise = rng.uniform(-1.0, 1.0, size=X.shape) / resolution
    amp = amplitude
    for _ in range(60):
        Y = X.copy()
        Y[interior] += amp * noise[interior]
        fmap = PiecewiseAffineMap(mesh, Y, "random-homeomorphism")
        if fmap.jacobians.min() > 0:
            return fmap
        amp *= 0.5
    raise MeshError("could not find a positive perturbation")


def shear_values(X: np.ndarray, amplitude: float = 0.2) -> np.ndarray:
    """``x1 + amplitude sin(pi x2)``, other coordinates unchanged."""
    Y = X.copy()
    Y[:, 0] += amplitude * np.sin(math.pi * X[:, 1])
    return Y


def shear_map(n: int, resolution: int, amplitude: float = 0.2) -> PiecewiseAffineMap:
    mesh = build_box_mesh(n, resolution)
    return PiecewiseAffineMap(mesh, shear_values(mesh.vertices, amplitude), "shear")


BUBBLE_BALL = ((0.5, 0.5), 0.3)


def bubble_escape_map(resolution: int = 16, target=(0.5, 0.95)) -> PiecewiseAffineMap:
    """Identity on the square except the vertex nearest the ball center.

    That vertex is pushed outside the image of the ball's bounding circle, so
    points near the center land where the circle image has degree 0.
    """
    mesh = build_box_mesh(2, resolution)
    Y = mesh.vertices.copy()
    c = np.asarray(BUBBLE_BALL[0])
    i = int(np.argmin(np.linalg.norm(mesh.vertices - c, axis=1)))
    Y[i] = target
    return PiecewiseAffineMap(mesh, Y, "bubble-escape")


def oscillating_map(n: int, resolution: int, m: int, amplitude: float = 0.5) -> PiecewiseAffineMap:
    """``x_i + amplitude sin(2 pi m x_i) / (2 pi m)`` sampled on the unit cube.

    Converges uniformly to the identity as m grows while
    ``J = prod (1 + amplitude cos(2 pi m x_i))`` only converges weakly to 1.
    """
    if not 0 <= amplitude < 1:
        raise ValueError("amplitude must lie in [0, 1)")
    mesh = build_box_mesh(n, resolution)
    X = mesh.vertices
    Y = X + amplitude * np.sin(2 * math.pi * m * X) / (2 * math.pi * m)
    return PiecewiseAffineMap(mesh, Y, f"oscillating(m={m})")
