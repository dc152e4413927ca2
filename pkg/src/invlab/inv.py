"""(INV) sampling checker, Lusin (N) probe, image symmetric differences and
inverse residuals."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._rng import stream
from .degree import (
    BallSpec,
    DegreeError,
    DegreeField,
    degree_many,
    distance_to_image,
    restrict_to_sphere,
)
from .mesh import MeshError, PiecewiseAffineMap, SimplicialMesh, _Locator, evaluate, grid_centers, rasterize_image


class InvError(ValueError):
    pass


@dataclass(frozen=True)
class InvReport:
    ball: BallSpec
    inside_samples: int
    outside_samples: int
    inside_violations: int
    outside_violations: int
    violation_points: np.ndarray
    inside_skipped: int = 0
    outside_skipped: int = 0

    @property
    def violations(self) -> int:
        return self.inside_violations + self.outside_violations

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def as_dict(self) -> dict:
        return {
            "center": list(self.ball.center),
            "radius": self.ball.radius,
            "inside_samples": self.inside_samples,
            "outside_samples": self.outside_samples,
            "inside_violations": self.inside_violations,
            "outside_violations": self.outside_violations,
            "inside_skipped": self.inside_skipped,
            "outside_skipped": self.outside_skipped,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class ModuliCurve:
    """Pairs ``(|A|, |g(A)|)`` along a family of shrinking sets."""

    pairs: np.ndarray
    direction: str = "forward"
    flag: bool = False

    def to_json(self) -> str:
        return json.dumps({"direction": self.direction, "flag": self.flag, "pairs": self.pairs.tolist()})


# ---------------------------------------------------------------------------
# sampling helpers


def sample_mesh(mesh: SimplicialMesh, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in the union of the simplices."""
    vol = mesh.volumes
    idx = rng.choice(mesh.n_simplices, size=count, p=vol / vol.sum())
    bary = rng.dirichlet(np.ones(mesh.dim + 1), size=count)
    return np.einsum("pk,pkj->pj", bary, mesh.vertices[mesh.simplices[idx]])


def sample_ball(ball: BallSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    n = ball.n
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = ball.radius * rng.random(count) ** (1.0 / n)
    return np.array(ball.center) + r[:, None] * d


def _sample_outside(mesh: SimplicialMesh, ball: BallSpec, count: int, rng) -> np.ndarray:
    out = []
    have = 0
    for _ in range(200):
        pts = sample_mesh(mesh, max(2 * (count - have), 64), rng)
        pts = pts[~ball.contains(pts) & (np.linalg.norm(pts - np.array(ball.center), axis=1) > ball.radius)]
        out.append(pts)
        have += len(pts)
        if have >= count:
            break
    pts = np.concatenate(out)[:count]
    if len(pts) < count:
        raise InvError("could not sample the complement of the ball")
    return pts


# ---------------------------------------------------------------------------
# (INV)


def check_inv(
    fmap: PiecewiseAffineMap,
    ball: BallSpec,
    samples: int = 10_000,
    seed: int = 0,
    raster_resolution: int = 256,
    refinement: int | None = None,
    skip_cells: float = 2.0,
) -> InvReport:
    """Sample (INV) for one ball.

    Inside samples whose image has degree 0 and outside samples whose image
    has nonzero degree are violations. Samples whose image lies within
    ``skip_cells`` raster cells of the sphere image are skipped and counted.
    """
    try:
        bmap = restrict_to_sphere(fmap, ball, refinement)
    except DegreeError as exc:
        raise InvError(f"sphere restriction failed: {exc}") from exc
    rng = stream(seed, "inv", ball.center, ball.radius)
    xin = sample_ball(ball, samples, rng)
    xout = _sample_outside(fmap.mesh, ball, samples, rng)
    try:
        yin = evaluate(fmap, xin)
        yout = evaluate(fmap, xout)
    except MeshError as exc:
        raise InvError(f"sample outside the domain: {exc}") from exc

    Z = bmap.nodal_values
    cell = float((Z.max(axis=0) - Z.min(axis=0)).max()) / raster_resolution
    width = skip_cells * cell

    def classify(y):
        near = np.isfinite(distance_to_image(bmap, y, width))
        deg = np.zeros(len(y), dtype=np.int64)
        deg[~near] = degree_many(bmap, y[~near])
        return deg, near

    din, skip_in = classify(yin)
    dout, skip_out = classify(yout)
    bad_in = (~skip_in) & (din == 0)
    bad_out = (~skip_out) & (dout != 0)
    return InvReport(
        ball=ball,
        inside_samples=samples,
        outside_samples=samples,
        inside_violations=int(bad_in.sum()),
        outside_violations=int(bad_out.sum()),
        violation_points=np.concatenate([xin[bad_in], xout[bad_out]]),
        inside_skipped=int(skip_in.sum()),
        outside_skipped=int(skip_out.sum()),
    )


def default_radii(r_max: float, count: int = 8) -> np.ndarray:
    """``count`` log-spaced radii in ``[r_max/32, r_max)``."""
    return r_max * np.geomspace(1.0 / 32.0, 1.0, count, endpoint=False)


def check_inv_radii(
    fmap: PiecewiseAffineMap,
    center,
    r_max: float,
    radii=None,
    samples: int = 10_000,
    seed: int = 0,
    **kwargs,
) -> list[InvReport]:
    """One report per radius around ``center``."""
    radii = default_radii(r_max) if radii is None else np.asarray(radii, dtype=float)
    return [check_inv(fmap, BallSpec(center, float(r)), samples, seed, **kwargs) for r in radii]


# ---------------------------------------------------------------------------
# symmetric difference of images


def rasterize_preimage_set(fmap: PiecewiseAffineMap, inside, lo, hi, resolution) -> np.ndarray:
    """Occupancy of cells whose center has some preimage satisfying ``inside``."""
    n = fmap.nodal_values.shape[1]
    res = tuple(int(r) for r in np.broadcast_to(np.asarray(resolution), (n,)))
    centers = grid_centers(lo, hi, res)
    loc = _Locator(fmap.nodal_values, fmap.mesh.simplices)
    occ = np.zeros(len(centers), dtype=bool)
    step = 1 << 15
    for lo_i in range(0, len(centers), step):
        p, s, b = loc.hits(centers[lo_i : lo_i + step], tol=0.0)
        if not len(p):
            continue
        x = np.einsum("pk,pkj->pj", b, fmap.mesh.vertices[fmap.mesh.simplices[s]])
        ok = inside(x)
        occ[lo_i + p[ok]] = True
    return occ.reshape(res)


def symdiff_measure(
    mapA: PiecewiseAffineMap, ball: BallSpec, reference_field: DegreeField, raster_resolution=None
) -> float:
    """Measure of ``mapA(B)`` symmetric-difference the nonzero-degree cells."""
    res = reference_field.resolution
    if raster_resolution is not None:
        want = tuple(np.broadcast_to(np.asarray(raster_resolution), (len(res),)))
        if tuple(int(r) for r in want) != tuple(res):
            raise InvError("raster grid does not match the reference field")
    occ = rasterize_preimage_set(mapA, ball.contains, reference_field.lo, reference_field.hi, res)
    diff = occ ^ (reference_field.values != 0)
    return float(diff.sum()) * reference_field.cell_volume


# ---------------------------------------------------------------------------
# Lusin (N) probe


def lusin_n_probe(
    maps,
    subsets,
    raster_resolution: int = 128,
    direction: str = "forward",
    shrink_factor: float = 10.0,
    image_fraction: float = 0.1,
) -> ModuliCurve:
    """Source measure versus rasterized image measure along nested subsets.

    ``maps`` is one map or a list with one map per subset. The flag is raised
    when the source measure shrinks by ``shrink_factor`` while the last image
    measure is still at least ``image_fraction`` of the first.
    """
    subsets = [np.asarray(s) for s in subsets]
    if not subsets:
        raise InvError("empty set family")
    if isinstance(maps, PiecewiseAffineMap):
        maps = [maps] * len(subsets)
    if len(maps) != len(subsets):
        raise InvError("need one map per subset")
    pairs = []
    for fmap, sub in zip(maps, subsets):
        src = float(fmap.mesh.volumes[sub].sum())
        img = rasterize_image(fmap, sub, raster_resolution).measure
        pairs.append((src, img))
    pairs = np.array(pairs)
    if np.any(np.diff(pairs[:, 0]) >= 0):
        raise InvError("source measures must be strictly decreasing")
    flag = bool(
        pairs[-1, 0] * shrink_factor <= pairs[0, 0] and pairs[-1, 1] >= image_fraction * pairs[0, 1]
    )
    return ModuliCurve(pairs, direction, flag)


# ---------------------------------------------------------------------------
# inverse residuals


def inverse_residual(
    f: PiecewiseAffineMap, h: PiecewiseAffineMap, samples: int = 10_000, seed: int = 0
) -> tuple[float, float]:
    """Max and mean of ``|h(f(x)) - x|`` over uniform samples of f's domain."""
    rng = stream(seed, "inverse-residual")
    x = sample_mesh(f.mesh, samples, rng)
    y = evaluate(f, x)
    hx = evaluate(h, y, outside="nan")
    bad = np.isnan(hx).any(axis=1)
    if bad.mean() > 0.01:
        raise InvError(f"{bad.mean():.1%} of images fall outside the inverse's domain")
    r = np.linalg.norm(hx[~bad] - x[~bad], axis=1)
    return float(r.max()), float(r.mean())


def sampled_inverse(f: PiecewiseAffineMap, target: SimplicialMesh, label: str = "") -> PiecewiseAffineMap:
    """Exact per-simplex inverse of ``f`` evaluated at the vertices of ``target``."""
    loc = _Locator(f.nodal_values, f.mesh.simplices)
    idx, bary = loc.locate(target.vertices, tol=1e-10)
    if np.any(idx < 0):
        raise InvError("target mesh is not covered by the image of f")
    vals = np.einsum("pk,pkj->pj", bary, f.mesh.vertices[f.mesh.simplices[idx]])
    return PiecewiseAffineMap(target, vals, label or f"inv({f.label})")
