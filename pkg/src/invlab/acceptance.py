"""The acceptance battery: one function per criterion, each timed and self-contained.

Every check returns a ``CriterionResult`` whose ``details`` record the
measured quantities next to their thresholds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from ._rng import stream
from .caps import cap_energy, make_cap_problem, oscillation_check, solve_cap
from .convex import construct_b, make_builtin
from .counterexamples import CantorSchemeParams, build_cavity_map, lsc_gap_experiment
from .degree import (
    BallSpec,
    degree_field,
    degree_grid_sum,
    degree_pl,
    distributional_jacobian,
    jacobian_moment,
    smooth_bump,
    topological_image,
    weak_degree_integral,
    winding_oracle_2d,
)
from .fixtures import (
    BUBBLE_BALL,
    affine_map,
    angle_doubling_map,
    bubble_escape_map,
    identity_map,
    random_circle_map,
    random_pl_homeomorphism,
    shear_map,
    sphere_identity,
)
from .inv import check_inv, check_inv_radii, inverse_residual, sampled_inverse
from .mesh import PiecewiseAffineMap, SimplicialMesh, build_box_mesh
from .variational import MinimizeOptions, f_model, gradient_check, minimize


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    seconds: float
    limit_seconds: float
    details: dict = field(default_factory=dict)

    @property
    def within_time(self) -> bool:
        return self.seconds < self.limit_seconds

    def line(self) -> str:
        verdict = "PASS" if self.passed and self.within_time else "FAIL"
        return f"criterion {self.number} [{verdict}] {self.name} ({self.seconds:.1f}s / {self.limit_seconds:.0f}s)"

    def as_dict(self) -> dict:
        return {
            "number": self.number,
            "name": self.name,
            "passed": self.passed,
            "within_time": self.within_time,
            "seconds": self.seconds,
            "limit_seconds": self.limit_seconds,
            "details": _jsonable(self.details),
        }


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else ("infinite" if v > 0 else "-infinite") if not math.isnan(v) else "nan"
    return v


def _timed(number, name, limit, fn, *args, **kw) -> CriterionResult:
    t = time.perf_counter()
    passed, details = fn(*args, **kw)
    return CriterionResult(number, name, bool(passed), time.perf_counter() - t, limit, details)


# ---------------------------------------------------------------------------
# 1. degree oracle equivalence


def _degree_oracle(seed, maps=100, queries=10):
    rng = stream(seed, "criterion-1")
    mismatches = 0
    degrees = []
    for _ in range(maps):
        f = random_circle_map(rng, 256)
        Z = f.nodal_values
        lo, hi = Z.min(axis=0), Z.max(axis=0)
        for y in rng.uniform(lo, hi, (queries, 2)):
            d = degree_pl(f, y)
            degrees.append(d)
            mismatches += int(d != winding_oracle_2d(f, y))
    return mismatches == 0, {"mismatches": mismatches, "queries": len(degrees), "distinct_degrees": sorted(set(degrees))}


def criterion_1(seed: int = 0) -> CriterionResult:
    return _timed(1, "degree equals winding number on random circle maps", 5, _degree_oracle, seed)


# ---------------------------------------------------------------------------
# 2. weak degree identity


def _field_u(y):
    s = np.einsum("ij,ij->i", y, y)
    return y * (1.0 + s)[:, None]


def _field_psi(n):
    return lambda y: n + (n + 2) * np.einsum("ij,ij->i", y, y)


def _weak_degree(seed, refinement=5, resolution=128):
    rows = []
    worst = 0.0
    for n in (2, 3):
        for name, build in (("identity", sphere_identity), ("angle-doubling", angle_doubling_map)):
            bmap = build(n, refinement)
            psi = _field_psi(n)
            surface = weak_degree_integral(bmap, _field_u, psi)
            fld = degree_field(bmap, -1.05 * np.ones(n), 1.05 * np.ones(n), resolution)
            grid = degree_grid_sum(fld, psi)
            rel = abs(surface - grid) / abs(surface)
            worst = max(worst, rel)
            rows.append({"n": n, "map": name, "surface": surface, "grid": grid, "relative_error": rel})
    return worst <= 0.02, {"rows": rows, "worst": worst, "tolerance": 0.02}


def criterion_2(seed: int = 0, resolution: int = 128) -> CriterionResult:
    return _timed(2, "surface integral matches degree-weighted grid sum", 60, _weak_degree, seed, 5, resolution)


# ---------------------------------------------------------------------------
# 3. cavitation singular mass


def _cavitation(seed, resolution=256, raster=256):
    f = build_cavity_map(2, resolution)
    regular = f.mesh.tags == 0
    phi, grad = smooth_bump(np.zeros(2), 0.5, 0.95)
    det = distributional_jacobian(f, phi, grad, order=3)
    absolutely = jacobian_moment(f, phi, order=3, region=regular)
    singular = det - absolutely
    field = topological_image(f, BallSpec((0.0, 0.0), 1.0), resolution=raster)
    im_t = field.nonzero_measure()
    e1 = abs(singular - math.pi) / math.pi
    e2 = abs(im_t - 4 * math.pi) / (4 * math.pi)
    return e1 <= 0.05 and e2 <= 0.02, {
        "distributional": det,
        "absolutely_continuous": absolutely,
        "singular_part": singular,
        "singular_relative_error": e1,
        "image_measure": im_t,
        "image_relative_error": e2,
    }


def criterion_3(seed: int = 0, raster: int = 256) -> CriterionResult:
    return _timed(3, "cavity carries a point mass of size pi", 30, _cavitation, seed, 256, raster)


# ---------------------------------------------------------------------------
# 4. lower semicontinuity gap


def _lsc(seed, resolution=64):
    params = CantorSchemeParams(alpha=0.4, n=3, K=4, p=2.0, beta=2.0)
    rep = lsc_gap_experiment(params, [1, 2, 3], resolution, A=make_builtin("power_A", beta=2.0), phi=make_builtin("phi_identityish"))
    vals = [r["frame_jacobian_integral"] for r in rep["rows"]]
    agree = rep["spread"] <= 1e-9
    truncated = all(abs(v - rep["truncated_value"]) <= 1e-6 for v in vals)
    limit = rep["limit_value"] == 1.0
    gap = rep["gap"] > 0
    energy = rep["energy_relative_deviation"] <= 1e-9
    details = {k: rep[k] for k in ("common_value", "spread", "truncated_value", "limit_value", "gap", "energy_relative_deviation")}
    details.update(values=vals, jac_min=[r["jac_min"] for r in rep["rows"]])
    return agree and truncated and limit and gap and energy, details


def criterion_4(seed: int = 0, resolution: int = 64) -> CriterionResult:
    return _timed(4, "tiled Cantor maps keep a Jacobian gap", 120, _lsc, seed, resolution)


# ---------------------------------------------------------------------------
# 5. weight construction


def _weight(seed, pairs=10_000):
    A = make_builtin("power_A", beta=2.0)
    phi = make_builtin("phi_identityish")
    w = construct_b(A, phi)
    g, b = w.grid, w.table
    a = w.provenance["a"]
    monotone = bool(np.all(np.diff(b) >= -1e-15))
    below = bool(np.all(b <= a * (1 + 1e-12)))
    rng = stream(seed, "criterion-5")
    lg = np.log(g)
    # pairs of grid points whose product stays on the grid
    i = rng.integers(0, len(g), 4 * pairs)
    j = rng.integers(0, len(g), 4 * pairs)
    ok = np.flatnonzero(lg[i] + lg[j] <= lg[-1])[:pairs]
    s, t = g[i[ok]], g[j[ok]]
    excess = w.b(s * t) - w.b(s) - w.b(t)
    subadd = float(excess.max()) <= 1e-9
    top = float(w.B(g[-1]) / g[-1])
    superlinear = top > 1e3
    return monotone and below and subadd and superlinear, {
        "nondecreasing": monotone,
        "below_a": below,
        "max_subadditivity_excess": float(excess.max()),
        "pairs": len(s),
        "B_over_t_at_top": top,
        "required": 1e3,
        "grid_top": float(g[-1]),
        "bound_log_top": float(np.log(g[-1])),
        "t0": w.provenance["t0"],
    }


def criterion_5(seed: int = 0) -> CriterionResult:
    return _timed(5, "weight b is monotone, subadditive and superlinear", 5, _weight, seed)


# ---------------------------------------------------------------------------
# 6. cap minimizer


def cotangent_solve(problem) -> np.ndarray:
    """Harmonic extension from the cotangent Laplacian of the flat chart (p = 2)."""
    V = problem.chart
    S = problem.mesh.simplices
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, o = S[:, (k + 1) % 3], S[:, (k + 2) % 3], S[:, k]
        e1, e2 = V[i] - V[o], V[j] - V[o]
        cross = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        w = 0.5 * np.einsum("ij,ij->i", e1, e2) / cross
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    L = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(V), len(V))).tocsr()
    inner = problem.interior
    bnd = problem.boundary
    out = np.empty((len(V), problem.boundary_values.shape[1]))
    out[bnd] = problem.boundary_values
    rhs = -L[inner][:, bnd] @ problem.boundary_values
    out[inner] = spsolve(L[inner][:, inner].tocsc(), rhs).reshape(len(inner), -1)
    return out


def _caps(seed, instances=50, competitors=20):
    rng = stream(seed, "criterion-6")
    osc_ok = 0
    worst_oracle = 0.0
    dirichlet_bad = 0
    for _ in range(instances):
        axis = rng.standard_normal(3)
        angle = rng.uniform(0.2, 1.0)
        data = lambda x: rng.standard_normal((len(x), 3))
        prob = make_cap_problem(np.zeros(3), 1.0, axis, angle, data, refinement=4, layers=8, p=2)
        sol = solve_cap(prob)
        osc_ok += int(oscillation_check(sol, prob)[2])
        worst_oracle = max(worst_oracle, float(np.abs(sol.values - cotangent_solve(prob)).max()))
        e0 = sol.energy.sum()
        inner = prob.interior
        for _ in range(competitors):
            cand = sol.values.copy()
            cand[inner] += rng.uniform(-0.1, 0.1, (len(inner), 3)) * rng.uniform(0.001, 1.0)
            if cap_energy(prob, cand).sum() < e0 - 1e-12 * max(1.0, e0):
                dirichlet_bad += 1
    return osc_ok == instances and worst_oracle <= 1e-6 and dirichlet_bad == 0, {
        "instances": instances,
        "oscillation_bound_held": osc_ok,
        "max_oracle_difference": worst_oracle,
        "dirichlet_violations": dirichlet_bad,
    }


def criterion_6(seed: int = 0) -> CriterionResult:
    return _timed(6, "cap minimizer bounds oscillation and beats competitors", 60, _caps, seed)


# ---------------------------------------------------------------------------
# 7. INV sampler soundness


def _inv(seed, samples=10_000):
    ident = identity_map(build_box_mesh(2, 16))
    cav = build_cavity_map(2, 64)
    r_ident = check_inv_radii(ident, (0.5, 0.5), 0.5, samples=samples, seed=seed)
    r_cav = check_inv_radii(cav, (0.0, 0.0), 1.0, samples=samples, seed=seed)
    bubble = check_inv(bubble_escape_map(), BallSpec(*BUBBLE_BALL), samples, seed)
    v_ident = sum(r.violations for r in r_ident)
    v_cav = sum(r.violations for r in r_cav)
    return v_ident == 0 and v_cav == 0 and bubble.inside_violations >= 1, {
        "identity_violations": v_ident,
        "cavity_violations": v_cav,
        "radii": len(r_ident),
        "bubble_inside_violations": bubble.inside_violations,
        "bubble_outside_violations": bubble.outside_violations,
    }


def criterion_7(seed: int = 0) -> CriterionResult:
    return _timed(7, "INV sampler accepts homeomorphisms and catches the bubble", 60, _inv, seed)


# ---------------------------------------------------------------------------
# 8. minimization harness


def shear_start(resolution: int = 8, seed: int = 0, amplitude: float = 0.02) -> PiecewiseAffineMap:
    """Shear boundary values with a random feasible interior."""
    f = shear_map(3, resolution)
    rng = stream(seed, "shear-start")
    Y = f.nodal_values.copy()
    inner = ~f.mesh.boundary_vertex_mask
    noise = rng.uniform(-1, 1, Y.shape)
    amp = amplitude
    while True:
        Z = Y.copy()
        Z[inner] += amp * noise[inner]
        g = f.with_values(Z, "shear-start")
        if g.jacobians.min() > 0:
            return g
        amp *= 0.5


def _minimize(seed, resolution=8):
    phi = make_builtin("phi_identityish")
    A = make_builtin("power_A", beta=2.0)
    model = f_model(3, phi, A)
    f0 = shear_start(resolution, seed)
    res = minimize(model, f0, MinimizeOptions(seed=seed))
    trace = np.array(res.energy_trace)
    nonincreasing = bool(np.all(np.diff(trace) <= 0))
    bnd = f0.mesh.boundary_vertex_mask
    pinned = bool(np.array_equal(res.final_map.nodal_values[bnd], f0.nodal_values[bnd]))
    positive = res.jac_min > 0
    gerr = gradient_check(model, f0, samples=20, h_fd=1e-6, seed=seed)
    return nonincreasing and pinned and positive and res.inv_violations == 0 and gerr < 1e-5, {
        "iterations": res.iterations,
        "backtracks": res.backtracks,
        "initial_energy": float(trace[0]),
        "final_energy": float(trace[-1]),
        "nonincreasing": nonincreasing,
        "boundary_pinned": pinned,
        "jac_min": res.jac_min,
        "inv_violations": res.inv_violations,
        "gradient_check": gerr,
    }


def criterion_8(seed: int = 0) -> CriterionResult:
    return _timed(8, "descent keeps energy, Jacobians and boundary in check", 300, _minimize, seed)


# ---------------------------------------------------------------------------
# 9. inverse composition


def _max_edge(mesh: SimplicialMesh) -> float:
    P = mesh.vertices[mesh.simplices]
    d = P[:, :, None, :] - P[:, None, :, :]
    return float(np.sqrt(np.einsum("sijk,sijk->sij", d, d)).max())


def _inverse(seed, samples=10_000):
    M = np.array([[1.2, 0.3], [-0.1, 0.9]])
    b = np.array([0.2, -0.1])
    base = build_box_mesh(2, 8)
    f = affine_map(base, M, b)
    img = SimplicialMesh(f.nodal_values, base.simplices)
    h = PiecewiseAffineMap(img, base.vertices.copy(), "affine-inverse")
    r_aff = inverse_residual(f, h, samples, seed)[0]
    rng = stream(seed, "criterion-9")
    g = random_pl_homeomorphism(2, 16, rng)
    target = build_box_mesh(2, 32)
    hg = sampled_inverse(g, target)
    r_pl = inverse_residual(g, hg, samples, seed)[0]
    size = _max_edge(target)
    return r_aff <= 2 * _max_edge(img) and r_pl <= 2 * size, {
        "affine_residual": r_aff,
        "pl_residual": r_pl,
        "target_mesh_size": size,
        "bound": 2 * size,
    }


def criterion_9(seed: int = 0) -> CriterionResult:
    return _timed(9, "sampled inverse composes to the identity", 10, _inverse, seed)


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
}


def run_suite(seed: int = 0, only=None, coarse: bool = False) -> list[CriterionResult]:
    """Run the battery; ``coarse`` halves the raster resolutions."""
    out = []
    for k, fn in CRITERIA.items():
        if only and k not in only:
            continue
        if coarse and k == 2:
            out.append(fn(seed, resolution=64))
        elif coarse and k == 3:
            out.append(fn(seed, raster=128))
        else:
            out.append(fn(seed))
    return out
