import json
import warnings

import numpy as np
import pytest

from invlab._rng import stream
from invlab.counterexamples import CantorSchemeParams, build_cavity_map, build_ponomarev
from invlab.degree import BallSpec, topological_image
from invlab.fixtures import (
    BUBBLE_BALL,
    affine_map,
    bubble_escape_map,
    identity_map,
    random_pl_homeomorphism,
)
from invlab.inv import (
    InvError,
    check_inv,
    check_inv_radii,
    default_radii,
    inverse_residual,
    lusin_n_probe,
    sampled_inverse,
    symdiff_measure,
)
from invlab.mesh import PiecewiseAffineMap, SimplicialMesh, build_box_mesh


# --- INV sampler ------------------------------------------------------------


def test_identity_has_no_violations():
    f = identity_map(build_box_mesh(2, 8))
    reps = check_inv_radii(f, (0.5, 0.5), 0.45, samples=2000, seed=3)
    assert len(reps) == 8 and all(r.passed for r in reps)


def test_random_homeomorphism_has_no_violations(rng):
    f = random_pl_homeomorphism(2, 12, rng)
    rep = check_inv(f, BallSpec((0.45, 0.55), 0.3), samples=3000, seed=1)
    assert rep.violations == 0


def test_cavity_map_satisfies_inv():
    rep = check_inv(build_cavity_map(2, 32), BallSpec((0.0, 0.0), 0.7), samples=3000, seed=0)
    assert rep.violations == 0


def test_bubble_is_caught():
    rep = check_inv(bubble_escape_map(), BallSpec(*BUBBLE_BALL), samples=4000, seed=0)
    assert rep.inside_violations >= 1
    assert len(rep.violation_points) == rep.violations
    # every flagged inside point maps near the escaped vertex
    assert np.all(np.linalg.norm(rep.violation_points - 0.5, axis=1) < 0.3)


def test_report_is_json_serializable():
    rep = check_inv(identity_map(build_box_mesh(2, 4)), BallSpec((0.5, 0.5), 0.2), samples=200)
    d = json.loads(json.dumps(rep.as_dict()))
    assert d["passed"] and d["inside_samples"] == 200


def test_same_seed_same_report():
    f = bubble_escape_map()
    a = check_inv(f, BallSpec(*BUBBLE_BALL), samples=1000, seed=7)
    b = check_inv(f, BallSpec(*BUBBLE_BALL), samples=1000, seed=7)
    assert a.as_dict() == b.as_dict() and np.array_equal(a.violation_points, b.violation_points)


def test_ball_leaving_domain_is_an_error():
    with pytest.raises(InvError):
        check_inv(identity_map(build_box_mesh(2, 4)), BallSpec((0.5, 0.5), 0.7))


def test_default_radii_range():
    r = default_radii(1.0)
    assert len(r) == 8 and r[0] == pytest.approx(1 / 32) and r[-1] < 1.0
    assert np.all(np.diff(r) > 0)


# --- symmetric difference ---------------------------------------------------


def test_symdiff_of_self_is_boundary_sized():
    f = identity_map(build_box_mesh(2, 8))
    ball = BallSpec((0.5, 0.5), 0.3)
    field = topological_image(f, ball, 128)
    cells = np.count_nonzero(field.values)
    h = (field.hi - field.lo) / 128
    boundary_cells = 2 * np.pi * 0.3 / h.min()
    assert symdiff_measure(f, ball, field) <= 3 * boundary_cells * field.cell_volume
    assert cells > 0


def test_symdiff_of_translation_is_lens():
    base = build_box_mesh(2, 8)
    ball = BallSpec((0.5, 0.5), 0.25)
    field = topological_image(identity_map(base), ball, 256, box=([0, 0], [1, 1]))
    moved = affine_map(base, np.eye(2), [0.1, 0.0])
    d = 0.1
    r = 0.25
    lens = 2 * r * r * np.arccos(d / (2 * r)) - 0.5 * d * np.sqrt(4 * r * r - d * d)
    expected = 2 * (np.pi * r * r - lens)
    assert abs(symdiff_measure(moved, ball, field) - expected) / expected < 0.1


def test_symdiff_converges_for_shrinking_perturbations():
    base = build_box_mesh(2, 8)
    ball = BallSpec((0.5, 0.5), 0.25)
    field = topological_image(identity_map(base), ball, 256, box=([0, 0], [1, 1]))
    vals = [symdiff_measure(affine_map(base, np.eye(2), [e, 0.0]), ball, field) for e in (0.08, 0.04, 0.02)]
    assert vals[0] > vals[1] > vals[2]


def test_symdiff_rejects_mismatched_grid():
    f = identity_map(build_box_mesh(2, 4))
    ball = BallSpec((0.5, 0.5), 0.2)
    field = topological_image(f, ball, 32)
    with pytest.raises(InvError):
        symdiff_measure(f, ball, field, raster_resolution=64)


# --- Lusin probe ------------------------------------------------------------


def test_identity_moduli_curve_is_diagonal():
    f = identity_map(build_box_mesh(2, 16))
    c = f.mesh.centroids
    subsets = [np.all(np.abs(c - 0.5) < s, axis=1) for s in (0.5, 0.25, 0.125)]
    curve = lusin_n_probe(f, subsets, raster_resolution=256)
    assert np.allclose(curve.pairs[:, 0], curve.pairs[:, 1], rtol=0.05)
    assert not curve.flag


def test_ponomarev_raises_the_flag():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pm = build_ponomarev(CantorSchemeParams(alpha=1.0, n=2, K=5))
    f = pm.to_pl()
    subsets = [f.mesh.tags >= k + 1 for k in range(1, 6)]
    curve = lusin_n_probe(f, subsets, raster_resolution=256)
    assert curve.flag
    assert curve.pairs[-1, 0] < 0.05 and curve.pairs[-1, 1] > 0.2


def test_probe_needs_shrinking_sets():
    f = identity_map(build_box_mesh(2, 4))
    full = np.ones(f.mesh.n_simplices, dtype=bool)
    with pytest.raises(InvError):
        lusin_n_probe(f, [full, full])
    with pytest.raises(InvError):
        lusin_n_probe(f, [])


def test_moduli_curve_json():
    f = identity_map(build_box_mesh(2, 4))
    c = f.mesh.centroids
    curve = lusin_n_probe(f, [np.ones(len(c), bool), c[:, 0] < 0.5], raster_resolution=32)
    assert len(json.loads(curve.to_json())["pairs"]) == 2


# --- inverse residuals ------------------------------------------------------


def test_identity_residual_is_zero():
    f = identity_map(build_box_mesh(2, 4))
    mx, mean = inverse_residual(f, f, samples=500)
    assert mx <= 1e-14 and mean <= 1e-14


def test_scaling_inverse_is_exact():
    base = build_box_mesh(2, 4)
    f = affine_map(base, 2 * np.eye(2))
    h = PiecewiseAffineMap(SimplicialMesh(f.nodal_values, base.simplices), base.vertices.copy())
    assert inverse_residual(f, h, samples=500)[0] <= 1e-13


def test_sampled_inverse_of_pl_homeomorphism(rng):
    g = random_pl_homeomorphism(2, 8, rng)
    target = build_box_mesh(2, 32)
    h = sampled_inverse(g, target)
    mx, _ = inverse_residual(g, h, samples=4000)
    assert mx <= 2 * np.sqrt(2) / 32
    back, _ = inverse_residual(h, g, samples=4000)
    assert back <= 2 * np.sqrt(2) / 8


def test_sampled_inverse_needs_coverage():
    f = affine_map(build_box_mesh(2, 2), 0.5 * np.eye(2))
    with pytest.raises(InvError):
        sampled_inverse(f, build_box_mesh(2, 4))


def test_residual_refines_with_target():
    g = random_pl_homeomorphism(2, 6, stream(0, "refine"))
    res = [inverse_residual(g, sampled_inverse(g, build_box_mesh(2, r)), 2000)[0] for r in (8, 32)]
    assert res[1] < res[0]
