import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from invlab.convex import make_builtin
from invlab.counterexamples import (
    CantorSchemeParams,
    ConstructionError,
    build_cavity_map,
    build_ponomarev,
    energy_of_ponomarev,
    frame_mask,
    lsc_gap_experiment,
    tile_scaled_copies,
)
from invlab.fixtures import identity_map, shear_map
from invlab.mesh import build_box_mesh, evaluate, integrate_jacobian


def _pmap(alpha=0.4, n=2, K=3, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_ponomarev(CantorSchemeParams(alpha=alpha, n=n, K=K, **kw))


# --- parameters -------------------------------------------------------------


def test_sequences():
    P = CantorSchemeParams(alpha=0.5, n=2, K=4)
    assert P.a(0) == 1.0 and P.b(0) == 2.0
    assert P.a(4) == pytest.approx(0.5) and P.b(4) == pytest.approx(1.25)
    assert P.source_measure() == pytest.approx(0.25)
    assert P.target_measure() == pytest.approx(0.625**2)


@given(st.floats(0.05, 2.0), st.integers(2, 3), st.integers(1, 12))
def test_half_sides_nest(alpha, n, K):
    P = CantorSchemeParams(alpha=alpha, n=n, K=K)
    k = np.arange(1, K + 1)
    # each level-k cube fits in its quarter of the parent
    assert np.all(P.source_half(k) <= P.source_half(k - 1) / 2 + 1e-15)
    assert np.all(P.target_half(k) <= P.target_half(k - 1) / 2 + 1e-15)
    assert np.all(P.b(k) > 1.0) and np.all(np.diff(P.a(np.arange(1, K + 2))) <= 0)


def test_alpha_bound_and_warning():
    P = CantorSchemeParams(alpha=0.9, n=3, K=2, p=2.0, beta=2.0)
    assert P.alpha_bound() == pytest.approx(0.75)
    with pytest.warns(UserWarning, match="admissible"):
        build_ponomarev(P)
    assert CantorSchemeParams(alpha=0.1, n=3, K=2, p=2.0).warnings() == []


def test_invalid_parameters():
    for kw in (dict(alpha=0.4, n=4, K=2), dict(alpha=0.4, n=2, K=0), dict(alpha=-1, n=2, K=2)):
        with pytest.raises(ConstructionError):
            CantorSchemeParams(**kw)


def test_series_is_partial_sum():
    P = CantorSchemeParams(alpha=0.5, n=2, K=3)
    assert P.series(2.0) == pytest.approx(1 + 2.0**-2 + 3.0**-2)


# --- the construction -------------------------------------------------------


@pytest.mark.parametrize("n,K", [(2, 1), (2, 4), (3, 2)])
def test_ponomarev_is_orientation_preserving_and_fixes_boundary(n, K):
    f = _pmap(n=n, K=K).to_pl()
    assert f.jacobians.min() > 0
    X = f.mesh.vertices
    bnd = np.any((X == 0.0) | (X == 1.0), axis=1)
    assert np.array_equal(f.nodal_values[bnd], X[bnd])
    assert abs(integrate_jacobian(f) - 1.0) <= 1e-12


@pytest.mark.parametrize("n,K", [(2, 3), (3, 2)])
def test_cantor_cubes_carry_the_target_measure(n, K):
    pm = _pmap(n=n, K=K)
    f = pm.to_pl()
    core = f.mesh.tags == K + 1
    P = pm.params
    assert f.mesh.volumes[core].sum() == pytest.approx(P.source_measure(), rel=1e-12)
    assert integrate_jacobian(f, core) == pytest.approx(P.target_measure(), rel=1e-12)
    assert integrate_jacobian(f, frame_mask(f, K)) == pytest.approx(1 - P.target_measure(), rel=1e-12)


def test_pl_sampling_interpolates_exact_map(rng):
    pm = _pmap(n=2, K=3)
    f = pm.to_pl()
    assert np.allclose(f.nodal_values, pm.evaluate(f.mesh.vertices), atol=0)
    x = rng.random((2000, 2))
    # exact on the Cantor cubes, interpolated on the radial shells
    core = f.mesh.tags[f.mesh.locate(x)[0]] == 4
    err = np.abs(evaluate(f, x) - pm.evaluate(x)).max(axis=1)
    assert err[core].max() <= 1e-14 and err.max() <= 2e-3


def test_exact_map_outside_cube_raises():
    with pytest.raises(ConstructionError):
        _pmap().evaluate([[1.5, 0.5]])


def test_centers_count():
    cA, cB = _pmap(n=3, K=2).centers(2)
    assert cA.shape == (64, 3) and cB.shape == (64, 3)


def test_resolution_validation():
    with pytest.raises(ConstructionError):
        _pmap(K=3).to_pl(resolution=16)


# --- tiling -----------------------------------------------------------------


def test_single_tile_is_the_map():
    f = _pmap().to_pl()
    assert tile_scaled_copies(f, 1) is f


@pytest.mark.parametrize("m", [2, 3])
def test_tiling_fixes_boundary_and_keeps_frame_integral(m):
    f = _pmap(K=3).to_pl()
    g = tile_scaled_copies(f, m)
    assert g.mesh.n_simplices == m**2 * f.mesh.n_simplices
    X = g.mesh.vertices
    bnd = np.any((X == 0.0) | (X == 1.0), axis=1)
    assert np.array_equal(g.nodal_values[bnd], X[bnd])
    a = integrate_jacobian(f, frame_mask(f, 3))
    assert integrate_jacobian(g, frame_mask(g, 3)) == pytest.approx(a, rel=1e-12)


def test_tiles_share_interface_vertices():
    g = tile_scaled_copies(identity_map(build_box_mesh(2, 2)), 2)
    assert g.mesh.n_vertices == 25


def test_tiling_rejects_maps_moving_the_boundary():
    with pytest.raises(ConstructionError):
        tile_scaled_copies(shear_map(2, 4), 2)
    with pytest.raises(ConstructionError):
        tile_scaled_copies(identity_map(build_box_mesh(2, 2)), 0)


def test_lsc_experiment_small():
    P = CantorSchemeParams(alpha=0.4, n=2, K=3, p=2.0)
    rep = lsc_gap_experiment(P, [1, 2, 4], A=make_builtin("power_A"), phi=make_builtin("phi_identityish"))
    assert rep["spread"] <= 1e-9
    assert rep["limit_value"] == 1.0 and rep["gap"] > 0
    assert rep["common_value"] == pytest.approx(rep["truncated_value"], abs=1e-9)
    assert rep["energy_relative_deviation"] <= 1e-9


def test_energy_series_ratio_stays_finite():
    ratios = []
    for K in (2, 3, 4):
        rep = energy_of_ponomarev(_pmap(alpha=0.4, n=2, K=K), 2.0, make_builtin("power_A"), make_builtin("phi_identityish"))
        assert rep.feasible
        ratios.append(rep.metadata["series_ratio"])
    assert all(math.isfinite(r) and r > 0 for r in ratios)
    assert max(ratios) / min(ratios) < 10


# --- cavitation -------------------------------------------------------------


def test_cavity_radii():
    f = build_cavity_map(2, 32)
    r = np.linalg.norm(f.nodal_values, axis=1)
    assert r.min() >= 1 - 1e-12 and r.max() <= 2 + 1e-12
    assert np.allclose(f.nodal_values[0], [1.0, 0.0])


def test_cavity_regular_jacobian_integral():
    f = build_cavity_map(2, 128)
    regular = integrate_jacobian(f, f.mesh.tags == 0)
    assert abs(regular - 3 * math.pi) / (3 * math.pi) < 0.02


def test_cavity_3d_is_orientation_preserving_off_the_core():
    # the polyhedral sphere converges at second order in the mesh size
    errs = []
    for res in (8, 16):
        f = build_cavity_map(3, res)
        assert f.jacobians[f.mesh.tags == 0].min() > 0
        errs.append(abs(integrate_jacobian(f, f.mesh.tags == 0) - 28 * math.pi / 3) / (28 * math.pi / 3))
    assert errs[1] < 0.06 and errs[1] < errs[0] / 2.5


def test_cavity_dimension_check():
    with pytest.raises(ConstructionError):
        build_cavity_map(4, 4)
