import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from invlab.fixtures import affine_map, identity_map, random_pl_homeomorphism
from invlab.mesh import (
    MeshError,
    PiecewiseAffineMap,
    RasterSet,
    SimplicialMesh,
    build_ball_mesh,
    build_box_mesh,
    build_sphere_mesh,
    cofactor_matrix,
    derivative,
    evaluate,
    image_measure,
    integrate_jacobian,
    isoperimetric_check,
    load_map,
    rasterize_image,
    save_map,
    wedge_normal,
)


def brute_cofactor(F):
    n = F.shape[0]
    C = np.empty_like(F)
    for i, j in itertools.product(range(n), repeat=2):
        minor = np.delete(np.delete(F, i, axis=0), j, axis=1)
        C[i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    return C


# --- box meshes -------------------------------------------------------------


def test_unit_square_has_two_triangles():
    m = build_box_mesh(2, 1)
    assert m.n_simplices == 2 and m.n_vertices == 4


def test_unit_cube_has_six_tetrahedra():
    m = build_box_mesh(3, 1)
    assert m.n_simplices == 6 and m.n_vertices == 8


def test_box_area_sums_to_one():
    assert abs(build_box_mesh(2, 4).volumes.sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("n,res", [(2, 3), (3, 2), (4, 1)])
def test_box_counts_and_orientation(n, res):
    m = build_box_mesh(n, res)
    assert m.n_vertices == (res + 1) ** n
    assert m.n_simplices == math.factorial(n) * res**n
    assert np.all(m.signed_volumes > 0)


def test_box_rejects_bad_arguments():
    with pytest.raises(MeshError):
        build_box_mesh(1, 2)
    with pytest.raises(MeshError):
        build_box_mesh(2, 0)


@given(st.integers(2, 3), st.integers(1, 5))
def test_partition_of_unity(n, res):
    m = build_box_mesh(n, res)
    assert abs(m.volumes.sum() - 1.0) <= 1e-12


def test_boundary_facets_are_used_once():
    m = build_box_mesh(3, 2)
    faces = np.sort(np.concatenate([np.delete(m.simplices, i, axis=1) for i in range(4)]), axis=1)
    keys, counts = np.unique(faces, axis=0, return_counts=True)
    once = {tuple(k) for k in keys[counts == 1]}
    assert once == {tuple(sorted(f)) for f in m.boundary_facets}


@given(st.integers(2, 3), st.integers(1, 3), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_affine_flux_through_boundary(n, res, c):
    # flux of u(y) = c + y through the closed boundary equals n * volume
    m = build_box_mesh(n, res)
    N = m.oriented_boundary_facets()
    Z = m.vertices[N]
    centroid = Z.mean(axis=1)
    normals = wedge_normal(Z[:, 1:] - Z[:, :1]) / math.factorial(n - 1)
    u = np.asarray(c[:n]) + centroid
    flux = np.einsum("ij,ij->", u, normals)
    assert abs(flux - n) <= 1e-10


# --- sphere and ball meshes -------------------------------------------------


def test_circle_perimeter_at_refinement_six():
    m = build_sphere_mesh(2, np.zeros(2), 1.5, 6)
    assert m.n_simplices == 4 * 2**6
    assert abs(m.volumes.sum() - 2 * math.pi * 1.5) / (2 * math.pi * 1.5) < 0.01


def test_octahedron_at_refinement_zero():
    m = build_sphere_mesh(3, np.zeros(3), 2.0, 0)
    assert m.n_vertices == 6 and m.n_simplices == 8
    assert np.allclose(np.linalg.norm(m.vertices, axis=1), 2.0)


def test_sphere_flux_gives_volume():
    m = build_sphere_mesh(3, np.array([0.1, 0.2, 0.3]), 0.7, 5)
    fmap = identity_map(m)
    Z = m.vertices[m.simplices]
    u = (Z.mean(axis=1) - np.array([0.1, 0.2, 0.3])) / 3.0
    flux = float(np.einsum("ij,ij->", u, fmap.image_facet_normals()))
    assert abs(flux - 4 / 3 * math.pi * 0.7**3) / (4 / 3 * math.pi * 0.7**3) < 0.01


@pytest.mark.parametrize("n", [2, 3])
def test_ball_mesh_boundary_matches_sphere(n):
    ball = build_ball_mesh(n, np.zeros(n), 1.0, 3, 4)
    sph = build_sphere_mesh(n, np.zeros(n), 1.0, 3)
    bverts = np.unique(ball.boundary_facets)
    assert np.allclose(np.sort(ball.vertices[bverts], axis=0), np.sort(sph.vertices, axis=0))
    assert np.all(ball.signed_volumes > 0)


# --- evaluation and derivatives --------------------------------------------


def test_identity_evaluation(rng):
    m = build_box_mesh(2, 4)
    x = rng.random((50, 2))
    assert np.allclose(evaluate(identity_map(m), x), x, atol=1e-15)


def test_vertex_evaluation_returns_nodal_value(rng):
    m = build_box_mesh(3, 2)
    f = PiecewiseAffineMap(m, rng.random((m.n_vertices, 3)))
    assert np.allclose(evaluate(f, m.vertices), f.nodal_values, atol=1e-14)


@given(st.integers(0, 10_000))
def test_affine_data_is_reproduced(seed):
    r = np.random.default_rng(seed)
    M, b = r.normal(size=(3, 3)), r.normal(size=3)
    f = affine_map(build_box_mesh(3, 2), M, b)
    x = r.random((20, 3))
    assert np.allclose(evaluate(f, x), x @ M.T + b, atol=1e-12)


def test_outside_point_raises():
    f = identity_map(build_box_mesh(2, 2))
    with pytest.raises(MeshError):
        evaluate(f, np.array([[1.5, 0.5]]))
    assert np.isnan(evaluate(f, np.array([[1.5, 0.5]]), outside="nan")).all()


def test_snapping_accepts_boundary_roundoff():
    f = identity_map(build_box_mesh(2, 2))
    y = evaluate(f, np.array([[1.0 + 1e-13, 0.5]]))
    assert np.allclose(y, [[1.0, 0.5]], atol=1e-12)


def test_identity_derivative():
    d = derivative(identity_map(build_box_mesh(3, 1)), 0)
    assert np.allclose(d.gradient, np.eye(3)) and np.allclose(d.cofactor, np.eye(3)) and d.jacobian == pytest.approx(1)


def test_diagonal_derivative():
    d = derivative(affine_map(build_box_mesh(2, 1), np.diag([2.0, 3.0])), 1)
    assert d.jacobian == pytest.approx(6.0)
    assert np.allclose(d.cofactor, np.diag([3.0, 2.0]))


def test_degenerate_simplex_is_rejected():
    V = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    mesh = SimplicialMesh(V, np.array([[0, 1, 2]]), check=False)
    with pytest.raises(MeshError):
        derivative(PiecewiseAffineMap(mesh, V), 0)


@given(st.integers(2, 4), st.integers(0, 10_000))
def test_adjugate_identity(n, seed):
    F = np.random.default_rng(seed).normal(size=(5, n, n))
    C = cofactor_matrix(F)
    J = np.linalg.det(F)
    lhs = F @ np.swapaxes(C, 1, 2)
    for k in range(5):
        assert np.abs(lhs[k] - J[k] * np.eye(n)).max() <= 1e-10 * (1 + abs(J[k]))
        assert np.allclose(C[k], brute_cofactor(F[k]), atol=1e-12)


# --- Jacobian integrals and rasters ----------------------------------------


def test_identity_jacobian_integral_is_one():
    assert integrate_jacobian(identity_map(build_box_mesh(3, 3))) == 1.0


def test_affine_jacobian_integral():
    M = np.array([[2.0, 0.5], [0.1, 1.5]])
    assert integrate_jacobian(affine_map(build_box_mesh(2, 3), M)) == pytest.approx(np.linalg.det(M), rel=1e-14)


def test_empty_region_integrates_to_zero():
    f = identity_map(build_box_mesh(2, 2))
    assert integrate_jacobian(f, lambda c: np.zeros(len(c), dtype=bool)) == 0.0


def test_homeomorphism_area_formula(rng):
    f = random_pl_homeomorphism(2, 12, rng)
    ras = rasterize_image(f, resolution=512)
    assert abs(integrate_jacobian(f) - ras.measure) / ras.measure < 0.02
    assert abs(integrate_jacobian(f) - ras.measure) <= 3 * ras.cell_volume * ras.boundary_cell_count()


def test_identity_image_measure():
    f = identity_map(build_box_mesh(2, 4))
    ras = rasterize_image(f, resolution=64)
    assert abs(ras.measure - 1.0) <= ras.cell_volume * ras.boundary_cell_count()


def test_doubled_square_has_area_four():
    f = affine_map(build_box_mesh(2, 4), 2 * np.eye(2))
    assert abs(image_measure(f, resolution=128) - 4.0) / 4.0 < 0.02


def test_raster_union_is_monotone(rng):
    a = RasterSet(np.zeros(2), np.ones(2), rng.random((16, 16)) < 0.3)
    b = RasterSet(np.zeros(2), np.ones(2), rng.random((16, 16)) < 0.3)
    u = a.union(b)
    assert u.measure >= max(a.measure, b.measure)
    with pytest.raises(MeshError):
        a.union(RasterSet(np.zeros(2), 2 * np.ones(2), b.occupancy))


def _disk(res, r=0.4, c=0.5):
    lo, hi = np.zeros(2), np.ones(2)
    x = (np.arange(res) + 0.5) / res
    X, Y = np.meshgrid(x, x, indexing="ij")
    return RasterSet(lo, hi, (X - c) ** 2 + (Y - c) ** 2 < r**2)


def test_isoperimetric_ratio_of_disk_contour():
    _, _, ratio = isoperimetric_check(_disk(512), method="contour")
    assert abs(ratio - 1 / (2 * math.sqrt(math.pi))) / (1 / (2 * math.sqrt(math.pi))) < 0.05


def test_isoperimetric_ratio_of_disk_faces_is_l1_perimeter():
    # face counting measures the l1 perimeter 8r of a disk
    _, _, ratio = isoperimetric_check(_disk(512))
    assert ratio == pytest.approx(math.sqrt(math.pi) / 8, rel=0.01)


def test_isoperimetric_single_cell():
    occ = np.zeros((4, 4), dtype=bool)
    occ[1, 2] = True
    vol, per, ratio = isoperimetric_check(RasterSet(np.zeros(2), np.ones(2), occ))
    assert vol == pytest.approx(1 / 16) and per == pytest.approx(1.0) and ratio == pytest.approx(0.25)


def test_two_disks_ratio_not_above_one_disk():
    one = _disk(256, 0.2, 0.3)
    two = one.union(_disk(256, 0.2, 0.72))
    assert isoperimetric_check(two)[2] <= isoperimetric_check(one)[2]


def test_empty_raster_is_rejected():
    with pytest.raises(MeshError):
        isoperimetric_check(RasterSet(np.zeros(2), np.ones(2), np.zeros((4, 4), dtype=bool)))


def test_map_text_roundtrip(tmp_path, rng):
    f = random_pl_homeomorphism(3, 2, rng)
    save_map(f, tmp_path / "m.txt", tmp_path / "v.txt")
    g = load_map(tmp_path / "m.txt", tmp_path / "v.txt")
    assert np.array_equal(g.nodal_values, f.nodal_values)
    assert np.array_equal(g.mesh.simplices, f.mesh.simplices)
    head = (tmp_path / "m.txt").read_text().splitlines()[0].split()
    assert head == ["3", str(f.mesh.n_vertices), str(f.mesh.n_simplices), str(len(f.mesh.boundary_facets))]
