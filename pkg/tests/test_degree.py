import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from invlab.counterexamples import build_cavity_map
from invlab.degree import (
    BallSpec,
    DegreeError,
    ball_volume,
    degree_field,
    degree_grid_sum,
    degree_many,
    degree_pl,
    distributional_jacobian,
    jacobian_moment,
    restrict_to_sphere,
    smooth_bump,
    topological_image,
    weak_degree_integral,
    winding_oracle_2d,
)
from invlab.fixtures import (
    affine_map,
    angle_doubling_map,
    identity_map,
    random_circle_map,
    reflected_sphere_map,
    shear_map,
    sphere_identity,
)
from invlab.mesh import build_box_mesh


# --- pointwise degree -------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3])
def test_identity_sphere_degree(n):
    b = sphere_identity(n, 4 if n == 3 else 6)
    assert degree_pl(b, np.zeros(n)) == 1
    assert degree_pl(b, np.full(n, 0.3)) == 1
    assert degree_pl(b, np.full(n, 2.0)) == 0


@pytest.mark.parametrize("n", [2, 3])
def test_angle_doubling_has_degree_two(n):
    b = angle_doubling_map(n, 6 if n == 2 else 4)
    y = np.zeros(n)
    y[0] = 0.1
    assert degree_pl(b, y) == 2
    assert degree_pl(b, np.full(n, 3.0)) == 0


@pytest.mark.parametrize("n", [2, 3])
def test_reflection_has_degree_minus_one(n):
    assert degree_pl(reflected_sphere_map(n, 3), np.full(n, 0.1)) == -1


def test_point_on_image_is_jittered_then_decided():
    b = sphere_identity(2, 4)
    # a vertex of the image polygon: jitter moves it to one side
    assert degree_pl(b, b.nodal_values[0]) in (0, 1)


def test_volume_mesh_is_rejected():
    with pytest.raises(DegreeError):
        degree_pl(identity_map(build_box_mesh(2, 2)), np.zeros(2))


@given(st.integers(0, 2**31))
def test_ray_degree_matches_winding_oracle(seed):
    rng = np.random.default_rng(seed)
    b = random_circle_map(rng, vertices=64, modes=3)
    ys = rng.uniform(-2.0, 2.0, size=(30, 2))
    deg = degree_many(b, ys)
    for y, d in zip(ys, deg):
        try:
            w = winding_oracle_2d(b, y)
        except DegreeError:
            continue
        assert d == w


def test_winding_oracle_rejects_3d():
    with pytest.raises(DegreeError):
        winding_oracle_2d(sphere_identity(3, 1), np.zeros(3))


# --- weak degree ------------------------------------------------------------


@pytest.mark.parametrize("n,ref", [(2, 7), (3, 5)])
def test_weak_degree_of_position_field_is_volume(n, ref):
    b = sphere_identity(n, ref)
    val = weak_degree_integral(b, lambda y: y / n, lambda y: np.ones(len(y)))
    assert abs(val - ball_volume(n, 1.0)) / ball_volume(n, 1.0) < 0.01


def test_constant_field_has_zero_flux():
    b = sphere_identity(3, 3)
    val = weak_degree_integral(b, lambda y: np.tile([1.0, -2.0, 0.5], (len(y), 1)))
    assert abs(val) <= 1e-10


def test_wrong_divergence_is_detected():
    with pytest.raises(DegreeError):
        weak_degree_integral(sphere_identity(2, 4), lambda y: y, lambda y: np.ones(len(y)))


def test_doubling_counts_area_twice():
    b = angle_doubling_map(2, 8)
    val = weak_degree_integral(b, lambda y: y / 2)
    assert abs(val - 2 * math.pi) / (2 * math.pi) < 0.01


def test_weak_degree_matches_grid_sum():
    b = angle_doubling_map(2, 7)
    field = degree_field(b, [-1.2, -1.2], [1.2, 1.2], 256)
    psi = lambda y: np.exp(-np.sum(y**2, axis=1))
    u = lambda y: y * (1 - np.exp(-np.sum(y**2, axis=1)))[:, None] / (2 * np.maximum(np.sum(y**2, axis=1), 1e-300))[:, None]
    flux = weak_degree_integral(b, u)
    assert abs(degree_grid_sum(field, psi) - flux) / abs(flux) < 0.01


# --- degree grids and topological images -----------------------------------


def test_degree_field_agrees_with_pointwise(rng):
    b = random_circle_map(rng, vertices=128, modes=2)
    field = degree_field(b, [-2.5, -2.5], [2.5, 2.5], 40)
    centers = field.centers()
    assert np.array_equal(field.values.ravel(), degree_many(b, centers))


def test_degree_field_3d_agrees_with_pointwise():
    b = angle_doubling_map(3, 3)
    field = degree_field(b, [-1.1] * 3, [1.1] * 3, 12)
    assert np.array_equal(field.values.ravel(), degree_many(b, field.centers()))


def test_degree_field_csv():
    field = degree_field(sphere_identity(2, 4), [-1, -1], [1, 1], 4)
    lines = field.to_csv().splitlines()
    assert lines[0] == "cell,y0,y1,degree" and len(lines) == 17


def test_topological_image_of_identity_ball():
    f = identity_map(build_box_mesh(2, 8))
    field = topological_image(f, BallSpec((0.5, 0.5), 0.3), resolution=256)
    assert abs(field.nonzero_measure() - math.pi * 0.09) / (math.pi * 0.09) < 0.02


def test_topological_image_translates():
    M = np.eye(2)
    f = affine_map(build_box_mesh(2, 4), M, [2.0, -1.0])
    field = topological_image(f, BallSpec((0.5, 0.5), 0.25), resolution=128)
    c = field.centers()[field.values.ravel() != 0].mean(axis=0)
    assert np.allclose(c, [2.5, -0.5], atol=0.01)


def test_excision_identity_and_shear_agree_off_the_sphere():
    # same boundary values on the sphere: same degree everywhere off the image
    ball = BallSpec((0.5, 0.5), 0.2)
    id_field = topological_image(identity_map(build_box_mesh(2, 16)), ball, 64, box=([0, 0], [1, 1]))
    sh = shear_map(2, 16, 0.05)
    sh_field = topological_image(sh, ball, 64, box=([0, 0], [1, 1]))
    b1 = restrict_to_sphere(sh, ball)
    # moving the boundary changes the degree only near the moved image
    diff = id_field.values != sh_field.values
    assert diff.sum() < 0.5 * (id_field.values != 0).sum()
    assert np.array_equal(sh_field.values.ravel(), degree_many(b1, sh_field.centers()))


def test_ball_outside_domain_is_rejected():
    with pytest.raises(DegreeError):
        restrict_to_sphere(identity_map(build_box_mesh(2, 2)), BallSpec((0.5, 0.5), 0.8))


def test_ball_spec_validation():
    with pytest.raises(DegreeError):
        BallSpec((0.0, 0.0), 0.0)
    assert BallSpec((0, 0), 1).contains(np.array([[0.5, 0.5], [1.0, 1.0]])).tolist() == [True, False]


# --- distributional Jacobian -----------------------------------------------


def test_distributional_jacobian_of_identity():
    f = identity_map(build_box_mesh(2, 32))
    phi, grad = smooth_bump((0.5, 0.5), 0.1, 0.4)
    ref = jacobian_moment(f, phi, order=5)
    assert abs(distributional_jacobian(f, phi, grad, order=5) - ref) <= 1e-3 * abs(ref)


def test_distributional_jacobian_of_smooth_map():
    f = shear_map(2, 48, 0.2)
    phi, grad = smooth_bump((0.5, 0.5), 0.1, 0.35)
    ref = jacobian_moment(f, phi, order=5)
    assert abs(distributional_jacobian(f, phi, grad, order=5) - ref) <= 1e-3 * abs(ref)


def test_distributional_jacobian_3d_affine():
    M = np.array([[1.2, 0.1, 0.0], [0.0, 0.9, 0.2], [0.1, 0.0, 1.1]])
    f = affine_map(build_box_mesh(3, 8), M)
    phi, grad = smooth_bump((0.5, 0.5, 0.5), 0.05, 0.4)
    ref = jacobian_moment(f, phi, order=5)
    assert abs(distributional_jacobian(f, phi, grad, order=5) - ref) <= 1e-3 * abs(ref)


def _cavity_excess(res):
    f = build_cavity_map(2, res)
    phi, grad = smooth_bump((0.0, 0.0), 0.3, 0.8)
    regular = jacobian_moment(f, phi, order=3, region=f.mesh.tags != 1)
    return distributional_jacobian(f, phi, grad, order=3) - regular - math.pi


def test_cavity_singular_part_converges_to_pi():
    # the tagged core fan has radius ~1/res and adds about 2 pi / res
    e = [_cavity_excess(r) for r in (32, 64, 128)]
    assert all(0 < x < 7.0 / r for x, r in zip(e, (32, 64, 128)))
    assert 1.9 < e[0] / e[1] < 2.1 and 1.9 < e[1] / e[2] < 2.1
    assert abs(e[2]) / math.pi < 0.02


def test_test_function_must_vanish_on_boundary():
    f = identity_map(build_box_mesh(2, 4))
    phi, grad = smooth_bump((0.5, 0.5), 0.4, 0.9)
    with pytest.raises(DegreeError):
        distributional_jacobian(f, phi, grad)


def test_bump_values_and_gradient():
    phi, grad = smooth_bump((0.0, 0.0), 0.2, 0.6)
    x = np.array([[0.1, 0.0], [0.7, 0.0], [0.4, 0.1]])
    v = phi(x)
    assert v[0] == 1.0 and v[1] == 0.0 and 0 < v[2] < 1
    h = 1e-6
    fd = (phi(x[2:] + [h, 0]) - phi(x[2:] - [h, 0])) / (2 * h)
    assert abs(fd[0] - grad(x[2:])[0, 0]) < 1e-6


def test_ball_volume():
    assert ball_volume(2, 1.0) == pytest.approx(math.pi)
    assert ball_volume(3, 2.0) == pytest.approx(32 * math.pi / 3)
