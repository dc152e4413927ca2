"""Numerical laboratory for degree, the INV condition and polyconvex energies of PL maps."""

__version__ = "0.1.0"

from .convex import ConvexFunctionSpec, WeightFunction, construct_b, legendre_conjugate, make_builtin, verify_flags
from .degree import BallSpec, DegreeField, degree_field, degree_pl, topological_image, weak_degree_integral, winding_oracle_2d
from .inv import InvReport, check_inv, inverse_residual, lusin_n_probe, symdiff_measure
from .mesh import PiecewiseAffineMap, SimplicialMesh, build_ball_mesh, build_box_mesh, build_sphere_mesh, integrate_jacobian

__all__ = [
    "BallSpec",
    "ConvexFunctionSpec",
    "DegreeField",
    "InvReport",
    "PiecewiseAffineMap",
    "SimplicialMesh",
    "WeightFunction",
    "build_ball_mesh",
    "build_box_mesh",
    "build_sphere_mesh",
    "check_inv",
    "construct_b",
    "degree_field",
    "degree_pl",
    "integrate_jacobian",
    "inverse_residual",
    "legendre_conjugate",
    "lusin_n_probe",
    "make_builtin",
    "symdiff_measure",
    "topological_image",
    "verify_flags",
    "weak_degree_integral",
    "winding_oracle_2d",
]
