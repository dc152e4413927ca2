"""Per-simplex energy densities built from the minors of ``Df``.

The matrix norm is the Frobenius norm throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import PiecewiseAffineMap, cofactor_matrix


@dataclass(frozen=True)
class EnergyReport:
    """Per-term integrals; ``total`` is ``inf`` exactly when ``feasible`` is False."""

    terms: dict
    total: float
    feasible: bool
    resolution: int | None = None
    rule: str = "exact per-simplex (constant derivative)"
    metadata: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        """JSON-safe form: an infinite total is written as the string 'infinite'."""
        return {
            "terms": {k: (v if math.isfinite(v) else "infinite") for k, v in self.terms.items()},
            "total": self.total if self.feasible else "infinite",
            "feasible": self.feasible,
            "resolution": self.resolution,
            "rule": self.rule,
            "metadata": self.metadata,
        }


def frobenius(F: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...ij,...ij->...", F, F))


def cof_norm_and_grad(F: np.ndarray, J: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``|cof F|`` and its derivative in F (valid for J != 0).

    Uses d(1/2 |cof F|^2)/dF = J^2 |F^{-1}|^2 F^{-T} - J^2 F^{-T} F^{-1} F^{-T}.
    """
    norm = frobenius(C)
    Finv = np.linalg.inv(F)
    FinvT = np.swapaxes(Finv, -1, -2)
    inv2 = np.einsum("...ij,...ij->...", Finv, Finv)
    half = (J**2 * inv2)[..., None, None] * FinvT - (J**2)[..., None, None] * (FinvT @ Finv @ FinvT)
    return norm, half / norm[..., None, None]


def map_derivatives(fmap: PiecewiseAffineMap, chunk: int = 1 << 18):
    """Yield ``(slice, F, J, volume)`` chunks for a solid mesh."""
    vols = fmap.mesh.volumes
    for sl, F in fmap.iter_gradients(chunk):
        yield sl, F, np.linalg.det(F), vols[sl]


def standard_terms(fmap: PiecewiseAffineMap, p: float, A=None, phi=None, chunk: int = 1 << 18) -> EnergyReport:
    """Integrals of |Df|^p, A(|cof Df|), phi(J) and (|Df|^n/J)^(1/(n-1))."""
    n = fmap.mesh.n
    sums = {"grad_p": 0.0, "distortion": 0.0}
    if A is not None:
        sums["A_cof"] = 0.0
    if phi is not None:
        sums["phi_J"] = 0.0
    feasible = True
    jmin = math.inf
    for _, F, J, vol in map_derivatives(fmap, chunk):
        nf = frobenius(F)
        jmin = min(jmin, float(J.min()))
        sums["grad_p"] += float(np.sum(nf**p * vol))
        if np.any(J <= 0):
            feasible = False
            continue
        sums["distortion"] += float(np.sum((nf**n / J) ** (1.0 / (n - 1)) * vol))
        if A is not None:
            sums["A_cof"] += float(np.sum(A(frobenius(cofactor_matrix(F))) * vol))
        if phi is not None:
            sums["phi_J"] += float(np.sum(phi(J) * vol))
    if not feasible:
        for k in sums:
            if k != "grad_p":
                sums[k] = math.inf
    total = sum(sums.values()) if feasible else math.inf
    return EnergyReport(sums, total, feasible, metadata={"p": p, "jac_min": jmin})
