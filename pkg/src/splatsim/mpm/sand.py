"""Hencky-strain elasticity with Drucker-Prager plasticity for dry sand.

The elastic response is evaluated in principal stretch space: with
F_E = U diag(S) V^T and eps = log S, the Kirchhoff stress is
U (2 mu eps + lambda tr(eps) I) U^T. Plastic flow follows the classic
return mapping of Klar et al. 2016: trial strain outside the friction cone is
projected back along the deviatoric direction, and tensile volumetric states
collapse to the cone apex. The friction coefficient alpha derives from the
friction angle (see MaterialParams.friction_alpha).
"""

from __future__ import annotations

import numpy as np

from splatsim._kernels import pyk
from splatsim.errors import DegenerateStateError
from splatsim.mpm.types import MaterialParams


def stress(F_E, material: MaterialParams):
    """Cauchy stress of one elastic deformation gradient, tau / det(F_E)."""
    fe = np.asarray(F_E, dtype=np.float64).reshape(1, 3, 3)
    tau, jdet, bad = pyk.stress_tau(fe, material.mu, material.lam)
    if bad >= 0 or jdet[0] <= 0.0:
        raise DegenerateStateError("elastic deformation gradient is not invertible")
    return tau[0] / jdet[0]


def kirchhoff_batch(F_E, material: MaterialParams):
    """Batched Kirchhoff stress; raises on the first degenerate particle."""
    tau, jdet, bad = pyk.stress_tau(np.asarray(F_E, dtype=np.float64),
                                    material.mu, material.lam)
    if bad >= 0:
        raise DegenerateStateError(f"degenerate elastic gradient at particle {bad}")
    return tau, jdet


def project_hencky(eps, material: MaterialParams):
    """Return-map trial Hencky strains (N,3) onto the friction cone."""
    return pyk.sand_project(np.asarray(eps, dtype=np.float64).reshape(-1, 3),
                            material.mu, material.lam, material.friction_alpha)


def yield_value(eps, material: MaterialParams):
    """Signed distance-like yield function; <= 0 means inside the cone."""
    eps = np.asarray(eps, dtype=np.float64).reshape(-1, 3)
    tr = eps.sum(axis=1)
    dev = eps - tr[:, None] / 3.0
    en = np.linalg.norm(dev, axis=1)
    return en + material.friction_alpha \
        * (3.0 * material.lam + 2.0 * material.mu) / (2.0 * material.mu) * tr
