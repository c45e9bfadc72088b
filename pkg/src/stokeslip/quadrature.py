"""Quadrature rules on the reference tetrahedron and triangle.

Tet rules are built by collapsing a tensor Gauss-Legendre grid onto the
simplex (Duffy transform); the returned weights sum to one, so an integral
over a physical element is ``volume * sum(w * f(points))`` with points given
in barycentric coordinates.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def tet_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points (q, 4) and weights (q,) exact for total degree."""
    if degree < 1:
        raise ValueError("quadrature degree must be >= 1")
    # The Duffy map raises per-axis degrees by up to 3 (Jacobian (1-u)^2 (1-v)).
    q = (degree + 3) // 2 + 1
    x, w = np.polynomial.legendre.leggauss(q)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    U, V, W = np.meshgrid(u, u, u, indexing="ij")
    WU, WV, WW = np.meshgrid(wu, wu, wu, indexing="ij")
    lam1 = U
    lam2 = V * (1.0 - U)
    lam3 = W * (1.0 - U) * (1.0 - V)
    jac = (1.0 - U) ** 2 * (1.0 - V)
    weights = (WU * WV * WW * jac).ravel()
    lam1, lam2, lam3 = lam1.ravel(), lam2.ravel(), lam3.ravel()
    lam0 = 1.0 - lam1 - lam2 - lam3
    points = np.stack([lam0, lam1, lam2, lam3], axis=1)
    # Unit-volume normalization: the simplex has measure 1/6 under the map.
    return points, weights * 6.0


def tri_rule_deg2() -> tuple[np.ndarray, np.ndarray]:
    """Edge-midpoint rule on the triangle: degree 2, weights sum to one."""
    points = np.array(
        [
            [0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
        ]
    )
    weights = np.full(3, 1.0 / 3.0)
    return points, weights
