"""Closed-form benchmark fields on the unit cube.

The velocity is divergence free, vanishes on the Dirichlet planes x2 = 0,
x3 = 0, x3 = 1 and has zero normal component on the slip plane x2 = 1. The
body force is the Stokes residual of the pair (u, p); the Neumann traction
is the full stress ``(2 nu grad_S u - p I) n`` evaluated with the exact
fields.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def velocity(points: np.ndarray) -> np.ndarray:
    """Exact velocity; (m, 3) for (m, 3) points."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    zz = 4.0 * z * (1.0 - z)
    out = np.zeros_like(points)
    out[:, 0] = zz * np.sin(TWO_PI * y) * (1.0 - np.cos(TWO_PI * x))
    out[:, 1] = zz * np.sin(TWO_PI * x) * (np.cos(TWO_PI * y) - 1.0)
    return out


def pressure(points: np.ndarray) -> np.ndarray:
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    return TWO_PI * (np.cos(TWO_PI * y) - np.cos(TWO_PI * x) - np.cos(TWO_PI * z))


def velocity_gradient(points: np.ndarray) -> np.ndarray:
    """Jacobian d u_i / d x_j as (m, 3, 3)."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    sx, cx = np.sin(TWO_PI * x), np.cos(TWO_PI * x)
    sy, cy = np.sin(TWO_PI * y), np.cos(TWO_PI * y)
    zz = 4.0 * z * (1.0 - z)
    dzz = 4.0 * (1.0 - 2.0 * z)
    grad = np.zeros((points.shape[0], 3, 3))
    grad[:, 0, 0] = zz * sy * TWO_PI * sx
    grad[:, 0, 1] = zz * TWO_PI * cy * (1.0 - cx)
    grad[:, 0, 2] = dzz * sy * (1.0 - cx)
    grad[:, 1, 0] = zz * TWO_PI * cx * (cy - 1.0)
    grad[:, 1, 1] = -zz * sx * TWO_PI * sy
    grad[:, 1, 2] = dzz * sx * (cy - 1.0)
    return grad


def body_force(nu: float):
    """Volume force -2 nu div(grad_S u) + grad p for the exact pair.

    The velocity is divergence free, so the viscous term reduces to
    -nu * Laplace(u).
    """

    def f(points: np.ndarray) -> np.ndarray:
        x, y, z = points[:, 0], points[:, 1], points[:, 2]
        sx, cx = np.sin(TWO_PI * x), np.cos(TWO_PI * x)
        sy, cy = np.sin(TWO_PI * y), np.cos(TWO_PI * y)
        sz = np.sin(TWO_PI * z)
        zz = 4.0 * z * (1.0 - z)
        w2 = TWO_PI * TWO_PI
        lap_ux = w2 * zz * sy * (2.0 * cx - 1.0) - 8.0 * sy * (1.0 - cx)
        lap_uy = -w2 * zz * sx * (2.0 * cy - 1.0) - 8.0 * sx * (cy - 1.0)
        out = np.zeros_like(points)
        out[:, 0] = -nu * lap_ux + w2 * sx
        out[:, 1] = -nu * lap_uy - w2 * sy
        out[:, 2] = w2 * sz
        return out

    return f


def neumann_traction(nu: float):
    """Boundary traction (2 nu grad_S u - p I) n of the exact fields."""

    def sigma(points: np.ndarray, normals: np.ndarray) -> np.ndarray:
        grad = velocity_gradient(points)
        sym = grad + np.transpose(grad, (0, 2, 1))
        stress = nu * sym
        stress[:, np.arange(3), np.arange(3)] -= pressure(points)[:, None]
        return np.einsum("mij,mj->mi", stress, normals)

    return sigma


def fields(nu: float):
    """Bundle (u_exact, p_exact, f, sigma_n) for a given viscosity."""
    return velocity, pressure, body_force(nu), neumann_traction(nu)
