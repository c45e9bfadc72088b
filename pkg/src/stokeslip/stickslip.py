"""Per-node operations for the separable stick-slip term.

Each slip node carries the convex function
``q_i(u) = g_i ||T_i u|| + indicator(N_i u = 0)``. This module provides its
closed-form proximal map, a subdifferential membership test, the
slip/stick/transition classification of a graph point and the
projection/curvature pair (P, W) used to linearize the subdifferential in
the Newton step.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .mesh import NodeSets, SlipFrame


class NodeState(Enum):
    SLIP = 0
    STICK = 1
    TRANSITION = 2


@dataclass(frozen=True)
class ScdPair:
    """Symmetric pair (P, W) with P an orthogonal projection and
    W(I - P) = I - P; represents one subspace of the SC derivative."""

    P: np.ndarray
    W: np.ndarray


def _zero_tol(g: float) -> float:
    return 1e-12 * max(1.0, g)


def prox_node(u: np.ndarray, lam: float, frame: SlipFrame) -> np.ndarray:
    """Proximal map of lam * q_i at u.

    Returns the zero vector when ``||T u|| <= lam * g`` and otherwise the
    shrunk tangential projection ``(1 - lam g / ||T u||) T^T T u``. The
    output always satisfies ``N . out = 0``.
    """
    t_u = frame.tangent @ u
    norm = float(np.linalg.norm(t_u))
    if norm <= lam * frame.slip_weight:
        return np.zeros(3)
    return (1.0 - lam * frame.slip_weight / norm) * (frame.tangent.T @ t_u)


def subdifferential_contains(
    u: np.ndarray, u_star: np.ndarray, frame: SlipFrame, tol: float
) -> bool:
    """Membership test ``u_star in dq_i(u)`` up to tolerance.

    The subdifferential is empty off the tangent plane; at the origin it is
    the scaled tangential ball plus the normal line, and at slipping points
    the tangential part is the single vector of length g along T u.
    """
    g = frame.slip_weight
    if abs(float(frame.normal @ u)) > tol:
        return False
    t_u = frame.tangent @ u
    t_star = frame.tangent @ u_star
    if np.linalg.norm(t_u) <= tol:
        return float(np.linalg.norm(t_star)) <= g + tol
    direction = t_u / np.linalg.norm(t_u)
    return float(np.linalg.norm(t_star - g * direction)) <= tol


def classify(
    z: np.ndarray, z_star: np.ndarray, frame: SlipFrame, tol: float | None = None
) -> NodeState:
    """State of a graph point (z, z_star): Slip when z is nonzero, else
    Stick strictly inside the traction ball, else Transition."""
    g = frame.slip_weight
    if tol is None:
        tol = _zero_tol(g)
    if np.linalg.norm(z) > tol:
        return NodeState.SLIP
    if np.linalg.norm(frame.tangent @ z_star) < g - tol:
        return NodeState.STICK
    return NodeState.TRANSITION


def sc_pair(z: np.ndarray, frame: SlipFrame, tol: float | None = None) -> ScdPair:
    """One element of the SC derivative of dq_i at a prox output z.

    At z = 0 the pair is (0, I); this is valid both at sticking and at
    transition points. At slipping points P is the tangential projector and
    W combines the curvature of the Euclidean norm with the normal
    projector.
    """
    g = frame.slip_weight
    if tol is None:
        tol = _zero_tol(g)
    if np.linalg.norm(z) <= tol:
        return ScdPair(P=np.zeros((3, 3)), W=np.eye(3))
    t_z = frame.tangent @ z
    norm = float(np.linalg.norm(t_z))
    direction = t_z / norm
    curv = (g / norm) * (np.eye(2) - np.outer(direction, direction))
    w = frame.tangent.T @ curv @ frame.tangent + np.outer(frame.normal, frame.normal)
    return ScdPair(P=frame.tangent.T @ frame.tangent, W=w)


def prox_all(
    v: np.ndarray, lam: float, frames: list[SlipFrame], sets: NodeSets
) -> np.ndarray:
    """Proximal map of lam * q on a full state vector (u, p_hat).

    Applies the per-node prox on each slip velocity block and the identity
    on remaining velocities and pressures.
    """
    n_s, n_u, n_p = sets.n_s, sets.n_u, sets.n_p
    if v.shape != (3 * n_u + n_p,):
        raise ValueError(
            f"state vector has size {v.shape}, expected {(3 * n_u + n_p,)}"
        )
    out = v.copy()
    for i in range(n_s):
        out[3 * i : 3 * i + 3] = prox_node(v[3 * i : 3 * i + 3], lam, frames[i])
    return out


def prox_slip_block(
    v_n: np.ndarray, lam: float, tangents: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Vectorized prox over all slip nodes.

    ``v_n`` is (n_s, 3); ``tangents`` the stacked (n_s, 2, 3) tangent
    matrices and ``weights`` the slip weights g_i. Matches prox_node
    componentwise.
    """
    t_v = np.einsum("nij,nj->ni", tangents, v_n)
    norms = np.linalg.norm(t_v, axis=1)
    shrink = np.zeros_like(norms)
    open_nodes = norms > lam * weights
    shrink[open_nodes] = 1.0 - lam * weights[open_nodes] / norms[open_nodes]
    return np.einsum("nji,nj->ni", tangents, shrink[:, None] * t_v)
