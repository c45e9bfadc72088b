"""Globalized semismooth Newton driver for the stick-slip saddle problem.

One outer iteration evaluates the forward-backward residual, linearizes the
nonsmooth term through per-node (P, W) pairs, solves the reduced Newton
system by GMRES with an adaptive inner tolerance, and globalizes by a
bisecting line search on the residual with a Douglas-Rachford step as
fallback. The iteration stops when the residual drops below ``eps`` times
its initial value.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import SaddleProblem
from .linsolve import (
    DrResolvent,
    ReducedOperator,
    SpdFactor,
    dr_resolvent_factorize,
    gmres,
    reduced_diagonal,
    spd_factorize,
)
from .stickslip import NodeState, prox_slip_block


class SolveError(Exception):
    """Raised on non-finite state during the outer iteration."""


class NewtonStepError(Exception):
    """Inner solver failed to reach its tolerance; carries the iterations spent."""

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


@dataclass
class SolverConfig:
    """Algorithm parameters.

    ``lam`` is the proximal parameter, ``eps`` the relative stopping
    tolerance, ``omega`` and ``n_alpha`` the line-search constants. The
    inner GMRES tolerance starts at ``inner_tol0`` and is tightened by
    ``min(r_tol * rel_residual, c_fact * previous)`` down to
    ``inner_tol_floor``.
    """

    lam: float = 1.0
    eps: float = 1e-8
    omega: float = 0.25
    n_alpha: int = 10
    r_tol: float = 0.95
    c_fact: float = 0.8
    inner_tol0: float = 1e-1
    inner_tol_floor: float = 1e-12
    max_outer: int = 100
    gmres_restart: int = 200
    gmres_max_iters: int = 20000
    precondition_inner: bool = True

    def validate(self) -> None:
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not 0.0 < self.omega < 1.0:
            raise ValueError(f"omega must lie in (0, 1), got {self.omega}")
        if self.n_alpha < 1:
            raise ValueError(f"n_alpha must be >= 1, got {self.n_alpha}")
        if not 0.0 < self.r_tol <= 1.0:
            raise ValueError(f"r_tol must lie in (0, 1], got {self.r_tol}")
        if not 0.0 < self.c_fact <= 1.0:
            raise ValueError(f"c_fact must lie in (0, 1], got {self.c_fact}")
        if self.max_outer < 1:
            raise ValueError(f"max_outer must be >= 1, got {self.max_outer}")


@dataclass
class SolverState:
    """Iterate with its residual data.

    ``x = (u_N, u_I, p_hat)``; ``y = H(x)`` split into velocity rows and
    pressure rows ``w``; ``z_N`` the prox outputs at slip nodes and
    ``r_N = z_N - u_N``. ``r`` is the scalar forward-backward residual.
    """

    x: np.ndarray
    y: np.ndarray
    z_n: np.ndarray
    r_n: np.ndarray
    r: float


@dataclass
class IterationRecord:
    k: int
    residual: float
    inner_iterations: int
    n_slip: int
    n_stick: int
    n_trans: int
    step_kind: str
    step_length: float


@dataclass
class SolveReport:
    """Final state and telemetry of one solve.

    ``u`` is the flat velocity vector in the unknown ordering and ``p`` the
    pressure with the sign flip undone. ``residual_history`` holds
    r^0 ... r^final including the converged value.
    """

    converged: bool
    u: np.ndarray
    p: np.ndarray
    x: np.ndarray
    iterations: list[IterationRecord] = field(repr=False)
    residual_history: list[float] = field(repr=False)
    wall_time: float = 0.0

    @property
    def outer_iterations(self) -> int:
        return len(self.iterations)

    @property
    def inner_iterations_total(self) -> int:
        return sum(rec.inner_iterations for rec in self.iterations)


def eval_h(problem: SaddleProblem, x: np.ndarray) -> np.ndarray:
    """Affine map H(x) of the generalized equation."""
    if x.shape != (problem.size,):
        raise ValueError(f"state has size {x.shape}, expected {(problem.size,)}")
    k = 3 * problem.n_u
    u, p_hat = x[:k], x[k:]
    y_u = problem.A_kappa @ u - problem.B.T @ p_hat - problem.b
    y_p = problem.B @ u + problem.E @ p_hat - problem.c
    return np.concatenate([y_u, y_p])


eval_H = eval_h


def approximation_step(
    problem: SaddleProblem, x: np.ndarray, lam: float
) -> SolverState:
    """Forward-backward step data at x: prox outputs and scalar residual."""
    y = eval_h(problem, x)
    ks, ku = 3 * problem.n_s, 3 * problem.n_u
    u_n = x[:ks].reshape(-1, 3)
    y_n = y[:ks].reshape(-1, 3)
    z_n = prox_slip_block(
        u_n - lam * y_n, lam, problem.frame_tangents, problem.slip_weights
    ).ravel()
    r_n = z_n - x[:ks]
    y_i = y[ks:ku]
    w = y[ku:]
    r = (1.0 + 1.0 / lam) * np.sqrt(
        lam * lam * (y_i @ y_i + w @ w) + r_n @ r_n
    )
    return SolverState(x=x, y=y, z_n=z_n, r_n=r_n, r=float(r))


def state_census(problem: SaddleProblem, state: SolverState, lam: float) -> np.ndarray:
    """Per-slip-node states at the iterate, as an array of NodeState values.

    Classifies the graph points (z_i, z*_i) with z* = (u - z)/lam - y.
    """
    n_s = problem.n_s
    if n_s == 0:
        return np.zeros(0, dtype=object)
    ks = 3 * n_s
    z = state.z_n.reshape(-1, 3)
    z_star = (-state.r_n.reshape(-1, 3)) / lam - state.y[:ks].reshape(-1, 3)
    g = problem.slip_weights
    tol = 1e-12 * np.maximum(1.0, g)
    z_norm = np.linalg.norm(z, axis=1)
    t_star = np.linalg.norm(
        np.einsum("nij,nj->ni", problem.frame_tangents, z_star), axis=1
    )
    states = np.where(
        z_norm > tol,
        NodeState.SLIP,
        np.where(t_star < g - tol, NodeState.STICK, NodeState.TRANSITION),
    )
    return states


def _census_counts(states: np.ndarray) -> tuple[int, int, int]:
    return (
        int(np.sum(states == NodeState.SLIP)),
        int(np.sum(states == NodeState.STICK)),
        int(np.sum(states == NodeState.TRANSITION)),
    )


def scd_blocks(
    problem: SaddleProblem, z_n: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (P, W) blocks over slip nodes at the prox outputs z_n."""
    n_s = problem.n_s
    p_blocks = np.zeros((n_s, 3, 3))
    w_blocks = np.zeros((n_s, 3, 3))
    if n_s == 0:
        return p_blocks, w_blocks
    z = z_n.reshape(-1, 3)
    g = problem.slip_weights
    tol = 1e-12 * np.maximum(1.0, g)
    zero = np.linalg.norm(z, axis=1) <= tol

    w_blocks[zero] = np.eye(3)
    idx = np.nonzero(~zero)[0]
    if idx.size:
        t = problem.frame_tangents[idx]
        nrm = problem.frame_normals[idx]
        t_z = np.einsum("nij,nj->ni", t, z[idx])
        norms = np.linalg.norm(t_z, axis=1)
        direction = t_z / norms[:, None]
        curv = (g[idx] / norms)[:, None, None] * (
            np.eye(2) - np.einsum("ni,nj->nij", direction, direction)
        )
        p_blocks[idx] = np.einsum("nia,nib->nab", t, t)
        w_blocks[idx] = np.einsum("nia,nij,njb->nab", t, curv, t) + np.einsum(
            "na,nb->nab", nrm, nrm
        )
    return p_blocks, w_blocks


def _apply_block_diag(blocks: np.ndarray, v: np.ndarray) -> np.ndarray:
    if blocks.shape[0] == 0:
        return np.zeros(0)
    return np.einsum("nij,nj->ni", blocks, v.reshape(-1, 3)).ravel()


def newton_direction(
    problem: SaddleProblem,
    state: SolverState,
    p_blocks: np.ndarray,
    w_blocks: np.ndarray,
    inner_tol: float,
    a_ii_factor: SpdFactor,
    lam: float,
    restart: int = 200,
    max_iters: int = 20000,
    precondition: bool = True,
) -> tuple[np.ndarray, int]:
    """Solve the Newton system through the reduced Schur form.

    Eliminates du_I with the A_II factor, solves for (du_N, dp_hat) by
    GMRES at the given relative tolerance with right-hand side
    ``((W + P/lam) r_N + P A_IN^T A_II^-1 y_I ; -w + B_I A_II^-1 y_I)``
    and back-substitutes du_I. With ``precondition`` the GMRES run is
    Jacobi-scaled by the approximate reduced diagonal. Raises
    NewtonStepError when GMRES does not reach the tolerance.
    """
    ks, ku = 3 * problem.n_s, 3 * problem.n_u
    y_i = state.y[ks:ku]
    w = state.y[ku:]
    t0 = a_ii_factor.solve(y_i)
    rhs_top = (
        _apply_block_diag(w_blocks, state.r_n)
        + _apply_block_diag(p_blocks, state.r_n) / lam
        + _apply_block_diag(p_blocks, problem.A_IN.T @ t0)
    )
    rhs_bot = -w + problem.B_I @ t0
    rhs = np.concatenate([rhs_top, rhs_bot])

    rop = ReducedOperator(problem, a_ii_factor, p_blocks, w_blocks)
    if precondition:
        scale = reduced_diagonal(rop)
        op = lambda v: rop.apply(v) / scale  # noqa: E731
        rhs = rhs / scale
    else:
        op = rop.apply
    result = gmres(op, rhs, tol=inner_tol, max_iters=max_iters, restart=restart)
    if not result.converged:
        raise NewtonStepError(
            f"inner GMRES stalled at relative tolerance {inner_tol:g}",
            result.iterations,
        )
    du_n = result.x[:ks]
    dp = result.x[ks:]
    du_i = a_ii_factor.solve(-y_i - problem.A_IN @ du_n + problem.B_I.T @ dp)
    return np.concatenate([du_n, du_i, dp]), result.iterations


def line_search(
    problem: SaddleProblem,
    state: SolverState,
    dx: np.ndarray,
    omega: float,
    n_alpha: int,
    lam: float,
) -> tuple[SolverState | None, int]:
    """Backtracking on the residual: first j in 0..n_alpha with
    r(x + 2^-j dx) <= (1 - omega 2^-j) r(x). Returns (trial state, j) or
    (None, n_alpha) after exhaustion."""
    for j in range(n_alpha + 1):
        step = 0.5**j
        trial = approximation_step(problem, state.x + step * dx, lam)
        if trial.r <= (1.0 - omega * step) * state.r:
            return trial, j
    return None, n_alpha


def douglas_rachford_step(
    problem: SaddleProblem, x: np.ndarray, lam: float, resolvent: DrResolvent
) -> np.ndarray:
    """One Douglas-Rachford iterate (I + lam H)^-1(prox(x - lam H x) + lam H x)."""
    y = eval_h(problem, x)
    ks = 3 * problem.n_s
    v = x - lam * y
    pv = v.copy()
    if ks:
        pv[:ks] = prox_slip_block(
            v[:ks].reshape(-1, 3), lam, problem.frame_tangents, problem.slip_weights
        ).ravel()
    d = np.concatenate([problem.b, problem.c])
    return resolvent.solve(pv + lam * y + lam * d)


def solve(
    problem: SaddleProblem,
    config: SolverConfig | None = None,
    x0: np.ndarray | None = None,
) -> SolveReport:
    """Run the globalized semismooth Newton iteration.

    Returns a report with the final fields (pressure sign flipped back),
    per-iteration telemetry and the residual history.
    """
    cfg = config or SolverConfig()
    cfg.validate()
    lam = cfg.lam
    x = np.zeros(problem.size) if x0 is None else np.asarray(x0, dtype=float).copy()

    t_start = time.perf_counter()
    state = approximation_step(problem, x, lam)
    r0 = state.r
    history = [r0]
    records: list[IterationRecord] = []
    converged = r0 == 0.0

    a_ii_factor = None
    resolvent: DrResolvent | None = None
    inner_tol = cfg.inner_tol0

    for k in range(cfg.max_outer):
        if not np.isfinite(state.r):
            raise SolveError(f"non-finite residual at outer iteration {k}")
        if state.r <= cfg.eps * r0:
            converged = True
            break
        if a_ii_factor is None:
            a_ii_factor = spd_factorize(problem.A_II)
        if k > 0:
            inner_tol = max(
                cfg.inner_tol_floor,
                min(cfg.r_tol * state.r / r0, cfg.c_fact * inner_tol),
            )
        states = state_census(problem, state, lam)
        n_slip, n_stick, n_trans = _census_counts(states)
        p_blocks, w_blocks = scd_blocks(problem, state.z_n)

        dx = None
        try:
            dx, it_in = newton_direction(
                problem,
                state,
                p_blocks,
                w_blocks,
                inner_tol,
                a_ii_factor,
                lam,
                cfg.gmres_restart,
                cfg.gmres_max_iters,
                cfg.precondition_inner,
            )
        except NewtonStepError as err:
            it_in = err.iterations

        new_state = None
        j = cfg.n_alpha
        if dx is not None:
            new_state, j = line_search(problem, state, dx, cfg.omega, cfg.n_alpha, lam)
        if new_state is not None:
            kind = "newton" if j == 0 else "newton-damped"
            step_len = 0.5**j
        else:
            if resolvent is None:
                resolvent = dr_resolvent_factorize(problem, lam)
            x_dr = douglas_rachford_step(problem, state.x, lam, resolvent)
            new_state = approximation_step(problem, x_dr, lam)
            kind = "dr"
            step_len = 1.0

        records.append(
            IterationRecord(
                k=k + 1,
                residual=state.r,
                inner_iterations=it_in,
                n_slip=n_slip,
                n_stick=n_stick,
                n_trans=n_trans,
                step_kind=kind,
                step_length=step_len,
            )
        )
        state = new_state
        history.append(state.r)
    else:
        converged = state.r <= cfg.eps * r0

    wall = time.perf_counter() - t_start
    ku = 3 * problem.n_u
    return SolveReport(
        converged=converged,
        u=state.x[:ku].copy(),
        p=-state.x[ku:].copy(),
        x=state.x.copy(),
        iterations=records,
        residual_history=history,
        wall_time=wall,
    )


def write_iteration_log(report: SolveReport, path) -> None:
    """CSV log of the per-iteration records."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["k", "res", "it_in", "n_slip", "n_stick", "n_trans", "step_kind", "step_len"]
        )
        for rec in report.iterations:
            writer.writerow(
                [
                    rec.k,
                    repr(rec.residual),
                    rec.inner_iterations,
                    rec.n_slip,
                    rec.n_stick,
                    rec.n_trans,
                    rec.step_kind,
                    repr(rec.step_length),
                ]
            )
