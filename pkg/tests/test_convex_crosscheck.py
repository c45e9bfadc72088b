"""End-to-end cross-check against an independent convex-optimization path.

The discrete problem is the optimality system of a second-order-cone
program on the uncondensed MINI space: quadratic viscous/adhesion energy
minus the load, plus the weighted tangential-speed norms, under the
divergence constraints (all pressure test functions) and impermeability at
slip nodes. Solving that program with an interior-point method and
comparing velocities validates assembly, condensation and the semismooth
Newton solver in one shot, on a path that shares no code with them.
"""

import cvxpy as cp
import numpy as np
import pytest

from conftest import build_problem, constant_force, tiny_variant_mesh
from oracles import assemble_dense_mini, bubble_value, gm_tet_rule, tet_volume
from stokeslip.bench import ProblemSpec, prepare_case
from stokeslip.mesh import classify_nodes, compute_slip_frames
from stokeslip.sssn import SolverConfig, solve


def _socp_velocity(mesh, nu, fvec, sets, frames):
    """Solve the uncondensed problem as a cone program; returns the
    velocity at the free linear nodes, ordered slip-first."""
    a_full, b_full, free = assemble_dense_mini(mesh, sets.dirichlet)
    a_full *= nu
    nv = a_full.shape[0]
    pos = {int(n): i for i, n in enumerate(free)}

    bary, w = gm_tet_rule(3)
    load = np.zeros(nv)
    for t, tet in enumerate(mesh.tets):
        vol = tet_volume(mesh.nodes[tet])
        for local in range(4):
            node = int(tet[local])
            if node in pos:
                load[3 * pos[node] : 3 * pos[node] + 3] += (
                    vol * np.sum(w * bary[:, local]) * fvec
                )
        load[3 * len(free) + 3 * t : 3 * len(free) + 3 * t + 3] += (
            vol * np.sum(w * bubble_value(bary)) * fvec
        )

    # lumped adhesion on slip nodes
    for frame, node in zip(frames, sets.slip):
        i = pos[int(node)]
        blk = slice(3 * i, 3 * i + 3)
        a_full[blk, blk] += frame.adhesion_weight * frame.tangent.T @ frame.tangent

    x = cp.Variable(nv)
    objective = 0.5 * cp.quad_form(x, cp.psd_wrap(a_full)) - load @ x
    for frame, node in zip(frames, sets.slip):
        i = pos[int(node)]
        objective = objective + frame.slip_weight * cp.norm(
            frame.tangent @ x[3 * i : 3 * i + 3]
        )
    constraints = [b_full @ x == 0]
    for frame, node in zip(frames, sets.slip):
        i = pos[int(node)]
        constraints.append(frame.normal @ x[3 * i : 3 * i + 3] == 0)
    prob = cp.Problem(cp.Minimize(objective), constraints)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    assert prob.status == cp.OPTIMAL

    order = np.array([pos[int(n)] for n in sets.unknown_nodes])
    return np.asarray(x.value)[: 3 * len(free)].reshape(-1, 3)[order]


@pytest.mark.parametrize("g", [0.0, 0.05, 0.5, 5.0])
def test_solver_matches_cone_program_tiny(g):
    mesh = tiny_variant_mesh()
    nu, kappa = 1.0, 2.0
    fvec = np.array([1.0, 0.5, -0.25])
    sets = classify_nodes(mesh)
    frames = compute_slip_frames(mesh, sets, g, kappa)
    problem = build_problem(mesh, nu=nu, kappa=kappa, g=g, f=constant_force(fvec))
    report = solve(
        problem,
        SolverConfig(eps=1e-12, inner_tol0=1e-10, inner_tol_floor=1e-14),
    )
    assert report.converged
    u_newton = report.u.reshape(-1, 3)
    u_socp = _socp_velocity(mesh, nu, fvec, sets, frames)
    scale = max(1.0, np.max(np.abs(u_socp)))
    # 1e-6: interior-point accuracy of the cone solver
    assert np.max(np.abs(u_newton - u_socp)) <= 1e-6 * scale


def test_solver_matches_cone_program_cube2():
    # manufactured data on the n=2 cube exercises Neumann loads as well.
    # The load vector is taken from the package assembly (verified against
    # quadrature oracles elsewhere) so both formulations discretize the
    # same data; operators and the whole solution path stay independent.
    spec = ProblemSpec(
        geometry="cube", n=2, nu=0.9, kappa=5.0, g=5.0,
        config=SolverConfig(eps=1e-12, inner_tol0=1e-10, inner_tol_floor=1e-14),
    )
    case = prepare_case(spec)
    report = solve(case.problem, spec.config)
    assert report.converged

    mesh, sets, frames = case.mesh, case.problem.sets, case.problem.frames
    a_full, b_full, free = assemble_dense_mini(mesh, sets.dirichlet, s=4)
    a_full *= spec.nu
    nv = a_full.shape[0]
    pos = {int(n): i for i, n in enumerate(free)}

    from stokeslip import manufactured
    from stokeslip.assembly import assemble_load

    b_lin, f_bub = assemble_load(
        mesh,
        manufactured.body_force(spec.nu),
        manufactured.neumann_traction(spec.nu),
    )
    load = np.zeros(nv)
    for node in free:
        i = pos[int(node)]
        load[3 * i : 3 * i + 3] = b_lin[3 * node : 3 * node + 3]
    load[3 * len(free) :] = f_bub.ravel()

    for frame, node in zip(frames, sets.slip):
        i = pos[int(node)]
        blk = slice(3 * i, 3 * i + 3)
        a_full[blk, blk] += frame.adhesion_weight * frame.tangent.T @ frame.tangent

    x = cp.Variable(nv)
    objective = 0.5 * cp.quad_form(x, cp.psd_wrap(a_full)) - load @ x
    for frame, node in zip(frames, sets.slip):
        i = pos[int(node)]
        objective = objective + frame.slip_weight * cp.norm(
            frame.tangent @ x[3 * i : 3 * i + 3]
        )
    constraints = [b_full @ x == 0]
    for frame, node in zip(frames, sets.slip):
        i = pos[int(node)]
        constraints.append(frame.normal @ x[3 * i : 3 * i + 3] == 0)
    prob = cp.Problem(cp.Minimize(objective), constraints)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    assert prob.status == cp.OPTIMAL

    order = np.array([pos[int(n)] for n in sets.unknown_nodes])
    u_socp = np.asarray(x.value)[: 3 * len(free)].reshape(-1, 3)[order]
    u_newton = report.u.reshape(-1, 3)
    scale = max(1.0, np.max(np.abs(u_socp)))
    assert np.max(np.abs(u_newton - u_socp)) <= 1e-6 * scale
