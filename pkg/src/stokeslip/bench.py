"""Benchmark harness: case setup, solves, error norms and table sweeps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import manufactured
from .manufactured import fields as manufactured_fields
from .assembly import SaddleProblem, assemble_problem
from .mesh import (
    TetMesh,
    classify_nodes,
    compute_slip_frames,
    generate_unit_cube_mesh,
    import_mesh,
    mesh_size,
    tag_cube_boundary,
)
from .quadrature import tet_rule
from .sssn import SolveReport, SolverConfig, solve


@dataclass
class ProblemSpec:
    """One benchmark case.

    ``geometry`` is either ``"cube"`` (with ``n`` subdivisions, tagged as in
    the cube benchmark, manufactured data unless overridden) or ``"mesh"``
    (with ``mesh_path`` pointing at a mesh file; zero data unless fields
    are supplied). ``kappa`` and ``g`` are constants or scalar fields;
    ``f``, ``sigma_n`` and ``u_d`` may override the default data.
    """

    geometry: str = "cube"
    n: int = 8
    mesh_path: str | None = None
    nu: float = 0.9
    kappa: float | object = 5.0
    g: float | object = 5.0
    f: object = None
    sigma_n: object = None
    u_d: object = None
    manufactured: bool | None = None
    config: SolverConfig = field(default_factory=SolverConfig)

    def validate(self) -> None:
        if self.geometry not in ("cube", "mesh"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.nu <= 0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")
        for name, value in (("kappa", self.kappa), ("g", self.g)):
            if not callable(value) and value < 0:
                raise ValueError(f"{name} must be nonnegative, got {value}")
        if self.geometry == "mesh" and not self.mesh_path:
            raise ValueError("geometry 'mesh' requires a mesh file path")


@dataclass
class ErrorReport:
    velocity_l2: float
    pressure_l2: float
    h: float


@dataclass
class CaseData:
    """Assembled pieces of one case, kept for export and post-processing."""

    mesh: TetMesh
    problem: SaddleProblem
    spec: ProblemSpec


def build_mesh(spec: ProblemSpec) -> TetMesh:
    if spec.geometry == "cube":
        return tag_cube_boundary(generate_unit_cube_mesh(spec.n))
    return import_mesh(spec.mesh_path)


def _uses_manufactured(spec: ProblemSpec) -> bool:
    if spec.manufactured is not None:
        return spec.manufactured
    return spec.geometry == "cube"


def prepare_case(spec: ProblemSpec, mesh: TetMesh | None = None) -> CaseData:
    """Mesh, node sets, frames and the assembled saddle problem."""
    spec.validate()
    if mesh is None:
        mesh = build_mesh(spec)
    sets = classify_nodes(mesh)
    frames = compute_slip_frames(mesh, sets, spec.g, spec.kappa) if sets.n_s else []
    f, sigma_n, u_d = spec.f, spec.sigma_n, spec.u_d
    if _uses_manufactured(spec):
        _, _, f_exact, sigma_exact = manufactured.fields(spec.nu)
        f = f if f is not None else f_exact
        sigma_n = sigma_n if sigma_n is not None else sigma_exact
    problem = assemble_problem(mesh, sets, frames, spec.nu, f, sigma_n, u_d)
    return CaseData(mesh=mesh, problem=problem, spec=spec)


def nodal_velocity(case: CaseData, report: SolveReport) -> np.ndarray:
    """Velocity at every mesh node (n_p, 3), Dirichlet values filled in."""
    mesh, sets = case.mesh, case.problem.sets
    values = np.zeros((mesh.n_p, 3))
    values[sets.unknown_nodes] = report.u.reshape(-1, 3)
    if sets.n_d:
        u_d = case.spec.u_d
        if u_d is None:
            pass
        elif callable(u_d):
            values[sets.dirichlet] = np.asarray(u_d(mesh.nodes[sets.dirichlet]))
        else:
            values[sets.dirichlet] = np.asarray(u_d, dtype=float)
    return values


def velocity_l2_norm(mesh: TetMesh, nodal: np.ndarray) -> float:
    """L2 norm of a P1 vector field given by nodal values (exact)."""
    p = nodal[mesh.tets]  # (n_t, 4, 3)
    edges = mesh.nodes[mesh.tets][:, 1:] - mesh.nodes[mesh.tets][:, :1]
    vols = np.abs(np.linalg.det(edges)) / 6.0
    # P1 mass matrix on a tet: V/10 on the diagonal, V/20 off it.
    same = np.einsum("tac,tac->t", p, p)
    cross = np.einsum("tac,tbc->t", p, p)
    return float(np.sqrt(np.sum(vols * (same / 20.0 + cross / 20.0))))


def compute_errors(
    mesh: TetMesh,
    nodal_u: np.ndarray,
    nodal_p: np.ndarray,
    exact_u,
    exact_p,
    quad_degree: int = 4,
) -> ErrorReport:
    """L2 errors of the P1 fields against exact fields by element quadrature.

    The pressure is compared after removing the mean difference, matching
    a pressure that is only determined up to a constant.
    """
    bary, w = tet_rule(quad_degree)
    corners = mesh.nodes[mesh.tets]
    edges = corners[:, 1:] - corners[:, :1]
    vols = np.abs(np.linalg.det(edges)) / 6.0
    pts = np.einsum("qa,tac->tqc", bary, corners)
    flat = pts.reshape(-1, 3)

    u_h = np.einsum("qa,tac->tqc", bary, nodal_u[mesh.tets])
    u_ex = np.asarray(exact_u(flat)).reshape(u_h.shape)
    du2 = np.sum((u_h - u_ex) ** 2, axis=2)
    vel_err = np.sqrt(np.sum(vols[:, None] * w[None, :] * du2))

    p_h = np.einsum("qa,ta->tq", bary, nodal_p[mesh.tets])
    p_ex = np.asarray(exact_p(flat)).reshape(p_h.shape)
    diff = p_h - p_ex
    volume = float(np.sum(vols))
    mean = float(np.sum(vols[:, None] * w[None, :] * diff)) / volume
    pre_err = np.sqrt(np.sum(vols[:, None] * w[None, :] * (diff - mean) ** 2))

    return ErrorReport(
        velocity_l2=float(vel_err), pressure_l2=float(pre_err), h=mesh_size(mesh)
    )


def run_case(
    spec: ProblemSpec, mesh: TetMesh | None = None
) -> tuple[SolveReport, ErrorReport | None]:
    """Assemble, solve and (when the exact solution is known) compute errors."""
    case = prepare_case(spec, mesh)
    report = solve(case.problem, spec.config)
    errors = None
    if _uses_manufactured(spec) and report.converged:
        nodal_u = nodal_velocity(case, report)
        errors = compute_errors(
            case.mesh, nodal_u, report.p, manufactured.velocity, manufactured.pressure
        )
    return report, errors


def with_slip_as_dirichlet(mesh: TetMesh) -> TetMesh:
    """Copy of the mesh with slip faces retagged Dirichlet (no-slip solve)."""
    tags = mesh.face_tags.copy()
    tags[[t.startswith("S") for t in tags]] = "D"
    return TetMesh(mesh.nodes, mesh.tets, mesh.boundary_faces, tags)


def _format_g(value: float) -> str:
    return f"{value:g}".replace("-", "m").replace(".", "p")


def _sweep_cell(spec: ProblemSpec) -> list:
    try:
        report, _ = run_case(spec)
    except Exception:
        return ["FAIL", "FAIL", "FAIL"]
    if not report.converged:
        return ["FAIL", "FAIL", "FAIL"]
    return [
        report.outer_iterations,
        report.inner_iterations_total,
        round(report.wall_time, 4),
    ]


def run_table_sweep(
    mesh_sizes: list[int], g_values: list[float], base: ProblemSpec, jobs: int = 1
) -> list[list]:
    """Iteration-count table over cube meshes and slip bounds.

    Returns rows ``[n, n_p, n_t, n_s, it_<g>, itin_<g>, cpu_<g>, ...]`` with
    one triple of columns per slip bound; failed cases are marked FAIL and
    the sweep continues. With ``jobs > 1`` the cases run in parallel worker
    processes; the output ordering is unchanged.
    """
    if not mesh_sizes or not g_values:
        raise ValueError("sweep requires at least one mesh and one g value")
    header = ["n", "n_p", "n_t", "n_s"]
    for g in g_values:
        tag = _format_g(g)
        header += [f"it_g{tag}", f"itin_g{tag}", f"cpu_g{tag}"]

    specs = [
        replace(base, geometry="cube", n=n, g=g)
        for n in mesh_sizes
        for g in g_values
    ]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_sweep_cell, specs))
    else:
        cells = [_sweep_cell(spec) for spec in specs]

    rows: list[list] = [header]
    k = 0
    for n in mesh_sizes:
        mesh = build_mesh(replace(base, geometry="cube", n=n))
        sets = classify_nodes(mesh)
        row: list = [n, mesh.n_p, mesh.n_t, sets.n_s]
        for _ in g_values:
            row += cells[k]
            k += 1
        rows.append(row)
    return rows


def sweep_csv(rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()
