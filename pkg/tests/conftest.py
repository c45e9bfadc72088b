import numpy as np
import pytest

from stokeslip.assembly import assemble_problem
from stokeslip.bench import ProblemSpec, prepare_case
from stokeslip.mesh import (
    TetMesh,
    classify_nodes,
    compute_slip_frames,
    generate_unit_cube_mesh,
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def retag_cube(mesh: TetMesh, rules) -> TetMesh:
    """Assign tags by (axis, value, tag) plane rules, first match wins."""
    coords = mesh.nodes[mesh.boundary_faces]
    tags = np.full(mesh.boundary_faces.shape[0], "", dtype="<U8")
    for axis, value, tag in rules:
        on = np.all(np.abs(coords[:, :, axis] - value) <= 1e-12, axis=1)
        tags[on & (tags == "")] = tag
    assert np.all(tags != "")
    return TetMesh(mesh.nodes, mesh.tets, mesh.boundary_faces, tags)


def tiny_variant_mesh() -> TetMesh:
    """Single-cell cube: Dirichlet bottom, slip top, Neumann sides.

    Gives the smallest problem with slip nodes: n_p = 8, n_u = 4, n_s = 2.
    """
    mesh = generate_unit_cube_mesh(1)
    return retag_cube(
        mesh,
        [(2, 0.0, "D"), (1, 1.0, "S"), (0, 0.0, "N"), (0, 1.0, "N"), (1, 0.0, "N"), (2, 1.0, "N")],
    )


def build_problem(mesh, nu=1.0, kappa=1.0, g=1.0, f=None, sigma_n=None, u_d=None):
    sets = classify_nodes(mesh)
    frames = compute_slip_frames(mesh, sets, g, kappa) if sets.n_s else []
    return assemble_problem(mesh, sets, frames, nu, f, sigma_n, u_d)


def constant_force(vec):
    arr = np.asarray(vec, dtype=float)
    return lambda pts: np.broadcast_to(arr, (pts.shape[0], 3)).copy()


@pytest.fixture(scope="session")
def cube2_case():
    """Manufactured-data problem on the n=2 cube (n_s = 3, n_u = 6)."""
    return prepare_case(ProblemSpec(geometry="cube", n=2, nu=0.9, kappa=5.0, g=5.0))


@pytest.fixture(scope="session")
def tiny_case():
    """Assembled tiny variant problem with a constant body force."""
    mesh = tiny_variant_mesh()
    problem = build_problem(
        mesh, nu=1.0, kappa=2.0, g=0.5, f=constant_force([1.0, 0.5, -0.25])
    )
    return mesh, problem
