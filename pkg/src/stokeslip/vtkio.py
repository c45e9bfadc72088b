"""Legacy ASCII VTK export of solved fields for external visualization."""

from __future__ import annotations

import numpy as np

from .mesh import TetMesh, NodeSets
from .stickslip import NodeState

_STATE_CODE = {NodeState.SLIP: 0, NodeState.STICK: 1, NodeState.TRANSITION: 2}


def export_vtk(
    mesh: TetMesh,
    nodal_u: np.ndarray,
    nodal_p: np.ndarray,
    sets: NodeSets,
    states: np.ndarray | None,
    path,
    tangents: np.ndarray | None = None,
) -> None:
    """Write an unstructured-grid VTK file with velocity, pressure,
    tangential speed and node-state point data.

    Tangential speed and the state code carry the sentinel -1 away from
    slip nodes. ``states`` is the per-slip-node array from the solver
    census; ``tangents`` the stacked (n_s, 2, 3) frame tangents.
    """
    n_p, n_t = mesh.n_p, mesh.n_t
    tangential = np.full(n_p, -1.0)
    state_code = np.full(n_p, -1.0)
    if sets.n_s:
        if tangents is not None:
            t_u = np.einsum("nij,nj->ni", tangents, nodal_u[sets.slip])
            tangential[sets.slip] = np.linalg.norm(t_u, axis=1)
        else:
            tangential[sets.slip] = np.linalg.norm(nodal_u[sets.slip], axis=1)
        if states is not None:
            state_code[sets.slip] = [float(_STATE_CODE[s]) for s in states]

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("stokeslip solution\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n_p} double\n")
        for x, y, z in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        fh.write(f"CELLS {n_t} {5 * n_t}\n")
        for t in mesh.tets:
            fh.write(f"4 {t[0]} {t[1]} {t[2]} {t[3]}\n")
        fh.write(f"CELL_TYPES {n_t}\n")
        fh.write("\n".join(["10"] * n_t) + "\n")
        fh.write(f"POINT_DATA {n_p}\n")
        fh.write("VECTORS velocity double\n")
        for vx, vy, vz in nodal_u:
            fh.write(f"{float(vx)!r} {float(vy)!r} {float(vz)!r}\n")
        fh.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
        for val in nodal_p:
            fh.write(f"{float(val)!r}\n")
        fh.write("SCALARS tangential_speed double 1\nLOOKUP_TABLE default\n")
        for val in tangential:
            fh.write(f"{float(val)!r}\n")
        fh.write("SCALARS slip_state double 1\nLOOKUP_TABLE default\n")
        for val in state_code:
            fh.write(f"{float(val)!r}\n")
