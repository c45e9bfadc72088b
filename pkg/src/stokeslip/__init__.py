"""Stokes flow with Navier-Tresca stick-slip boundary conditions.

MINI-element assembly with bubble condensation, per-node proximal maps for
the stick-slip term, and a globalized semismooth Newton solver on the
resulting generalized equation, plus a benchmark CLI.
"""

from .assembly import SaddleProblem, assemble_problem
from .bench import (
    ErrorReport,
    ProblemSpec,
    compute_errors,
    manufactured_fields,
    run_case,
    run_table_sweep,
)
from .mesh import (
    BoundaryTag,
    NodeSets,
    SlipFrame,
    TetMesh,
    classify_nodes,
    compute_slip_frames,
    generate_unit_cube_mesh,
    import_mesh,
    tag_cube_boundary,
    write_mesh,
)
from .sssn import IterationRecord, SolveReport, SolverConfig, solve
from .stickslip import NodeState, ScdPair, classify, prox_node, sc_pair

__all__ = [
    "BoundaryTag",
    "ErrorReport",
    "IterationRecord",
    "NodeSets",
    "NodeState",
    "ProblemSpec",
    "SaddleProblem",
    "ScdPair",
    "SlipFrame",
    "SolveReport",
    "SolverConfig",
    "TetMesh",
    "assemble_problem",
    "classify",
    "classify_nodes",
    "compute_errors",
    "compute_slip_frames",
    "generate_unit_cube_mesh",
    "import_mesh",
    "manufactured_fields",
    "prox_node",
    "run_case",
    "run_table_sweep",
    "sc_pair",
    "solve",
    "tag_cube_boundary",
    "write_mesh",
]

__version__ = "0.1.0"
