"""Command-line benchmark harness.

Subcommands:
  gen-mesh  --n K --out PATH            write a tagged unit-cube mesh
  solve     --config PATH [overrides]   run one case, optional VTK/log export
  sweep     --config PATH --meshes ... --g ... --out table.csv

Configuration files are flat ``key = value`` text with ``#`` comments.
Recognized keys: geometry, n, mesh, nu, kappa, g, epsilon, lambda, omega,
n_alpha, r_tol, c_fact, output. Command-line flags override file values.
Exit code 0 when every case converged, 1 otherwise.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .bench import (
    ProblemSpec,
    nodal_velocity,
    prepare_case,
    run_table_sweep,
    sweep_csv,
)
from .mesh import generate_unit_cube_mesh, tag_cube_boundary, write_mesh
from .sssn import SolverConfig, solve, state_census, approximation_step, write_iteration_log
from .vtkio import export_vtk

_CONFIG_KEYS = {
    "geometry",
    "n",
    "mesh",
    "nu",
    "kappa",
    "g",
    "epsilon",
    "lambda",
    "omega",
    "n_alpha",
    "r_tol",
    "c_fact",
    "output",
}


class ConfigError(Exception):
    pass


def read_config(path) -> dict:
    """Parse a flat key = value configuration file."""
    values: dict = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, _, val = line.partition("=")
            else:
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
                key, val = parts
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            values[key] = val
    return values


def spec_from_config(cfg: dict, args: argparse.Namespace) -> ProblemSpec:
    """Merge config-file values and CLI overrides into a ProblemSpec."""

    def pick(key, flag_value):
        return flag_value if flag_value is not None else cfg.get(key)

    solver = SolverConfig()
    scalars = {
        "epsilon": ("eps", float),
        "lambda": ("lam", float),
        "omega": ("omega", float),
        "n_alpha": ("n_alpha", int),
        "r_tol": ("r_tol", float),
        "c_fact": ("c_fact", float),
    }
    for key, (attr, conv) in scalars.items():
        value = pick(key, getattr(args, attr, None))
        if value is not None:
            setattr(solver, attr, conv(value))

    geometry = pick("geometry", getattr(args, "geometry", None)) or "cube"
    spec = ProblemSpec(geometry=str(geometry), config=solver)
    n = pick("n", getattr(args, "n", None))
    if n is not None:
        spec = replace(spec, n=int(n))
    mesh_path = pick("mesh", getattr(args, "mesh", None))
    if mesh_path is not None:
        spec = replace(spec, mesh_path=str(mesh_path))
    for key, attr, conv in (
        ("nu", "nu", float),
        ("kappa", "kappa", float),
        ("g", "g", float),
    ):
        value = pick(key, getattr(args, attr, None))
        if value is not None:
            spec = replace(spec, **{attr: conv(value)})
    spec.validate()
    return spec


def _cmd_gen_mesh(args) -> int:
    mesh = tag_cube_boundary(generate_unit_cube_mesh(args.n))
    write_mesh(mesh, args.out)
    print(f"wrote cube mesh n={args.n}: {mesh.n_p} nodes, {mesh.n_t} tets -> {args.out}")
    return 0


def _cmd_solve(args) -> int:
    cfg = read_config(args.config) if args.config else {}
    spec = spec_from_config(cfg, args)
    case = prepare_case(spec)
    report = solve(case.problem, spec.config)
    sets = case.problem.sets
    print(
        f"geometry={spec.geometry} n_p={case.mesh.n_p} n_t={case.mesh.n_t} "
        f"n_s={sets.n_s} g={spec.g} kappa={spec.kappa}"
    )
    status = "converged" if report.converged else "NOT converged"
    print(
        f"{status}: {report.outer_iterations} outer / "
        f"{report.inner_iterations_total} inner iterations, "
        f"residual {report.residual_history[-1]:.3e}, "
        f"{report.wall_time:.3f} s"
    )
    if args.log:
        write_iteration_log(report, args.log)
        print(f"iteration log -> {args.log}")
    if args.vtk:
        states = state_census(
            case.problem,
            approximation_step(case.problem, report.x, spec.config.lam),
            spec.config.lam,
        )
        export_vtk(
            case.mesh,
            nodal_velocity(case, report),
            report.p,
            sets,
            states,
            args.vtk,
            tangents=case.problem.frame_tangents,
        )
        print(f"vtk export -> {args.vtk}")
    return 0 if report.converged else 1


def _cmd_sweep(args) -> int:
    cfg = read_config(args.config) if args.config else {}
    spec = spec_from_config(cfg, args)
    meshes = [int(tok) for tok in args.meshes.split(",") if tok]
    gs = [float(tok) for tok in args.g_list.split(",") if tok]
    rows = run_table_sweep(meshes, gs, spec, jobs=args.jobs)
    text = sweep_csv(rows)
    out = args.out or cfg.get("output")
    if out:
        with open(out, "w") as fh:
            fh.write(text)
        print(f"sweep table -> {out}")
    else:
        sys.stdout.write(text)
    failed = any("FAIL" in str(cell) for row in rows for cell in row)
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stokeslip",
        description="Stokes stick-slip benchmark solver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-mesh", help="generate a tagged unit-cube mesh")
    gen.add_argument("--n", type=int, required=True, help="edge subdivisions")
    gen.add_argument("--out", required=True, help="output mesh path")
    gen.set_defaults(func=_cmd_gen_mesh)

    def add_common(p, include_g=True):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--geometry", choices=["cube", "mesh"])
        p.add_argument("--n", type=int, help="cube subdivisions")
        p.add_argument("--mesh", help="mesh file path")
        p.add_argument("--nu", type=float)
        p.add_argument("--kappa", type=float)
        if include_g:
            p.add_argument("--g", type=float)
        p.add_argument("--epsilon", dest="eps", type=float)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--omega", type=float)
        p.add_argument("--n-alpha", dest="n_alpha", type=int)
        p.add_argument("--r-tol", dest="r_tol", type=float)
        p.add_argument("--c-fact", dest="c_fact", type=float)

    slv = sub.add_parser("solve", help="run a single case")
    add_common(slv)
    slv.add_argument("--vtk", help="write the solution to a VTK file")
    slv.add_argument("--log", help="write the per-iteration CSV log")
    slv.set_defaults(func=_cmd_solve)

    swp = sub.add_parser("sweep", help="iteration table over meshes and slip bounds")
    add_common(swp, include_g=False)
    swp.add_argument("--meshes", required=True, help="comma-separated cube sizes")
    swp.add_argument("--g", dest="g_list", required=True, help="comma-separated slip bounds")
    swp.add_argument("--out", help="output CSV path")
    swp.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    swp.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
