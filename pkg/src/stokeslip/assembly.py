"""MINI (P1-bubble/P1) assembly and static condensation of bubble unknowns.

The viscous form is assembled from exact element integrals: P1 gradients
are elementwise constant and the bubble-bubble block has a closed form via
monomial integration of barycentric products. The bubble-linear viscous
coupling vanishes (the bubble is zero on element boundaries), so bubble
elimination only produces the pressure-block matrix ``E`` and load vector
``c``. Loads are integrated with a degree-5 simplex rule so that bubble
test functions are handled exactly for low-order data.

State convention: the solver works with the sign-flipped pressure, so the
condensed problem is the monotone saddle form with blocks
``[[A_kappa, -B^T], [B, E]]`` and right-hand side ``(b; c)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryTag, NodeSets, SlipFrame, TetMesh
from .quadrature import tet_rule, tri_rule_deg2

# /_T phi_b dx = BUBBLE_INTEGRAL * |T|
BUBBLE_INTEGRAL = 32.0 / 105.0
# /_T grad(phi_b) grad(phi_b)^T dx = BUBBLE_GRAD_COEF * |T| * sum_a g_a g_a^T
BUBBLE_GRAD_COEF = 4096.0 / 945.0

_DEGENERATE_VOLUME = 1e-14
_LOAD_QUAD_DEGREE = 5


class AssemblyError(Exception):
    """Raised when element data is degenerate or fields are not evaluable."""


def element_geometry(mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
    """Constant P1 basis gradients (n_t, 4, 3) and element volumes (n_t,)."""
    p = mesh.nodes[mesh.tets]
    edges = p[:, 1:] - p[:, :1]
    vols = np.linalg.det(edges) / 6.0
    bad = np.abs(vols) < _DEGENERATE_VOLUME
    if np.any(bad):
        raise AssemblyError(f"element {int(np.nonzero(bad)[0][0])} is degenerate")
    inv = np.linalg.inv(edges)
    grads = np.empty((mesh.n_t, 4, 3))
    grads[:, 1:] = np.transpose(inv, (0, 2, 1))
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    return grads, vols


def _vdofs(node_ids: np.ndarray) -> np.ndarray:
    """Velocity dof indices (..., 3) for node ids in the all-nodes numbering."""
    return 3 * node_ids[..., None] + np.arange(3)


def assemble_viscous_stiffness(
    mesh: TetMesh, nu: float
) -> tuple[sp.csr_matrix, np.ndarray]:
    """P1-P1 block of the symmetric-gradient form plus per-element
    bubble-bubble 3x3 blocks.

    Returns the (3 n_p, 3 n_p) linear stiffness and an (n_t, 3, 3) array of
    bubble blocks. The bubble-linear coupling is identically zero and is
    not assembled.
    """
    if nu <= 0:
        raise AssemblyError(f"viscosity must be positive, got {nu}")
    grads, vols = element_geometry(mesh)
    n_t = mesh.n_t

    dots = np.einsum("tak,tbk->tab", grads, grads)
    local = np.einsum("tab,ij->taibj", dots, np.eye(3))
    local += np.einsum("taj,tbi->taibj", grads, grads)
    local *= nu * vols[:, None, None, None, None]

    dof = _vdofs(mesh.tets)  # (n_t, 4, 3)
    rows = np.broadcast_to(dof[:, :, :, None, None], local.shape).ravel()
    cols = np.broadcast_to(dof[:, None, None, :, :], local.shape).ravel()
    a0 = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(3 * mesh.n_p, 3 * mesh.n_p)
    ).tocsr()

    gram = BUBBLE_GRAD_COEF * vols[:, None, None] * np.einsum(
        "tai,taj->tij", grads, grads
    )
    a_bb = nu * (np.trace(gram, axis1=1, axis2=2)[:, None, None] * np.eye(3) + gram)
    assert a_bb.shape == (n_t, 3, 3)
    return a0, a_bb


def assemble_adhesion_mass(
    mesh: TetMesh, frames: list[SlipFrame], sets: NodeSets
) -> sp.csr_matrix:
    """Lumped adhesion contribution: weight_i * T_i^T T_i on the diagonal
    3x3 block of each slip node, in the all-nodes velocity numbering."""
    shape = (3 * mesh.n_p, 3 * mesh.n_p)
    if sets.n_s == 0:
        return sp.csr_matrix(shape)
    blocks = np.stack(
        [f.adhesion_weight * f.tangent.T @ f.tangent for f in frames]
    )
    dof = _vdofs(sets.slip)  # (n_s, 3)
    rows = np.broadcast_to(dof[:, :, None], blocks.shape).ravel()
    cols = np.broadcast_to(dof[:, None, :], blocks.shape).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=shape).tocsr()


def assemble_divergence(mesh: TetMesh) -> tuple[sp.csr_matrix, np.ndarray]:
    """Pressure-velocity coupling b(q, w) = -/ q div(w).

    Returns the (n_p, 3 n_p) block against linear velocities and the
    per-element (n_t, 4, 3) blocks against the bubble, kept for
    condensation.
    """
    grads, vols = element_geometry(mesh)
    # -/ phi_p d_i phi_a = -(V/4) * grads[a, i], the same for each corner p.
    local = np.broadcast_to(
        (-0.25 * vols[:, None, None] * grads)[:, None], (mesh.n_t, 4, 4, 3)
    )
    prow = np.broadcast_to(mesh.tets[:, :, None, None], local.shape).ravel()
    vcol = np.broadcast_to(_vdofs(mesh.tets)[:, None], local.shape).ravel()
    b_lin = sp.coo_matrix(
        (local.ravel(), (prow, vcol)), shape=(mesh.n_p, 3 * mesh.n_p)
    ).tocsr()

    # -/ phi_p d_i phi_b = + grad(phi_p)_i * / phi_b  (integration by parts,
    # bubble vanishing on element boundaries).
    b_bub = BUBBLE_INTEGRAL * vols[:, None, None] * grads
    return b_lin, b_bub


def _check_finite(values: np.ndarray, points: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values.reshape(-1, 3)).all(axis=1)
    if np.any(bad):
        idx = int(np.nonzero(bad)[0][0])
        raise AssemblyError(
            f"{what} is not finite at quadrature point {points[idx]}"
        )


def assemble_load(
    mesh: TetMesh, f, sigma_n, quad_degree: int = _LOAD_QUAD_DEGREE
) -> tuple[np.ndarray, np.ndarray]:
    """Load vector against P1 test functions and per-element bubble loads.

    ``f`` maps (m, 3) points to (m, 3) volume forces; ``sigma_n`` maps
    (m, 3) points and (m, 3) outward normals to (m, 3) tractions on the
    Neumann part. Either may be None for zero data. Bubble traces vanish
    on element boundaries, so the traction only loads the P1 block.
    """
    _, vols = element_geometry(mesh)
    b_lin = np.zeros(3 * mesh.n_p)
    f_bub = np.zeros((mesh.n_t, 3))

    if f is not None:
        bary, w = tet_rule(quad_degree)
        pts = np.einsum("qa,tac->tqc", bary, mesh.nodes[mesh.tets])
        fvals = np.asarray(f(pts.reshape(-1, 3)), dtype=float).reshape(
            mesh.n_t, -1, 3
        )
        _check_finite(fvals, pts.reshape(-1, 3), "volume force")
        # node a of element t: V * sum_q w_q lambda_a(q) f(q)
        contrib = vols[:, None, None] * np.einsum("q,qa,tqi->tai", w, bary, fvals)
        np.add.at(b_lin, _vdofs(mesh.tets), contrib)
        phi_b = 256.0 * np.prod(bary, axis=1)
        f_bub = vols[:, None] * np.einsum("q,q,tqi->ti", w, phi_b, fvals)

    if sigma_n is not None:
        nfaces = mesh.boundary_faces[mesh.faces_with_tag(BoundaryTag.NEUMANN)]
        if nfaces.size:
            p = mesh.nodes[nfaces]
            cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            areas = 0.5 * np.linalg.norm(cross, axis=1)
            normals = cross / (2.0 * areas[:, None])
            tbary, tw = tri_rule_deg2()
            pts = np.einsum("qa,fac->fqc", tbary, p)
            flat = pts.reshape(-1, 3)
            nrm = np.repeat(normals, tbary.shape[0], axis=0)
            svals = np.asarray(sigma_n(flat, nrm), dtype=float).reshape(
                nfaces.shape[0], -1, 3
            )
            _check_finite(svals, flat, "Neumann traction")
            contrib = areas[:, None, None] * np.einsum(
                "q,qa,fqi->fai", tw, tbary, svals
            )
            np.add.at(b_lin, _vdofs(nfaces), contrib)

    return b_lin, f_bub


def condense_bubbles(
    a_bb: np.ndarray,
    b_bub: np.ndarray,
    f_bub: np.ndarray,
    tets: np.ndarray,
    n_p: int,
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Eliminate bubble unknowns elementwise.

    Produces ``E = sum_T B_b (A_bb)^-1 B_b^T`` and
    ``c = -sum_T B_b (A_bb)^-1 f_b`` so that the condensed pressure row
    reads ``B u - E p - c = 0``.
    """
    dets = np.linalg.det(a_bb)
    bad = np.abs(dets) < 1e-300
    if np.any(bad):
        raise AssemblyError(
            f"bubble block of element {int(np.nonzero(bad)[0][0])} is singular"
        )
    inv = np.linalg.inv(a_bb)
    x = np.einsum("tpi,tij->tpj", b_bub, inv)
    e_loc = np.einsum("tpj,tqj->tpq", x, b_bub)
    c_loc = -np.einsum("tpj,tj->tp", x, f_bub)

    rows = np.broadcast_to(tets[:, :, None], e_loc.shape).ravel()
    cols = np.broadcast_to(tets[:, None, :], e_loc.shape).ravel()
    e_mat = sp.coo_matrix((e_loc.ravel(), (rows, cols)), shape=(n_p, n_p)).tocsr()
    c = np.zeros(n_p)
    np.add.at(c, tets, c_loc)
    return e_mat, c


@dataclass
class SaddleProblem:
    """Condensed algebraic saddle problem in the unknown ordering.

    Velocity unknowns are ordered slip nodes first, then remaining nodes,
    three components per node; pressures keep the mesh node numbering. The
    affine map of the generalized equation is
    ``H(u, p_hat) = [[A_kappa, -B^T], [B, E]] (u; p_hat) - (b; c)`` with
    ``p_hat`` the sign-flipped pressure.
    """

    A_kappa: sp.csr_matrix
    B: sp.csr_matrix
    E: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    frames: list[SlipFrame] = field(repr=False)
    sets: NodeSets = field(repr=False)

    @property
    def n_s(self) -> int:
        return self.sets.n_s

    @property
    def n_u(self) -> int:
        return self.sets.n_u

    @property
    def n_p(self) -> int:
        return self.sets.n_p

    @property
    def size(self) -> int:
        """Dimension of the solver state (u, p_hat)."""
        return 3 * self.n_u + self.n_p

    @cached_property
    def A_NN(self) -> sp.csr_matrix:
        k = 3 * self.n_s
        return self.A_kappa[:k, :k].tocsr()

    @cached_property
    def A_IN(self) -> sp.csr_matrix:
        k = 3 * self.n_s
        return self.A_kappa[k:, :k].tocsr()

    @cached_property
    def A_II(self) -> sp.csr_matrix:
        k = 3 * self.n_s
        return self.A_kappa[k:, k:].tocsr()

    @cached_property
    def B_N(self) -> sp.csr_matrix:
        return self.B[:, : 3 * self.n_s].tocsr()

    @cached_property
    def B_I(self) -> sp.csr_matrix:
        return self.B[:, 3 * self.n_s :].tocsr()

    @cached_property
    def frame_tangents(self) -> np.ndarray:
        """(n_s, 2, 3) stacked tangent matrices."""
        if self.n_s == 0:
            return np.zeros((0, 2, 3))
        return np.stack([f.tangent for f in self.frames])

    @cached_property
    def frame_normals(self) -> np.ndarray:
        if self.n_s == 0:
            return np.zeros((0, 3))
        return np.stack([f.normal for f in self.frames])

    @cached_property
    def slip_weights(self) -> np.ndarray:
        return np.array([f.slip_weight for f in self.frames])


def _as_dirichlet_values(u_d, points: np.ndarray) -> np.ndarray:
    if u_d is None:
        return np.zeros((points.shape[0], 3))
    if callable(u_d):
        try:
            values = np.asarray(u_d(points), dtype=float)
        except Exception as exc:
            raise AssemblyError(f"Dirichlet datum not evaluable: {exc}") from exc
    else:
        values = np.broadcast_to(np.asarray(u_d, dtype=float), (points.shape[0], 3))
    if values.shape != (points.shape[0], 3) or not np.all(np.isfinite(values)):
        raise AssemblyError("Dirichlet datum not evaluable at a Dirichlet node")
    return values


def apply_dirichlet(
    a_full: sp.csr_matrix,
    b_full: sp.csr_matrix,
    e_mat: sp.csr_matrix,
    load: np.ndarray,
    c: np.ndarray,
    sets: NodeSets,
    frames: list[SlipFrame],
    u_d=None,
    mesh: TetMesh | None = None,
) -> SaddleProblem:
    """Eliminate Dirichlet velocity unknowns and reorder slip-first.

    Known boundary values are moved to the right-hand sides. The slip-node
    impermeability is not eliminated here; it is enforced through the
    nonsmooth term of the generalized equation.
    """
    udofs = _vdofs(sets.unknown_nodes).ravel()
    ddofs = _vdofs(sets.dirichlet).ravel()

    csc = a_full.tocsc()
    a_uu = csc[:, udofs][udofs, :].tocsr()
    b_u = b_full.tocsc()[:, udofs].tocsr()
    b_vec = load[udofs]
    c_vec = c.copy()
    if sets.n_d:
        if mesh is None and callable(u_d):
            raise AssemblyError("mesh required to evaluate a callable Dirichlet datum")
        points = mesh.nodes[sets.dirichlet] if mesh is not None else np.zeros((sets.n_d, 3))
        values = _as_dirichlet_values(u_d, points).ravel()
        if np.any(values):
            a_ud = csc[:, ddofs][udofs, :]
            b_vec = b_vec - a_ud @ values
            c_vec = c_vec - b_full.tocsc()[:, ddofs] @ values
    return SaddleProblem(
        A_kappa=a_uu, B=b_u, E=e_mat.tocsr(), b=b_vec, c=c_vec, frames=frames, sets=sets
    )


def assemble_problem(
    mesh: TetMesh,
    sets: NodeSets,
    frames: list[SlipFrame],
    nu: float,
    f=None,
    sigma_n=None,
    u_d=None,
) -> SaddleProblem:
    """Full pipeline: forms, bubble condensation, Dirichlet elimination."""
    a0, a_bb = assemble_viscous_stiffness(mesh, nu)
    a_full = a0 + assemble_adhesion_mass(mesh, frames, sets)
    b_lin, b_bub = assemble_divergence(mesh)
    load, f_bub = assemble_load(mesh, f, sigma_n)
    e_mat, c = condense_bubbles(a_bb, b_bub, f_bub, mesh.tets, mesh.n_p)
    return apply_dirichlet(a_full, b_lin, e_mat, load, c, sets, frames, u_d, mesh)


def write_triplets(matrix: sp.spmatrix, path) -> None:
    """Dump a sparse matrix as ``row col value`` lines (debugging aid)."""
    coo = matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
