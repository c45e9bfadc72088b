"""Tetrahedral meshes with tagged boundary triangles.

Structured unit-cube meshes are built from a 5-tet decomposition of each
hexahedral cell. The decomposition parity alternates in a checkerboard
pattern so that the diagonals of shared cell faces match and the mesh is
conforming. Boundary triangles are the tet faces that occur exactly once;
they are stored with outward orientation.

A small text format (see :func:`write_mesh` / :func:`import_mesh`) allows
externally generated meshes to be used with the same pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

# Index cap so node/tet ids stay well inside int32 range (VTK, file formats).
_MAX_NODES = 2**31 - 1
_DEGENERATE_VOLUME = 1e-14


class MeshError(Exception):
    """Raised for invalid meshes or invalid mesh construction requests."""


class MeshFormatError(MeshError):
    """Raised on parse errors in the mesh text format; carries a line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class BoundaryTag(Enum):
    DIRICHLET = "D"
    NEUMANN = "N"
    SLIP = "S"


def _tag_of(token: str) -> BoundaryTag:
    """Map a face-tag token to its BoundaryTag. ``N`` may carry a numeric
    sub-label (``N1``, ``N2`` ...) to distinguish several Neumann parts."""
    if token == "D":
        return BoundaryTag.DIRICHLET
    if token == "S":
        return BoundaryTag.SLIP
    if token == "N" or (token[:1] == "N" and token[1:].isdigit()):
        return BoundaryTag.NEUMANN
    raise ValueError(f"unknown boundary tag {token!r}")


@dataclass
class TetMesh:
    """Tetrahedral mesh with tagged boundary triangles.

    nodes           (n_p, 3) float coordinates
    tets            (n_t, 4) node indices, positively oriented
    boundary_faces  (m, 3) node indices, outward oriented
    face_tags       (m,) tag tokens: "D", "S", "N" (optionally "N<k>")
    """

    nodes: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray
    face_tags: np.ndarray

    @property
    def n_p(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_t(self) -> int:
        return self.tets.shape[0]

    def faces_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        """Indices of boundary faces carrying the given tag (sub-labels ignored)."""
        leading = np.array([t[:1] for t in self.face_tags])
        return np.nonzero(leading == tag.value)[0]

    def nodes_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        """Sorted ids of nodes incident to at least one face with the tag."""
        faces = self.boundary_faces[self.faces_with_tag(tag)]
        return np.unique(faces)


@dataclass
class NodeSets:
    """Partition of mesh nodes into Dirichlet / slip / remaining unknowns.

    The unknown ordering places slip nodes first (sorted by mesh id), then
    the remaining free nodes (sorted by mesh id). ``node_to_unknown`` maps a
    mesh node id to its unknown position, -1 for Dirichlet nodes.
    """

    dirichlet: np.ndarray
    slip: np.ndarray
    remaining: np.ndarray

    @property
    def n_s(self) -> int:
        return self.slip.size

    @property
    def n_d(self) -> int:
        return self.dirichlet.size

    @property
    def n_u(self) -> int:
        return self.slip.size + self.remaining.size

    @property
    def n_p(self) -> int:
        return self.n_u + self.n_d

    @cached_property
    def unknown_nodes(self) -> np.ndarray:
        return np.concatenate([self.slip, self.remaining])

    @cached_property
    def node_to_unknown(self) -> np.ndarray:
        perm = np.full(self.n_p, -1, dtype=np.int64)
        perm[self.unknown_nodes] = np.arange(self.n_u)
        return perm


@dataclass(frozen=True)
class SlipFrame:
    """Orthonormal boundary frame and lumped weights at one slip node.

    ``tangent`` is the 2x3 matrix of tangent rows, ``normal`` the outward
    unit normal; stacked they form an orthogonal 3x3 matrix. The weights
    are the nodal surface measure times the slip bound / adhesion
    coefficient evaluated at the node.
    """

    tangent: np.ndarray
    normal: np.ndarray
    slip_weight: float
    adhesion_weight: float


def _signed_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = nodes[tets]
    return np.linalg.det(p[:, 1:] - p[:, :1]) / 6.0


def _orient_positive(nodes: np.ndarray, tets: np.ndarray, what: str) -> np.ndarray:
    """Swap two vertices of negatively oriented tets; reject degenerate ones."""
    tets = tets.copy()
    vols = _signed_volumes(nodes, tets)
    neg = vols < 0
    tets[neg] = tets[neg][:, [0, 1, 3, 2]]
    bad = np.abs(vols) < _DEGENERATE_VOLUME
    if np.any(bad):
        raise MeshError(f"degenerate {what} {int(np.nonzero(bad)[0][0])}: volume below 1e-14")
    return tets


# Faces of a positively oriented tet (a,b,c,d), ordered so that the
# right-hand-rule normal points outward.
_OUTWARD_FACES = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]])


def _all_tet_faces(tets: np.ndarray) -> np.ndarray:
    return tets[:, _OUTWARD_FACES].reshape(-1, 3)


def _boundary_faces_of(tets: np.ndarray) -> np.ndarray:
    """Outward-oriented faces occurring in exactly one tet."""
    faces = _all_tet_faces(tets)
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inverse] == 1]


def generate_unit_cube_mesh(n: int) -> TetMesh:
    """Structured mesh of [0,1]^3 with (n+1)^3 nodes and 5*n^3 tets.

    Every boundary face is tagged Dirichlet; use :func:`tag_cube_boundary`
    to apply the benchmark tagging.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError(f"cube subdivision count must be a positive integer, got {n!r}")
    if (n + 1) ** 3 > _MAX_NODES or 5 * n**3 > _MAX_NODES:
        raise MeshError(f"cube subdivision count {n} overflows the index type")

    r = np.arange(n + 1, dtype=float) / n
    nodes = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)

    i, j, k = (a.ravel() for a in np.meshgrid(*3 * [np.arange(n)], indexing="ij"))

    def vid(di, dj, dk):
        return ((i + di) * (n + 1) + (j + dj)) * (n + 1) + (k + dk)

    c000, c100, c010, c110 = vid(0, 0, 0), vid(1, 0, 0), vid(0, 1, 0), vid(1, 1, 0)
    c001, c101, c011, c111 = vid(0, 0, 1), vid(1, 0, 1), vid(0, 1, 1), vid(1, 1, 1)

    even = np.stack(
        [
            np.stack([c000, c100, c110, c101], axis=1),
            np.stack([c000, c110, c010, c011], axis=1),
            np.stack([c000, c101, c011, c001], axis=1),
            np.stack([c110, c101, c011, c111], axis=1),
            np.stack([c000, c110, c101, c011], axis=1),
        ],
        axis=1,
    )
    # Mirror image of the even pattern (x -> 1-x relabelling).
    odd = np.stack(
        [
            np.stack([c100, c000, c010, c001], axis=1),
            np.stack([c100, c010, c110, c111], axis=1),
            np.stack([c100, c001, c111, c101], axis=1),
            np.stack([c010, c001, c111, c011], axis=1),
            np.stack([c100, c010, c001, c111], axis=1),
        ],
        axis=1,
    )
    parity = ((i + j + k) % 2).astype(bool)
    tets = np.where(parity[:, None, None], odd, even).reshape(-1, 4)
    tets = _orient_positive(nodes, tets, "tet")

    bfaces = _boundary_faces_of(tets)
    tags = np.full(bfaces.shape[0], "D", dtype="<U8")
    return TetMesh(nodes, tets, bfaces, tags)


def tag_cube_boundary(mesh: TetMesh, tol: float = 1e-12) -> TetMesh:
    """Tag the cube boundary: slip on x2=1, Neumann on x1=0 and x1=1,
    Dirichlet on x2=0, x3=0 and x3=1. Returns a new mesh."""
    planes = [
        (1, 1.0, "S"),
        (0, 0.0, "N"),
        (0, 1.0, "N"),
        (1, 0.0, "D"),
        (2, 0.0, "D"),
        (2, 1.0, "D"),
    ]
    coords = mesh.nodes[mesh.boundary_faces]  # (m, 3, 3)
    tags = np.full(mesh.boundary_faces.shape[0], "", dtype="<U8")
    matched = np.zeros(mesh.boundary_faces.shape[0], dtype=bool)
    for axis, value, tag in planes:
        on_plane = np.all(np.abs(coords[:, :, axis] - value) <= tol, axis=1)
        tags[on_plane & ~matched] = tag
        matched |= on_plane
    if not np.all(matched):
        bad = int(np.nonzero(~matched)[0][0])
        raise MeshError(f"boundary face {bad} does not lie on any cube face plane")
    return TetMesh(mesh.nodes, mesh.tets, mesh.boundary_faces, tags)


def classify_nodes(mesh: TetMesh) -> NodeSets:
    """Split nodes into Dirichlet / slip / remaining sets.

    A node on both the slip and the Dirichlet part is Dirichlet; slip wins
    over Neumann. Orderings are deterministic (sorted by mesh id).
    """
    dirichlet = mesh.nodes_with_tag(BoundaryTag.DIRICHLET)
    slip = np.setdiff1d(mesh.nodes_with_tag(BoundaryTag.SLIP), dirichlet)
    fixed = np.union1d(dirichlet, slip)
    remaining = np.setdiff1d(np.arange(mesh.n_p), fixed)
    return NodeSets(dirichlet=dirichlet, slip=slip, remaining=remaining)


def _as_scalar_field(value):
    if callable(value):
        return value
    return lambda pts, v=float(value): np.full(pts.shape[0], v)


def compute_slip_frames(mesh: TetMesh, sets: NodeSets, g, kappa) -> list[SlipFrame]:
    """Per-slip-node orthonormal frames and lumped surface weights.

    The nodal normal is the area-weighted average of adjacent slip-face
    outward normals; tangents complete it to an orthonormal frame by a
    deterministic rule (coordinate axis least aligned with the normal,
    one Gram-Schmidt step, cross product). The nodal surface measure is
    one third of the adjacent slip-triangle areas.

    ``g`` and ``kappa`` are constants or callables mapping an (m, 3) array
    of points to (m,) values.
    """
    if sets.n_s == 0:
        return []
    g_field = _as_scalar_field(g)
    kappa_field = _as_scalar_field(kappa)

    faces = mesh.boundary_faces[mesh.faces_with_tag(BoundaryTag.SLIP)]
    p = mesh.nodes[faces]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    normals = cross / np.linalg.norm(cross, axis=1)[:, None]

    avg_normal = np.zeros((mesh.n_p, 3))
    measure = np.zeros(mesh.n_p)
    for corner in range(3):
        np.add.at(avg_normal, faces[:, corner], areas[:, None] * normals)
        np.add.at(measure, faces[:, corner], areas / 3.0)

    slip_pts = mesh.nodes[sets.slip]
    g_vals = np.asarray(g_field(slip_pts), dtype=float)
    kappa_vals = np.asarray(kappa_field(slip_pts), dtype=float)
    for name, vals in (("slip bound", g_vals), ("adhesion coefficient", kappa_vals)):
        bad = ~np.isfinite(vals) | (vals < 0)
        if np.any(bad):
            node = int(sets.slip[np.nonzero(bad)[0][0]])
            raise MeshError(f"{name} is negative or not finite at node {node}")

    frames = []
    eye = np.eye(3)
    for idx, node in enumerate(sets.slip):
        nvec = avg_normal[node]
        nlen = np.linalg.norm(nvec)
        if nlen < 1e-12:
            raise MeshError(f"slip node {int(node)} has a degenerate normal patch")
        nvec = nvec / nlen
        axis = int(np.argmin(np.abs(nvec)))
        t1 = eye[axis] - np.dot(eye[axis], nvec) * nvec
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(nvec, t1)
        frames.append(
            SlipFrame(
                tangent=np.vstack([t1, t2]),
                normal=nvec,
                slip_weight=float(measure[node] * g_vals[idx]),
                adhesion_weight=float(measure[node] * kappa_vals[idx]),
            )
        )
    return frames


def validate_mesh(mesh: TetMesh) -> None:
    """Enforce the TetMesh invariants; raise MeshError naming the offender."""
    n_p = mesh.n_p
    if mesh.tets.size and (mesh.tets.min() < 0 or mesh.tets.max() >= n_p):
        rows = np.nonzero(np.any((mesh.tets < 0) | (mesh.tets >= n_p), axis=1))[0]
        raise MeshError(f"tet {int(rows[0])} references a node index out of range")
    if mesh.boundary_faces.size and (
        mesh.boundary_faces.min() < 0 or mesh.boundary_faces.max() >= n_p
    ):
        rows = np.nonzero(
            np.any((mesh.boundary_faces < 0) | (mesh.boundary_faces >= n_p), axis=1)
        )[0]
        raise MeshError(f"boundary face {int(rows[0])} references a node index out of range")

    vols = _signed_volumes(mesh.nodes, mesh.tets)
    if np.any(vols <= _DEGENERATE_VOLUME):
        raise MeshError(
            f"tet {int(np.argmin(vols))} is degenerate or inverted (volume {vols.min():.3e})"
        )

    # Boundary faces must be exactly the once-occurring tet faces.
    expected = _boundary_faces_of(mesh.tets)
    exp_keys = {tuple(f) for f in np.sort(expected, axis=1)}
    got_keys = [tuple(f) for f in np.sort(mesh.boundary_faces, axis=1)]
    if len(set(got_keys)) != len(got_keys):
        raise MeshError("duplicate boundary faces")
    for i, key in enumerate(got_keys):
        if key not in exp_keys:
            raise MeshError(f"boundary face {i} is not a boundary face of any tet")
    if len(got_keys) != len(exp_keys):
        missing = exp_keys - set(got_keys)
        raise MeshError(f"boundary is not closed: {len(missing)} tet boundary faces untagged")

    # Closed surface: each boundary edge shared by exactly two faces.
    edges = mesh.boundary_faces[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts != 2):
        raise MeshError("boundary surface is not closed (edge shared by != 2 faces)")

    if mesh.face_tags.shape[0] != mesh.boundary_faces.shape[0]:
        raise MeshError("face tag array does not match boundary face count")
    for i, token in enumerate(mesh.face_tags):
        try:
            _tag_of(str(token))
        except ValueError as exc:
            raise MeshError(f"boundary face {i}: {exc}") from exc


def _fix_boundary_orientation(mesh: TetMesh) -> TetMesh:
    """Reorient imported boundary faces to match the owning tet's outward face."""
    faces = _all_tet_faces(mesh.tets)
    keys = np.sort(faces, axis=1)
    order = {tuple(k): f for k, f in zip(map(tuple, keys), faces)}
    fixed = np.empty_like(mesh.boundary_faces)
    for i, bf in enumerate(mesh.boundary_faces):
        oriented = order.get(tuple(np.sort(bf)))
        if oriented is None:
            raise MeshError(f"boundary face {i} is not a face of any tet")
        fixed[i] = oriented
    return TetMesh(mesh.nodes, mesh.tets, fixed, mesh.face_tags)


def write_mesh(mesh: TetMesh, path) -> None:
    """Write a mesh in the text format read by :func:`import_mesh`."""
    with open(path, "w") as fh:
        fh.write("tetmesh 1\n")
        fh.write(f"nodes {mesh.n_p}\n")
        for x, y, z in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        fh.write(f"tets {mesh.n_t}\n")
        for t in mesh.tets:
            fh.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")
        fh.write(f"bfaces {mesh.boundary_faces.shape[0]}\n")
        for f, tag in zip(mesh.boundary_faces, mesh.face_tags):
            fh.write(f"{f[0]} {f[1]} {f[2]} {tag}\n")


def import_mesh(path) -> TetMesh:
    """Read a mesh from the bespoke text format and validate it.

    Format: header line ``tetmesh 1``; ``nodes <n_p>`` followed by n_p
    coordinate lines; ``tets <n_t>`` followed by n_t lines of 4 zero-based
    node indices; ``bfaces <m>`` followed by m lines ``i j k TAG`` with TAG
    one of D, N, S (N may carry a numeric sub-label). ``#`` starts a
    comment; tokens are whitespace-separated.
    """
    tokens: list[tuple[int, str]] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0]
            tokens.extend((line_no, tok) for tok in body.split())
    pos = 0

    def take(what: str) -> tuple[int, str]:
        nonlocal pos
        if pos >= len(tokens):
            last = tokens[-1][0] if tokens else 1
            raise MeshFormatError(path, last, f"unexpected end of file, expected {what}")
        tok = tokens[pos]
        pos += 1
        return tok

    def take_int(what: str) -> int:
        ln, tok = take(what)
        try:
            return int(tok)
        except ValueError:
            raise MeshFormatError(path, ln, f"expected integer {what}, got {tok!r}") from None

    def take_float(what: str) -> float:
        ln, tok = take(what)
        try:
            return float(tok)
        except ValueError:
            raise MeshFormatError(path, ln, f"expected number {what}, got {tok!r}") from None

    def expect(literal: str) -> None:
        ln, tok = take(literal)
        if tok != literal:
            raise MeshFormatError(path, ln, f"expected {literal!r}, got {tok!r}")

    expect("tetmesh")
    ln, version = take("format version")
    if version != "1":
        raise MeshFormatError(path, ln, f"unsupported format version {version!r}")

    expect("nodes")
    n_p = take_int("node count")
    nodes = np.empty((n_p, 3))
    for i in range(n_p):
        nodes[i] = [take_float("coordinate") for _ in range(3)]

    expect("tets")
    n_t = take_int("tet count")
    tets = np.empty((n_t, 4), dtype=np.int64)
    for i in range(n_t):
        tets[i] = [take_int("tet node index") for _ in range(4)]

    expect("bfaces")
    m = take_int("boundary face count")
    bfaces = np.empty((m, 3), dtype=np.int64)
    tags = np.empty(m, dtype="<U8")
    for i in range(m):
        bfaces[i] = [take_int("face node index") for _ in range(3)]
        ln, tok = take("face tag")
        try:
            _tag_of(tok)
        except ValueError as exc:
            raise MeshFormatError(path, ln, str(exc)) from None
        tags[i] = tok

    if pos != len(tokens):
        raise MeshFormatError(path, tokens[pos][0], f"trailing content {tokens[pos][1]!r}")

    if tets.size and (tets.min() < 0 or tets.max() >= n_p):
        rows = np.nonzero(np.any((tets < 0) | (tets >= n_p), axis=1))[0]
        raise MeshError(f"tet {int(rows[0])} references a node index out of range")
    if bfaces.size and (bfaces.min() < 0 or bfaces.max() >= n_p):
        rows = np.nonzero(np.any((bfaces < 0) | (bfaces >= n_p), axis=1))[0]
        raise MeshError(f"boundary face {int(rows[0])} references a node index out of range")
    tets = _orient_positive(nodes, tets, "tet")
    mesh = _fix_boundary_orientation(TetMesh(nodes, tets, bfaces, tags))
    validate_mesh(mesh)
    return mesh


def mesh_size(mesh: TetMesh) -> float:
    """Largest element diameter (longest tet edge)."""
    p = mesh.nodes[mesh.tets]
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    h = 0.0
    for a, b in pairs:
        h = max(h, float(np.max(np.linalg.norm(p[:, a] - p[:, b], axis=1))))
    return h
