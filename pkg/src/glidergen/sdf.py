"""Signed distance lattices (positive inside, negative outside) and surfacing.

Surfacing places one vertex on every lattice edge whose end values change
sign, draws arcs across each mixed-sign cell face, chains the arcs of a cell
into closed loops and fan-triangulates them.  Arc topology depends only on the
eight corner signs of a cell, so the loops are built once per sign pattern
(lazily, through :func:`face_arcs`) and reused for every cell.
"""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .mesh import Aabb, MeshError, SurfaceIndex, TriangleMesh, points_inside


class SdfError(ValueError):
    pass


class DegeneracyError(SdfError):
    """A lattice node holds exactly zero; run perturb_zero_nodes first."""


class OpenSurfaceWarning(UserWarning):
    """The zero level set reaches the lattice boundary, so the mesh is open."""


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Lattice of signed distances.  ``values[i, j, k]`` sits at
    ``origin + spacing * (i, j, k)``."""

    values: np.ndarray
    origin: np.ndarray
    spacing: float

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 2:
            raise SdfError(f"SDF lattice needs >= 2 nodes per axis, got shape {v.shape}")
        if not self.spacing > 0:
            raise SdfError("spacing must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)

    def node_positions(self) -> np.ndarray:
        """(n, m, k, 3) array of node coordinates."""
        idx = np.indices(self.dims, dtype=np.float64)
        return self.origin + self.spacing * np.moveaxis(idx, 0, -1)

    def bounds(self) -> Aabb:
        return Aabb(self.origin, self.origin + self.spacing * (np.array(self.dims) - 1))

    def with_values(self, values) -> "SdfGrid":
        return SdfGrid(values, self.origin, self.spacing)

    def same_lattice(self, other: "SdfGrid") -> bool:
        return (self.dims == other.dims and self.spacing == other.spacing
                and bool(np.all(self.origin == other.origin)))


# ---------------------------------------------------------------------------
# binary format: "SDF1", u32 n m k, f64 origin[3] spacing, f32 values x-fastest

_SDF_MAGIC = b"SDF1"


def write_sdf(grid: SdfGrid, path) -> None:
    n, m, k = grid.dims
    head = _SDF_MAGIC + struct.pack("<3I", n, m, k) + struct.pack("<4d", *grid.origin, grid.spacing)
    body = grid.values.ravel(order="F").astype("<f4").tobytes()
    Path(path).write_bytes(head + body)


def read_sdf(path) -> SdfGrid:
    data = Path(path).read_bytes()
    if data[:4] != _SDF_MAGIC:
        raise SdfError(f"{path}: not an SDF1 file")
    n, m, k = struct.unpack_from("<3I", data, 4)
    ox, oy, oz, spacing = struct.unpack_from("<4d", data, 16)
    count = n * m * k
    if len(data) != 48 + 4 * count:
        raise SdfError(f"{path}: expected {count} values")
    vals = np.frombuffer(data, dtype="<f4", count=count, offset=48).astype(np.float64)
    return SdfGrid(vals.reshape((n, m, k), order="F"), (ox, oy, oz), spacing)


# ---------------------------------------------------------------------------
# mesh -> SDF


def default_bounds(dims=(17, 17, 17), pad_cells: int = 2, extent: float = 1.0) -> Aabb:
    """Cube around the origin holding an ``extent``-sized aligned mesh plus
    ``pad_cells`` cells of margin on every side."""
    n = int(max(dims))
    if n - 1 - 2 * pad_cells <= 0:
        raise SdfError(f"{n} nodes cannot hold {pad_cells} padding cells per side")
    spacing = extent / (n - 1 - 2 * pad_cells)
    half = 0.5 * spacing * (n - 1)
    return Aabb((-half,) * 3, (half,) * 3)


def lattice_for(dims, bounds: Aabb) -> tuple[np.ndarray, float]:
    """Uniform-spacing lattice (origin, spacing) centered on ``bounds``."""
    dims = np.asarray(dims, dtype=np.int64)
    if dims.shape != (3,) or np.any(dims < 2):
        raise SdfError(f"dims must be three integers >= 2, got {dims.tolist()}")
    spacing = float(np.max(bounds.extent / (dims - 1)))
    if spacing <= 0:
        raise SdfError("bounds have zero extent")
    origin = bounds.center - 0.5 * spacing * (dims - 1)
    return origin, spacing


def mesh_to_sdf(mesh: TriangleMesh, dims=(17, 17, 17), bounds: Aabb | None = None, seed: int = 0) -> SdfGrid:
    """Sample the signed distance of a closed mesh at every lattice node.

    Magnitude is the exact distance to the nearest surface point; the sign is
    positive for nodes inside the solid.
    """
    if mesh.is_empty():
        raise MeshError("mesh_to_sdf on an empty mesh")
    dims = tuple(int(d) for d in dims)
    if bounds is None:
        bounds = default_bounds(dims)
    origin, spacing = lattice_for(dims, bounds)
    lattice = Aabb(origin, origin + spacing * (np.array(dims) - 1))
    if not lattice.contains(mesh.bounds()):
        raise SdfError("lattice bounds do not enclose the mesh")
    idx = np.indices(dims, dtype=np.float64).reshape(3, -1).T
    nodes = origin + spacing * idx
    dist = SurfaceIndex(mesh).distances(nodes)
    inside = points_inside(mesh, nodes, seed=seed)
    values = np.where(inside, dist, -dist)
    values[dist == 0] = 0.0
    return SdfGrid(values.reshape(dims), origin, spacing)


def sample_implicit(func, dims, bounds: Aabb) -> SdfGrid:
    """Lattice of ``func(points)`` values, for analytic fields."""
    origin, spacing = lattice_for(dims, bounds)
    idx = np.indices(tuple(dims), dtype=np.float64)
    pts = origin + spacing * np.moveaxis(idx, 0, -1)
    return SdfGrid(func(pts.reshape(-1, 3)).reshape(tuple(dims)), origin, spacing)


def perturb_zero_nodes(grid: SdfGrid, epsilon: float | None = None) -> SdfGrid:
    """Push every |value| < epsilon to +-epsilon, keeping its sign (zero -> +)."""
    if epsilon is None:
        epsilon = 1e-6 * grid.spacing
    if not epsilon > 0:
        raise SdfError("epsilon must be positive")
    v = grid.values
    small = np.abs(v) < epsilon
    if not small.any():
        return grid
    out = v.copy()
    out[small] = np.where(v[small] >= 0, epsilon, -epsilon)
    return grid.with_values(out)


# ---------------------------------------------------------------------------
# face arcs


def edge_vertex(d1: float, d2: float) -> float:
    """Zero crossing parameter of the linear interpolant from d1 to d2."""
    if d1 == 0 or d2 == 0 or (d1 > 0) == (d2 > 0):
        raise SdfError(f"edge_vertex needs one positive and one negative value, got {d1}, {d2}")
    return d1 / (d1 - d2)


class FaceCase(enum.Enum):
    UNIFORM = 0
    ONE_NEGATIVE = 1
    TWO_ADJACENT = 2
    TWO_DIAGONAL = 3
    THREE_NEGATIVE = 4


def classify_face(signs) -> FaceCase:
    """Case of a face from its four corner signs in cyclic order (True = inside)."""
    pos = [bool(s) for s in signs]
    n_neg = 4 - sum(pos)
    if n_neg in (0, 4):
        return FaceCase.UNIFORM
    if n_neg == 1:
        return FaceCase.ONE_NEGATIVE
    if n_neg == 3:
        return FaceCase.THREE_NEGATIVE
    return FaceCase.TWO_DIAGONAL if pos[0] == pos[2] else FaceCase.TWO_ADJACENT


class Arc(NamedTuple):
    start_edge: int
    end_edge: int
    start: np.ndarray | None
    end: np.ndarray | None


UNIT_SQUARE = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])


@lru_cache(maxsize=16)
def _arc_edges(pos: tuple[bool, bool, bool, bool]) -> tuple[tuple[int, int], ...]:
    # face edge i joins corner i to corner i+1; "entry" edges go - -> +,
    # "exit" edges + -> -.  Each entry is joined to the next exit met walking
    # forward, so every arc wraps a single run of inside corners and
    # diagonal inside corners stay separated.
    entries = [i for i in range(4) if not pos[i] and pos[(i + 1) % 4]]
    exits = {i for i in range(4) if pos[i] and not pos[(i + 1) % 4]}
    arcs = []
    for e in entries:
        j = (e + 1) % 4
        while j not in exits:
            j = (j + 1) % 4
        arcs.append((e, j))
    return tuple(arcs)


def face_arcs(values, corners=UNIT_SQUARE) -> list[Arc]:
    """Arcs on one rectangular face.

    ``values`` are the four corner values in counter-clockwise order as seen by
    the viewer; ``corners`` their positions.  Each arc runs from the vertex on
    an edge going outside->inside to the vertex on an edge going
    inside->outside, which leaves the inside corners on the right-hand side.
    A uniform-sign face has no arcs.
    """
    values = [float(x) for x in values]
    if any(x == 0 for x in values):
        raise DegeneracyError("face corner value is exactly zero")
    corners = np.asarray(corners, dtype=float)
    out = []
    for e_in, e_out in _arc_edges(tuple(x > 0 for x in values)):
        pts = []
        for e in (e_in, e_out):
            a, b = e, (e + 1) % 4
            t = edge_vertex(values[a], values[b])
            pts.append(corners[a] + t * (corners[b] - corners[a]))
        out.append(Arc(e_in, e_out, pts[0], pts[1]))
    return out


# ---------------------------------------------------------------------------
# cell topology

# corner c of a cell sits at offset (c & 1, c >> 1 & 1, c >> 2 & 1)
CORNER_OFFSETS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64)
CELL_EDGES = [(c, c | (1 << a)) for a in range(3) for c in range(8) if not c & (1 << a)]
EDGE_AXIS = np.array([int(np.log2(b ^ a)) for a, b in CELL_EDGES], dtype=np.int64)
EDGE_ORIGIN = np.array([CORNER_OFFSETS[a] for a, _ in CELL_EDGES], dtype=np.int64)
_EDGE_LOOKUP = {frozenset(e): i for i, e in enumerate(CELL_EDGES)}


def _cell_faces() -> list[list[int]]:
    """Corner cycles of the six cell faces, counter-clockwise seen from outside."""
    faces = []
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        for side in (0, 1):
            cyc = []
            for ub, uc in ((0, 0), (1, 0), (1, 1), (0, 1)):
                bits = (side << a) | (ub << b) | (uc << c)
                cyc.append(bits)
            faces.append(cyc if side == 1 else cyc[::-1])
    return faces


CELL_FACES = _cell_faces()


def cell_loops(config: int) -> list[list[int]]:
    """Closed loops of cell-edge ids for a cell whose inside corners are the set
    bits of ``config``; loops are ordered so fan triangles face outward
    (from positive toward negative)."""
    pos = [(config >> c) & 1 == 1 for c in range(8)]
    succ: dict[int, int] = {}
    for cyc in CELL_FACES:
        for e_in, e_out in _arc_edges(tuple(pos[c] for c in cyc)):
            a = _EDGE_LOOKUP[frozenset((cyc[e_in], cyc[(e_in + 1) % 4]))]
            b = _EDGE_LOOKUP[frozenset((cyc[e_out], cyc[(e_out + 1) % 4]))]
            if a in succ:
                raise AssertionError("inconsistent arc orientation")
            succ[a] = b
    loops = []
    while succ:
        start = min(succ)
        loop = [start]
        nxt = succ.pop(start)
        while nxt != start:
            loop.append(nxt)
            nxt = succ.pop(nxt)
        loops.append(loop)
    return loops


@lru_cache(maxsize=1)
def cell_triangle_table() -> tuple[np.ndarray, np.ndarray]:
    """(256, max_tris, 3) cell-edge triangles per sign pattern, -1 padded, and
    the triangle count per pattern."""
    per_config = []
    for config in range(256):
        tris = []
        for loop in cell_loops(config):
            tris += [(loop[0], loop[i], loop[i + 1]) for i in range(1, len(loop) - 1)]
        per_config.append(tris)
    width = max(len(t) for t in per_config)
    table = np.full((256, width, 3), -1, dtype=np.int64)
    counts = np.zeros(256, dtype=np.int64)
    for config, tris in enumerate(per_config):
        counts[config] = len(tris)
        if tris:
            table[config, :len(tris)] = tris
    return table, counts


def extract_surface(grid: SdfGrid) -> TriangleMesh:
    """Polygonize the zero level set of ``grid``."""
    V = grid.values
    if np.any(V == 0):
        raise DegeneracyError("grid holds exact zeros; apply perturb_zero_nodes before surfacing")
    pos = V > 0
    shape = V.shape
    idmaps = []
    verts = []
    offset = 0
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        va, vb = V[tuple(lo)], V[tuple(hi)]
        cross = pos[tuple(lo)] != pos[tuple(hi)]
        idx = np.argwhere(cross).astype(np.float64)
        t = va[cross] / (va[cross] - vb[cross])
        idx[:, axis] += t
        verts.append(grid.origin + grid.spacing * idx)
        idmap = np.full(cross.shape, -1, dtype=np.int64)
        idmap[cross] = offset + np.arange(len(idx))
        offset += len(idx)
        idmaps.append(idmap)
    vertices = np.concatenate(verts) if offset else np.zeros((0, 3))

    cfg = np.zeros(tuple(s - 1 for s in shape), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        cfg |= pos[dx:shape[0] - 1 + dx, dy:shape[1] - 1 + dy, dz:shape[2] - 1 + dz].astype(np.int64) << c
    cells = np.argwhere((cfg != 0) & (cfg != 255))
    if len(cells) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    table, counts = cell_triangle_table()
    cc = cfg[cells[:, 0], cells[:, 1], cells[:, 2]]
    edges = table[cc]  # (C, W, 3)
    valid = np.arange(table.shape[1])[None, :] < counts[cc][:, None]
    tri_edges = edges[valid]  # (T, 3) in cell order
    tri_cells = np.broadcast_to(cells[:, None, :], edges.shape[:2] + (3,))[valid]
    gid = np.full(tri_edges.shape, -1, dtype=np.int64)
    for axis in range(3):
        sel = EDGE_AXIS[tri_edges] == axis
        node = tri_cells[:, None, :] + EDGE_ORIGIN[tri_edges]
        n = node[sel]
        gid[sel] = idmaps[axis][n[:, 0], n[:, 1], n[:, 2]]
    assert np.all(gid >= 0)

    border = np.zeros(shape, dtype=bool)
    border[[0, -1], :, :] = border[:, [0, -1], :] = border[:, :, [0, -1]] = True
    if np.any(pos & border):
        warnings.warn("zero level set touches the lattice boundary; surface is open",
                      OpenSurfaceWarning, stacklevel=2)
    return TriangleMesh(vertices, gid)
