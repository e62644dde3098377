"""Triangle meshes: I/O, cleaning, alignment and the geometric queries used by
the SDF transform and the flight simulator.

Coordinates are meters.  Aligned meshes use x = forward, y = up, z = spanwise.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12
NEAR_HIT = 1e-9
MAX_RAY_RETRIES = 16
WELD_RELATIVE = 1e-6


class MeshError(ValueError):
    """Unreadable, malformed or empty mesh data."""


class WatertightWarning(UserWarning):
    """Raised (as a warning) when a query assumes a closed mesh but edges are open."""


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    def contains(self, other: "Aabb", margin: float = 0.0) -> bool:
        return bool(np.all(other.min >= self.min + margin) and np.all(other.max <= self.max - margin))


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle surface.

    ``meta`` carries provenance such as alignment transforms; it never affects
    geometry.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def is_empty(self) -> bool:
        return self.n_triangles == 0

    def corners(self) -> np.ndarray:
        """(T, 3, 3) array of triangle corner positions."""
        return self.vertices[self.triangles]

    def bounds(self) -> Aabb:
        if self.n_vertices == 0:
            raise MeshError("empty mesh has no bounds")
        return Aabb(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def areas(self) -> np.ndarray:
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def surface_area(self) -> float:
        return float(self.areas().sum())

    def transformed(self, rotation=None, translation=None, scale=1.0) -> "TriangleMesh":
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        v = v * scale
        if translation is not None:
            v = v + np.asarray(translation)
        return TriangleMesh(v, self.triangles)

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles[:, ::-1])


# ---------------------------------------------------------------------------
# I/O


def load_mesh(path) -> TriangleMesh:
    """Read an ASCII OBJ or binary STL file.  Polygon faces are fan-split."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise MeshError(f"cannot read {path}: {exc}") from exc
    suffix = path.suffix.lower()
    if suffix == ".obj":
        mesh = _parse_obj(data.decode("utf-8", errors="replace"), path)
    elif suffix == ".stl":
        mesh = _parse_binary_stl(data, path)
    else:
        raise MeshError(f"unsupported mesh format: {path.suffix!r}")
    if mesh.is_empty():
        raise MeshError(f"{path}: mesh has no faces")
    return mesh


def _parse_obj(text: str, path) -> TriangleMesh:
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "v":
            try:
                verts.append((float(tok[1]), float(tok[2]), float(tok[3])))
            except (IndexError, ValueError) as exc:
                raise MeshError(f"{path}:{lineno}: bad vertex record") from exc
        elif tok[0] == "f":
            idx = []
            for item in tok[1:]:
                try:
                    i = int(item.split("/")[0])
                except ValueError as exc:
                    raise MeshError(f"{path}:{lineno}: bad face index {item!r}") from exc
                i = i - 1 if i > 0 else len(verts) + i
                if not 0 <= i < len(verts):
                    raise MeshError(f"{path}:{lineno}: face index {item} out of range")
                idx.append(i)
            if len(idx) < 3:
                raise MeshError(f"{path}:{lineno}: face with fewer than 3 vertices")
            tris.extend((idx[0], idx[j], idx[j + 1]) for j in range(1, len(idx) - 1))
    return TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


_STL_RECORD = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])


def _parse_binary_stl(data: bytes, path) -> TriangleMesh:
    if len(data) < 84:
        raise MeshError(f"{path}: truncated STL header")
    (count,) = struct.unpack_from("<I", data, 80)
    if len(data) < 84 + 50 * count:
        raise MeshError(f"{path}: STL declares {count} triangles but file is too short")
    rec = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    corners = rec["v"].astype(np.float64).reshape(-1, 3)
    # weld exactly coincident corners, numbering vertices by first appearance
    uniq, first, inverse = np.unique(corners, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return TriangleMesh(uniq[order], rank[inverse.reshape(-1)].reshape(-1, 3))


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def save_binary_stl(mesh: TriangleMesh, path) -> None:
    rec = np.zeros(mesh.n_triangles, dtype=_STL_RECORD)
    c = mesh.corners()
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    rec["normal"] = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    rec["v"] = c
    with open(path, "wb") as fh:
        fh.write(b"glidergen binary stl".ljust(80, b" "))
        fh.write(struct.pack("<I", mesh.n_triangles))
        fh.write(rec.tobytes())


# ---------------------------------------------------------------------------
# topology


def edge_use_counts(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    """Undirected edges (sorted vertex pairs) and how many triangles use each."""
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


def boundary_edge_count(mesh: TriangleMesh) -> int:
    if mesh.is_empty():
        return 0
    _, counts = edge_use_counts(mesh)
    return int(np.sum(counts == 1))


def is_watertight(mesh: TriangleMesh) -> bool:
    if mesh.is_empty():
        return False
    _, counts = edge_use_counts(mesh)
    return bool(np.all(counts == 2))


def _warn_if_open(mesh: TriangleMesh, what: str) -> None:
    n_open = boundary_edge_count(mesh)
    if n_open:
        warnings.warn(f"{what}: mesh has {n_open} boundary edges; result is best-effort",
                      WatertightWarning, stacklevel=3)


def connected_component_labels(mesh: TriangleMesh) -> np.ndarray:
    """Component label per triangle (triangles sharing a vertex are connected)."""
    t = mesh.triangles
    nv = mesh.n_vertices
    rows = np.concatenate([t[:, 0], t[:, 1]])
    cols = np.concatenate([t[:, 1], t[:, 2]])
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, nv))
    _, labels = connected_components(graph, directed=False)
    return labels[t[:, 0]]


def compact(mesh: TriangleMesh, keep: np.ndarray) -> TriangleMesh:
    """Keep the selected triangles and drop vertices they no longer reference."""
    tris = mesh.triangles[keep]
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[tris.ravel()] = True
    remap = np.cumsum(used) - 1
    return TriangleMesh(mesh.vertices[used], remap[tris])


def weld_vertices(mesh: TriangleMesh, tolerance: float) -> TriangleMesh:
    """Merge vertices closer than ``tolerance`` (transitively) into the lowest
    index of their cluster and drop triangles that collapse."""
    if mesh.n_vertices == 0 or tolerance <= 0:
        return mesh
    pairs = cKDTree(mesh.vertices).query_pairs(tolerance, output_type="ndarray")
    if len(pairs) == 0:
        return mesh
    n = mesh.n_vertices
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    first = np.full(labels.max() + 1, n)
    np.minimum.at(first, labels, np.arange(n))
    tris = first[labels][mesh.triangles]
    ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    return compact(TriangleMesh(mesh.vertices, tris), ok)


def clean_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Weld near-coincident vertices, drop degenerate triangles and every
    floating patch but the one with the largest surface area.

    Welding (tolerance 1e-6 of the bounding-box diagonal) collapses the
    needle triangles that would otherwise leave holes when removed.
    """
    if mesh.is_empty():
        raise MeshError("cannot clean an empty mesh")
    box = mesh.bounds()
    mesh = weld_vertices(mesh, WELD_RELATIVE * float(np.linalg.norm(box.extent)))
    if mesh.is_empty():
        raise MeshError("all triangles are degenerate")
    areas = mesh.areas()
    good = areas > DEGENERATE_AREA
    if not good.any():
        raise MeshError("all triangles are degenerate")
    mesh = compact(mesh, good)
    areas = areas[good]
    labels = connected_component_labels(mesh)
    per_component = np.bincount(labels, weights=areas)
    biggest = int(np.argmax(per_component))
    dropped = len(per_component) - 1
    if dropped:
        logger.debug("clean_mesh: dropping %d floating component(s)", dropped)
    return compact(mesh, labels == biggest)


# ---------------------------------------------------------------------------
# alignment


def _principal_frame(centered: np.ndarray, evals: np.ndarray, evecs: np.ndarray) -> np.ndarray:
    """Rotation whose rows are principal axes: largest -> x, smallest -> y,
    middle -> z (x forward, y up, z spanwise).  Near-tied axes are assigned to
    stay as close as possible to the input frame."""
    order = np.argsort(-evals, kind="stable")  # largest, middle, smallest
    target_rows = (0, 2, 1)
    tol = 1e-9 * max(evals.max(), 1e-300)
    best, best_score = None, -np.inf
    for perm in permutations(range(3)):
        # perm assigns eigen-index perm[r] to target slot r (largest..smallest)
        lam = evals[list(perm)]
        if not (lam[0] >= lam[1] - tol and lam[1] >= lam[2] - tol):
            continue
        R = np.zeros((3, 3))
        for slot, e_idx in enumerate(perm):
            R[target_rows[slot]] = evecs[:, e_idx]
        # sign: positive third moment, otherwise stay near identity
        proj = centered @ R.T
        skew = np.mean(proj ** 3, axis=0)
        scale3 = np.mean(np.abs(proj) ** 3, axis=0) + 1e-300
        ambiguous = np.abs(skew) <= 1e-9 * scale3
        for i in range(3):
            flip = (R[i, i] < 0) if ambiguous[i] else (skew[i] < 0)
            if flip:
                R[i] = -R[i]
        if np.linalg.det(R) < 0:
            candidates = [i for i in (1, 2, 0) if ambiguous[i]] or [1]
            R[candidates[0]] = -R[candidates[0]]
        score = np.trace(R)
        if perm == tuple(order):
            score += 1e-6  # prefer the plain sort order when nothing is tied
        if score > best_score:
            best, best_score = R, score
    return best


def align_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Center the bounding box at the origin, scale its longest edge to 1 m and
    rotate the principal axes of the vertex covariance onto the body frame.

    The returned mesh's ``meta["alignment"]`` records the transform and whether
    the covariance was degenerate (collinear/coplanar vertices), in which case
    only translation and scaling are applied.
    """
    if mesh.is_empty():
        raise MeshError("cannot align an empty mesh")
    v = mesh.vertices
    mean = v.mean(axis=0)
    centered = v - mean
    cov = centered.T @ centered / len(v)
    evals, evecs = np.linalg.eigh(cov)
    degenerate = evals[-1] <= 0 or evals[0] <= 1e-12 * evals[-1]
    if degenerate:
        R = np.eye(3)
    else:
        R = _principal_frame(centered, evals, evecs)
    rotated = centered @ R.T
    lo, hi = rotated.min(axis=0), rotated.max(axis=0)
    longest = float(np.max(hi - lo))
    if longest <= 0:
        raise MeshError("mesh has zero extent")
    center = 0.5 * (lo + hi)
    out = (rotated - center) / longest
    meta = {"alignment": {"rotation": R.tolist(), "mean": mean.tolist(), "center": center.tolist(),
                          "scale": 1.0 / longest, "degenerate": bool(degenerate)}}
    return TriangleMesh(out, mesh.triangles, meta)


# ---------------------------------------------------------------------------
# distance queries


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point on each triangle (a, b, c) to the matching point p.

    Voronoi-region classification; all arrays broadcast to (..., 3).
    """
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("...i,...i", ab, ap)
    d2 = np.einsum("...i,...i", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i", ab, bp)
    d4 = np.einsum("...i,...i", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i", ab, cp)
    d6 = np.einsum("...i,...i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[..., None] + ac * w[..., None]
        region_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        wbc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where(region_bc[..., None], b + (c - b) * wbc[..., None], out)
        region_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        wac = d2 / (d2 - d6)
        out = np.where(region_ac[..., None], a + ac * wac[..., None], out)
        region_c = (d6 >= 0) & (d5 <= d6)
        out = np.where(region_c[..., None], c, out)
        region_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        vab = d1 / (d1 - d3)
        out = np.where(region_ab[..., None], a + ab * vab[..., None], out)
        region_b = (d3 >= 0) & (d4 <= d3)
        out = np.where(region_b[..., None], b, out)
        region_a = (d1 <= 0) & (d2 <= 0)
        out = np.where(region_a[..., None], a, out)

    bad = ~np.all(np.isfinite(out), axis=-1)
    if np.any(bad):
        # zero-area triangles: fall back to the nearest of the three edges
        out = out.copy()
        cand = [_closest_on_segment(p[bad], s, e) for s, e in ((a[bad], b[bad]), (b[bad], c[bad]), (c[bad], a[bad]))]
        dist = np.stack([np.linalg.norm(q - p[bad], axis=-1) for q in cand])
        pick = np.argmin(dist, axis=0)
        out[bad] = np.choose(pick[:, None], cand)
    return out


def _closest_on_segment(p, a, b):
    ab = b - a
    L2 = np.einsum("...i,...i", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip(np.einsum("...i,...i", p - a, ab) / L2, 0.0, 1.0)
    t = np.where(L2 > 0, t, 0.0)
    return a + ab * t[..., None]


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    q = closest_point_on_triangles(p, a, b, c)
    return np.linalg.norm(np.asarray(p) - q, axis=-1)


class SurfaceIndex:
    """Triangle spatial index for exact nearest-surface distance queries.

    Candidates are gathered with a k-d tree over triangle centroids and pruned
    by the bound ``|p - centroid| - radius <= upper``, where ``upper`` is the
    exact distance to the triangle of the nearest centroid.  The minimum is then
    taken over exactly the same per-pair computation a brute-force scan would
    do, so results match the brute-force definition bit for bit.
    """

    def __init__(self, mesh: TriangleMesh):
        if mesh.is_empty():
            raise MeshError("cannot index an empty mesh")
        self.mesh = mesh
        self.corners = mesh.corners()
        self.centroids = self.corners.mean(axis=1)
        self.radii = np.linalg.norm(self.corners - self.centroids[:, None, :], axis=2).max(axis=1)
        self.rmax = float(self.radii.max())
        self.tree = cKDTree(self.centroids)

    def distances(self, points: np.ndarray, chunk: int = 2048) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(len(points))
        for s in range(0, len(points), chunk):
            out[s:s + chunk] = self._distances(points[s:s + chunk])
        return out

    def _distances(self, pts: np.ndarray) -> np.ndarray:
        C = self.corners
        _, near = self.tree.query(pts)
        upper = point_triangle_distance(pts, C[near, 0], C[near, 1], C[near, 2])
        slack = 1e-9 * (1.0 + upper)
        lists = self.tree.query_ball_point(pts, upper + self.rmax + slack, return_sorted=False)
        counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
        tri = np.fromiter((i for l in lists for i in l), dtype=np.int64, count=int(counts.sum()))
        owner = np.repeat(np.arange(len(pts)), counts)
        lower = np.linalg.norm(pts[owner] - self.centroids[tri], axis=1) - self.radii[tri]
        keep = lower <= upper[owner] + slack[owner]
        tri, owner = tri[keep], owner[keep]
        d = point_triangle_distance(pts[owner], C[tri, 0], C[tri, 1], C[tri, 2])
        result = upper.copy()
        if len(d):
            starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]])
            mins = np.minimum.reduceat(d, starts)
            result[owner[starts]] = np.minimum(result[owner[starts]], mins)
        return result


def surface_distances(mesh: TriangleMesh, points) -> np.ndarray:
    """Unsigned distance from each point to the closest point of the mesh."""
    return SurfaceIndex(mesh).distances(points)


def surface_distances_bruteforce(mesh: TriangleMesh, points) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    C = mesh.corners()
    out = np.empty(len(points))
    for i, p in enumerate(points):
        out[i] = point_triangle_distance(p, C[:, 0], C[:, 1], C[:, 2]).min()
    return out


def nearest_surface_distance(mesh: TriangleMesh, p) -> float:
    if mesh.is_empty():
        raise MeshError("distance to an empty mesh is undefined")
    return float(surface_distances(mesh, np.asarray(p, dtype=float).reshape(1, 3))[0])


# ---------------------------------------------------------------------------
# inside / outside


def _orthonormal_basis(d: np.ndarray) -> np.ndarray:
    helper = np.eye(3)[np.argmin(np.abs(d))]
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    w = np.cross(d, u)
    return np.stack([u, w])


def _ray_crossings(points: np.ndarray, corners: np.ndarray, d: np.ndarray):
    """Parity of ray crossings along ``d`` and a per-point near-degenerate flag."""
    n_pts = len(points)
    basis = _orthonormal_basis(d)
    P2 = points @ basis.T
    T2 = corners @ basis.T  # (T, 3, 2)
    lo = T2.min(axis=(0, 1))
    hi = T2.max(axis=(0, 1))
    nb = max(1, int(np.sqrt(len(corners) / 2.0)))
    cell = np.maximum((hi - lo) / nb, 1e-300)

    tlo = np.clip(((T2.min(axis=1) - lo) / cell).astype(np.int64), 0, nb - 1)
    thi = np.clip(((T2.max(axis=1) - lo) / cell).astype(np.int64), 0, nb - 1)
    # widen by one bucket so points on bucket seams still see their triangles
    tlo = np.maximum(tlo - 1, 0)
    thi = np.minimum(thi + 1, nb - 1)
    wx = thi[:, 0] - tlo[:, 0] + 1
    wy = thi[:, 1] - tlo[:, 1] + 1
    cnt = wx * wy
    tri_id = np.repeat(np.arange(len(corners)), cnt)
    local = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    bx = np.repeat(tlo[:, 0], cnt) + local % np.repeat(wx, cnt)
    by = np.repeat(tlo[:, 1], cnt) + local // np.repeat(wx, cnt)
    bucket = by * nb + bx
    order = np.argsort(bucket, kind="stable")
    bucket_sorted = bucket[order]
    tri_sorted = tri_id[order]
    start = np.searchsorted(bucket_sorted, np.arange(nb * nb + 1))

    pb = np.floor((P2 - lo) / cell).astype(np.int64)
    inside_grid = np.all((pb >= 0) & (pb < nb), axis=1)
    pb = np.clip(pb, 0, nb - 1)
    pbucket = pb[:, 1] * nb + pb[:, 0]
    n_c = np.where(inside_grid, start[pbucket + 1] - start[pbucket], 0)
    owner = np.repeat(np.arange(n_pts), n_c)
    off = np.arange(n_c.sum()) - np.repeat(np.cumsum(n_c) - n_c, n_c)
    tri = tri_sorted[np.repeat(start[pbucket], n_c) + off]

    v0 = corners[tri, 0]
    e1 = corners[tri, 1] - v0
    e2 = corners[tri, 2] - v0
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
    real = area2 > 2 * DEGENERATE_AREA
    parallel = real & (np.abs(det) <= 1e-12 * area2)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tvec = points[owner] - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = (qvec @ d) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
    bary = np.stack([u, v, 1.0 - u - v])
    ahead = t > 0
    ok = real & ~parallel & np.all(np.isfinite(bary), axis=0)
    hit = ok & ahead & np.all(bary > NEAR_HIT, axis=0)
    near = ok & ahead & np.all(bary >= -NEAR_HIT, axis=0) & np.any(bary <= NEAR_HIT, axis=0)
    # a parallel triangle only matters if the ray actually runs across it
    if np.any(parallel):
        par_idx = np.flatnonzero(parallel)
        near[par_idx] |= _point_in_triangle_2d(P2[owner[par_idx]], T2[tri[par_idx]])
    crossings = np.bincount(owner[hit], minlength=n_pts)
    degenerate = np.bincount(owner[near], minlength=n_pts) > 0
    return crossings % 2 == 1, degenerate


def _point_in_triangle_2d(p, tri):
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]

    def cross(o, x, y):
        return (x[:, 0] - o[:, 0]) * (y[:, 1] - o[:, 1]) - (x[:, 1] - o[:, 1]) * (y[:, 0] - o[:, 0])

    s1, s2, s3 = cross(a, b, p), cross(b, c, p), cross(c, a, p)
    return ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))


def points_inside(mesh: TriangleMesh, points, seed: int = 0) -> np.ndarray:
    """Ray-parity inside test for many points.

    Each point casts a ray in a random direction; points whose ray passes
    within 1e-9 (barycentric) of an edge or vertex are re-cast with a fresh
    direction, up to 16 times.
    """
    if mesh.is_empty():
        raise MeshError("inside test on an empty mesh")
    _warn_if_open(mesh, "points_inside")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    corners = mesh.corners()
    rng = np.random.default_rng(seed)
    result = np.zeros(len(points), dtype=bool)
    pending = np.arange(len(points))
    for attempt in range(MAX_RAY_RETRIES + 1):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        parity, degenerate = _ray_crossings(points[pending], corners, d)
        result[pending] = parity
        pending = pending[degenerate]
        if len(pending) == 0:
            break
    else:
        logger.warning("points_inside: %d point(s) still near-degenerate after %d retries",
                       len(pending), MAX_RAY_RETRIES)
    return result


def point_inside(mesh: TriangleMesh, p, seed: int = 0) -> bool:
    return bool(points_inside(mesh, np.asarray(p, dtype=float).reshape(1, 3), seed)[0])


# ---------------------------------------------------------------------------
# integral quantities


def _silhouette_area(xy: np.ndarray, resolution: int) -> float:
    """Area covered by the union of 2D triangles ``xy`` (T, 3, 2), measured by
    rasterizing cell centers on a resolution x resolution grid over the bounds."""
    lo = xy.min(axis=(0, 1))
    ext = xy.max(axis=(0, 1)) - lo
    if np.any(ext <= 0):
        return 0.0
    d = ext / resolution
    g = (xy - lo) / d - 0.5  # grid units: cell centers at integers
    a, b, c = g[:, 0], g[:, 1], g[:, 2]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    g = g[np.abs(area2) > 1e-12]
    if len(g) == 0:
        return 0.0
    tol = 1e-9
    r0 = np.clip(np.ceil(g[:, :, 1].min(axis=1) - tol), 0, resolution - 1).astype(np.int64)
    r1 = np.clip(np.floor(g[:, :, 1].max(axis=1) + tol), -1, resolution - 1).astype(np.int64)
    cnt = np.maximum(r1 - r0 + 1, 0)
    tri = np.repeat(np.arange(len(g)), cnt)
    row = np.repeat(r0, cnt) + np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    y = row.astype(float)
    xl = np.full(len(row), np.inf)
    xr = np.full(len(row), -np.inf)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        pa, pb = g[tri, i], g[tri, j]
        ylo = np.minimum(pa[:, 1], pb[:, 1])
        yhi = np.maximum(pa[:, 1], pb[:, 1])
        span = (yhi - ylo) > 0
        valid = span & (y >= ylo - tol) & (y <= yhi + tol)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.clip((y - pa[:, 1]) / (pb[:, 1] - pa[:, 1]), 0.0, 1.0)
        x = pa[:, 0] + s * (pb[:, 0] - pa[:, 0])
        xl = np.where(valid, np.minimum(xl, x), xl)
        xr = np.where(valid, np.maximum(xr, x), xr)
    ok = np.isfinite(xl)
    c0 = np.clip(np.ceil(xl[ok] - tol), 0, resolution).astype(np.int64)
    c1 = np.clip(np.floor(xr[ok] + tol), -1, resolution - 1).astype(np.int64)
    row = row[ok]
    span = c1 >= c0
    row, c0, c1 = row[span], c0[span], c1[span]
    width = resolution + 1
    diff = np.bincount(row * width + c0, minlength=resolution * width)
    diff -= np.bincount(row * width + c1 + 1, minlength=resolution * width)
    covered = np.cumsum(diff.reshape(resolution, width), axis=1)[:, :resolution] > 0
    return float(covered.sum() * d[0] * d[1])


def projection_areas(mesh: TriangleMesh, resolution: int = 256) -> tuple[float, float]:
    """(forward, top) silhouette areas of an aligned mesh.

    Forward projects along x onto the y-z plane, top projects along y onto the
    x-z plane.
    """
    if mesh.is_empty():
        raise MeshError("projection of an empty mesh")
    c = mesh.corners()
    forward = _silhouette_area(c[:, :, [1, 2]], resolution)
    top = _silhouette_area(c[:, :, [0, 2]], resolution)
    return forward, top


def enclosed_volume(mesh: TriangleMesh) -> float:
    """Volume by summing signed tetrahedra against the centroid."""
    if mesh.is_empty():
        return 0.0
    _warn_if_open(mesh, "enclosed_volume")
    c = mesh.corners() - mesh.vertices.mean(axis=0)
    signed = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0
    return float(abs(signed))


# ---------------------------------------------------------------------------
# primitives


def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with outward-facing triangles."""
    h = 0.5 * np.asarray(size, dtype=float)
    corners = np.array([[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)], dtype=float)
    v = corners * h + np.asarray(center, dtype=float)
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = [t for q in quads for t in ((q[0], q[1], q[2]), (q[0], q[2], q[3]))]
    return TriangleMesh(v, tris)


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere; vertices lie exactly on the sphere (up to rounding)."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = np.array(v, dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(f, dtype=np.int64)
    for _ in range(subdivisions):
        edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        key = np.sort(edges, axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        m = inv.reshape(3, -1).T + len(verts)
        verts = np.concatenate([verts, mids])
        a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
        ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
        faces = np.concatenate([np.stack(s, axis=1) for s in
                                ((a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca))])
    return TriangleMesh(verts * radius + np.asarray(center, dtype=float), faces)
