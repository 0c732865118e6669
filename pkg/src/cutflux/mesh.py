"""Conforming triangulations, newest-vertex bisection and patch tables.

Triangles are stored counter-clockwise with the refinement edge opposite
local vertex 0, i.e. ``triangles[t] = (newest, a, b)`` and the edge
``(a, b)`` is the one bisected next.  Local edge ``j`` of a triangle is the
edge opposite local vertex ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np
import scipy.sparse as sps


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    """A polygon given as a union of closed axis-aligned boxes."""

    boxes: tuple[tuple[float, float, float, float], ...]
    name: str = "domain"

    def __post_init__(self):
        if not self.boxes:
            raise MeshError("domain has no boxes")
        for x0, x1, y0, y1 in self.boxes:
            if not (x1 > x0 and y1 > y0):
                raise MeshError(f"degenerate box {(x0, x1, y0, y1)}")

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for x0, x1, y0, y1 in self.boxes:
            inside |= (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        return inside


def square(x0=0.0, x1=1.0, y0=0.0, y1=1.0) -> Domain:
    return Domain(((x0, x1, y0, y1),), name="square")


def lshape(r=5.0) -> Domain:
    """``[-r, r]^2`` with the quadrant ``[0, r] x [-r, 0]`` removed."""
    return Domain(((-r, r, 0.0, r), (-r, 0.0, -r, 0.0)), name="lshape")


@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    level: np.ndarray | None = None
    parent: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3 or len(self.triangles) == 0:
            raise MeshError("empty or malformed triangle array")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle vertex index out of range")
        if self.level is None:
            self.level = np.zeros(len(self.triangles), dtype=np.int64)
        if self.parent is None:
            self.parent = np.full(len(self.triangles), -1, dtype=np.int64)
        self.vertices.flags.writeable = False
        self.triangles.flags.writeable = False
        bad = np.flatnonzero(self.signed_areas() <= 0)
        if len(bad):
            raise MeshError(f"{len(bad)} triangle(s) are degenerate or clockwise, first {bad[0]}")
        self._build_edges()

    # -- topology -------------------------------------------------------
    def _build_edges(self):
        t = self.triangles
        nt = len(t)
        # local edge j opposite local vertex j
        a = t[:, [1, 2, 0]]
        b = t[:, [2, 0, 1]]
        lo = np.minimum(a, b).ravel()
        hi = np.maximum(a, b).ravel()
        keys = lo * len(self.vertices) + hi
        uniq, inv = np.unique(keys, return_inverse=True)
        ne = len(uniq)
        self.edges = np.stack([uniq // len(self.vertices), uniq % len(self.vertices)], axis=1)
        self.tri_edges = inv.reshape(nt, 3)
        counts = np.bincount(inv, minlength=ne)
        if counts.max() > 2:
            raise MeshError("non-manifold edge (shared by more than two triangles)")
        # T_F^- is the lower triangle index
        owner = np.repeat(np.arange(nt), 3)
        order = np.lexsort((owner, inv))
        edge_tris = np.full((ne, 2), -1, dtype=np.int64)
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv[order][1:] != inv[order][:-1]
        edge_tris[inv[order][first], 0] = owner[order][first]
        edge_tris[inv[order][~first], 1] = owner[order][~first]
        self.edge_tris = edge_tris
        self.boundary_edges = edge_tris[:, 1] < 0

        # unit normal: outward of T_F^- on F
        tm = edge_tris[:, 0]
        loc = np.argmax(self.tri_edges[tm] == np.arange(ne)[:, None], axis=1)
        p = t[tm, (loc + 1) % 3]
        q = t[tm, (loc + 2) % 3]
        d = self.vertices[q] - self.vertices[p]
        self.edge_length = np.hypot(d[:, 0], d[:, 1])
        self.edge_normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.edge_length[:, None]
        # sign of n_F relative to the outward normal of each triangle
        self.tri_edge_sign = np.where(
            edge_tris[self.tri_edges, 0] == np.arange(nt)[:, None], 1.0, -1.0
        )
        bverts = np.zeros(len(self.vertices), dtype=bool)
        bverts[self.edges[self.boundary_edges].ravel()] = True
        self.boundary_vertices = bverts

    # -- geometry -------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def tri_coords(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def signed_areas(self) -> np.ndarray:
        p = self.tri_coords()
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            self._cache["areas"] = self.signed_areas()
        return self._cache["areas"]

    @property
    def diameters(self) -> np.ndarray:
        """h_T, the longest edge of each triangle."""
        if "h" not in self._cache:
            self._cache["h"] = self.edge_length[self.tri_edges].max(axis=1)
        return self._cache["h"]

    @property
    def centroids(self) -> np.ndarray:
        return self.tri_coords().mean(axis=1)

    def basis_gradients(self) -> np.ndarray:
        """Gradients of the three P1 barycentric functions, shape (nt, 3, 2)."""
        if "grads" not in self._cache:
            p = self.tri_coords()
            area2 = 2.0 * self.areas
            g = np.empty((self.n_triangles, 3, 2))
            for j in range(3):
                a = p[:, (j + 1) % 3]
                b = p[:, (j + 2) % 3]
                # inward normal of the opposite edge, scaled by |F_j| / 2|T|
                g[:, j, 0] = -(b[:, 1] - a[:, 1]) / area2
                g[:, j, 1] = (b[:, 0] - a[:, 0]) / area2
            self._cache["grads"] = g
        return self._cache["grads"]

    def min_angles(self) -> np.ndarray:
        p = self.tri_coords()
        out = np.full(self.n_triangles, np.pi)
        for j in range(3):
            u = p[:, (j + 1) % 3] - p[:, j]
            v = p[:, (j + 2) % 3] - p[:, j]
            c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            out = np.minimum(out, np.arccos(np.clip(c, -1.0, 1.0)))
        return out

    def find_triangle(self, x, y) -> int:
        """Index of a triangle containing the point (linear scan)."""
        p = self.tri_coords()
        lam = barycentric(p, np.array([x, y]))
        ok = np.flatnonzero((lam >= -1e-12).all(axis=1))
        if len(ok) == 0:
            raise MeshError(f"point {(x, y)} outside the mesh")
        return int(ok[0])

    def audit(self) -> dict:
        """Conformity and orientation checks; returns a dict of findings."""
        counts = np.bincount(self.tri_edges.ravel(), minlength=self.n_edges)
        # hanging node: a vertex lying strictly inside some edge
        mids = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        keys = {tuple(np.round(v, 12)) for v in self.vertices}
        hanging = sum(tuple(np.round(m, 12)) in keys for m in mids)
        nb = int(self.boundary_edges.sum())
        boundary_ok = True
        if nb:
            # boundary edges must form closed loops: every boundary vertex has even degree
            deg = np.bincount(self.edges[self.boundary_edges].ravel(), minlength=self.n_vertices)
            boundary_ok = bool(np.all(deg % 2 == 0))
        return {
            "max_edge_multiplicity": int(counts.max()),
            "hanging_nodes": int(hanging),
            "min_signed_area": float(self.signed_areas().min()),
            "boundary_closed": boundary_ok,
        }


def barycentric(tri: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of point(s) ``x`` w.r.t. triangle(s) ``tri``.

    ``tri`` has shape (..., 3, 2) and ``x`` broadcasts against (..., 2).
    """
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    det = (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    l1 = ((x[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (x[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])) / det
    l2 = ((b[..., 0] - a[..., 0]) * (x[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (x[..., 0] - a[..., 0])) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def generate_mesh(domain: Domain, target_h: float) -> Mesh:
    """Structured mesh of a union of boxes with every h_T <= target_h.

    Each grid cell is split along its SW-NE diagonal, which is taken as the
    initial refinement edge.
    """
    if not target_h > 0:
        raise MeshError("target_h must be positive")
    xs = sorted({v for b in domain.boxes for v in b[:2]})
    ys = sorted({v for b in domain.boxes for v in b[2:]})

    def breaks(coords, step):
        pts = [coords[0]]
        for lo, hi in zip(coords[:-1], coords[1:]):
            n = max(1, ceil((hi - lo) / step - 1e-9))
            pts.extend(lo + (hi - lo) * np.arange(1, n + 1) / n)
        return np.array(pts)

    # square-ish cells: diagonal = sqrt(dx^2 + dy^2) <= target_h
    step = target_h / np.sqrt(2.0)
    gx = breaks(xs, step)
    gy = breaks(ys, step)
    nx, ny = len(gx), len(gy)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    ij = np.arange(nx * ny).reshape(nx, ny)

    cx = 0.5 * (gx[:-1] + gx[1:])
    cy = 0.5 * (gy[:-1] + gy[1:])
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    keep = domain.contains(CX, CY)
    I, J = np.nonzero(keep)
    sw, se, nw, ne = ij[I, J], ij[I + 1, J], ij[I, J + 1], ij[I + 1, J + 1]
    tris = np.concatenate([np.stack([se, ne, sw], 1), np.stack([nw, sw, ne], 1)])
    used = np.unique(tris)
    remap = np.full(nx * ny, -1)
    remap[used] = np.arange(len(used))
    verts = np.stack([X.ravel(), Y.ravel()], 1)[used]
    mesh = Mesh(verts, remap[tris])
    diag = mesh.edge_length[mesh.tri_edges]
    if not np.allclose(diag[:, 0], diag.max(axis=1)):
        raise MeshError("initial refinement edge is not the longest edge")
    return mesh


def refine(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of ``marked`` triangles with conforming closure.

    Every marked triangle is bisected at least once.  The returned mesh has
    ``parent`` pointing into ``mesh``'s triangle indices.
    """
    marked = np.asarray(marked, dtype=np.int64).ravel()
    if mesh.n_triangles == 0:
        raise MeshError("empty mesh")
    if len(marked) and (marked.min() < 0 or marked.max() >= mesh.n_triangles):
        raise MeshError("marked triangle index out of range")
    if len(marked) == 0:
        return Mesh(mesh.vertices.copy(), mesh.triangles.copy(), mesh.level.copy(), np.arange(mesh.n_triangles))

    ref_edge = mesh.tri_edges[:, 0]
    emark = np.zeros(mesh.n_edges, dtype=bool)
    emark[ref_edge[marked]] = True
    while True:
        need = emark[mesh.tri_edges].any(axis=1) & ~emark[ref_edge]
        if not need.any():
            break
        emark[ref_edge[need]] = True

    nv = mesh.n_vertices
    medges = np.flatnonzero(emark)
    mid_index = np.full(mesh.n_edges, -1, dtype=np.int64)
    mid_index[medges] = nv + np.arange(len(medges))
    new_verts = 0.5 * (mesh.vertices[mesh.edges[medges, 0]] + mesh.vertices[mesh.edges[medges, 1]])
    verts = np.concatenate([mesh.vertices, new_verts])

    # midpoint lookup by vertex pair
    key_of = {}
    for e, m in zip(medges, mid_index[medges]):
        a, b = mesh.edges[e]
        key_of[(int(a), int(b))] = int(m)

    def mid(a, b):
        return key_of.get((a, b) if a < b else (b, a), -1)

    out_t, out_parent, out_level = [], [], []
    for t in range(mesh.n_triangles):
        stack = [(tuple(int(v) for v in mesh.triangles[t]), int(mesh.level[t]))]
        while stack:
            (p0, p1, p2), lev = stack.pop()
            m = mid(p1, p2)
            if m < 0:
                out_t.append((p0, p1, p2))
                out_parent.append(t)
                out_level.append(lev)
                continue
            stack.append(((m, p2, p0), lev + 1))
            stack.append(((m, p0, p1), lev + 1))
    return Mesh(verts, np.array(out_t), np.array(out_level), np.array(out_parent))


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = refine(mesh, np.arange(mesh.n_triangles))
    return mesh


@dataclass
class PatchTables:
    """Vertex stars and element/edge patches as boolean CSR incidence."""

    star: sps.csr_matrix  # (nv, nt): T in omega_N
    tri_patch: sps.csr_matrix  # (nt, nt): T' in Delta_T
    edge_patch: sps.csr_matrix  # (ne, nt): T' in Delta_F

    def star_of(self, n: int) -> np.ndarray:
        return self.star[n].indices

    def delta_T(self, t: int) -> np.ndarray:
        return np.sort(self.tri_patch[t].indices)

    def delta_F(self, e: int) -> np.ndarray:
        return np.sort(self.edge_patch[e].indices)


def build_patches(mesh: Mesh) -> PatchTables:
    nt, nv = mesh.n_triangles, mesh.n_vertices
    rows = mesh.triangles.ravel()
    cols = np.repeat(np.arange(nt), 3)
    star = sps.csr_matrix((np.ones(3 * nt, dtype=bool), (rows, cols)), shape=(nv, nt))
    tv = star.T.tocsr().astype(np.int32)
    tri_patch = (tv @ tv.T).astype(bool).tocsr()
    et = mesh.edge_tris
    has = et >= 0
    er = np.repeat(np.arange(mesh.n_edges), 2)[has.ravel()]
    ec = et.ravel()[has.ravel()]
    e2t = sps.csr_matrix((np.ones(len(er), dtype=np.int32), (er, ec)), shape=(mesh.n_edges, nt))
    edge_patch = (e2t @ tri_patch.astype(np.int32)).astype(bool).tocsr()
    for m in (star, tri_patch, edge_patch):
        m.sort_indices()
    return PatchTables(star, tri_patch, edge_patch)
