"""Level sets, cut-cell classification and subcell quadrature.

Convention: a vertex with phi < 0 lies in subdomain 1, otherwise in
subdomain 2.  On a cut triangle the vertex alone on its side is ``A1`` and
``A1, A2, A3`` keep the triangle's counter-clockwise order.  The interface
crosses ``A1A2`` at ``M`` and ``A1A3`` at ``N``; the triangular part
``A1 M N`` is ``T^tri`` and the quadrilateral part is split into two
triangles along ``A3M`` (when ``|A2M| <= |A3N|``) or ``A2N``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import Mesh, refine
from .quadrature import map_segments, map_triangles

IN1, IN2, CUT = 1, 2, 3
SNAP = 1e-12


class GeometryError(ValueError):
    """The interface is not resolved by the mesh (a cell or edge is cut twice)."""

    def __init__(self, msg, triangles=()):
        super().__init__(msg)
        self.triangles = np.asarray(triangles, dtype=np.int64)


@dataclass(frozen=True)
class LevelSet:
    name: str
    phi: Callable
    grad: Callable
    params: dict

    def __call__(self, x, y):
        return self.phi(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def line_levelset(nx=1.0, ny=0.0, c=0.5) -> LevelSet:
    """phi = nx*x + ny*y - c."""
    return LevelSet(
        "line",
        lambda x, y: nx * x + ny * y - c,
        lambda x, y: np.stack(np.broadcast_arrays(nx + 0 * x, ny + 0 * y), axis=-1),
        {"nx": nx, "ny": ny, "c": c},
    )


def circle_levelset(radius=1.0, cx=0.0, cy=0.0) -> LevelSet:
    def phi(x, y):
        return np.hypot(x - cx, y - cy) - radius

    def grad(x, y):
        r = np.maximum(np.hypot(x - cx, y - cy), 1e-300)
        return np.stack([(x - cx) / r, (y - cy) / r], axis=-1)

    return LevelSet("circle", phi, grad, {"radius": radius, "cx": cx, "cy": cy})


def ellipse_levelset(a=1.0, b=1.0) -> LevelSet:
    """phi = sqrt(x^2/a^2 + y^2/b^2) - 1."""

    def phi(x, y):
        return np.sqrt(x * x / a**2 + y * y / b**2) - 1.0

    def grad(x, y):
        r = np.maximum(np.sqrt(x * x / a**2 + y * y / b**2), 1e-300)
        return np.stack([x / (a * a * r), y / (b * b * r)], axis=-1)

    return LevelSet("ellipse", phi, grad, {"a": a, "b": b})


def sinusoidal_levelset(shift=0.2) -> LevelSet:
    tp = 2.0 * np.pi

    def phi(x, y):
        return np.sin(tp * x) * np.cos(tp * y) - shift

    def grad(x, y):
        return np.stack([tp * np.cos(tp * x) * np.cos(tp * y), -tp * np.sin(tp * x) * np.sin(tp * y)], axis=-1)

    return LevelSet("sinusoidal", phi, grad, {"shift": shift})


LEVELSETS = {
    "line": line_levelset,
    "circle": circle_levelset,
    "ellipse": ellipse_levelset,
    "sinusoidal": sinusoidal_levelset,
}


def make_levelset(name: str, **params) -> LevelSet:
    try:
        return LEVELSETS[name](**params)
    except KeyError:
        raise ValueError(f"unknown level set {name!r}") from None


@dataclass(eq=False)
class CutTopology:
    mesh: Mesh
    phi: np.ndarray  # snapped vertex values
    vert_side: np.ndarray  # 1 or 2
    tri_class: np.ndarray  # IN1, IN2 or CUT
    cut_tris: np.ndarray  # triangle indices of the cut cells, ascending
    cut_index: np.ndarray  # triangle -> position in cut_tris, or -1
    perm: np.ndarray  # (nc, 3) local indices of A1, A2, A3
    A: np.ndarray  # (nc, 3, 2) coordinates of A1, A2, A3
    M: np.ndarray
    N: np.ndarray
    lone_side: np.ndarray  # side of A1, i.e. of T^tri
    split_a3m: np.ndarray  # True if the quadrilateral is split along A3M
    sub_tris: np.ndarray  # (nc, 3, 3, 2): T^tri, T^quad_1, T^quad_2 (ccw)
    sub_side: np.ndarray  # (nc, 3)
    gamma_len: np.ndarray
    n_gamma: np.ndarray  # unit normal, subdomain 1 -> 2
    x_gamma: np.ndarray  # midpoint of Gamma_T
    h_min: np.ndarray
    edge_cut: np.ndarray  # (ne,) bool
    edge_point: np.ndarray  # (ne, 2) cut point, nan if not cut
    edge_part_len: np.ndarray  # (ne, 2) |F^1|, |F^2|
    tri_in: np.ndarray  # (2, nt) T_h^i
    edge_in: np.ndarray  # (2, ne) F_h^i
    vert_in: np.ndarray  # (2, nv) vertices of Omega_h^i
    ghost: np.ndarray  # (2, ne) F_g^i

    @property
    def n_cut(self) -> int:
        return len(self.cut_tris)

    @property
    def t_gamma(self) -> np.ndarray:
        """Clockwise rotation of n_gamma."""
        n = self.n_gamma
        return np.stack([n[:, 1], -n[:, 0]], axis=1)

    def part_areas(self) -> np.ndarray:
        """|T^1|, |T^2| per triangle, shape (nt, 2)."""
        out = np.zeros((self.mesh.n_triangles, 2))
        pure = self.tri_class != CUT
        out[pure & (self.tri_class == IN1), 0] = self.mesh.areas[pure & (self.tri_class == IN1)]
        out[pure & (self.tri_class == IN2), 1] = self.mesh.areas[pure & (self.tri_class == IN2)]
        if self.n_cut:
            a = _areas(self.sub_tris)
            for i in (1, 2):
                out[self.cut_tris, i - 1] = (a * (self.sub_side == i)).sum(axis=1)
        return out

    def edge_segments(self, e, side):
        """Endpoints (a, b) of F^side for edges ``e`` (empty parts have a == b)."""
        mesh = self.mesh
        e = np.asarray(e)
        p = mesh.vertices[mesh.edges[e, 0]]
        q = mesh.vertices[mesh.edges[e, 1]]
        sp = self.vert_side[mesh.edges[e, 0]]
        sq = self.vert_side[mesh.edges[e, 1]]
        cp = np.where(np.isnan(self.edge_point[e]), p, self.edge_point[e])
        a = np.where((sp == side)[:, None], p, np.where((sq == side)[:, None], cp, p))
        b = np.where((sp == side)[:, None], np.where((sq == side)[:, None], q, cp), np.where((sq == side)[:, None], q, p))
        return a, b


def _areas(tri):
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    return 0.5 * (e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])


def _snap(mesh: Mesh, phi: np.ndarray) -> np.ndarray:
    hv = np.zeros(mesh.n_vertices)
    np.maximum.at(hv, mesh.triangles.ravel(), np.repeat(mesh.diameters, 3))
    tol = SNAP * hv
    small = np.abs(phi) < tol
    return np.where(small, np.where(phi < 0, -tol, tol), phi)


def _double_cuts(mesh: Mesh, levelset: LevelSet, phi: np.ndarray) -> np.ndarray:
    """Triangles whose edges or interior the level set crosses more than once."""
    bad = np.zeros(mesh.n_triangles, dtype=bool)
    p = mesh.vertices[mesh.edges[:, 0]]
    q = mesh.vertices[mesh.edges[:, 1]]
    prev = phi[mesh.edges[:, 0]] < 0
    flips = np.zeros(mesh.n_edges, dtype=np.int64)
    for s in (0.2, 0.4, 0.6, 0.8):
        x = p + s * (q - p)
        cur = levelset(x[:, 0], x[:, 1]) < 0
        flips += cur != prev
        prev = cur
    flips += prev != (phi[mesh.edges[:, 1]] < 0)
    bad_edges = flips > 1
    if bad_edges.any():
        et = mesh.edge_tris[bad_edges].ravel()
        bad[et[et >= 0]] = True
    # a closed piece of interface hidden inside a cell
    c = mesh.centroids
    sc = levelset(c[:, 0], c[:, 1]) < 0
    sv = phi[mesh.triangles] < 0
    bad |= (sv == sv[:, :1]).all(axis=1) & (sc != sv[:, 0])
    return np.flatnonzero(bad)


def _multi_run_nodes(mesh: Mesh, side: np.ndarray) -> np.ndarray:
    """Triangles around vertices whose neighbours change side more than twice."""
    t = mesh.triangles
    trans = np.zeros(mesh.n_vertices, dtype=np.int64)
    for j in range(3):
        a = side[t[:, (j + 1) % 3]]
        b = side[t[:, (j + 2) % 3]]
        np.add.at(trans, t[:, j], (a != b).astype(np.int64))
    nodes = trans > 2
    return np.flatnonzero(nodes[t].any(axis=1))


def classify(mesh: Mesh, levelset: LevelSet) -> CutTopology:
    """Classify cells and edges of ``mesh`` against the zero level of ``levelset``."""
    phi = _snap(mesh, levelset(mesh.vertices[:, 0], mesh.vertices[:, 1]))
    bad = _double_cuts(mesh, levelset, phi)
    if len(bad):
        raise GeometryError(
            f"{len(bad)} triangle(s) are crossed more than once by the interface; refine the initial mesh",
            bad,
        )
    side = np.where(phi < 0, 1, 2)
    tside = side[mesh.triangles]
    nneg = (tside == 1).sum(axis=1)
    tri_class = np.where(nneg == 3, IN1, np.where(nneg == 0, IN2, CUT))
    cut_tris = np.flatnonzero(tri_class == CUT)
    cut_index = np.full(mesh.n_triangles, -1, dtype=np.int64)
    cut_index[cut_tris] = np.arange(len(cut_tris))

    # cut points are computed per edge so neighbours share them
    ev = mesh.edges
    fp, fq = phi[ev[:, 0]], phi[ev[:, 1]]
    edge_cut = side[ev[:, 0]] != side[ev[:, 1]]
    s = np.where(edge_cut, fp / np.where(edge_cut, fp - fq, 1.0), np.nan)
    P = mesh.vertices[ev[:, 0]]
    Q = mesh.vertices[ev[:, 1]]
    edge_point = P + s[:, None] * (Q - P)
    part = np.zeros((mesh.n_edges, 2))
    for i in (1, 2):
        both = (side[ev[:, 0]] == i) & (side[ev[:, 1]] == i)
        part[both, i - 1] = mesh.edge_length[both]
        first = edge_cut & (side[ev[:, 0]] == i)
        part[first, i - 1] = (s * mesh.edge_length)[first]
        second = edge_cut & (side[ev[:, 1]] == i)
        part[second, i - 1] = ((1 - s) * mesh.edge_length)[second]

    nc = len(cut_tris)
    ts = tside[cut_tris]
    lone_loc = np.where((ts == 1).sum(axis=1) == 1, np.argmax(ts == 1, axis=1), np.argmax(ts == 2, axis=1))
    perm = np.stack([lone_loc, (lone_loc + 1) % 3, (lone_loc + 2) % 3], axis=1)
    verts = mesh.triangles[cut_tris[:, None], perm]
    A = mesh.vertices[verts]
    # A1A2 is the local edge opposite A3, A1A3 the one opposite A2
    e12 = mesh.tri_edges[cut_tris, perm[:, 2]]
    e13 = mesh.tri_edges[cut_tris, perm[:, 1]]
    M = edge_point[e12]
    N = edge_point[e13]
    lone_side = side[verts[:, 0]]

    a2m = np.linalg.norm(A[:, 1] - M, axis=1)
    a3n = np.linalg.norm(A[:, 2] - N, axis=1)
    split_a3m = a2m <= a3n
    sub = np.empty((nc, 3, 3, 2))
    sub[:, 0] = np.stack([A[:, 0], M, N], axis=1)
    sub[:, 1] = np.where(
        split_a3m[:, None, None],
        np.stack([M, A[:, 1], A[:, 2]], axis=1),
        np.stack([N, A[:, 1], A[:, 2]], axis=1),
    )
    sub[:, 2] = np.where(
        split_a3m[:, None, None],
        np.stack([M, A[:, 2], N], axis=1),
        np.stack([N, M, A[:, 1]], axis=1),
    )
    sub_side = np.stack([lone_side, 3 - lone_side, 3 - lone_side], axis=1)

    d = N - M
    gamma_len = np.linalg.norm(d, axis=1)
    nrm = np.stack([d[:, 1], -d[:, 0]], axis=1) / np.where(gamma_len > 0, gamma_len, 1.0)[:, None]
    # point away from A1, then flip where A1 is in subdomain 2
    away = np.einsum("ij,ij->i", M - A[:, 0], nrm) > 0
    nrm = np.where(away[:, None], nrm, -nrm)
    nrm = np.where((lone_side == 1)[:, None], nrm, -nrm)
    x_gamma = 0.5 * (M + N)
    h_min = np.minimum.reduce(
        [np.linalg.norm(M - A[:, 0], axis=1), a2m, np.linalg.norm(N - A[:, 0], axis=1), a3n]
    )

    tri_in = np.stack([(tri_class == IN1) | (tri_class == CUT), (tri_class == IN2) | (tri_class == CUT)])
    edge_in = np.stack([(side[ev] == i).any(axis=1) for i in (1, 2)])
    vert_in = np.zeros((2, mesh.n_vertices), dtype=bool)
    for i in (0, 1):
        vert_in[i, mesh.triangles[tri_in[i]].ravel()] = True
    et = mesh.edge_tris
    touches = (tri_class[et[:, 0]] == CUT) | ((et[:, 1] >= 0) & (tri_class[np.maximum(et[:, 1], 0)] == CUT))
    interior = et[:, 1] >= 0
    ghost = edge_in & (touches & interior)[None, :]

    return CutTopology(
        mesh=mesh, phi=phi, vert_side=side, tri_class=tri_class, cut_tris=cut_tris, cut_index=cut_index,
        perm=perm, A=A, M=M, N=N, lone_side=lone_side, split_a3m=split_a3m, sub_tris=sub, sub_side=sub_side,
        gamma_len=gamma_len, n_gamma=nrm, x_gamma=x_gamma, h_min=h_min, edge_cut=edge_cut,
        edge_point=np.where(edge_cut[:, None], edge_point, np.nan), edge_part_len=part,
        tri_in=tri_in, edge_in=edge_in, vert_in=vert_in, ghost=ghost,
    )


def resolve_geometry(mesh: Mesh, levelset: LevelSet, max_rounds: int = 12, multi_run: bool = True):
    """Refine ``mesh`` until ``classify`` succeeds; returns (mesh, cut)."""
    for _ in range(max_rounds):
        try:
            cut = classify(mesh, levelset)
        except GeometryError as err:
            mesh = refine(mesh, err.triangles)
            continue
        if multi_run:
            bad = _multi_run_nodes(mesh, cut.vert_side)
            if len(bad):
                mesh = refine(mesh, bad)
                continue
        return mesh, cut
    raise GeometryError(f"interface still unresolved after {max_rounds} refinement rounds")


@dataclass(eq=False)
class SubcellQuadrature:
    order: int
    sub_pts: np.ndarray  # (nc, 3, nq, 2)
    sub_wts: np.ndarray  # (nc, 3, nq)
    gamma_pts: np.ndarray  # (nc, ng, 2)
    gamma_wts: np.ndarray  # (nc, ng)

    def side_weights(self, cut: CutTopology, side: int) -> np.ndarray:
        return self.sub_wts * (cut.sub_side == side)[:, :, None]


def build_quadrature(cut: CutTopology, order: int = 4) -> SubcellQuadrature:
    if order < 2:
        raise ValueError(f"unsupported quadrature order {order}")
    sp, sw = map_triangles(cut.sub_tris, order)
    gp, gw = map_segments(cut.M, cut.N, order)
    return SubcellQuadrature(order, sp, sw, gp, gw)
