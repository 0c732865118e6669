"""CutFEM assembly: doubled P1 spaces, Nitsche coupling and ghost penalty.

Local contributions are kept in *slot space*: slot ``(i, T, j)`` is the P1
function of subdomain ``i`` equal to the barycentric coordinate ``j`` on
``T`` and zero elsewhere.  The global matrix is ``S^T A_slot S`` with ``S``
the slot-to-dof incidence; the same slot blocks evaluate ``a_h(u_h, v)`` for
the broken test functions used by the multiplier problem.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps

from .cut import CUT, CutTopology, SubcellQuadrature
from .linalg import SolveInfo, SolverError, solve_spd
from .mesh import Mesh, barycentric
from .quadrature import graded_triangle_rule, map_segments, map_triangles


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class Coefficients:
    k1: float
    k2: float

    def __post_init__(self):
        for name in ("k1", "k2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")

    @property
    def omega1(self) -> float:
        return self.k2 / (self.k1 + self.k2)

    @property
    def omega2(self) -> float:
        return self.k1 / (self.k1 + self.k2)

    @property
    def k_gamma(self) -> float:
        return self.k1 * self.k2 / (self.k1 + self.k2)

    def k(self, side):
        return np.where(np.asarray(side) == 1, self.k1, self.k2)


@dataclass
class ProblemData:
    """Source, boundary data and parameters.

    ``f(x, y, side)`` and ``dirichlet(x, y, side)`` are vectorized; the
    Dirichlet trace of field ``i`` is taken from the (extended) branch
    ``side = i``.
    """

    coeffs: Coefficients
    f: Callable
    dirichlet: Callable
    gamma: float = 10.0
    gamma_g: float = 0.1
    singular_points: tuple = ()
    order: int = 4

    def __post_init__(self):
        if not self.gamma > 0:
            raise AssemblyError(f"gamma must be positive, got {self.gamma}")
        if not self.gamma_g > 0:
            raise AssemblyError(f"gamma_g must be positive, got {self.gamma_g}")


@dataclass(eq=False)
class DofMap:
    dof: np.ndarray  # (2, nv), -1 outside Omega_h^i
    n1: int
    n: int
    dirichlet: np.ndarray  # (n,) bool

    def slots(self, mesh: Mesh) -> np.ndarray:
        """Dof of every slot, shape (2, nt, 3), -1 where T is not in T_h^i."""
        return self.dof[:, mesh.triangles]


def build_dofmap(cut: CutTopology) -> DofMap:
    mesh = cut.mesh
    dof = np.full((2, mesh.n_vertices), -1, dtype=np.int64)
    n1 = int(cut.vert_in[0].sum())
    dof[0, cut.vert_in[0]] = np.arange(n1)
    n2 = int(cut.vert_in[1].sum())
    dof[1, cut.vert_in[1]] = n1 + np.arange(n2)
    dmask = np.zeros(n1 + n2, dtype=bool)
    for i in (0, 1):
        be = mesh.boundary_edges & cut.edge_in[i]
        dmask[dof[i, mesh.edges[be].ravel()]] = True
    return DofMap(dof, n1, n1 + n2, dmask)


@dataclass(eq=False)
class LocalBlocks:
    """Element-level pieces of a_h and l_h in slot space."""

    vol: np.ndarray  # (2, nt, 3, 3), zero outside T_h^i
    ghost_edges: list  # per field: edge indices in F_g^i
    ghost_c: list  # per field: (ng, 6) normal-derivative jump coefficients
    ghost_w: list  # per field: gamma_g k_i |F|^2
    nitsche: np.ndarray  # (nc, 6, 6) over (field 1 slots, field 2 slots)
    load: np.ndarray  # (2, nt, 3)
    grads: np.ndarray  # (nt, 3, 2)

    def ghost_slots(self, mesh: Mesh, i: int) -> np.ndarray:
        e = self.ghost_edges[i]
        tm, tp = mesh.edge_tris[e, 0], mesh.edge_tris[e, 1]
        return np.concatenate([slot_id(mesh, i, tm), slot_id(mesh, i, tp)], axis=1)


def slot_id(mesh: Mesh, i: int, tris) -> np.ndarray:
    """Slot numbers of the three slots of ``tris`` for field index i (0 or 1)."""
    tris = np.asarray(tris)
    return i * 3 * mesh.n_triangles + 3 * tris[:, None] + np.arange(3)


def _load(mesh: Mesh, cut: CutTopology, quad: SubcellQuadrature, data: ProblemData) -> np.ndarray:
    nt = mesh.n_triangles
    load = np.zeros((2, nt, 3))
    tri = mesh.tri_coords()
    pure = np.flatnonzero(cut.tri_class != CUT)
    side = cut.tri_class[pure]
    singular = np.zeros(len(pure), dtype=bool)
    corner = np.zeros(len(pure), dtype=np.int64)
    for sp in data.singular_points:
        d = np.linalg.norm(tri[pure] - np.asarray(sp, dtype=float), axis=2)
        hit = d.min(axis=1) < 1e-12 * mesh.diameters[pure]
        corner[hit] = np.argmin(d[hit], axis=1)
        singular |= hit
    reg = pure[~singular]
    pts, w = map_triangles(tri[reg], data.order)
    lam = barycentric(tri[reg][:, None], pts)
    fv = data.f(pts[..., 0], pts[..., 1], cut.tri_class[reg][:, None])
    val = np.einsum("tq,tq,tqj->tj", w, fv, lam)
    for i in (1, 2):
        m = cut.tri_class[reg] == i
        load[i - 1, reg[m]] = val[m]
    for k in np.flatnonzero(singular):
        t = pure[k]
        p, ww = graded_triangle_rule(tri[t], corner[k], data.order)
        lam = barycentric(tri[t][None], p)
        load[side[k] - 1, t] = (ww * data.f(p[:, 0], p[:, 1], side[k])) @ lam
    if cut.n_cut:
        ct = cut.cut_tris
        lam = barycentric(tri[ct][:, None, None], quad.sub_pts)
        for i in (1, 2):
            w = quad.side_weights(cut, i)
            fv = data.f(quad.sub_pts[..., 0], quad.sub_pts[..., 1], i)
            load[i - 1, ct] = np.einsum("csq,csq,csqj->cj", w, fv, lam)
    return load


def local_blocks(mesh: Mesh, cut: CutTopology, quad: SubcellQuadrature, data: ProblemData) -> LocalBlocks:
    if quad is None:
        raise AssemblyError("subcell quadrature is missing")
    c = data.coeffs
    G = mesh.basis_gradients()
    areas = cut.part_areas()
    GG = np.einsum("tad,tbd->tab", G, G)
    vol = np.stack([c.k1 * areas[:, 0, None, None] * GG, c.k2 * areas[:, 1, None, None] * GG])

    ghost_edges, ghost_c, ghost_w = [], [], []
    for i, k in enumerate((c.k1, c.k2)):
        e = np.flatnonzero(cut.ghost[i])
        n = mesh.edge_normal[e]
        tm, tp = mesh.edge_tris[e, 0], mesh.edge_tris[e, 1]
        cc = np.concatenate([np.einsum("ejd,ed->ej", G[tm], n), -np.einsum("ejd,ed->ej", G[tp], n)], axis=1)
        ghost_edges.append(e)
        ghost_c.append(cc)
        ghost_w.append(data.gamma_g * k * mesh.edge_length[e] ** 2)

    nc = cut.n_cut
    nit = np.zeros((nc, 6, 6))
    if nc:
        ct = cut.cut_tris
        tri = mesh.tri_coords()[ct]
        gp, gw = map_segments(cut.M, cut.N, max(2, data.order))
        lam = barycentric(tri[:, None], gp)  # (nc, ng, 3)
        J = np.concatenate([lam, -lam], axis=2)
        gn = np.einsum("cjd,cd->cj", G[ct], cut.n_gamma)
        Fl = c.k_gamma * np.concatenate([gn, gn], axis=1)  # {K grad v . n}, constant on Gamma_T
        JJ = np.einsum("cq,cqa,cqb->cab", gw, J, J)
        Jint = np.einsum("cq,cqa->ca", gw, J)
        pen = data.gamma * c.k_gamma / mesh.diameters[ct]
        nit = pen[:, None, None] * JJ - np.einsum("ca,cb->cab", Jint, Fl) - np.einsum("ca,cb->cab", Fl, Jint)

    load = _load(mesh, cut, quad, data)
    return LocalBlocks(vol, ghost_edges, ghost_c, ghost_w, nit, load, G)


def slot_matrix(mesh: Mesh, cut: CutTopology, blocks: LocalBlocks) -> sps.csr_matrix:
    nt = mesh.n_triangles
    ns = 6 * nt
    rows, cols, vals = [], [], []
    for i in (0, 1):
        s = slot_id(mesh, i, np.arange(nt))
        rows.append(np.repeat(s, 3, axis=1).ravel())
        cols.append(np.tile(s, (1, 3)).ravel())
        vals.append(blocks.vol[i].ravel())
        gs = blocks.ghost_slots(mesh, i)
        cc = blocks.ghost_c[i]
        rows.append(np.repeat(gs, 6, axis=1).ravel())
        cols.append(np.tile(gs, (1, 6)).ravel())
        vals.append((blocks.ghost_w[i][:, None, None] * cc[:, :, None] * cc[:, None, :]).ravel())
    if cut.n_cut:
        ct = cut.cut_tris
        s = np.concatenate([slot_id(mesh, 0, ct), slot_id(mesh, 1, ct)], axis=1)
        rows.append(np.repeat(s, 6, axis=1).ravel())
        cols.append(np.tile(s, (1, 6)).ravel())
        vals.append(blocks.nitsche.ravel())
    return sps.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(ns, ns)
    )


def slot_to_dof(mesh: Mesh, dofmap: DofMap) -> sps.csr_matrix:
    d = dofmap.slots(mesh).ravel()
    ok = d >= 0
    return sps.csr_matrix(
        (np.ones(int(ok.sum())), (np.flatnonzero(ok), d[ok])), shape=(len(d), dofmap.n)
    )


@dataclass(eq=False)
class DiscreteSystem:
    mesh: Mesh
    cut: CutTopology
    quad: SubcellQuadrature
    data: ProblemData
    dofmap: DofMap
    blocks: LocalBlocks
    A_slot: sps.csr_matrix
    S: sps.csr_matrix
    A: sps.csr_matrix  # full matrix, Dirichlet rows included
    b: np.ndarray
    u_dirichlet: np.ndarray


def assemble(mesh: Mesh, cut: CutTopology, quad: SubcellQuadrature, data: ProblemData) -> DiscreteSystem:
    """Assemble the CutFEM matrix and load vector (before Dirichlet elimination)."""
    dofmap = build_dofmap(cut)
    blocks = local_blocks(mesh, cut, quad, data)
    A_slot = slot_matrix(mesh, cut, blocks)
    S = slot_to_dof(mesh, dofmap)
    A = (S.T @ A_slot @ S).tocsr()
    A.sum_duplicates()
    b = S.T @ blocks.load.ravel()
    ud = np.zeros(dofmap.n)
    for i in (0, 1):
        vid = np.flatnonzero(cut.vert_in[i])
        d = dofmap.dof[i, vid]
        m = dofmap.dirichlet[d]
        x = mesh.vertices[vid[m]]
        ud[d[m]] = data.dirichlet(x[:, 0], x[:, 1], i + 1)
    return DiscreteSystem(mesh, cut, quad, data, dofmap, blocks, A_slot, S, A, b, ud)


@dataclass(eq=False)
class FESolution:
    system: DiscreteSystem
    values: np.ndarray  # (n,) all dofs, Dirichlet included
    info: SolveInfo = field(default_factory=lambda: SolveInfo("none", 0.0))

    @property
    def mesh(self) -> Mesh:
        return self.system.mesh

    @property
    def cut(self) -> CutTopology:
        return self.system.cut

    def nodal(self, i: int) -> np.ndarray:
        """Vertex values of u_{h,i} (i = 1, 2); nan outside Omega_h^i."""
        d = self.system.dofmap.dof[i - 1]
        out = np.full(len(d), np.nan)
        out[d >= 0] = self.values[d[d >= 0]]
        return out

    def slot_values(self) -> np.ndarray:
        """Local nodal values per slot, shape (2, nt, 3); zero outside T_h^i."""
        return (self.system.S @ self.values).reshape(2, -1, 3)

    def gradients(self) -> np.ndarray:
        """grad u_{h,i} on every triangle, shape (2, nt, 2)."""
        return np.einsum("itj,tjd->itd", self.slot_values(), self.system.blocks.grads)


def solve_cutfem(system: DiscreteSystem, method: str = "auto") -> FESolution:
    dm = system.dofmap
    free = ~dm.dirichlet
    A = system.A
    rhs = system.b - A @ system.u_dirichlet
    Aff = A[free][:, free]
    try:
        x, info = solve_spd(Aff, rhs[free], method=method)
    except SolverError as err:
        raise SolverError(
            f"CutFEM solve failed ({err}); the matrix may be indefinite, try a larger gamma "
            f"(current gamma={system.data.gamma})",
            err.residual,
        ) from None
    u = system.u_dirichlet.copy()
    u[free] = x
    return FESolution(system, u, info)


def galerkin_residual(sol: FESolution) -> float:
    """max |a_h(u_h, v) - l_h(v)| over free basis functions, relative to ||b||."""
    s = sol.system
    r = (s.A @ sol.values - s.b)[~s.dofmap.dirichlet]
    nb = np.linalg.norm(s.b)
    return float(np.abs(r).max() / nb) if nb > 0 and len(r) else float(np.abs(r).max(initial=0.0))


def p1_stiffness(mesh: Mesh, k: float = 1.0) -> sps.csr_matrix:
    """Standard P1 stiffness matrix, used as a reduction reference."""
    G = mesh.basis_gradients()
    K = k * mesh.areas[:, None, None] * np.einsum("tad,tbd->tab", G, G)
    t = mesh.triangles
    r = np.repeat(t, 3, axis=1).ravel()
    c = np.tile(t, (1, 3)).ravel()
    return sps.csr_matrix((K.ravel(), (r, c)), shape=(mesh.n_vertices,) * 2)
