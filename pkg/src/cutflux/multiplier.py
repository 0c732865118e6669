"""The hybrid multiplier theta_h.

Testing the defining equation with the broken P1 function ``lambda_j`` on
``T`` only involves the multiplier values at the vertex ``A_j`` of the two
edges of ``T`` meeting there, so the global system splits into one small
system per (field, vertex).  At a vertex whose star is a full cycle inside
``Omega_h^i`` that system has a one-dimensional kernel spanned by the
vector ``(s_N^F h_F)``; taking the minimum-norm solution (in the scaled
unknowns ``k_i h_F theta_F(N) / 2``) is exactly the node constraint of the
multiplier space.  Elsewhere the constraint-free system can still be
underdetermined and the minimum-norm solution is used as the selection.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .assembly import FESolution, slot_id
from .cut import CutTopology
from .mesh import Mesh, barycentric


class MultiplierError(RuntimeError):
    pass


def node_sign(mesh: Mesh, edges, nodes) -> np.ndarray:
    """s_N^F: +1 when n_F is the clockwise rotation of the direction N -> other end."""
    edges = np.asarray(edges)
    nodes = np.asarray(nodes)
    ev = mesh.edges[edges]
    other = np.where(ev[:, 0] == nodes, ev[:, 1], ev[:, 0])
    d = mesh.vertices[other] - mesh.vertices[nodes]
    n = mesh.edge_normal[edges]
    cross = d[:, 0] * n[:, 1] - d[:, 1] * n[:, 0]
    return np.where(cross < 0, 1.0, -1.0)


@dataclass
class MultiplierSpace:
    field: int
    edges: np.ndarray  # F_h^i
    interior_nodes: np.ndarray
    constraints: np.ndarray  # (n_interior, 2 * n_edges), columns (edge, endpoint)
    basis: np.ndarray  # (2 * n_edges, dim)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def interior_nodes(cut: CutTopology, i: int) -> np.ndarray:
    """Vertices of Omega_h^i that are not on its boundary (i = 1, 2)."""
    mesh = cut.mesh
    tin = cut.tri_in[i - 1]
    et = mesh.edge_tris
    count = tin[et[:, 0]].astype(int) + ((et[:, 1] >= 0) & tin[np.maximum(et[:, 1], 0)]).astype(int)
    on_bdry = np.zeros(mesh.n_vertices, dtype=bool)
    on_bdry[mesh.edges[count == 1].ravel()] = True
    return np.flatnonzero(cut.vert_in[i - 1] & ~on_bdry)


def build_multiplier_space(cut: CutTopology, i: int) -> MultiplierSpace:
    """Explicit constraint matrix and null-space basis (dense; small meshes only)."""
    mesh = cut.mesh
    edges = np.flatnonzero(cut.edge_in[i - 1])
    inodes = interior_nodes(cut, i)
    row = {int(n): r for r, n in enumerate(inodes)}
    C = np.zeros((len(inodes), 2 * len(edges)))
    for col, e in enumerate(edges):
        for k in (0, 1):
            n = int(mesh.edges[e, k])
            if n in row:
                s = node_sign(mesh, [e], [n])[0]
                C[row[n], 2 * col + k] = s * mesh.edge_length[e]
    if len(inodes) and np.linalg.matrix_rank(C) < len(inodes):
        raise MultiplierError("node constraints are rank deficient")
    basis = sla.null_space(C) if len(inodes) else np.eye(2 * len(edges))
    return MultiplierSpace(i, edges, inodes, C, basis)


@dataclass(eq=False)
class MultiplierField:
    theta: np.ndarray  # (2, ne, 2): value of theta_{h,i} on F at edges[F, 0] and edges[F, 1]
    residual: float  # max relative residual of the defining equation over all test slots
    rhs_slot: np.ndarray  # (6 nt,) right-hand side functional per slot

    def edge_mean(self, i: int) -> np.ndarray:
        """pi_F^0 theta_{h,i} (nan outside F_h^i)."""
        return self.theta[i - 1].mean(axis=1)


def edge_mean_flux(sol: FESolution) -> np.ndarray:
    """<k_i grad u_{h,i} . n_F> per field and edge, shape (2, ne)."""
    mesh = sol.mesh
    c = sol.system.data.coeffs
    g = sol.gradients()
    et = mesh.edge_tris
    out = np.zeros((2, mesh.n_edges))
    for i, k in enumerate((c.k1, c.k2)):
        gm = np.einsum("ed,ed->e", g[i, et[:, 0]], mesh.edge_normal)
        gp = np.einsum("ed,ed->e", g[i, np.maximum(et[:, 1], 0)], mesh.edge_normal)
        out[i] = k * np.where(et[:, 1] >= 0, 0.5 * (gm + gp), gm)
    return out


def _edge_slot_integrals(cut: CutTopology, i: int):
    """For every (T, local edge m): integral over F^i of lambda_j, shape (nt, 3m, 3j)."""
    mesh = cut.mesh
    tri = mesh.tri_coords()
    out = np.zeros((mesh.n_triangles, 3, 3))
    for m in range(3):
        e = mesh.tri_edges[:, m]
        a, b = cut.edge_segments(e, i)
        mid = 0.5 * (a + b)
        L = np.linalg.norm(b - a, axis=1)
        out[:, m, :] = L[:, None] * barycentric(tri, mid)
    return out


def multiplier_rhs(sol: FESolution) -> np.ndarray:
    """l_h(v) - a_h(u_h, v) + sum_F int_{F^i} <k_i grad u_i . n_F> [[v]] for every slot v."""
    s = sol.system
    mesh = sol.mesh
    cut = sol.cut
    r = s.blocks.load.ravel() - s.A_slot @ (s.S @ sol.values)
    flux = edge_mean_flux(sol)
    r = r.reshape(2, mesh.n_triangles, 3)
    for i in (0, 1):
        ints = _edge_slot_integrals(cut, i + 1)
        fe = flux[i, mesh.tri_edges] * mesh.tri_edge_sign * cut.edge_in[i][mesh.tri_edges]
        r[i] += np.einsum("tm,tmj->tj", fe, ints)
        r[i][~cut.tri_in[i]] = 0.0
    return r.ravel()


def residual_scale(sol: FESolution, rhs: np.ndarray) -> float:
    """Size of the individual terms of the defining equation, used to normalize residuals."""
    s = sol.system
    au = np.abs(s.A_slot) @ np.abs(s.S @ sol.values)
    big = max(np.abs(rhs).max(initial=0.0), np.abs(s.blocks.load).max(initial=0.0), au.max(initial=0.0))
    return big if big > 0 else 1.0


def _group_rank(groups: np.ndarray) -> np.ndarray:
    """Position of each element within its group (stable)."""
    order = np.argsort(groups, kind="stable")
    g = groups[order]
    start = np.r_[0, np.flatnonzero(g[1:] != g[:-1]) + 1]
    first = np.repeat(start, np.diff(np.r_[start, len(g)]))
    rank = np.empty(len(groups), dtype=np.int64)
    rank[order] = np.arange(len(groups)) - first
    return rank


def solve_multiplier(sol: FESolution) -> MultiplierField:
    mesh = sol.mesh
    cut = sol.cut
    c = sol.system.data.coeffs
    rhs = multiplier_rhs(sol)
    theta = np.full((2, mesh.n_edges, 2), np.nan)
    resid = 0.0
    scale = residual_scale(sol, rhs)
    for i, k in ((1, c.k1), (2, c.k2)):
        tin = np.flatnonzero(cut.tri_in[i - 1])
        if len(tin) == 0:
            continue
        row_T = np.repeat(tin, 3)
        row_j = np.tile(np.arange(3), len(tin))
        row_node = mesh.triangles[row_T, row_j]
        row_slot = slot_id(mesh, i - 1, tin).ravel()
        nodes, row_pos = np.unique(row_node, return_inverse=True)
        row_loc = _group_rank(row_pos)

        # the two edges of T through vertex j, restricted to F_h^i
        ent_row, ent_uid, ent_eps = [], [], []
        for off in (1, 2):
            m = (row_j + off) % 3
            e = mesh.tri_edges[row_T, m]
            ok = cut.edge_in[i - 1][e]
            kk = (mesh.edges[e, 1] == row_node).astype(np.int64)
            ent_row.append(np.flatnonzero(ok))
            ent_uid.append((2 * e + kk)[ok])
            ent_eps.append(mesh.tri_edge_sign[row_T, m][ok])
        ent_row = np.concatenate(ent_row)
        ent_uid = np.concatenate(ent_uid)
        ent_eps = np.concatenate(ent_eps)

        uid = np.unique(ent_uid)
        u_pos = np.searchsorted(nodes, mesh.edges[uid // 2, uid % 2])
        u_loc = _group_rank(u_pos)
        loc_of = np.full(2 * mesh.n_edges, -1, dtype=np.int64)
        loc_of[uid] = u_loc

        mr = int(row_loc.max()) + 1
        mu = int(u_loc.max()) + 1 if len(uid) else 1
        B = np.zeros((len(nodes), mr, mu))
        R = np.zeros((len(nodes), mr))
        R[row_pos, row_loc] = rhs[row_slot]
        B[row_pos[ent_row], row_loc[ent_row], loc_of[ent_uid]] = ent_eps
        nu = np.einsum("nur,nr->nu", np.linalg.pinv(B, rcond=1e-12), R)
        res = np.einsum("nru,nu->nr", B, nu) - R
        resid = max(resid, float(np.abs(res).max() / scale))
        e_id, endp = uid // 2, uid % 2
        theta[i - 1, e_id, endp] = 2.0 * nu[u_pos, u_loc] / (k * mesh.edge_length[e_id])
    return MultiplierField(theta, resid, rhs)


def b_form(mf_theta: np.ndarray, cut: CutTopology, coeffs, v_slot: np.ndarray) -> float:
    """b_h(theta, v) for a broken P1 function given by its slot values (2, nt, 3)."""
    mesh = cut.mesh
    total = 0.0
    et = mesh.edge_tris
    for i, k in ((0, coeffs.k1), (1, coeffs.k2)):
        for e in np.flatnonzero(cut.edge_in[i]):
            for kk in (0, 1):
                node = mesh.edges[e, kk]
                jump = 0.0
                for side, t in ((1.0, et[e, 0]), (-1.0, et[e, 1])):
                    if t < 0:
                        continue
                    loc = int(np.flatnonzero(mesh.triangles[t] == node)[0])
                    jump += side * v_slot[i, t, loc]
                total += k * mesh.edge_length[e] / 2 * mf_theta[i, e, kk] * jump
    return total
