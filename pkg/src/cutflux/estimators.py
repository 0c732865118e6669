"""A posteriori indicators, data oscillation, the continuous interpolant and error reports."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .assembly import FESolution
from .cut import CUT, CutTopology, SubcellQuadrature
from .flux import FluxField
from .mesh import barycentric, build_patches
from .quadrature import graded_triangle_rule, map_segments, map_triangles


def _sigma_minus_kgrad_sq(sigma: FluxField, sol: FESolution, quad: SubcellQuadrature, order: int = 4):
    """Integral over T of |sigma - K grad_h u_h|^2 / k, per triangle."""
    mesh = sol.mesh
    cut = sol.cut
    c = sol.system.data.coeffs
    grad = sol.gradients()
    out = np.zeros(mesh.n_triangles)
    pure = np.flatnonzero(cut.tri_class != CUT)
    if len(pure):
        side = cut.tri_class[pure]
        k = c.k(side)
        pts, w = map_triangles(mesh.tri_coords()[pure], order)
        s = sigma.evaluate(pure, side, pts)
        gu = grad[side - 1, pure]
        d = s - (k[:, None] * gu)[:, None, :]
        out[pure] = np.einsum("tq,tqd,tqd->t", w, d, d) / k
    if cut.n_cut:
        ct = cut.cut_tris
        for i, k in ((1, c.k1), (2, c.k2)):
            w = quad.side_weights(cut, i)
            pts = quad.sub_pts.reshape(len(ct), -1, 2)
            s = sigma.evaluate(ct, np.full(len(ct), i), pts).reshape(quad.sub_pts.shape)
            d = s - k * grad[i - 1, ct][:, None, None, :]
            out[ct] += np.einsum("csq,csqd,csqd->c", w, d, d) / k
    return out


def eta_T(sigma: FluxField, sol: FESolution, quad: SubcellQuadrature) -> np.ndarray:
    return np.sqrt(np.maximum(_sigma_minus_kgrad_sq(sigma, sol, quad), 0.0))


def interface_jump(sol: FESolution, pts: np.ndarray) -> np.ndarray:
    """[u_h] = u_{h,1} - u_{h,2} at points (nc, nq, 2) of the cut cells."""
    cut = sol.cut
    ct = cut.cut_tris
    v = sol.slot_values()
    lam = barycentric(sol.mesh.tri_coords()[ct][:, None], pts)
    return np.einsum("cqj,cj->cq", lam, v[0, ct] - v[1, ct])


def eta_tilde_T(sol: FESolution, quad: SubcellQuadrature) -> np.ndarray:
    """Interface indicator on cut cells (zero elsewhere)."""
    mesh = sol.mesh
    cut = sol.cut
    out = np.zeros(mesh.n_triangles)
    if cut.n_cut:
        ct = cut.cut_tris
        j = interface_jump(sol, quad.gamma_pts)
        jn = np.einsum("cq,cq->c", quad.gamma_wts, j * j)
        kg = sol.system.data.coeffs.k_gamma
        out[ct] = np.sqrt(mesh.diameters[ct] * kg / (cut.gamma_len * cut.h_min) * jn)
    return out


def eta_F(sigma: FluxField, sol: FESolution, order: int = 2):
    """Indicator on interior cut edges; returns (edges, eta_F, mean jump)."""
    mesh = sol.mesh
    cut = sol.cut
    kg = sol.system.data.coeffs.k_gamma
    e = np.flatnonzero(cut.edge_cut & ~mesh.boundary_edges)
    if len(e) == 0:
        return e, np.zeros(0), np.zeros(0)
    n = mesh.edge_normal[e]
    tm, tp = mesh.edge_tris[e, 0], mesh.edge_tris[e, 1]
    sq = np.zeros(len(e))
    mean = np.zeros(len(e))
    for i in (1, 2):
        a, b = cut.edge_segments(e, i)
        pts, w = map_segments(a, b, order)
        side = np.full(len(e), i)
        jump = np.einsum("eqd,ed->eq", sigma.evaluate(tm, side, pts) - sigma.evaluate(tp, side, pts), n)
        sq += np.einsum("eq,eq->e", w, jump * jump)
        mean += np.einsum("eq,eq->e", w, jump)
    h = mesh.edge_length[e]
    return e, np.sqrt(h / kg * sq), mean / h


def normal_jumps(sigma: FluxField, sol: FESolution):
    """Max normal-trace jump on uncut interior edges and max mean jump on cut edges."""
    mesh = sol.mesh
    cut = sol.cut
    e = np.flatnonzero(~cut.edge_cut & ~mesh.boundary_edges)
    tm, tp = mesh.edge_tris[e, 0], mesh.edge_tris[e, 1]
    side = cut.vert_side[mesh.edges[e, 0]]
    p = mesh.vertices[mesh.edges[e, 0]]
    q = mesh.vertices[mesh.edges[e, 1]]
    pts = np.stack([p, 0.5 * (p + q), q], axis=1)
    jump = np.einsum("eqd,ed->eq", sigma.evaluate(tm, side, pts) - sigma.evaluate(tp, side, pts), mesh.edge_normal[e])
    _, _, mean = eta_F(sigma, sol)
    return np.abs(jump).max(initial=0.0), np.abs(mean).max(initial=0.0)


def flux_difference(s1: FluxField, s2: FluxField) -> float:
    """Max relative pointwise difference of two fluxes at the vertices of every cell and side."""
    mesh = s1.cut.mesh
    tri = mesh.tri_coords()
    t = np.arange(mesh.n_triangles)
    diff = scale = 0.0
    for side in (1, 2):
        v1 = s1.evaluate(t, np.full(len(t), side), tri)
        v2 = s2.evaluate(t, np.full(len(t), side), tri)
        diff = max(diff, float(np.abs(v1 - v2).max()))
        scale = max(scale, float(np.abs(v1).max()))
    return diff / scale if scale > 0 else diff


def cell_source(sol: FESolution) -> np.ndarray:
    """Integral of f over each triangle, consistent with the load vector."""
    return sol.system.blocks.load.sum(axis=2).sum(axis=0)


def delta_T(cut: CutTopology, coeffs) -> np.ndarray:
    return np.where(cut.tri_class == CUT, coeffs.k_gamma, np.where(cut.tri_class == 1, coeffs.k1, coeffs.k2))


def epsilon_data(sol: FESolution, quad: SubcellQuadrature, order: int = 6) -> np.ndarray:
    """Per-triangle h_T / sqrt(delta_T) ||f - f_h||_T with f_h the cell mean of f."""
    mesh = sol.mesh
    cut = sol.cut
    f = sol.system.data.f
    fh = cell_source(sol) / mesh.areas
    sq = np.zeros(mesh.n_triangles)
    pure = np.flatnonzero(cut.tri_class != CUT)
    pts, w = map_triangles(mesh.tri_coords()[pure], order)
    d = f(pts[..., 0], pts[..., 1], cut.tri_class[pure][:, None]) - fh[pure, None]
    sq[pure] = np.einsum("tq,tq->t", w, d * d)
    if cut.n_cut:
        ct = cut.cut_tris
        sp, sw = map_triangles(cut.sub_tris, order)
        for i in (1, 2):
            ww = sw * (cut.sub_side == i)[:, :, None]
            d = f(sp[..., 0], sp[..., 1], i) - fh[ct, None, None]
            sq[ct] += np.einsum("csq,csq->c", ww, d * d)
    dl = delta_T(cut, sol.system.data.coeffs)
    return mesh.diameters * np.sqrt(sq / dl)


# ---------------------------------------------------------------------------
# continuous interpolant


@dataclass(eq=False)
class InterpolantField:
    sub_values: np.ndarray  # (nc, 3 subtriangles, 3 vertices)
    node_values: np.ndarray  # (nc, 5): A1, A2, A3, M, N
    sub_grads: np.ndarray  # (nc, 3, 2)
    error_T: np.ndarray  # |I_h u_h - u_h|_{1,K,T} per cut cell


def interpolate_Ih(sol: FESolution) -> InterpolantField:
    cut = sol.cut
    mesh = sol.mesh
    c = sol.system.data.coeffs
    ct = cut.cut_tris
    nc = len(ct)
    v = sol.slot_values()
    lone = cut.lone_side
    verts = mesh.triangles[ct[:, None], cut.perm]
    u = np.stack([sol.nodal(1)[verts], sol.nodal(2)[verts]])  # (2, nc, 3)
    idx = np.arange(nc)
    a1 = u[lone - 1, idx, 0]
    a2 = u[2 - lone, idx, 1]
    a3 = u[2 - lone, idx, 2]
    tri = mesh.tri_coords()[ct]

    def star(p):
        lam = barycentric(tri, p)
        u1 = np.einsum("cj,cj->c", lam, v[0, ct])
        u2 = np.einsum("cj,cj->c", lam, v[1, ct])
        return c.omega2 * u1 + c.omega1 * u2

    uM, uN = star(cut.M), star(cut.N)
    nodes = np.stack([a1, a2, a3, uM, uN], axis=1)
    # vertex lists of the subtriangles in terms of (A1, A2, A3, M, N)
    lay = np.where(
        cut.split_a3m[:, None, None],
        np.array([[0, 3, 4], [3, 1, 2], [3, 2, 4]]),
        np.array([[0, 3, 4], [4, 1, 2], [4, 3, 1]]),
    )
    sub_vals = np.take_along_axis(nodes[:, None, :].repeat(3, axis=1), lay, axis=2)
    st = cut.sub_tris
    e1 = st[:, :, 1] - st[:, :, 0]
    e2 = st[:, :, 2] - st[:, :, 0]
    det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    d1 = sub_vals[..., 1] - sub_vals[..., 0]
    d2 = sub_vals[..., 2] - sub_vals[..., 0]
    gx = (d1 * e2[..., 1] - d2 * e1[..., 1]) / det
    gy = (d2 * e1[..., 0] - d1 * e2[..., 0]) / det
    grads = np.stack([gx, gy], axis=-1)
    gu = sol.gradients()
    area = 0.5 * det
    err = np.zeros(nc)
    for s in range(3):
        side = cut.sub_side[:, s]
        g_h = np.where((side == 1)[:, None], gu[0, ct], gu[1, ct])
        k = c.k(side)
        d = grads[:, s] - g_h
        err += k * area[:, s] * np.einsum("cd,cd->c", d, d)
    return InterpolantField(sub_vals, nodes, grads, np.sqrt(err))


def interpolant_continuity(sol: FESolution, ih: InterpolantField) -> float:
    """Largest mismatch of I_h u_h at cut points shared by neighbouring cut cells."""
    cut = sol.cut
    mesh = sol.mesh
    ct = cut.cut_tris
    e12 = mesh.tri_edges[ct, cut.perm[:, 2]]
    e13 = mesh.tri_edges[ct, cut.perm[:, 1]]
    vals = {}
    worst = 0.0
    for e, val in zip(np.concatenate([e12, e13]), np.concatenate([ih.node_values[:, 3], ih.node_values[:, 4]])):
        if e in vals:
            worst = max(worst, abs(vals[e] - val))
        else:
            vals[e] = val
    return worst


# ---------------------------------------------------------------------------
# exact errors and reports


def exact_error_sq(sol: FESolution, quad: SubcellQuadrature, grad_exact, order: int = 6, singular_points=()):
    """Per triangle sum_i ||k_i^{1/2} grad(u - u_{h,i})||^2_{T^i}."""
    mesh = sol.mesh
    cut = sol.cut
    c = sol.system.data.coeffs
    gu = sol.gradients()
    tri = mesh.tri_coords()
    out = np.zeros(mesh.n_triangles)
    pure = np.flatnonzero(cut.tri_class != CUT)
    side = cut.tri_class[pure]
    sing = np.zeros(len(pure), dtype=bool)
    corner = np.zeros(len(pure), dtype=np.int64)
    for sp in singular_points:
        d = np.linalg.norm(tri[pure] - np.asarray(sp, dtype=float), axis=2)
        hit = d.min(axis=1) < 1e-12 * mesh.diameters[pure]
        corner[hit] = np.argmin(d[hit], axis=1)
        sing |= hit
    reg = ~sing
    pts, w = map_triangles(tri[pure[reg]], order)
    ge = grad_exact(pts[..., 0], pts[..., 1], side[reg][:, None])
    d = ge - gu[side[reg] - 1, pure[reg]][:, None, :]
    out[pure[reg]] = c.k(side[reg]) * np.einsum("tq,tqd,tqd->t", w, d, d)
    for k in np.flatnonzero(sing):
        t = pure[k]
        p, ww = graded_triangle_rule(tri[t], corner[k], order)
        ge = grad_exact(p[:, 0], p[:, 1], side[k])
        d = ge - gu[side[k] - 1, t]
        out[t] = c.k(side[k]) * np.einsum("q,qd,qd->", ww, d, d)
    if cut.n_cut:
        ct = cut.cut_tris
        sp, sw = map_triangles(cut.sub_tris, order)
        for i in (1, 2):
            ww = sw * (cut.sub_side == i)[:, :, None]
            ge = grad_exact(sp[..., 0], sp[..., 1], i)
            d = ge - gu[i - 1, ct][:, None, None, :]
            out[ct] += c.k(i) * np.einsum("csq,csqd,csqd->c", ww, d, d)
    return out


def ghost_seminorm_sq(sol: FESolution):
    """j_i(u_{h,i}, u_{h,i}) per field and ghost edge: list of (edges, values)."""
    b = sol.system.blocks
    mesh = sol.mesh
    v = sol.slot_values()
    out = []
    for i in (0, 1):
        e = b.ghost_edges[i]
        tm, tp = mesh.edge_tris[e, 0], mesh.edge_tris[e, 1]
        uu = np.concatenate([v[i, tm], v[i, tp]], axis=1)
        jump = np.einsum("ej,ej->e", b.ghost_c[i], uu)
        out.append((e, b.ghost_w[i] * jump * jump))
    return out


def interface_penalty_sq(sol: FESolution, quad: SubcellQuadrature) -> np.ndarray:
    """k_Gamma / h_T ||[u_h]||^2_{Gamma_T} per triangle."""
    mesh = sol.mesh
    cut = sol.cut
    out = np.zeros(mesh.n_triangles)
    if cut.n_cut:
        ct = cut.cut_tris
        j = interface_jump(sol, quad.gamma_pts)
        out[ct] = sol.system.data.coeffs.k_gamma / mesh.diameters[ct] * np.einsum("cq,cq->c", quad.gamma_wts, j * j)
    return out


@dataclass(eq=False)
class EstimatorReport:
    eta_T: np.ndarray
    eta_tilde_T: np.ndarray
    eta_F_edges: np.ndarray
    eta_F: np.ndarray
    eps_T: np.ndarray
    delta_T: np.ndarray
    eta: float
    eta_gamma: float
    eta_hat: float
    epsilon: float
    eta_rt0: float = float("nan")
    error_T: np.ndarray | None = None
    error: float = float("nan")  # |u - u_h|_{1,K,h}
    error_h: float = float("nan")  # ||u - u_h||_h
    effectivity: float = float("nan")
    extras: dict = field(default_factory=dict)

    def eta_bar(self, mesh) -> np.ndarray:
        """eta_T + eta~_T + sum of eta_F over the cut edges of T."""
        out = self.eta_T + self.eta_tilde_T
        if len(self.eta_F_edges):
            et = mesh.edge_tris[self.eta_F_edges]
            np.add.at(out, et[:, 0], self.eta_F)
            ok = et[:, 1] >= 0
            np.add.at(out, et[ok, 1], self.eta_F[ok])
        return out


def estimate(sigma: FluxField, sol: FESolution, quad: SubcellQuadrature, rt0: FluxField | None = None) -> EstimatorReport:
    eT = eta_T(sigma, sol, quad)
    et = eta_tilde_T(sol, quad)
    fe, eF, _ = eta_F(sigma, sol)
    eps = epsilon_data(sol, quad)
    rep = EstimatorReport(
        eta_T=eT,
        eta_tilde_T=et,
        eta_F_edges=fe,
        eta_F=eF,
        eps_T=eps,
        delta_T=delta_T(sol.cut, sol.system.data.coeffs),
        eta=float(np.sqrt(np.sum(eT**2))),
        eta_gamma=float(np.sqrt(np.sum(eF**2) + np.sum(et**2))),
        eta_hat=float(np.sqrt(np.sum(eF**2))),
        epsilon=float(np.sqrt(np.sum(eps**2))),
    )
    if rt0 is not None:
        rep.extras["eta_rt0_T"] = eta_T(rt0, sol, quad)
        rep.eta_rt0 = float(np.sqrt(np.sum(rep.extras["eta_rt0_T"] ** 2)))
    return rep


def effectivity_report(rep: EstimatorReport, sol: FESolution, quad: SubcellQuadrature, benchmark, order: int = 6):
    """Fill exact-error norms, effectivity and per-element efficiency ratios."""
    if benchmark is None or getattr(benchmark, "grad", None) is None:
        raise ValueError("effectivity report needs an exact solution")
    mesh = sol.mesh
    cut = sol.cut
    c = sol.system.data.coeffs
    e2 = exact_error_sq(sol, quad, benchmark.grad, order, benchmark.singular_points)
    ghost = ghost_seminorm_sq(sol)
    pen = interface_penalty_sq(sol, quad)
    rep.error_T = np.sqrt(e2)
    rep.error = float(np.sqrt(e2.sum()))
    jsum = sum(v.sum() for _, v in ghost)
    rep.error_h = float(np.sqrt(e2.sum() + jsum + pen.sum()))
    rep.effectivity = rep.eta / rep.error if rep.error > 0 else float("nan")
    rep.extras["effectivity_flag"] = "ok" if rep.error > 0 else "indeterminate"

    # local norms on the patches Delta_T
    P = build_patches(mesh)
    patch = P.tri_patch.astype(float)
    cell_sq = e2 + pen
    # an edge F lies in Delta_T when one of its triangles does
    loc = patch @ cell_sq
    for e, v in ghost:
        et = mesh.edge_tris[e]
        inc = sps.csr_matrix(
            (np.ones(2 * len(e)), (np.r_[et[:, 0], np.maximum(et[:, 1], 0)], np.r_[np.arange(len(e)), np.arange(len(e))])),
            shape=(mesh.n_triangles, len(e)),
        )
        hit = (patch @ inc) > 0
        loc += hit.astype(float) @ v
    eps_loc = np.sqrt(patch @ rep.eps_T**2)
    denom = np.sqrt(loc) + eps_loc
    ratio = np.where(denom > 0, rep.eta_T / np.where(denom > 0, denom, 1.0), np.nan)
    kmax, kmin = max(c.k1, c.k2), min(c.k1, c.k2)
    CT = np.ones(mesh.n_triangles) * (kmax / kmin) ** 1.5
    if cut.n_cut:
        ct = cut.cut_tris
        CT[ct] *= np.sqrt(mesh.diameters[ct] / np.maximum(cut.gamma_len, 1e-300))
    rep.extras["efficiency_ratio"] = ratio
    rep.extras["C_T"] = CT
    return rep
