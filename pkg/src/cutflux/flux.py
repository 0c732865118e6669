"""RT0 and immersed RT0 fields, the operator R_T and the flux reconstruction.

A piecewise RT0 field on a cut cell is stored as ``(a_1, a_2, b)`` with
``tau|_{T^i}(x) = a_i + b (x - x_Gamma)``: both pieces share ``b``, which is
the equal-divergence constraint of E(T).  On an uncut cell ``a_1 = a_2`` and
the reference point is the centroid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import FESolution
from .cut import CUT, CutTopology
from .linalg import batched_solve
from .mesh import Mesh
from .multiplier import MultiplierField, edge_mean_flux


class FluxError(RuntimeError):
    pass


def rot_cw(v):
    """Rotate vectors by 90 degrees clockwise."""
    v = np.asarray(v, dtype=float)
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


# ---------------------------------------------------------------------------
# plain RT0


def rt0_from_fluxes(tri: np.ndarray, fluxes: np.ndarray, ref: np.ndarray | None = None):
    """RT0 field on triangles ``tri`` (n, 3, 2) from outward edge integrals.

    ``fluxes[:, j]`` is the integral of tau.n_T over the edge opposite
    vertex j.  Returns (a, b) with tau(x) = a + b (x - ref), ``ref`` the
    centroid by default.
    """
    tri = np.asarray(tri, dtype=float)
    if ref is None:
        ref = tri.mean(axis=1)
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    c = fluxes / (2.0 * area[:, None])
    b = c.sum(axis=1)
    a = np.einsum("tj,tjd->td", c, ref[:, None, :] - tri)
    return a, b


def rt_interpolate(tri: np.ndarray, w, order: int = 6, ref=None):
    """I_T w for a vector field ``w(x) -> (..., 2)`` on triangles (n, 3, 2)."""
    from .quadrature import map_segments

    tri = np.asarray(tri, dtype=float)
    flux = np.zeros(tri.shape[:2])
    for j in range(3):
        p, q = tri[:, (j + 1) % 3], tri[:, (j + 2) % 3]
        d = q - p
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)  # |F| * outward normal for ccw triangles
        pts, wts = map_segments(p, q, order)
        L = np.linalg.norm(d, axis=1)
        vals = np.einsum("nqd,nd->nq", w(pts), n) / L[:, None]
        flux[:, j] = (wts * vals).sum(axis=1)
    return rt0_from_fluxes(tri, flux, ref)


# ---------------------------------------------------------------------------
# cut-cell algebra


@dataclass(eq=False)
class CutCellGeometry:
    """Per cut cell data needed by R_T (all arrays have leading length nc)."""

    tri: np.ndarray  # (nc, 3, 2) vertices in mesh order
    part_mid: np.ndarray  # (nc, 3, 2, 2): midpoint of F_j^i
    part_len: np.ndarray  # (nc, 3, 2): |F_j^i|
    normal: np.ndarray  # (nc, 3, 2): outward n_T on F_j
    n_gamma: np.ndarray
    x_gamma: np.ndarray
    lone_side: np.ndarray
    k: np.ndarray  # (nc, 2): k_1, k_2

    @property
    def t_gamma(self):
        return rot_cw(self.n_gamma)

    @property
    def n_tri(self):
        """n^tri: unit normal pointing from T^tri into T^quad."""
        return np.where((self.lone_side == 1)[:, None], self.n_gamma, -self.n_gamma)

    @property
    def t_tri(self):
        return rot_cw(self.n_tri)


def cut_cell_geometry(cut: CutTopology, k1: float, k2: float) -> CutCellGeometry:
    mesh = cut.mesh
    ct = cut.cut_tris
    nc = len(ct)
    tri = mesh.tri_coords()[ct]
    mid = np.zeros((nc, 3, 2, 2))
    plen = np.zeros((nc, 3, 2))
    nrm = np.zeros((nc, 3, 2))
    for j in range(3):
        e = mesh.tri_edges[ct, j]
        nrm[:, j] = mesh.edge_normal[e] * mesh.tri_edge_sign[ct, j][:, None]
        for i in (1, 2):
            a, b = cut.edge_segments(e, i)
            mid[:, j, i - 1] = 0.5 * (a + b)
            plen[:, j, i - 1] = np.linalg.norm(b - a, axis=1)
    k = np.tile([k1, k2], (nc, 1)).astype(float)
    return CutCellGeometry(tri, mid, plen, nrm, cut.n_gamma, cut.x_gamma, cut.lone_side, k)


def rt_operator(g: CutCellGeometry) -> np.ndarray:
    """Matrix of R_T on E(T) in the coordinates (a_1x, a_1y, a_2x, a_2y, b), shape (nc, 5, 5).

    Rows: the three edge integrals of tau.n_T, the jump [tau.n_Gamma] and
    the jump [K^{-1} tau.t_Gamma](x_Gamma), jumps taken as side 1 minus side 2.
    """
    nc = len(g.tri)
    R = np.zeros((nc, 5, 5))
    for j in range(3):
        n = g.normal[:, j]
        for i in (0, 1):
            L = g.part_len[:, j, i]
            R[:, j, 2 * i : 2 * i + 2] += L[:, None] * n
            R[:, j, 4] += L * np.einsum("cd,cd->c", g.part_mid[:, j, i] - g.x_gamma, n)
    R[:, 3, 0:2] = g.n_gamma
    R[:, 3, 2:4] = -g.n_gamma
    t = g.t_gamma
    R[:, 4, 0:2] = t / g.k[:, 0, None]
    R[:, 4, 2:4] = -t / g.k[:, 1, None]
    return R


def apply_rt_operator(g: CutCellGeometry, coef: np.ndarray) -> np.ndarray:
    return np.einsum("cij,cj->ci", rt_operator(g), coef)


def _piecewise_const(g: CutCellGeometry, v_tri: np.ndarray) -> np.ndarray:
    """E(T) coordinates of the field equal to v_tri on T^tri and 0 on T^quad."""
    nc = len(g.tri)
    out = np.zeros((nc, 5))
    lone1 = g.lone_side == 1
    out[lone1, 0:2] = v_tri[lone1]
    out[~lone1, 2:4] = v_tri[~lone1]
    return out


def _edge_integrals(g: CutCellGeometry, coef: np.ndarray) -> np.ndarray:
    return apply_rt_operator(g, coef)[:, :3]


def _rt0_as_e(g: CutCellGeometry, fluxes: np.ndarray) -> np.ndarray:
    """Whole-cell RT0 field with given edge integrals, in E(T) coordinates."""
    a, b = rt0_from_fluxes(g.tri, fluxes, ref=g.x_gamma)
    return np.concatenate([a, a, b[:, None]], axis=1)


@dataclass(eq=False)
class ShapeFunctions:
    phi_t: np.ndarray  # (nc, 5)
    phi_n: np.ndarray
    lam_n: np.ndarray
    lam_t: np.ndarray
    alpha_n: np.ndarray
    beta_t: np.ndarray
    A: np.ndarray
    iw_t: np.ndarray  # (I_T omega . t^tri)(x_Gamma)
    ir_t: np.ndarray  # (I_T rho . t^tri)(x_Gamma)


def lambda_shape_functions(g: CutCellGeometry) -> ShapeFunctions:
    """phi_t, phi_n and the closed-form Lambda_n, Lambda_t of every cut cell."""
    t_tri = g.t_tri
    n_tri = g.n_tri
    omega = _piecewise_const(g, t_tri)
    rho = _piecewise_const(g, n_tri)
    I_omega = _rt0_as_e(g, _edge_integrals(g, omega))
    I_rho = _rt0_as_e(g, _edge_integrals(g, rho))
    phi_t = omega - I_omega
    phi_n = rho - I_rho
    # I_T w evaluated at x_Gamma is the constant part (reference point x_Gamma)
    iw_t = np.einsum("cd,cd->c", I_omega[:, 0:2], t_tri)
    ir_t = np.einsum("cd,cd->c", I_rho[:, 0:2], t_tri)
    lone = g.lone_side - 1
    k_tri = g.k[np.arange(len(lone)), lone]
    k_quad = g.k[np.arange(len(lone)), 1 - lone]
    r = 1.0 - k_tri / k_quad
    A = 1.0 - r * iw_t
    alpha_n = r * ir_t / A
    beta_t = k_tri / A
    lam_n = alpha_n[:, None] * phi_t + phi_n
    lam_t = beta_t[:, None] * phi_t
    return ShapeFunctions(phi_t, phi_n, lam_n, lam_t, alpha_n, beta_t, A, iw_t, ir_t)


def solve_rt_operator(g: CutCellGeometry, rhs: np.ndarray) -> np.ndarray:
    """Invert R_T cell by cell; the tangential row is scaled for conditioning."""
    R = rt_operator(g)
    kg = (g.k[:, 0] * g.k[:, 1] / (g.k[:, 0] + g.k[:, 1]))
    h = np.linalg.norm(g.tri[:, 1] - g.tri[:, 0], axis=1)
    scale = np.ones((len(R), 5))
    scale[:, :3] = 1.0 / h[:, None]
    scale[:, 4] = kg
    return batched_solve(R * scale[:, :, None], rhs * scale)


# ---------------------------------------------------------------------------
# the reconstructed flux


@dataclass(eq=False)
class FluxField:
    """sigma_h: per triangle ``a`` (nt, 2 sides, 2), ``b`` (nt,), reference point (nt, 2)."""

    a: np.ndarray
    b: np.ndarray
    ref: np.ndarray
    edge_flux: np.ndarray  # integral of sigma.n_F over each edge
    cut: CutTopology

    def evaluate(self, tris, side, x):
        """sigma on triangles ``tris`` and subdomain ``side`` (1, 2) at points x (..., 2)."""
        tris = np.asarray(tris)
        side = np.asarray(side)
        a = self.a[tris, side - 1]
        return a[..., None, :] + self.b[tris][..., None, None] * (x - self.ref[tris][..., None, :])

    def divergence(self) -> np.ndarray:
        return 2.0 * self.b


def edge_fluxes(sol: FESolution, mult: MultiplierField) -> np.ndarray:
    """Prescribed integral of sigma_h . n_F over every edge."""
    mesh = sol.mesh
    cut = sol.cut
    c = sol.system.data.coeffs
    mean = edge_mean_flux(sol)
    out = np.zeros(mesh.n_edges)
    for i, k in ((0, c.k1), (1, c.k2)):
        on = cut.edge_in[i]
        pth = np.where(on, mult.theta[i].mean(axis=1), 0.0)
        part = cut.edge_part_len[:, i]
        out += np.where(on, part * mean[i] - k * mesh.edge_length * pth, 0.0)
    return out


def reconstruct_sigma(sol: FESolution, mult: MultiplierField) -> FluxField:
    mesh = sol.mesh
    cut = sol.cut
    c = sol.system.data.coeffs
    nt = mesh.n_triangles
    phi_F = edge_fluxes(sol, mult)
    tflux = phi_F[mesh.tri_edges] * mesh.tri_edge_sign
    tri = mesh.tri_coords()
    ref = tri.mean(axis=1)
    a0, b = rt0_from_fluxes(tri, tflux, ref)
    a = np.stack([a0, a0], axis=1)
    if cut.n_cut:
        ct = cut.cut_tris
        g = cut_cell_geometry(cut, c.k1, c.k2)
        rhs = np.zeros((len(ct), 5))
        rhs[:, :3] = tflux[ct]
        coef = solve_rt_operator(g, rhs)
        a[ct, 0] = coef[:, 0:2]
        a[ct, 1] = coef[:, 2:4]
        b[ct] = coef[:, 4]
        ref[ct] = cut.x_gamma
    return FluxField(a, b, ref, phi_F, cut)


def standard_rt0(sigma: FluxField) -> FluxField:
    """RT0 field sharing sigma_h's edge degrees of freedom on every cell."""
    mesh = sigma.cut.mesh
    tflux = sigma.edge_flux[mesh.tri_edges] * mesh.tri_edge_sign
    tri = mesh.tri_coords()
    ref = tri.mean(axis=1)
    a0, b = rt0_from_fluxes(tri, tflux, ref)
    return FluxField(np.stack([a0, a0], axis=1), b, ref, sigma.edge_flux, sigma.cut)


# ---------------------------------------------------------------------------
# decomposition of the flux correction on cut cells


@dataclass(eq=False)
class FluxDecomposition:
    phi0: np.ndarray  # (nc, 5) whole-cell RT0 in E(T) coordinates
    C_n: np.ndarray
    C_t: np.ndarray
    shapes: ShapeFunctions
    correction: np.ndarray  # (nc, 5) sigma_h - K grad_h u_h
    residual: np.ndarray  # (nc,) max pointwise mismatch over subcell points / local scale


def correction_coefficients(sigma: FluxField, sol: FESolution) -> np.ndarray:
    """sigma_h - K grad_h u_h on cut cells in E(T) coordinates."""
    cut = sol.cut
    c = sol.system.data.coeffs
    ct = cut.cut_tris
    grad = sol.gradients()
    out = np.zeros((len(ct), 5))
    out[:, 0:2] = sigma.a[ct, 0] - c.k1 * grad[0, ct]
    out[:, 2:4] = sigma.a[ct, 1] - c.k2 * grad[1, ct]
    out[:, 4] = sigma.b[ct]
    return out


def evaluate_e(coef: np.ndarray, x_gamma: np.ndarray, side: int, x: np.ndarray) -> np.ndarray:
    """Evaluate E(T) fields (nc, 5) on subdomain ``side`` at points x (nc, ..., 2)."""
    a = coef[:, 0:2] if side == 1 else coef[:, 2:4]
    shape = (len(coef),) + (1,) * (x.ndim - 2) + (2,)
    return a.reshape(shape) + coef[:, 4].reshape(shape[:-1] + (1,)) * (x - x_gamma.reshape(shape))


def decompose_flux_correction(sigma: FluxField, sol: FESolution, quad) -> FluxDecomposition:
    cut = sol.cut
    c = sol.system.data.coeffs
    ct = cut.cut_tris
    g = cut_cell_geometry(cut, c.k1, c.k2)
    shapes = lambda_shape_functions(g)
    corr = correction_coefficients(sigma, sol)
    phi0 = _rt0_as_e(g, _edge_integrals(g, corr))
    grad = sol.gradients()
    n, t = cut.n_gamma, cut.t_gamma
    C_n = -np.einsum("cd,cd->c", c.k1 * grad[0, ct] - c.k2 * grad[1, ct], n)
    C_t = -(1.0 / c.k1 - 1.0 / c.k2) * np.einsum("cd,cd->c", phi0[:, 0:2], t) - np.einsum(
        "cd,cd->c", grad[0, ct] - grad[1, ct], t
    )
    recon = phi0 + C_n[:, None] * shapes.lam_n + C_t[:, None] * shapes.lam_t
    diff = corr - recon
    res = np.zeros(len(ct))
    scale = np.zeros(len(ct))
    for s in range(3):
        side = cut.sub_side[:, s]
        pts = quad.sub_pts[:, s]
        for i in (1, 2):
            m = side == i
            if not m.any():
                continue
            d = evaluate_e(diff[m], cut.x_gamma[m], i, pts[m])
            v = evaluate_e(corr[m], cut.x_gamma[m], i, pts[m])
            res[m] = np.maximum(res[m], np.linalg.norm(d, axis=-1).max(axis=1))
            scale[m] = np.maximum(scale[m], np.linalg.norm(v, axis=-1).max(axis=1))
    # flux magnitude on the cell, so that a vanishing correction is not divided by itself
    flux_size = np.linalg.norm(sigma.a[ct], axis=2).max(axis=1) + np.abs(sigma.b[ct]) * sol.mesh.diameters[ct]
    local = np.maximum.reduce([scale, np.abs(C_n) + np.abs(C_t), flux_size])
    return FluxDecomposition(phi0, C_n, C_t, shapes, corr, res / np.where(local > 0, local, 1.0))


def irt_constraint_residuals(sigma: FluxField, cut: CutTopology, k1: float, k2: float) -> np.ndarray:
    """Normal jump, scaled tangential jump at x_Gamma, per cut cell (divergences match by construction)."""
    ct = cut.cut_tris
    a1, a2 = sigma.a[ct, 0], sigma.a[ct, 1]
    nj = np.abs(np.einsum("cd,cd->c", a1 - a2, cut.n_gamma))
    kg = k1 * k2 / (k1 + k2)
    tj = kg * np.abs(np.einsum("cd,cd->c", a1 / k1 - a2 / k2, cut.t_gamma))
    return np.stack([nj, tj], axis=1)
