"""Gauss rules on segments and triangles, plus a graded rule for point singularities."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

SUPPORTED_ORDERS = tuple(range(1, 13))


class QuadratureError(ValueError):
    pass


def _check(order):
    if order not in SUPPORTED_ORDERS:
        raise QuadratureError(f"unsupported quadrature order {order}")


@lru_cache(maxsize=None)
def segment_rule(order: int):
    """Gauss-Legendre on [0, 1]: returns (s, w) with w summing to 1."""
    _check(order)
    n = order // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    s, w = 0.5 * (x + 1.0), 0.5 * w
    s.flags.writeable = False
    w.flags.writeable = False
    return s, w


@lru_cache(maxsize=None)
def triangle_rule(order: int):
    """Collapsed (Duffy) Gauss rule on the unit triangle.

    Returns barycentric coordinates (nq, 3) and weights summing to 1, so a
    physical rule is obtained by scaling the weights with the area.
    """
    _check(order)
    n = (order + 3) // 2
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    # the Duffy Jacobian adds one degree in the collapsed direction
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    xi = u.ravel()
    eta = (v * (1.0 - u)).ravel()
    ww = 2.0 * (wu * wv * (1.0 - u)).ravel()
    lam = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    lam.flags.writeable = False
    ww.flags.writeable = False
    return lam, ww


def map_triangles(tri: np.ndarray, order: int):
    """Quadrature points and weights for a stack of triangles ``(..., 3, 2)``."""
    lam, w = triangle_rule(order)
    tri = np.asarray(tri, dtype=float)
    pts = np.einsum("qj,...jd->...qd", lam, tri)
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    area = 0.5 * np.abs(e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])
    return pts, area[..., None] * w


def map_segments(a: np.ndarray, b: np.ndarray, order: int):
    s, w = segment_rule(order)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pts = a[..., None, :] + s[:, None] * (b - a)[..., None, :]
    length = np.linalg.norm(b - a, axis=-1)
    return pts, length[..., None] * w


def graded_triangle_rule(tri: np.ndarray, corner: int, order: int, levels: int = 40):
    """Rule for one triangle with an integrable singularity at vertex ``corner``.

    The triangle is bisected repeatedly towards the singular vertex; each
    level contributes a regular rule on the part away from it.
    """
    tri = np.asarray(tri, dtype=float)
    tri = np.roll(tri, -corner, axis=0)
    pieces = []
    s, a, b = tri
    for _ in range(levels):
        a2 = 0.5 * (s + a)
        b2 = 0.5 * (s + b)
        # trapezoid a2-a-b-b2 as two triangles
        pieces.append((a2, a, b))
        pieces.append((a2, b, b2))
        a, b = a2, b2
    pieces = np.array(pieces)
    pts, w = map_triangles(pieces, order)
    # the innermost triangle (s, a, b) is dropped: its area is 4^-levels |T|
    return pts.reshape(-1, 2), w.ravel()
