"""Closed-form benchmark problems with exact solutions.

Every evaluator has the signature ``g(x, y, side)`` where ``side`` (1 or 2,
scalar or broadcastable array) selects the subdomain formula.  Formulas are
evaluated on the whole plane so that they also provide the extensions used
for Dirichlet data of fictitious nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cut import LevelSet, circle_levelset, ellipse_levelset, line_levelset, sinusoidal_levelset
from .mesh import Domain, lshape, square


class BenchmarkError(ValueError):
    pass


@dataclass(eq=False)
class Benchmark:
    name: str
    domain: Domain
    levelset: LevelSet
    k1: float
    k2: float
    u: object
    grad: object
    f: object
    singular_points: tuple = ()
    initial_h: float = 0.25
    dof_cap: int = 30000
    params: dict = field(default_factory=dict)

    def dirichlet(self, x, y, side):
        return self.u(x, y, side)

    def interface_audit(self, n: int = 100, seed: int = 0) -> tuple[float, float]:
        """Max |[u]| and |[K grad u . n]| at points of the interface inside the domain."""
        pts = interface_points(self, n, seed)
        x, y = pts[:, 0], pts[:, 1]
        g = self.levelset.grad(x, y)
        nrm = g / np.linalg.norm(g, axis=1, keepdims=True)
        ju = np.abs(self.u(x, y, 1) - self.u(x, y, 2))
        scale = 1.0 + np.abs(self.u(x, y, 1))
        fl = self.k1 * self.grad(x, y, 1) - self.k2 * self.grad(x, y, 2)
        jf = np.abs(np.einsum("qd,qd->q", fl, nrm))
        fs = 1.0 + np.linalg.norm(self.k1 * self.grad(x, y, 1), axis=1)
        return float((ju / scale).max()), float((jf / fs).max())

    def pde_residual(self, pts: np.ndarray, side: int, h: float = 1e-4) -> np.ndarray:
        """-div(k grad u) - f, the divergence taken by fourth-order central differences of the flux."""
        x, y = pts[:, 0], pts[:, 1]
        k = self.k1 if side == 1 else self.k2
        div = 0.0
        for d, (dx, dy) in enumerate(((h, 0.0), (0.0, h))):
            g = lambda s: k * self.grad(x + s * dx, y + s * dy, side)[..., d]
            div = div + (-g(2) + 8 * g(1) - 8 * g(-1) + g(-2)) / (12 * h)
        return -div - self.f(x, y, side)

    def gradient_residual(self, pts: np.ndarray, side: int, h: float = 1e-4) -> np.ndarray:
        """|grad u - FD grad u| relative to |grad u| plus the round-off level of the stencil."""
        x, y = pts[:, 0], pts[:, 1]
        u = self.u
        fd = np.stack(
            [
                (-u(x + 2 * h, y, side) + 8 * u(x + h, y, side) - 8 * u(x - h, y, side) + u(x - 2 * h, y, side)) / (12 * h),
                (-u(x, y + 2 * h, side) + 8 * u(x, y + h, side) - 8 * u(x, y - h, side) + u(x, y - 2 * h, side)) / (12 * h),
            ],
            axis=-1,
        )
        g = self.grad(x, y, side)
        scale = np.linalg.norm(g, axis=1) + 1e-14 * (1.0 + np.abs(u(x, y, side))) / h
        return np.linalg.norm(g - fd, axis=1) / scale


def interface_points(bm: Benchmark, n: int, seed: int = 0) -> np.ndarray:
    """Points on the interface, located by bisection along random rays or segments."""
    rng = np.random.default_rng(seed)
    ls = bm.levelset
    name = ls.name
    if name == "circle":
        r, cx, cy = ls.params["radius"], ls.params["cx"], ls.params["cy"]
        t = rng.uniform(0.0, 1.5 * np.pi, n)
        return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)
    if name == "ellipse":
        t = rng.uniform(0.0, 2 * np.pi, n)
        return np.stack([ls.params["a"] * np.cos(t), ls.params["b"] * np.sin(t)], axis=1)
    # generic: bisection on random segments with a sign change
    out = []
    while len(out) < n:
        p = rng.uniform(-1, 1, (4 * n, 2))
        q = rng.uniform(-1, 1, (4 * n, 2))
        fp, fq = ls(p[:, 0], p[:, 1]), ls(q[:, 0], q[:, 1])
        ok = fp * fq < 0
        p, q, fp = p[ok], q[ok], fp[ok]
        for _ in range(60):
            m = 0.5 * (p + q)
            fm = ls(m[:, 0], m[:, 1])
            left = fp * fm <= 0
            q = np.where(left[:, None], m, q)
            p = np.where(left[:, None], p, m)
            fp = np.where(left, fp, fm)
        out.extend(0.5 * (p + q))
    return np.asarray(out[:n])


def _polar(x, y):
    rho = np.hypot(x, y)
    th = np.arctan2(y, x)
    th = np.where(th < 0, th + 2 * np.pi, th)
    return rho, th


def example_lshape(mu: float = 1.0) -> Benchmark:
    """Corner singularity on the L-shaped domain with a circular interface."""
    if not mu > 0:
        raise BenchmarkError(f"mu must be positive, got {mu}")
    rho0 = 2.0 * np.sqrt(2.0)
    c = 2.0 / (3.0 * mu) * rho0 ** (-1.0 / 3.0)

    def g(rho):
        return rho0 ** (2.0 / 3.0) + c * (rho - rho0)

    def u(x, y, side):
        rho, th = _polar(x, y)
        s = np.sin(2 * th / 3)
        return np.where(np.asarray(side) == 1, rho ** (2.0 / 3.0) * s, g(rho) * s)

    def grad(x, y, side):
        rho, th = _polar(x, y)
        s, co = np.sin(2 * th / 3), np.cos(2 * th / 3)
        with np.errstate(divide="ignore", invalid="ignore"):
            inner_r = 2.0 / 3.0 * rho ** (-1.0 / 3.0) * s
            inner_t = 2.0 / 3.0 * rho ** (-1.0 / 3.0) * co
            outer_r = c * s
            outer_t = 2.0 / 3.0 * g(rho) / rho * co
        one = np.asarray(side) == 1
        dr = np.where(one, inner_r, outer_r)
        dt = np.where(one, inner_t, outer_t)
        ct, st = np.cos(th), np.sin(th)
        return np.stack(np.broadcast_arrays(dr * ct - dt * st, dr * st + dt * ct), axis=-1)

    def f(x, y, side):
        rho, th = _polar(x, y)
        s = np.sin(2 * th / 3)
        with np.errstate(divide="ignore", invalid="ignore"):
            outer = -mu * s * (c / rho - 4.0 / 9.0 * g(rho) / rho**2)
        return np.where(np.asarray(side) == 1, 0.0 * rho, outer)

    return Benchmark(
        "lshape", lshape(5.0), circle_levelset(rho0), 1.0, mu, u, grad, f,
        singular_points=((0.0, 0.0),), initial_h=1.25 * np.sqrt(2.0), dof_cap=30000, params={"mu": mu},
    )


def example_ellipse(mu: float = 10.0) -> Benchmark:
    """Elliptic interface with a point singularity of the solution at the origin."""
    if not mu > 0:
        raise BenchmarkError(f"mu must be positive, got {mu}")
    a = np.pi / 6.18
    b = 1.5 * a
    k1, k2 = 1.0, mu

    def q(x, y):
        return x * x / a**2 + y * y / b**2

    def u(x, y, side):
        r = q(x, y) ** 0.25
        return np.where(np.asarray(side) == 1, r / k1, r / k2 + 1.0 / k1 - 1.0 / k2)

    def grad(x, y, side):
        qq = q(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = 0.25 * qq ** (-0.75)
        k = np.where(np.asarray(side) == 1, k1, k2)
        gx = w * 2 * x / a**2 / k
        gy = w * 2 * y / b**2 / k
        return np.stack(np.broadcast_arrays(gx, gy), axis=-1)

    def f(x, y, side):
        qq = q(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = -0.25 * qq ** (-0.75) * (2 / a**2 + 2 / b**2) + 3.0 / 16.0 * qq ** (-1.75) * (
                4 * x * x / a**4 + 4 * y * y / b**4
            )
        return val + 0.0 * np.asarray(side)

    return Benchmark(
        "ellipse", square(-1.0, 1.0, -1.0, 1.0), ellipse_levelset(a, b), k1, k2, u, grad, f,
        singular_points=((0.0, 0.0),), initial_h=0.25 * np.sqrt(2.0), dof_cap=16000, params={"mu": mu},
    )


def example_sinusoidal(k1: float = 1.0, k2: float = 10.0) -> Benchmark:
    """Smooth solution with a multiply connected sinusoidal interface."""
    ls = sinusoidal_levelset(0.2)

    def u(x, y, side):
        return ls(x, y) / np.where(np.asarray(side) == 1, k1, k2)

    def grad(x, y, side):
        k = np.where(np.asarray(side) == 1, k1, k2)
        g = ls.grad(x, y)
        return g / np.asarray(k)[..., None]

    def f(x, y, side):
        return 8 * np.pi**2 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y) + 0.0 * np.asarray(side)

    return Benchmark(
        "sinusoidal", square(-1.0, 1.0, -1.0, 1.0), ls, k1, k2, u, grad, f,
        initial_h=0.125 * np.sqrt(2.0), dof_cap=30000, params={"k1": k1, "k2": k2},
    )


def example_patch(k1: float = 1.0, k2: float = 1.0, normal=(1.0, 0.3), offset: float = 0.45,
                  slope: float = 2.0, tangential: float = -1.0) -> Benchmark:
    """Piecewise linear solution across a straight interface; reproduced exactly by the method."""
    nrm = np.asarray(normal, dtype=float)
    nrm = nrm / np.linalg.norm(nrm)
    t = np.array([-nrm[1], nrm[0]])
    ls = line_levelset(normal[0], normal[1], offset)
    c0 = offset / np.linalg.norm(normal)

    def u(x, y, side):
        s = nrm[0] * x + nrm[1] * y - c0
        beta = np.where(np.asarray(side) == 1, slope, slope * k1 / k2)
        return 1.0 + beta * s + tangential * (t[0] * x + t[1] * y)

    def grad(x, y, side):
        beta = np.where(np.asarray(side) == 1, slope, slope * k1 / k2)
        beta = np.broadcast_to(beta, np.broadcast(x, y, beta).shape)
        return beta[..., None] * nrm + tangential * t

    def f(x, y, side):
        return 0.0 * (x + y) + 0.0 * np.asarray(side)

    return Benchmark(
        "patch", square(), ls, k1, k2, u, grad, f, initial_h=0.125 * np.sqrt(2.0), dof_cap=2000,
        params={"k1": k1, "k2": k2},
    )


def make_benchmark(name: str, mu: float | None = None, **kw) -> Benchmark:
    if name == "lshape":
        return example_lshape(1.0 if mu is None else mu)
    if name == "ellipse":
        return example_ellipse(10.0 if mu is None else mu)
    if name == "sinusoidal":
        if mu is not None:
            kw.setdefault("k2", mu)
        return example_sinusoidal(**kw)
    if name == "patch":
        if mu is not None:
            kw.setdefault("k2", mu)
        return example_patch(**kw)
    raise BenchmarkError(f"unknown benchmark {name!r}; choose lshape, ellipse, sinusoidal or patch")
