"""Adaptive loop: solve, estimate, mark, refine."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .assembly import Coefficients, ProblemData, assemble, build_dofmap, solve_cutfem
from .benchmarks import Benchmark, make_benchmark
from .cut import build_quadrature, resolve_geometry
from .estimators import (
    cell_source,
    effectivity_report,
    estimate,
    flux_difference,
    interpolant_continuity,
    interpolate_Ih,
    normal_jumps,
)
from .flux import decompose_flux_correction, reconstruct_sigma, standard_rt0
from .mesh import Mesh, generate_mesh, refine
from .multiplier import solve_multiplier

MODES = ("eta", "eta_bar")


class AMRError(RuntimeError):
    def __init__(self, msg, iteration=None):
        super().__init__(msg if iteration is None else f"iteration {iteration}: {msg}")
        self.iteration = iteration


@dataclass
class AMRConfig:
    benchmark: str = "ellipse"
    mu: float | None = None
    mode: str = "eta"
    fraction: float = 0.3
    dof_cap: int | None = None
    gamma: float = 10.0
    gamma_g: float = 0.1
    order: int = 4
    error_order: int = 6
    max_iterations: int = 60
    initial_h: float | None = None
    diagnostics: bool = True
    solver: str = "auto"

    def validate(self) -> None:
        if self.mu is not None and not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.fraction < 1.0:
            raise ValueError(f"fraction must lie in (0, 1), got {self.fraction}")
        if self.dof_cap is not None and not self.dof_cap > 0:
            raise ValueError(f"dof_cap must be positive, got {self.dof_cap}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.gamma_g > 0:
            raise ValueError(f"gamma_g must be positive, got {self.gamma_g}")
        if self.initial_h is not None and not self.initial_h > 0:
            raise ValueError(f"initial_h must be positive, got {self.initial_h}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


def mark(indicators, fraction: float) -> np.ndarray:
    """Dorfler marking: smallest set whose squared indicators reach ``fraction`` of the total.

    Ties are broken by element index; returns sorted element indices.
    """
    eta2 = np.asarray(indicators, dtype=float) ** 2
    if np.any(eta2 < 0) or not np.all(np.isfinite(eta2)):
        raise ValueError("indicators must be finite")
    total = eta2.sum()
    if total <= 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(eta2)), -eta2))
    cum = np.cumsum(eta2[order])
    k = int(np.searchsorted(cum, fraction * total * (1 - 1e-13))) + 1
    return np.sort(order[: min(k, len(eta2))])


@dataclass
class IterationRecord:
    iteration: int
    N: int
    n_triangles: int
    n_cut: int
    eta: float
    eta_gamma: float
    epsilon: float
    error: float
    effectivity: float
    eta_rt0: float
    error_h: float
    eta_hat: float
    min_hmin_ratio: float
    max_h_gamma_ratio: float
    equilibration: float = float("nan")
    conformity_uncut: float = float("nan")
    conformity_cut: float = float("nan")
    theta_residual: float = float("nan")
    decomposition: float = float("nan")
    rt0_coincidence: float = float("nan")
    rt0_eta_gap: float = float("nan")
    interp_ratio: float = float("nan")
    interp_continuity: float = float("nan")
    seconds: float = 0.0


@dataclass(eq=False)
class IterationState:
    mesh: Mesh
    cut: object
    solution: object
    sigma: object
    report: object
    interpolant: object = None


@dataclass(eq=False)
class ConvergenceRecord:
    config: AMRConfig
    iterations: list = field(default_factory=list)
    final: IterationState | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.iterations], dtype=float)

    def slope(self, name: str, last: int = 5) -> float:
        """Least-squares slope of log(name) against log N over the last iterations."""
        n = self.column("N")[-last:]
        v = self.column(name)[-last:]
        return float(np.polyfit(np.log(n), np.log(v), 1)[0])

    def as_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.iterations]


def problem_data(bm: Benchmark, cfg: AMRConfig) -> ProblemData:
    return ProblemData(
        Coefficients(bm.k1, bm.k2), f=bm.f, dirichlet=bm.dirichlet, gamma=cfg.gamma, gamma_g=cfg.gamma_g,
        singular_points=bm.singular_points, order=cfg.order,
    )


def solve_step(mesh: Mesh, bm: Benchmark, cfg: AMRConfig, iteration: int = 0, exact: bool = True):
    """One solve/estimate pass on ``mesh``; returns (IterationRecord, IterationState)."""
    t0 = time.perf_counter()
    mesh, cut = resolve_geometry(mesh, bm.levelset)
    quad = build_quadrature(cut, cfg.order)
    system = assemble(mesh, cut, quad, problem_data(bm, cfg))
    sol = solve_cutfem(system, cfg.solver)
    mult = solve_multiplier(sol)
    sigma = reconstruct_sigma(sol, mult)
    c = system.data.coeffs
    rt0 = standard_rt0(sigma) if c.k1 == c.k2 else None
    rep = estimate(sigma, sol, quad, rt0)
    if exact:
        effectivity_report(rep, sol, quad, bm, cfg.error_order)
    ct = cut.cut_tris
    h = mesh.diameters
    rec = IterationRecord(
        iteration=iteration,
        N=system.dofmap.n,
        n_triangles=mesh.n_triangles,
        n_cut=cut.n_cut,
        eta=rep.eta,
        eta_gamma=rep.eta_gamma,
        epsilon=rep.epsilon,
        error=rep.error,
        effectivity=rep.effectivity,
        eta_rt0=rep.eta_rt0,
        error_h=rep.error_h,
        eta_hat=rep.eta_hat,
        min_hmin_ratio=float((cut.h_min / h[ct]).min()) if len(ct) else float("nan"),
        max_h_gamma_ratio=float((h[ct] / cut.gamma_len).max()) if len(ct) else float("nan"),
    )
    ih = None
    if cfg.diagnostics:
        src = cell_source(sol)
        fh_norm = float(np.sqrt(np.sum(src**2 / mesh.areas)))
        rec.equilibration = float(np.abs(sigma.divergence() * mesh.areas + src).max() / (1.0 + fh_norm))
        rec.conformity_uncut, rec.conformity_cut = normal_jumps(sigma, sol)
        rec.theta_residual = mult.residual
        if cut.n_cut:
            dec = decompose_flux_correction(sigma, sol, quad)
            rec.decomposition = float(dec.residual.max())
            ih = interpolate_Ih(sol)
            ratio = ih.error_T / np.maximum(rep.eta_tilde_T[ct], 1e-300)
            ok = rep.eta_tilde_T[ct] > 1e-14 * max(rep.eta, 1e-300)
            rec.interp_ratio = float(ratio[ok].max()) if ok.any() else 0.0
            rec.interp_continuity = interpolant_continuity(sol, ih)
        else:
            rec.decomposition = 0.0
            rec.interp_ratio = 0.0
            rec.interp_continuity = 0.0
        if rt0 is not None:
            rec.rt0_coincidence = flux_difference(sigma, rt0)
            rec.rt0_eta_gap = abs(rep.eta - rep.eta_rt0) / rep.eta
    rec.seconds = time.perf_counter() - t0
    return rec, IterationState(mesh, cut, sol, sigma, rep, ih)


def count_dofs(mesh: Mesh, bm: Benchmark) -> tuple[Mesh, int]:
    mesh, cut = resolve_geometry(mesh, bm.levelset)
    return mesh, build_dofmap(cut).n


def indicators(state: IterationState, mode: str) -> np.ndarray:
    rep = state.report
    if mode == "eta":
        return rep.eta_T
    return rep.eta_bar(state.mesh)


def initial_mesh(bm: Benchmark, cfg: AMRConfig) -> Mesh:
    return generate_mesh(bm.domain, cfg.initial_h or bm.initial_h)


def run_amr(config: AMRConfig, callback=None, benchmark: Benchmark | None = None) -> ConvergenceRecord:
    """Adaptive loop until the next mesh would exceed the DOF cap."""
    config.validate()
    bm = benchmark or make_benchmark(config.benchmark, config.mu)
    cap = config.dof_cap or bm.dof_cap
    record = ConvergenceRecord(config)
    mesh = initial_mesh(bm, config)
    for it in range(config.max_iterations):
        try:
            rec, state = solve_step(mesh, bm, config, it)
        except Exception as err:  # noqa: BLE001 - re-raised with iteration context
            raise AMRError(f"{type(err).__name__}: {err}", it) from err
        if record.iterations and rec.N <= record.iterations[-1].N:
            raise AMRError("degrees of freedom did not increase", it)
        record.iterations.append(rec)
        record.final = state
        if callback is not None:
            callback(rec, state)
        marked = mark(indicators(state, config.mode), config.fraction)
        if len(marked) == 0:
            break
        nxt, n = count_dofs(refine(state.mesh, marked), bm)
        if n > cap:
            break
        mesh = nxt
    return record
