"""Acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL line to the summary printed at the end of the
session.  The AMR runs are shared through module-scoped fixtures.
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, patch_step
from cutflux.amr import AMRConfig, run_amr
from cutflux.benchmarks import example_patch
from cutflux.multiplier import solve_multiplier
from cutflux.verify import INTERP_CONSTANT, flux_algebra_metrics, random_cut_cells

# reference tables: (N, eta) for Example 1 and (N, eta + eta_Gamma) for Example 2, mu = 10
TABLE_EX1 = [(7174, 4.5e-2), (11083, 3.6e-2), (16799, 2.8e-2), (25793, 2.7e-2), (28563, 2.2e-2)]
TABLE_EX2A = [(3830, 7.9e-2), (5995, 6.1e-2), (9511, 4.8e-2), (15142, 3.8e-2)]
TABLE_EX2B = [(3486, 7.6e-2), (5379, 6.2e-2), (8506, 4.9e-2), (13410, 4.0e-2)]

RUNS = {
    "ex1": dict(benchmark="lshape", mu=1.0),
    "ex2": dict(benchmark="ellipse", mu=10.0),
    "ex2_bar": dict(benchmark="ellipse", mu=10.0, mode="eta_bar"),
    "ex2_1e6": dict(benchmark="ellipse", mu=1e6),
    "ex3": dict(benchmark="sinusoidal"),
}
_cache = {}


def get_run(key):
    if key not in _cache:
        t0 = time.perf_counter()
        rec = run_amr(AMRConfig(**RUNS[key]))
        _cache[key] = (rec, time.perf_counter() - t0)
    return _cache[key]


@pytest.fixture(scope="module")
def runs():
    return {k: get_run(k)[0] for k in RUNS}


def report(number, title, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}")
    return ok


def at_n(rec, n, name="eta"):
    """log-log interpolation of a column at N (clamped to the recorded range)."""
    return float(np.exp(np.interp(np.log(n), np.log(rec.column("N")), np.log(rec.column(name)))))


def band(rec, table, column="eta", extra=None):
    worst = 0.0
    for n, ref in table:
        v = at_n(rec, n, column)
        if extra is not None:
            v += at_n(rec, n, extra)
        worst = max(worst, abs(v / ref - 1.0))
    return worst


def test_criterion_01_equilibration(runs):
    worst = max(r.column("equilibration").max() for r in runs.values())
    slowest = max(r.column("seconds").max() for r in runs.values())
    ok = worst <= 1e-10 and slowest <= 10.0
    report(1, "equilibration", ok, f"max |div sigma + f_h| / (1+|f_h|) = {worst:.2e} (tol 1e-10), "
           f"slowest iteration {slowest:.2f} s")
    assert ok


def test_criterion_02_conformity(runs):
    unc = max(r.column("conformity_uncut").max() for r in runs.values())
    cut = max(r.column("conformity_cut").max() for r in runs.values())
    ok = unc <= 1e-10 and cut <= 1e-10
    report(2, "flux conformity", ok, f"uncut jump {unc:.2e}, cut-edge mean jump {cut:.2e} (tol 1e-10)")
    assert ok


def test_criterion_03_flux_algebra():
    t0 = time.perf_counter()
    _, g = random_cut_cells(1000, seed=0, log_contrast=6.0)
    mt = flux_algebra_metrics(g)
    dt = time.perf_counter() - t0
    ok = (
        np.isfinite(mt["max_condition"]) and mt["max_condition"] < 1e12
        and mt["lambda_images"] <= 1e-9
        and mt["closed_form_vs_inverse"] <= 1e-9
        and mt["alpha_beta_relative"] <= 1e-9
        and mt["A_minus_floor"] >= -1e-12
        and dt <= 10.0
    )
    report(3, "immersed-flux algebra", ok, f"cond {mt['max_condition']:.1f}, R_T(Lambda) {mt['lambda_images']:.1e}, "
           f"closed form {mt['closed_form_vs_inverse']:.1e}, alpha/beta {mt['alpha_beta_relative']:.1e}, "
           f"A - floor >= {mt['A_minus_floor']:.2e}, {dt:.2f} s")
    assert ok


def test_criterion_04_decomposition(runs):
    worst = max(r.column("decomposition").max() for r in runs.values())
    ok = worst <= 1e-9
    report(4, "decomposition identity", ok, f"max relative residual {worst:.2e} (tol 1e-9)")
    assert ok


def test_criterion_05_patch():
    worst_u = worst_eta = worst_theta = 0.0
    lines = [((1.0, 0.3), 0.45), ((1.0, 0.0), 0.3), ((0.2, 1.0), 0.61), ((-1.0, 1.0), 0.05), ((0.7, -0.5), 0.1)]
    for normal, offset in lines:
        rec, st = patch_step(1.0, 1.0, normal=normal, offset=offset)
        bm = example_patch(1.0, 1.0, normal=normal, offset=offset)
        m = st.mesh
        for i in (1, 2):
            on = st.cut.vert_in[i - 1]
            exact = bm.u(m.vertices[on, 0], m.vertices[on, 1], i)
            worst_u = max(worst_u, np.abs(st.solution.nodal(i)[on] - exact).max())
        worst_eta = max(worst_eta, rec.eta)
        worst_theta = max(worst_theta, solve_multiplier(st.solution).residual)
    ok = worst_u <= 1e-10 and worst_eta <= 1e-10 and worst_theta <= 1e-10
    report(5, "patch test", ok, f"nodal error {worst_u:.1e}, eta {worst_eta:.1e}, theta residual {worst_theta:.1e} "
           f"over {len(lines)} lines")
    assert ok


def test_criterion_06_rt0(runs):
    rec = runs["ex1"]
    coinc = rec.column("rt0_coincidence").max()
    gap = rec.column("rt0_eta_gap").max()
    dev = band(rec, TABLE_EX1)
    ok = coinc <= 1e-10 and gap <= 1e-10 and dev <= 0.5
    report(6, "eta vs eta_RT0", ok, f"pointwise flux difference {coinc:.1e}, |eta - eta_RT0|/eta {gap:.1e}, "
           f"eta at N=7174 {at_n(rec, 7174):.2e} (reference 4.5e-2), worst table deviation {dev:.0%} (band 50%)")
    assert ok


def test_criterion_07_slopes(runs):
    parts = []
    ok = True
    for key in ("ex1", "ex2", "ex2_1e6", "ex3"):
        r = runs[key]
        se, su = r.slope("eta"), r.slope("error")
        ok &= abs(se + 0.5) <= 0.1 and abs(su + 0.5) <= 0.1
        parts.append(f"{key} {se:+.3f}/{su:+.3f}")
    total = sum(get_run(k)[1] for k in ("ex1", "ex2", "ex2_1e6", "ex3"))
    ok &= total <= 600.0
    report(7, "convergence slopes", ok, "eta/error slopes " + ", ".join(parts) + f" (-0.5 +- 0.1); campaign {total:.0f} s")
    assert ok


def test_criterion_08_indicator_modes(runs):
    rec = runs["ex2"]
    last = rec.iterations[-1]
    ratio = last.eta_gamma / last.eta
    bar = runs["ex2_bar"].iterations[-1]
    dev_a = band(rec, TABLE_EX2A, "eta", "eta_gamma")
    dev_b = band(runs["ex2_bar"], TABLE_EX2B, "eta", "eta_gamma")
    ok = ratio <= 0.15 and dev_a <= 0.5 and dev_b <= 0.5
    report(8, "indicator-mode robustness", ok,
           f"eta_Gamma/eta = {ratio:.3f} at N={last.N} (tol 0.15; eta_bar marking gives {bar.eta_gamma / bar.eta:.3f}), "
           f"eta + eta_Gamma table deviation {dev_a:.0%} (a) / {dev_b:.0%} (b) (band 50%)")
    assert ok


def test_criterion_09_interpolant(runs):
    ratio = max(r.column("interp_ratio").max() for r in runs.values())
    cont = max(r.column("interp_continuity").max() for r in runs.values())
    ok = ratio <= INTERP_CONSTANT and cont <= 1e-12
    report(9, "interpolation diagnostic", ok, f"max |I_h u_h - u_h| / eta~_T = {ratio:.2f} (frozen bound {INTERP_CONSTANT}), "
           f"continuity mismatch {cont:.1e}")
    assert ok


def test_criterion_10_effectivity(runs):
    eff = runs["ex2_1e6"].column("effectivity")[-5:]
    spread = eff.max() / eff.min()
    ok = spread <= 2.0
    report(10, "effectivity stability", ok, f"last five effectivities {np.round(eff, 3).tolist()}, max/min {spread:.3f} (tol 2)")
    assert ok


# supporting checks from the adaptive loop's stated properties


def test_modes_agree_at_comparable_n(runs):
    bar = runs["ex2_bar"].iterations[-1]
    assert abs(at_n(runs["ex2"], bar.N) / bar.eta - 1.0) <= 0.15


def test_eta_decreases_after_third_iteration(runs):
    for r in runs.values():
        eta = r.column("eta")[3:]
        assert np.all(np.diff(eta) < 0)


def test_records_finite_and_capped(runs):
    caps = {"ex1": 30000, "ex2": 16000, "ex2_bar": 16000, "ex2_1e6": 16000, "ex3": 30000}
    for key, r in runs.items():
        n = r.column("N")
        assert np.all(np.diff(n) > 0) and n[-1] <= caps[key]
        for name in ("eta", "eta_gamma", "epsilon", "error", "effectivity", "min_hmin_ratio", "max_h_gamma_ratio"):
            assert np.isfinite(r.column(name)).all()


@pytest.mark.xfail(strict=True, reason="eta_T marking leaves the interface coarser than eta_bar marking; see ledger")
def test_cut_cell_counts_similar(runs):
    a = runs["ex2"].iterations[-1].n_cut
    b = runs["ex2_bar"].iterations[-1].n_cut
    assert abs(a - b) <= 0.3 * max(a, b)
