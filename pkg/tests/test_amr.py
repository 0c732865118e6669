import itertools

import numpy as np
import pytest

from cutflux.amr import AMRConfig, AMRError, mark, run_amr
from cutflux.benchmarks import example_patch


def brute_force_mark(eta, fraction):
    """Smallest subset by exhaustive search; ties resolved towards lower indices."""
    eta2 = np.asarray(eta) ** 2
    target = fraction * eta2.sum()
    for k in range(len(eta) + 1):
        best = None
        for sub in itertools.combinations(range(len(eta)), k):
            if eta2[list(sub)].sum() >= target * (1 - 1e-13):
                if best is None or eta2[list(sub)].sum() > eta2[list(best)].sum():
                    best = sub
        if best is not None:
            return k


def test_mark_dominant_element():
    eta = np.sqrt(np.r_[99.0, np.full(99, 1.0 / 99)])
    assert list(mark(eta, 0.5)) == [0]


def test_mark_uniform():
    assert len(mark(np.ones(100), 0.5)) == 50


def test_mark_zero_indicators():
    assert len(mark(np.zeros(10), 0.3)) == 0


def test_mark_tie_break_by_index():
    assert list(mark(np.ones(10), 0.3)) == [0, 1, 2]


def test_mark_rejects_nonfinite():
    with pytest.raises(ValueError):
        mark(np.array([1.0, np.nan]), 0.3)


@pytest.mark.parametrize("seed", range(20))
def test_mark_minimal_cardinality(seed):
    rng = np.random.default_rng(seed)
    eta = rng.exponential(size=9)
    frac = rng.uniform(0.05, 0.95)
    assert len(mark(eta, frac)) == brute_force_mark(eta, frac)


def test_config_validation():
    for kw, field in [({"fraction": 1.0}, "fraction"), ({"dof_cap": 0}, "dof_cap"), ({"mode": "x"}, "mode"),
                      ({"mu": -1.0}, "mu"), ({"gamma": 0.0}, "gamma")]:
        with pytest.raises(ValueError, match=field):
            AMRConfig(**kw).validate()


def test_small_run_records():
    seen = []
    rec = run_amr(AMRConfig(benchmark="ellipse", mu=10.0, dof_cap=1500), callback=lambda r, s: seen.append(r.N))
    n = rec.column("N")
    assert len(n) >= 3 and np.all(np.diff(n) > 0) and n[-1] <= 1500
    assert seen == list(n.astype(int))
    for name in ("eta", "eta_gamma", "epsilon", "error", "effectivity", "min_hmin_ratio", "max_h_gamma_ratio"):
        assert np.isfinite(rec.column(name)).all()
    assert rec.final is not None and rec.final.mesh.n_triangles == rec.iterations[-1].n_triangles
    assert len(rec.as_dicts()) == len(n)


def test_eta_bar_mode_runs():
    rec = run_amr(AMRConfig(benchmark="ellipse", mu=10.0, mode="eta_bar", dof_cap=1500))
    assert rec.iterations[-1].N <= 1500


def test_solver_failure_carries_iteration():
    bm = example_patch()
    bm.dirichlet = lambda x, y, side: np.full(np.shape(x), np.nan)
    with pytest.raises(AMRError, match="iteration 0"):
        run_amr(AMRConfig(benchmark="patch", dof_cap=500), benchmark=bm)


def test_slope_of_power_law():
    from cutflux.amr import ConvergenceRecord, IterationRecord

    rec = ConvergenceRecord(AMRConfig())
    for k, n in enumerate([100, 200, 400, 800, 1600]):
        r = IterationRecord(k, n, 0, 0, 3 * n**-0.5, 0, 0, 0, 0, 0, 0, 0, 0, 0)
        rec.iterations.append(r)
    assert np.isclose(rec.slope("eta"), -0.5)
