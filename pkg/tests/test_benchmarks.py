import numpy as np
import pytest

from cutflux.benchmarks import (
    BenchmarkError,
    example_ellipse,
    example_lshape,
    example_patch,
    example_sinusoidal,
    interface_points,
    make_benchmark,
)
from cutflux.verify import _side_samples

ALL = [
    example_lshape(1.0),
    example_lshape(10.0),
    example_ellipse(10.0),
    example_ellipse(1e6),
    example_sinusoidal(),
    example_patch(1.0, 4.0),
]


@pytest.mark.parametrize("bm", ALL, ids=lambda b: f"{b.name}-{b.k2:g}")
def test_interface_conditions(bm):
    ju, jf = bm.interface_audit(200, seed=1)
    assert ju < 1e-12 and jf < 1e-10


@pytest.mark.parametrize("bm", ALL, ids=lambda b: f"{b.name}-{b.k2:g}")
def test_pde_and_gradient_by_finite_differences(bm):
    rng = np.random.default_rng(0)
    for side in (1, 2):
        pts = _side_samples(bm, side, rng, 20)
        res = bm.pde_residual(pts, side, h=1e-3)
        scale = 1.0 + np.abs(bm.f(pts[:, 0], pts[:, 1], side))
        assert (np.abs(res) / scale).max() < 1e-5
        assert bm.gradient_residual(pts, side, h=1e-3).max() < 1e-5


def test_interface_points_on_levelset():
    for bm in ALL:
        p = interface_points(bm, 50, 2)
        assert np.abs(bm.levelset(p[:, 0], p[:, 1])).max() < 1e-9


@pytest.mark.parametrize("factory", [example_lshape, example_ellipse])
def test_nonpositive_mu_rejected(factory):
    for mu in (0.0, -1.0, float("nan")):
        with pytest.raises(BenchmarkError, match="mu must be positive"):
            factory(mu)


def test_lshape_values():
    bm = example_lshape(1.0)
    # u = rho^(2/3) sin(2 theta / 3) inside: at (1, 1), theta = pi/4
    r = np.sqrt(2.0)
    assert np.isclose(bm.u(1.0, 1.0, 1), r ** (2 / 3) * np.sin(np.pi / 6))
    # theta measured in [0, 2 pi): the re-entrant quadrant x > 0, y < 0 is excluded from the domain
    assert not bm.domain.contains(np.array([1.0]), np.array([-1.0]))[0]
    assert bm.k1 == 1.0 and bm.k2 == 1.0


def test_ellipse_parameters():
    bm = example_ellipse(10.0)
    a = np.pi / 6.18
    assert np.isclose(bm.levelset.params["a"], a) and np.isclose(bm.levelset.params["b"], 1.5 * a)
    # u is continuous at the interface and equals 1/k1 there
    assert np.isclose(bm.u(a, 0.0, 1), 1.0) and np.isclose(bm.u(a, 0.0, 2), 1.0)
    assert bm.dof_cap == 16000


def test_sinusoidal_levelset_sign():
    bm = example_sinusoidal()
    assert bm.levelset(0.0, 0.0) < 0
    assert bm.k1 == 1.0 and bm.k2 == 10.0


def test_make_benchmark():
    assert make_benchmark("lshape").k2 == 1.0
    assert make_benchmark("ellipse").k2 == 10.0
    assert make_benchmark("ellipse", 1e6).k2 == 1e6
    with pytest.raises(BenchmarkError, match="unknown benchmark"):
        make_benchmark("square")
