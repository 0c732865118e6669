import numpy as np
import pytest

from cutflux.amr import AMRConfig, solve_step
from cutflux.benchmarks import example_patch
from cutflux.mesh import generate_mesh

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def patch_step(k1=1.0, k2=1.0, normal=(1.0, 0.3), offset=0.45, n=8):
    bm = example_patch(k1, k2, normal=normal, offset=offset)
    mesh = generate_mesh(bm.domain, np.sqrt(2.0) / n)
    return solve_step(mesh, bm, AMRConfig(benchmark="patch"))


@pytest.fixture(scope="session")
def patch_run():
    return patch_step()


@pytest.fixture(scope="session")
def contrast_patch_run():
    return patch_step(1.0, 10.0)


@pytest.fixture(scope="session")
def ellipse_state():
    from cutflux.benchmarks import example_ellipse

    bm = example_ellipse(10.0)
    mesh = generate_mesh(bm.domain, 2.0 / 16 * np.sqrt(2.0))
    return solve_step(mesh, bm, AMRConfig(benchmark="ellipse", mu=10.0))
