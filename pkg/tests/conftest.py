import numpy as np
import pytest

from sacdrop.droplet import DropletBuilder
from sacdrop.fields import build_grid, refined_grid
from sacdrop.droplet import droplet_reach
from sacdrop.geometry import ShapeSpec, build_boundary

DELTA = 0.2
ELLIPSE = ShapeSpec("ellipse", a=1.2, b=1.0)


@pytest.fixture(scope="session")
def disk():
    return build_boundary(ShapeSpec("disk"), DELTA)


@pytest.fixture(scope="session")
def ellipse():
    return build_boundary(ELLIPSE, DELTA)


@pytest.fixture(scope="session")
def disk_grid(disk):
    return build_grid(disk, 128, 64)


@pytest.fixture(scope="session")
def small_grid(disk):
    return build_grid(disk, 32, 12)


@pytest.fixture(scope="session")
def ellipse_setup(ellipse):
    """Ellipse grid refined around theta = pi/4 with a builder at eps = 0.05."""
    eps = 0.05
    theta0 = np.pi / 4
    g = refined_grid(ellipse, 0.6 * eps, theta0, droplet_reach(eps))
    b = DropletBuilder(g, eps, check_bound=False)
    return g, b, float(ellipse.xi_of_theta(theta0))


@pytest.fixture(scope="session")
def disk_setup(disk):
    eps = 0.05
    g = refined_grid(disk, 0.6 * eps, 0.0, droplet_reach(eps))
    return g, DropletBuilder(g, eps)


def config_text(**sections):
    """INI text from ``section={key: value}`` keyword arguments."""
    out = []
    for name, items in sections.items():
        out.append(f"[{name}]")
        out.extend(f"{k} = {v}" for k, v in items.items())
        out.append("")
    return "\n".join(out)


# -- acceptance reporting ----------------------------------------------------------------
ACCEPTANCE_LINES = {}


def record_acceptance(number, title, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
