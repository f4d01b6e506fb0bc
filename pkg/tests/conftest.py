import numpy as np
import pytest

from qnvp.core import ParticleEnsemble, make_grid


def random_ensemble(rng, n, dim=2, vscale=1.0, weights=None):
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    return ParticleEnsemble(rng.random((n, dim)), vscale * rng.standard_normal((n, dim)), w)


def lattice_ensemble(grid, velocity=None, weights=None):
    """One particle on every grid node, total mass 1 by default."""
    x = grid.nodes
    n = len(x)
    v = np.zeros_like(x) if velocity is None else np.broadcast_to(np.asarray(velocity, float), x.shape)
    w = np.full(n, 1.0 / n) if weights is None else weights
    return ParticleEnsemble(x, v, w)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def grid32():
    return make_grid(2, 32)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
