import numpy as np
import pytest

from cdjp.codebook import build_codebook, fit_rebalance
from cdjp.colorspace import LabImage, rgb_to_lab
from cdjp.permutation import full_set, greedy_max_hamming_set
from cdjp.puzzlegen import GenConfig
from cdjp.synth import make_corpus


@pytest.fixture(scope="session")
def codebook():
    return build_codebook(10, 4)


@pytest.fixture(scope="session")
def corpus():
    imgs, labels = make_corpus(24, seed=3)
    return [rgb_to_lab(i) for i in imgs], labels


@pytest.fixture(scope="session")
def fitted(codebook, corpus):
    return fit_rebalance(codebook, corpus[0])


@pytest.fixture(scope="session")
def pset4():
    return full_set(4)


@pytest.fixture(scope="session")
def pset9():
    return greedy_max_hamming_set(9, 30, seed=0, pool_size=500)


@pytest.fixture
def desk():
    return GenConfig.desk()


@pytest.fixture(scope="session")
def lab96(corpus):
    return corpus[0][0]


def const_lab(size, l, a, b):
    return LabImage(np.full((size, size), l, np.float32),
                    np.stack([np.full((size, size), a, np.float32), np.full((size, size), b, np.float32)]))


def fd_grad(f, x, h=1e-3):
    """Central differences of a scalar function, evaluated in float64."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-30))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
