import numpy as np
import pytest

from graphphase import build_graph, random_connected_graph, spectral_decompose


@pytest.fixture(scope="session")
def p2():
    return build_graph(2, [(0, 1, 1.0)])


@pytest.fixture(scope="session")
def p2_spectrum(p2):
    return spectral_decompose(p2)


@pytest.fixture(scope="session")
def triangle():
    return build_graph(3, [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)])


@pytest.fixture(scope="session")
def triangle_r1():
    return build_graph(3, [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)], r=1.0)


@pytest.fixture(scope="session")
def random_graphs():
    """A small pool of seeded instances spanning sizes and vertex measures."""
    rng = np.random.default_rng(20240817)
    graphs = []
    for n, r in [(5, 0.0), (7, 0.5), (9, 1.0), (12, 0.0), (15, 0.5)]:
        graphs.append(random_connected_graph(n, rng, r=r))
    return graphs


@pytest.fixture(scope="session")
def random_graphs_with_spectra(random_graphs):
    return [(g, spectral_decompose(g)) for g in random_graphs]
