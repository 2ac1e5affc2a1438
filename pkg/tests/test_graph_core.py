import numpy as np
import pytest
from numpy.testing import assert_allclose

from graphphase import (
    DimensionMismatch,
    DisconnectedGraph,
    DomainViolation,
    DuplicateEdge,
    IndexOutOfRange,
    NegativeTime,
    NonPositiveWeight,
    SelfLoop,
    average,
    build_graph,
    diffuse,
    dirichlet_energy,
    inner_product,
    laplacian_apply,
    mass,
    norm,
    spectral_decompose,
)


def test_build_graph_rejects_bad_edges():
    with pytest.raises(SelfLoop):
        build_graph(3, [(0, 0, 1.0), (0, 1, 1.0), (1, 2, 1.0)])
    with pytest.raises(NonPositiveWeight):
        build_graph(3, [(0, 1, -1.0), (1, 2, 1.0)])
    with pytest.raises(NonPositiveWeight):
        build_graph(3, [(0, 1, 0.0), (1, 2, 1.0)])
    with pytest.raises(IndexOutOfRange):
        build_graph(3, [(0, 3, 1.0), (1, 2, 1.0)])
    with pytest.raises(DuplicateEdge):
        build_graph(3, [(0, 1, 1.0), (1, 0, 2.0), (1, 2, 1.0)])
    with pytest.raises(DisconnectedGraph):
        build_graph(4, [(0, 1, 1.0), (2, 3, 1.0)])
    with pytest.raises(ValueError):
        build_graph(1, [])
    with pytest.raises(ValueError):
        build_graph(2, [(0, 1, 1.0)], r=1.5)


def test_degrees(triangle_r1):
    assert_allclose(triangle_r1.degrees, [2.0, 2.0, 2.0])
    assert_allclose(triangle_r1.degrees_r, [2.0, 2.0, 2.0])
    g = build_graph(2, [(0, 1, 4.0)], r=0.5)
    assert_allclose(g.degrees_r, [2.0, 2.0])


def test_check_field_rejects_bad_shapes(p2):
    with pytest.raises(DimensionMismatch):
        p2.check_field(np.zeros(3))
    with pytest.raises(DomainViolation):
        p2.check_field(np.array([np.nan, 0.0]))
    with pytest.raises(DomainViolation):
        p2.check_field(np.array([np.inf, 0.0]))


def test_inner_product_weighted():
    g = build_graph(3, [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)], r=0.5)
    u = np.array([1.0, 0.0, 0.0])
    v = np.array([1.0, 1.0, 0.0])
    assert_allclose(inner_product(u, v, g), np.sqrt(2.0), rtol=1e-15)


def test_mass_and_average(triangle_r1):
    u = np.array([1.0, 0.5, 0.0])
    assert_allclose(mass(u, triangle_r1), 3.0)
    assert_allclose(average(u, triangle_r1), 0.5)


def test_laplacian_values(p2, triangle_r1):
    assert_allclose(laplacian_apply(np.array([1.0, 0.0]), p2), [1.0, -1.0])
    assert_allclose(
        laplacian_apply(np.array([1.0, 0.0, 0.0]), triangle_r1),
        [1.0, -0.5, -0.5],
    )


def test_laplacian_kills_constants(random_graphs):
    for g in random_graphs:
        ones = np.ones(g.num_vertices)
        assert_allclose(laplacian_apply(ones, g), 0.0, atol=1e-12)


def test_laplacian_self_adjoint_and_psd(random_graphs):
    rng = np.random.default_rng(7)
    for g in random_graphs:
        u = rng.standard_normal(g.num_vertices)
        v = rng.standard_normal(g.num_vertices)
        left = inner_product(laplacian_apply(u, g), v, g)
        right = inner_product(u, laplacian_apply(v, g), g)
        assert_allclose(left, right, rtol=1e-10, atol=1e-12)
        assert inner_product(u, laplacian_apply(u, g), g) >= -1e-12


def test_dirichlet_energy_matches_laplacian_pairing(p2, triangle, random_graphs):
    assert_allclose(dirichlet_energy(np.array([1.0, 0.0]), p2), 0.5)
    assert_allclose(dirichlet_energy(np.array([1.0, 0.0, 0.0]), triangle), 1.0)
    rng = np.random.default_rng(11)
    for g in random_graphs:
        u = rng.standard_normal(g.num_vertices)
        pairing = 0.5 * inner_product(u, laplacian_apply(u, g), g)
        assert_allclose(dirichlet_energy(u, g), pairing, rtol=1e-10, atol=1e-12)


def test_spectrum_p2(p2_spectrum):
    assert_allclose(p2_spectrum.eigenvalues, [0.0, 2.0], atol=1e-12)


@pytest.mark.parametrize("r,expected", [(0.0, [0.0, 3.0, 3.0]), (1.0, [0.0, 1.5, 1.5])])
def test_spectrum_triangle(r, expected):
    g = build_graph(3, [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)], r=r)
    s = spectral_decompose(g)
    assert_allclose(s.eigenvalues, expected, atol=1e-12)


def test_spectrum_invariants(random_graphs_with_spectra):
    for g, s in random_graphs_with_spectra:
        n = g.num_vertices
        assert s.eigenvalues[0] == 0.0
        assert np.all(np.diff(s.eigenvalues) >= -1e-12)
        # ground mode is constant once normalized
        ground = s.vectors[:, 0]
        assert_allclose(ground, ground[0], atol=1e-10)
        # columns are orthonormal in the weighted inner product
        gram = s.vectors.T @ (g.degrees_r[:, None] * s.vectors)
        assert_allclose(gram, np.eye(n), atol=1e-10)
        # each column solves the eigenproblem
        top = max(s.eigenvalues.max(), 1.0)
        for k in range(n):
            defect = laplacian_apply(s.vectors[:, k], g) - s.eigenvalues[k] * s.vectors[:, k]
            assert norm(defect, g) <= 1e-8 * top


def test_diffuse_zero_time_is_identity(p2, p2_spectrum):
    u = np.array([0.3, 0.9])
    out = diffuse(u, 0.0, p2_spectrum)
    assert_allclose(out, u, rtol=0, atol=0)
    assert out is not u


def test_diffuse_rejects_negative_time(p2_spectrum):
    with pytest.raises(NegativeTime):
        diffuse(np.array([1.0, 0.0]), -0.1, p2_spectrum)


def test_diffuse_p2_closed_form(p2, p2_spectrum):
    # two vertices relax at rate exp(-2t) toward the shared average
    u = np.array([1.0, 0.0])
    out = diffuse(u, 0.5 * np.log(2.0), p2_spectrum)
    assert_allclose(out, [0.75, 0.25], rtol=1e-14)
    t = 1.7
    out = diffuse(u, t, p2_spectrum)
    expected = 0.5 + 0.5 * np.exp(-2.0 * t) * np.array([1.0, -1.0])
    assert_allclose(out, expected, rtol=1e-13)


def test_diffuse_conserves_mass_and_bounds(random_graphs_with_spectra):
    rng = np.random.default_rng(23)
    for g, s in random_graphs_with_spectra:
        u = rng.random(g.num_vertices)
        for t in (1e-3, 0.1, 1.0, 25.0):
            out = diffuse(u, t, s)
            assert_allclose(mass(out, g), mass(u, g), rtol=1e-12)
            assert out.min() >= u.min() - 1e-12
            assert out.max() <= u.max() + 1e-12


def test_diffuse_semigroup(random_graphs_with_spectra):
    rng = np.random.default_rng(31)
    for g, s in random_graphs_with_spectra:
        u = rng.random(g.num_vertices)
        once = diffuse(u, 0.7, s)
        twice = diffuse(diffuse(u, 0.3, s), 0.4, s)
        assert norm(once - twice, g) <= 1e-9 * max(norm(u, g), 1.0)


def test_diffuse_strictly_positive(random_graphs_with_spectra):
    for g, s in random_graphs_with_spectra:
        u = np.zeros(g.num_vertices)
        u[0] = 1.0
        out = diffuse(u, 0.05, s)
        assert np.all(out > 0.0)


def test_diffuse_fixes_constants(random_graphs_with_spectra):
    for g, s in random_graphs_with_spectra:
        c = 0.37 * np.ones(g.num_vertices)
        assert_allclose(diffuse(c, 2.0, s), c, rtol=0, atol=1e-12)


def test_long_time_limit_is_weighted_average(random_graphs_with_spectra):
    rng = np.random.default_rng(41)
    for g, s in random_graphs_with_spectra:
        u = rng.random(g.num_vertices)
        out = diffuse(u, 1e6, s)
        assert_allclose(out, average(u, g), atol=1e-9)
