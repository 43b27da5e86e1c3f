import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmmse.core import ConfigurationError, DimensionError, stack_real, transmit_alphabet
from qmmse.polytope import active_facets, build_polyhedron, hull_membership, subproblem_columns


def test_shapes_and_offset():
    P = build_polyhedron(3, 8)
    assert P.A.shape == (24, 6)
    assert P.b.shape == (24,)
    np.testing.assert_allclose(P.b, np.cos(np.pi / 8) / np.sqrt(3))
    assert P.R.shape == (24, 7)


def test_row_layout_facet_outermost():
    P = build_polyhedron(2, 4)
    phi = 2 * np.pi * 1 / 4
    # row i*M + m has beta_i on antenna m
    np.testing.assert_allclose(P.A[1 * 2 + 1], [0, 0, np.cos(2 * phi), -np.sin(2 * phi)],
                               atol=1e-15)
    np.testing.assert_allclose(P.A[0 * 2 + 0, :2], [np.cos(phi), -np.sin(phi)], atol=1e-15)


def test_rejects_degenerate_alphabets():
    with pytest.raises(ConfigurationError):
        build_polyhedron(2, 2)
    with pytest.raises(ConfigurationError):
        build_polyhedron(0, 4)


@pytest.mark.parametrize("alpha", [3, 4, 8])
def test_vertices_on_two_facets(alpha):
    M = 2
    P = build_polyhedron(M, alpha)
    X = transmit_alphabet(alpha, M)
    for idx in itertools.product(range(alpha), repeat=M):
        xr = stack_real(X.points[list(idx)])
        assert hull_membership(P, xr)
        # every PSK point is the corner of two edges of its polygon
        assert active_facets(P, xr).sum() == 2 * M


@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 8]), st.integers(1, 4))
def test_convex_combinations_inside(seed, alpha, M):
    rng = np.random.default_rng(seed)
    P = build_polyhedron(M, alpha)
    X = transmit_alphabet(alpha, M)
    pts = X.points[rng.integers(0, alpha, (5, M))]
    w = rng.dirichlet(np.ones(5))
    assert hull_membership(P, stack_real(w @ pts))


def test_points_outside():
    P = build_polyhedron(2, 8)
    X = transmit_alphabet(8, 2)
    assert not hull_membership(P, stack_real(1.01 * X.points[[0, 3]]))
    with pytest.raises(DimensionError):
        hull_membership(P, np.zeros(3))


def test_subproblem_columns():
    P = build_polyhedron(4, 8)
    A, b, R = subproblem_columns(P, 1)
    assert A.shape == (8 * 3, 6)
    assert R.shape == (8 * 3, 7)
    np.testing.assert_allclose(R[:, -1], -b)
    with pytest.raises(DimensionError):
        subproblem_columns(P, 4)
