"""Basis construction and evaluation against scipy's reference splines."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from degmix import design_matrix, eval_basis, make_basis
from degmix.errors import InvalidDimension, InvalidDomain, OutOfDomain


def scipy_design(spec, times):
    """Independent evaluation through scipy's BSpline design matrix."""
    kn = np.asarray(spec.knots)
    cols = [
        BSpline.basis_element(kn[j:j + 5], extrapolate=False)(times)
        for j in range(spec.q)
    ]
    mat = np.nan_to_num(np.column_stack(cols))
    # scipy's basis elements drop the closing endpoint; patch t == M.
    at_end = np.asarray(times) == spec.domain_end
    mat[at_end] = 0.0
    mat[at_end, -1] = 1.0
    return mat


def test_make_basis_minimal_cubic():
    spec = make_basis(4, 20.0)
    assert spec.q == 4
    assert spec.knots == (0.0,) * 4 + (20.0,) * 4  # no interior knots


def test_make_basis_single_interior_knot():
    spec = make_basis(5, 20.0)
    interior = spec.knots[4:-4]
    assert interior == (10.0,)
    assert eval_basis(spec, 0.0).size == 5


@pytest.mark.parametrize("q", [0, 1, 3])
def test_make_basis_rejects_small_dimension(q):
    with pytest.raises(InvalidDimension):
        make_basis(q, 20.0)


@pytest.mark.parametrize("m", [0.0, -1.0])
def test_make_basis_rejects_bad_domain(m):
    with pytest.raises(InvalidDomain):
        make_basis(5, m)


def test_endpoint_values():
    for q in (4, 5, 9):
        spec = make_basis(q, 7.5)
        first = eval_basis(spec, 0.0)
        last = eval_basis(spec, 7.5)
        np.testing.assert_allclose(first, np.eye(q)[0], atol=1e-15)
        np.testing.assert_allclose(last, np.eye(q)[-1], atol=1e-15)


def test_interior_knot_value_against_scipy():
    spec = make_basis(5, 20.0)
    vec = eval_basis(spec, 10.0)
    assert abs(vec.sum() - 1.0) < 1e-12
    assert (vec > 1e-12).sum() >= 2
    np.testing.assert_allclose(vec, scipy_design(spec, np.array([10.0]))[0], atol=1e-12)


def test_design_matrix_empty():
    spec = make_basis(6, 5.0)
    mat = design_matrix(spec, [])
    assert mat.shape == (0, 6)


def test_design_matrix_endpoint_rows():
    spec = make_basis(5, 20.0)
    mat = design_matrix(spec, [0.0, 20.0])
    np.testing.assert_allclose(mat[0], [1, 0, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(mat[1], [0, 0, 0, 0, 1], atol=1e-15)


def test_design_matrix_full_rank_on_grid():
    spec = make_basis(5, 20.0)
    mat = design_matrix(spec, np.linspace(0.0, 20.0, 81))
    gram_eigs = np.linalg.eigvalsh(mat.T @ mat)
    assert gram_eigs.min() > 1e-8  # rank q
    assert np.abs(mat.sum(axis=1) - 1.0).max() < 1e-12


def test_out_of_domain_rejected():
    spec = make_basis(5, 20.0)
    with pytest.raises(OutOfDomain):
        eval_basis(spec, -0.001)
    with pytest.raises(OutOfDomain):
        eval_basis(spec, 20.001)
    with pytest.raises(OutOfDomain):
        design_matrix(spec, [1.0, 25.0])


@pytest.mark.parametrize("q", [4, 5, 8, 15])
def test_partition_of_unity_and_support(q):
    spec = make_basis(q, 20.0)
    rng = np.random.default_rng(q)
    times = rng.uniform(0.0, 20.0, size=1000)
    mat = design_matrix(spec, times)
    assert np.abs(mat.sum(axis=1) - 1.0).max() < 1e-10
    assert mat.min() >= 0.0
    assert ((mat > 1e-14).sum(axis=1) <= 4).all()  # local support


@pytest.mark.parametrize("q", [4, 5, 8, 15])
def test_matches_scipy_at_random_points(q):
    spec = make_basis(q, 13.0)
    rng = np.random.default_rng(100 + q)
    times = np.concatenate([[0.0, 13.0], rng.uniform(0.0, 13.0, size=300)])
    np.testing.assert_allclose(design_matrix(spec, times), scipy_design(spec, times),
                               atol=1e-12)


@given(
    q=st.integers(min_value=4, max_value=12),
    c=st.floats(min_value=-50, max_value=50, allow_nan=False),
    rel=st.floats(min_value=0.0, max_value=1.0),
)
@settings(max_examples=60, deadline=None)
def test_constant_reproduction(q, c, rel):
    spec = make_basis(q, 8.0)
    value = design_matrix(spec, [rel * 8.0]) @ np.full(q, c)
    assert abs(value[0] - c) < 1e-9 * max(1.0, abs(c))
