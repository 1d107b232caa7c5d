"""Quadrature exactness and reference basis properties."""

import math

import numpy as np
import pytest

from hdg_helmholtz import build_rt_basis, build_scalar_basis, make_quadrature
from hdg_helmholtz.ref_fem import (
    MAX_DEGREE,
    MAX_EXACTNESS,
    SEGMENT,
    TRIANGLE,
    orthonormalize,
    triangle_powers,
)


def triangle_monomial_integral(a, b):
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("degree", [0, 1, 2, 3, 5, 8, 13, 25])
def test_triangle_quadrature_exactness(degree):
    quad = make_quadrature(TRIANGLE, degree)
    assert abs(quad.weights.sum() - 0.5) < 1e-14
    assert quad.weights.min() > 0
    for a, b in triangle_powers(degree):
        value = np.sum(quad.weights * quad.points[:, 0] ** a * quad.points[:, 1] ** b)
        assert abs(value - triangle_monomial_integral(a, b)) < 1e-13


@pytest.mark.parametrize("degree", [0, 1, 4, 9, 25])
def test_segment_quadrature_exactness(degree):
    quad = make_quadrature(SEGMENT, degree)
    assert abs(quad.weights.sum() - 1.0) < 1e-14
    for a in range(degree + 1):
        assert abs(np.sum(quad.weights * quad.points**a) - 1.0 / (a + 1)) < 1e-13


def test_quadrature_bounds_and_domains():
    with pytest.raises(ValueError):
        make_quadrature(TRIANGLE, MAX_EXACTNESS + 1)
    with pytest.raises(ValueError):
        make_quadrature(SEGMENT, -1)
    with pytest.raises(ValueError):
        make_quadrature("square", 2)


@pytest.mark.parametrize("domain,expected_dim", [
    (SEGMENT, lambda p: p + 1),
    (TRIANGLE, lambda p: (p + 1) * (p + 2) // 2),
])
@pytest.mark.parametrize("p", range(MAX_DEGREE + 1))
def test_scalar_basis_dimension_and_orthonormality(domain, expected_dim, p):
    basis = build_scalar_basis(domain, p)
    assert basis.dim == expected_dim(p)
    # cross-check with an independent, finer rule
    quad = make_quadrature(domain, min(2 * p + 6, MAX_EXACTNESS))
    values = basis.evaluate(quad.points)
    gram = (values * quad.weights) @ values.T
    assert np.abs(gram - np.eye(basis.dim)).max() < 1e-12


def test_scalar_basis_constants():
    seg = build_scalar_basis(SEGMENT, 0)
    assert np.allclose(seg.evaluate(np.array([0.1, 0.9])), 1.0)
    tri = build_scalar_basis(TRIANGLE, 0)
    # unit L2 norm on a domain of area 1/2
    assert np.allclose(tri.evaluate(np.array([[0.2, 0.3]])), np.sqrt(2.0))


def test_scalar_basis_table_matches_evaluate():
    basis = build_scalar_basis(TRIANGLE, 3)
    assert np.allclose(basis.values, basis.evaluate(basis.quadrature.points))


def test_degree_out_of_range():
    with pytest.raises(ValueError):
        build_scalar_basis(TRIANGLE, MAX_DEGREE + 1)
    with pytest.raises(ValueError):
        build_rt_basis(-1)


@pytest.mark.parametrize("p", range(MAX_DEGREE + 1))
def test_rt_basis_dimension_and_orthonormality(p):
    basis = build_rt_basis(p)
    assert basis.dim == (p + 1) * (p + 3)
    quad = make_quadrature(TRIANGLE, min(2 * p + 6, MAX_EXACTNESS))
    values = basis.evaluate(quad.points)
    gram = np.einsum("ind,n,jnd->ij", values, quad.weights, values)
    assert np.abs(gram - np.eye(basis.dim)).max() < 1e-12


@pytest.mark.parametrize("p", range(MAX_DEGREE + 1))
def test_rt_divergence_lies_in_pp(p):
    """Expanding div in the degree-p scalar basis must reproduce it."""
    rt = build_rt_basis(p)
    tri = build_scalar_basis(TRIANGLE, p)
    quad = make_quadrature(TRIANGLE, min(2 * p + 6, MAX_EXACTNESS))
    div = rt.evaluate_div(quad.points)
    scal = tri.evaluate(quad.points)
    coeff = (scal * quad.weights) @ div.T
    residual = np.abs(coeff.T @ scal - div).max()
    # divergence tables reach O(100), so compare relative to their size
    assert residual < 1e-12 * max(1.0, np.abs(div).max())


@pytest.mark.parametrize("p", range(MAX_DEGREE + 1))
@pytest.mark.parametrize("edge", [0, 1, 2])
def test_rt_normal_trace_lies_in_pp(p, edge):
    rt = build_rt_basis(p)
    seg = build_scalar_basis(SEGMENT, p)
    quad = make_quadrature(SEGMENT, min(2 * p + 6, MAX_EXACTNESS))
    trace = rt.evaluate_normal_trace(edge, quad.points)
    vals = seg.evaluate(quad.points)
    coeff = (vals * quad.weights) @ trace.T
    residual = np.abs(coeff.T @ vals - trace).max()
    assert residual < 1e-12 * max(1.0, np.abs(trace).max())


def test_rt_divergence_consistent_with_values():
    """Finite differences of the vector field must match the divergence."""
    rt = build_rt_basis(2)
    pts = np.array([[0.3, 0.25], [0.1, 0.6]])
    eps = 1e-6
    div = rt.evaluate_div(pts)
    for d in range(2):
        shift = np.zeros(2)
        shift[d] = eps
        upper = rt.evaluate(pts + shift)[:, :, d]
        lower = rt.evaluate(pts - shift)[:, :, d]
        div = div - (upper - lower) / (2 * eps)
    assert np.abs(div).max() < 1e-8


def test_orthonormalize_rejects_rank_deficiency():
    gram = np.ones((3, 3))
    with pytest.raises(np.linalg.LinAlgError):
        orthonormalize(gram)
