"""Reference-element quadrature and orthonormal polynomial bases.

Provides Gauss quadrature on the unit segment and the unit reference
triangle ``{xi, eta >= 0, xi + eta <= 1}``, L2-orthonormal scalar bases
``P^p`` on both domains, and the Raviart-Thomas basis
``RT^p = [P^p]^2 + x P^p`` with analytic divergences and edge normal
traces.  Bases are built from tensor products of shifted Legendre
polynomials -- a spanning set whose Gram matrix stays well conditioned
at every supported degree, unlike raw monomials -- by modified
Gram-Schmidt against the quadrature mass matrix, run twice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as np_legendre
from scipy.special import roots_jacobi, roots_legendre

TRIANGLE = "triangle"
SEGMENT = "segment"

MAX_EXACTNESS = 25
# Above degree 4 the Legendre-product spanning set restricted to the
# triangle becomes too ill conditioned for 1e-12 orthonormality in double
# precision, so higher degrees are rejected rather than silently degraded.
MAX_DEGREE = 4

# reference triangle vertices and edges (counterclockwise)
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_EDGE_VERTICES = ((0, 1), (1, 2), (2, 0))
REF_EDGE_NORMALS = np.array(
    [[0.0, -1.0], [1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)], [-1.0, 0.0]]
)
REF_EDGE_LENGTHS = np.array([1.0, np.sqrt(2.0), 1.0])


@dataclass(frozen=True)
class QuadratureRule:
    """Positive quadrature rule on the reference segment or triangle."""

    domain: str
    points: np.ndarray  # (nq,) on the segment, (nq, 2) on the triangle
    weights: np.ndarray
    exactness_degree: int


def make_quadrature(domain: str, exactness_degree: int) -> QuadratureRule:
    """Build a rule integrating polynomials up to ``exactness_degree`` exactly.

    The segment rule is Gauss-Legendre on ``[0, 1]``.  The triangle rule
    collapses the square onto the triangle via ``(a, b) -> (a (1 - b), b)``
    and absorbs the Jacobian ``(1 - b)`` into a Gauss-Jacobi rule, so no
    accuracy is lost at the collapsed edge.

    Raises
    ------
    ValueError
        If the requested exactness is negative or above ``MAX_EXACTNESS``.
    """
    if not 0 <= exactness_degree <= MAX_EXACTNESS:
        raise ValueError(
            f"exactness degree must be in [0, {MAX_EXACTNESS}], got {exactness_degree}"
        )
    npts = exactness_degree // 2 + 1
    if domain == SEGMENT:
        x, w = roots_legendre(npts)
        return QuadratureRule(SEGMENT, 0.5 * (x + 1.0), 0.5 * w, exactness_degree)
    if domain == TRIANGLE:
        xa, wa = roots_legendre(npts)
        xb, wb = roots_jacobi(npts, 1.0, 0.0)
        a = 0.5 * (xa + 1.0)
        b = 0.5 * (xb + 1.0)
        # weight (1 - b) db on [0, 1] equals (1 - x) dx / 4 on [-1, 1]
        wa = 0.5 * wa
        wb = 0.25 * wb
        aa, bb = np.meshgrid(a, b, indexing="ij")
        points = np.column_stack(((aa * (1.0 - bb)).ravel(), bb.ravel()))
        weights = np.outer(wa, wb).ravel()
        return QuadratureRule(TRIANGLE, points, weights, exactness_degree)
    raise ValueError(f"unknown domain {domain!r}")


def _check_degree(degree: int) -> None:
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"degree must be in [0, {MAX_DEGREE}], got {degree}")


def triangle_powers(degree: int) -> np.ndarray:
    """Degree pairs ``(a, b)`` with ``a + b <= degree``, graded order."""
    return np.array(
        [(d - b, b) for d in range(degree + 1) for b in range(d + 1)], dtype=int
    )


def _legendre_tables(
    max_degree: int, t: np.ndarray, derivatives: bool = False
) -> tuple[np.ndarray, np.ndarray | None]:
    """Shifted Legendre polynomials on ``[0, 1]``, orthonormal in L2.

    Returns value and (optionally) derivative tables of shape
    ``(max_degree + 1, n_points)``.
    """
    t = np.asarray(t, dtype=float).ravel()
    x = 2.0 * t - 1.0
    norms = np.sqrt(2.0 * np.arange(max_degree + 1) + 1.0)
    values = np_legendre.legvander(x, max_degree).T * norms[:, None]
    if not derivatives:
        return values, None
    ders = np.zeros_like(values)
    for k in range(1, max_degree + 1):
        coeff = np.zeros(k + 1)
        coeff[k] = 1.0
        # chain rule: d/dt = 2 d/dx for x = 2 t - 1
        ders[k] = 2.0 * norms[k] * np_legendre.legval(x, np_legendre.legder(coeff))
    return values, ders


def _eval_seed_2d(degrees: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate seed products ``L_a(xi) L_b(eta)``; shape (n_seed, n_points)."""
    max_deg = int(degrees.max(initial=0))
    vx, _ = _legendre_tables(max_deg, points[:, 0])
    vy, _ = _legendre_tables(max_deg, points[:, 1])
    return vx[degrees[:, 0]] * vy[degrees[:, 1]]


def _eval_seed_1d(degrees: np.ndarray, points: np.ndarray) -> np.ndarray:
    values, _ = _legendre_tables(int(degrees.max(initial=0)), points)
    return values[degrees]


def orthonormalize(gram: np.ndarray) -> np.ndarray:
    """Coefficients of an orthonormal basis w.r.t. the Gram matrix.

    Modified Gram-Schmidt in the Gram inner product, run twice; the second
    pass restores orthonormality to machine precision even when the
    spanning set is badly conditioned.  Returns ``C`` with
    ``C @ gram @ C.T = I``.
    """
    n = gram.shape[0]
    coeffs = np.eye(n)
    scale = np.sqrt(np.diag(gram))
    for _ in range(2):
        for i in range(n):
            row = coeffs[i]
            for j in range(i):
                row -= (coeffs[j] @ gram @ row) * coeffs[j]
            norm_sq = row @ gram @ row
            if not norm_sq > (1e-14 * scale[i]) ** 2:
                raise np.linalg.LinAlgError(
                    f"rank deficiency while orthonormalizing function {i}"
                )
            row /= np.sqrt(norm_sq)
    return coeffs


@dataclass(frozen=True)
class ScalarBasis:
    """L2-orthonormal polynomial basis on the reference segment or triangle.

    ``values[i, q]`` tabulates basis function ``i`` at the stored quadrature
    points; arbitrary points go through :meth:`evaluate`.
    """

    domain: str
    degree: int
    dim: int
    seed_degrees: np.ndarray  # (dim, 2) Legendre degrees per factor
    coeffs: np.ndarray  # (dim, n_seed)
    quadrature: QuadratureRule
    values: np.ndarray  # (dim, nq)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Basis values at arbitrary reference points, shape (dim, n)."""
        points = np.asarray(points, dtype=float)
        if self.domain == SEGMENT:
            seed = _eval_seed_1d(self.seed_degrees[:, 0], points)
        else:
            seed = _eval_seed_2d(self.seed_degrees, np.atleast_2d(points))
        return self.coeffs @ seed


def build_scalar_basis(
    domain: str, degree: int, quadrature: QuadratureRule | None = None
) -> ScalarBasis:
    """Build the orthonormal ``P^p`` basis on the segment or triangle.

    The default quadrature has exactness ``2 p + 3``, enough for the Gram
    matrix and for the mass/stiffness integrals met in assembly.
    """
    _check_degree(degree)
    if quadrature is None:
        quadrature = make_quadrature(domain, 2 * degree + 3)
    elif quadrature.domain != domain:
        raise ValueError("quadrature domain does not match basis domain")
    if quadrature.exactness_degree < 2 * degree:
        raise ValueError("quadrature cannot integrate the Gram matrix exactly")

    if domain == SEGMENT:
        degrees = np.column_stack((np.arange(degree + 1), np.zeros(degree + 1, int)))
        seed = _eval_seed_1d(degrees[:, 0], quadrature.points)
    elif domain == TRIANGLE:
        degrees = triangle_powers(degree)
        seed = _eval_seed_2d(degrees, quadrature.points)
    else:
        raise ValueError(f"unknown domain {domain!r}")

    gram = (seed * quadrature.weights[None, :]) @ seed.T
    coeffs = orthonormalize(gram)
    return ScalarBasis(
        domain=domain,
        degree=degree,
        dim=degrees.shape[0],
        seed_degrees=degrees,
        coeffs=coeffs,
        quadrature=quadrature,
        values=coeffs @ seed,
    )


@dataclass(frozen=True)
class RTBasis:
    """Orthonormal Raviart-Thomas basis ``RT^p`` on the reference triangle.

    The spanning set pairs each orthonormal scalar basis function with the
    two coordinate directions (covering ``[P^p]^2``) and adds ``x q`` for
    total-degree-p seed polynomials ``q``, whose leading homogeneous parts
    span the degree-p homogeneous polynomials; the dimension is
    ``(p + 1)(p + 3)``.  Seeding the vector part with an already
    orthonormal basis keeps the Gram matrix near the identity, so the
    final coefficients stay small and evaluation loses no precision to
    cancellation.  Divergences (in ``P^p``) and per-edge normal traces
    (degree <= p along each straight edge) are evaluated analytically.
    """

    degree: int
    dim: int
    scalar: ScalarBasis  # orthonormal P^p factor of the vector seed
    radial_degrees: np.ndarray  # (p + 1, 2) Legendre degrees of the x q tail
    coeffs: np.ndarray  # (dim, n_seed) w.r.t. [(phi, 0), (0, phi), x q]
    quadrature: QuadratureRule
    values: np.ndarray  # (dim, nq, 2)
    divergences: np.ndarray  # (dim, nq)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Vector values at reference points, shape (dim, n, 2)."""
        seed = _rt_seed_values(self.scalar, self.radial_degrees, points)
        return np.einsum("is,snd->ind", self.coeffs, seed)

    def evaluate_div(self, points: np.ndarray) -> np.ndarray:
        """Divergence values at reference points, shape (dim, n)."""
        return self.coeffs @ _rt_seed_divergences(
            self.scalar, self.radial_degrees, points
        )

    def evaluate_normal_trace(self, edge: int, t: np.ndarray) -> np.ndarray:
        """Normal-trace values along reference edge ``edge``.

        ``t`` parameterizes the edge from its first to its second vertex;
        the trace is taken against the outward reference normal.
        """
        a, b = REF_EDGE_VERTICES[edge]
        pts = REF_VERTICES[a][None, :] + np.asarray(t, dtype=float)[:, None] * (
            REF_VERTICES[b] - REF_VERTICES[a]
        )[None, :]
        return self.evaluate(pts) @ REF_EDGE_NORMALS[edge]


def _rt_seed_values(
    scalar: ScalarBasis, radial_degrees: np.ndarray, points: np.ndarray
) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    phi = scalar.evaluate(points)
    q = _eval_seed_2d(radial_degrees, points)
    n_p = scalar.dim
    seed = np.zeros((2 * n_p + len(radial_degrees), points.shape[0], 2))
    seed[:n_p, :, 0] = phi
    seed[n_p : 2 * n_p, :, 1] = phi
    seed[2 * n_p :, :, 0] = q * points[None, :, 0]
    seed[2 * n_p :, :, 1] = q * points[None, :, 1]
    return seed


def _rt_seed_divergences(
    scalar: ScalarBasis, radial_degrees: np.ndarray, points: np.ndarray
) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    max_deg = int(
        max(scalar.seed_degrees.max(initial=0), radial_degrees.max(initial=0))
    )
    vx, dx = _legendre_tables(max_deg, points[:, 0], derivatives=True)
    vy, dy = _legendre_tables(max_deg, points[:, 1], derivatives=True)
    sa, sb = scalar.seed_degrees[:, 0], scalar.seed_degrees[:, 1]
    ra, rb = radial_degrees[:, 0], radial_degrees[:, 1]

    n_p = scalar.dim
    div = np.zeros((2 * n_p + len(radial_degrees), points.shape[0]))
    div[:n_p] = scalar.coeffs @ (dx[sa] * vy[sb])  # d phi / d xi
    div[n_p : 2 * n_p] = scalar.coeffs @ (vx[sa] * dy[sb])  # d phi / d eta
    # div(x q) = 2 q + x . grad q
    div[2 * n_p :] = (
        2.0 * vx[ra] * vy[rb]
        + points[None, :, 0] * (dx[ra] * vy[rb])
        + points[None, :, 1] * (vx[ra] * dy[rb])
    )
    return div


def build_rt_basis(degree: int, quadrature: QuadratureRule | None = None) -> RTBasis:
    """Build the orthonormal ``RT^p`` basis on the reference triangle."""
    _check_degree(degree)
    if quadrature is None:
        quadrature = make_quadrature(TRIANGLE, 2 * degree + 3)
    if quadrature.exactness_degree < 2 * (degree + 1):
        raise ValueError("quadrature cannot integrate the Gram matrix exactly")

    scalar = build_scalar_basis(TRIANGLE, degree, quadrature)
    radial_degrees = triangle_powers(degree)[-(degree + 1) :]  # total degree p
    seed = _rt_seed_values(scalar, radial_degrees, quadrature.points)
    gram = np.einsum("ind,n,jnd->ij", seed, quadrature.weights, seed)
    coeffs = orthonormalize(gram)
    return RTBasis(
        degree=degree,
        dim=(degree + 1) * (degree + 3),
        scalar=scalar,
        radial_degrees=radial_degrees,
        coeffs=coeffs,
        quadrature=quadrature,
        values=np.einsum("is,snd->ind", coeffs, seed),
        divergences=coeffs
        @ _rt_seed_divergences(scalar, radial_degrees, quadrature.points),
    )
