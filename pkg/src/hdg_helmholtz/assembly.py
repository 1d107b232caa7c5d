"""Element-level assembly of the hybridized mixed Helmholtz system.

The discrete unknowns per element are a Raviart-Thomas flux ``sigma`` and a
scalar field ``u``; per facet a scalar flux trace ``sigma_hat_n`` (relative
to the stored facet normal) and a scalar trace ``u_hat``, each of degree
``p``.  ``assemble_element`` returns the dense interior/facet coupling
blocks of the sesquilinear form

    j kappa (sigma, tau) + (u, div tau) + (div sigma, v) - j kappa (c u, v)
    - (u_hat, tau.n) - (sigma.n, v_hat)
    - alpha ([u], [v]) + beta ([sigma], [tau])          per element,
    - (u_hat, v_hat)                                    on the boundary,

with jumps ``[u] = u - u_hat`` and ``[sigma] = sigma.n - s sigma_hat_n``
(``s`` the facet orientation sign of the element).  The right-hand side is
``-(g, v_hat)`` over the boundary.

Volume bases are mapped per geometry class (scalar by composition, flux by
the contravariant Piola map) and re-orthonormalized on the physical
element, so the flux mass block is literally ``j kappa I``.  Facet bases
stay orthonormal on the unit segment, so a facet mass block is ``|F| I``.
The structured mesh contains exactly two element shapes, which makes every
geometry-dependent table cacheable per class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .mesh import Mesh
from .ref_fem import (
    MAX_EXACTNESS,
    REF_EDGE_LENGTHS,
    REF_EDGE_VERTICES,
    REF_VERTICES,
    SEGMENT,
    TRIANGLE,
    QuadratureRule,
    build_rt_basis,
    build_scalar_basis,
    make_quadrature,
    orthonormalize,
)


@dataclass
class ProblemData:
    """Coefficients and boundary excitation of one impedance problem.

    ``coefficient`` is the scalar factor ``c(x)`` in the ``- j kappa c u``
    volume term (``None`` means ``c = 1``); ``excitation`` is the boundary
    datum ``g`` as a callable of physical points.  ``debug_flip_beta_sign``
    flips the sign of every ``beta`` term and exists only as a fault hook
    for the verification command.
    """

    kappa: float
    alpha: float = 1.0
    beta: float = 1.0
    coefficient: Callable[[np.ndarray], np.ndarray] | None = None
    excitation: Callable[[np.ndarray], np.ndarray] | None = None
    debug_flip_beta_sign: bool = False

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")


@dataclass(frozen=True)
class VolumeTables:
    """Physical volume tables at one quadrature rule."""

    ref_points: np.ndarray  # (nq, 2)
    weights: np.ndarray  # (nq,) including the Jacobian determinant
    scalar: np.ndarray  # (n_u, nq)
    flux: np.ndarray  # (n_sigma, nq, 2)
    flux_div: np.ndarray  # (n_sigma, nq)


@dataclass(frozen=True)
class EdgeTables:
    """Physical tables along one local edge at one segment rule."""

    t: np.ndarray  # (nq,) edge-local parameters
    weights: np.ndarray  # (nq,) including the physical edge length
    scalar: np.ndarray  # (n_u, nq) scalar trace
    flux_n: np.ndarray  # (n_sigma, nq) outward normal trace
    length: float


class ElementTables:
    """Physically orthonormal basis tables for one element geometry class.

    All elements of a class share the Jacobian ``J``; only the affine
    offset differs, so every table built here is reused across the class.
    """

    def __init__(self, space: "Space", jac: np.ndarray):
        self.space = space
        self.jac = jac
        self.det = float(np.linalg.det(jac))
        if self.det <= 0:
            raise ValueError("element Jacobian must have positive determinant")
        self.inv_jac = np.linalg.inv(jac)

        # physical orthonormalization: scalars scale by 1/sqrt(det); the
        # Piola-mapped flux span needs a genuine Gram factorization
        quad = space.volume_quad
        raw = self._piola(space.rt_basis.values)
        gram = np.einsum(
            "ind,n,jnd->ij", raw, quad.weights * self.det, raw
        )
        self.flux_transform = orthonormalize(gram)

        self.volume = self._build_volume(quad)
        self.edges = self._build_edges(space.edge_quad)
        self._volume_cache = {quad.exactness_degree: self.volume}
        self._edge_cache = {space.edge_quad.exactness_degree: self.edges}

        self.k_du = (self.volume.flux_div * self.volume.weights) @ self.volume.scalar.T
        self.uwu_sum = sum(
            (e.scalar * e.weights) @ e.scalar.T for e in self.edges
        )
        self.sws_sum = sum(
            (e.flux_n * e.weights) @ e.flux_n.T for e in self.edges
        )
        # facet-basis couplings per local edge and orientation flip
        fb = space.facet_basis
        self.facet_values = []
        self.swm = []
        self.uwm = []
        self.mwm = []
        for loc, e in enumerate(self.edges):
            pair = (fb.evaluate(e.t), fb.evaluate(1.0 - e.t))
            self.facet_values.append(pair)
            self.swm.append(tuple((e.flux_n * e.weights) @ m.T for m in pair))
            self.uwm.append(tuple((e.scalar * e.weights) @ m.T for m in pair))
            self.mwm.append((pair[0] * e.weights) @ pair[0].T)

    # -- mapped evaluation ------------------------------------------------

    def _piola(self, ref_values: np.ndarray) -> np.ndarray:
        """Contravariant Piola map of reference vector values."""
        return np.einsum("de,ine->ind", self.jac, ref_values) / self.det

    def eval_scalar(self, ref_points: np.ndarray) -> np.ndarray:
        values = self.space.scalar_basis.evaluate(ref_points)
        return values / np.sqrt(self.det)

    def eval_flux(self, ref_points: np.ndarray) -> np.ndarray:
        raw = self._piola(self.space.rt_basis.evaluate(ref_points))
        return np.einsum("ij,jnd->ind", self.flux_transform, raw)

    def eval_flux_div(self, ref_points: np.ndarray) -> np.ndarray:
        raw = self.space.rt_basis.evaluate_div(ref_points) / self.det
        return self.flux_transform @ raw

    def eval_flux_normal_trace(self, edge: int, t: np.ndarray) -> np.ndarray:
        """Outward normal trace along local edge ``edge`` at parameters ``t``."""
        raw = self.space.rt_basis.evaluate_normal_trace(edge, t)
        scale = REF_EDGE_LENGTHS[edge] / self.edge_length(edge)
        return self.flux_transform @ raw * scale

    def edge_length(self, edge: int) -> float:
        a, b = REF_EDGE_VERTICES[edge]
        d = self.jac @ (REF_VERTICES[b] - REF_VERTICES[a])
        return float(np.hypot(d[0], d[1]))

    def edge_ref_points(self, edge: int, t: np.ndarray) -> np.ndarray:
        a, b = REF_EDGE_VERTICES[edge]
        return REF_VERTICES[a][None, :] + np.asarray(t)[:, None] * (
            REF_VERTICES[b] - REF_VERTICES[a]
        )[None, :]

    # -- table construction ----------------------------------------------

    def _build_volume(self, quad: QuadratureRule) -> VolumeTables:
        return VolumeTables(
            ref_points=quad.points,
            weights=quad.weights * self.det,
            scalar=self.eval_scalar(quad.points),
            flux=self.eval_flux(quad.points),
            flux_div=self.eval_flux_div(quad.points),
        )

    def _build_edges(self, quad: QuadratureRule) -> list[EdgeTables]:
        tables = []
        for edge in range(3):
            length = self.edge_length(edge)
            ref = self.edge_ref_points(edge, quad.points)
            tables.append(
                EdgeTables(
                    t=quad.points,
                    weights=quad.weights * length,
                    scalar=self.eval_scalar(ref),
                    flux_n=self.eval_flux_normal_trace(edge, quad.points),
                    length=length,
                )
            )
        return tables

    def volume_tables(self, exactness: int) -> VolumeTables:
        """Volume tables at a rule of the given exactness (cached)."""
        if exactness not in self._volume_cache:
            quad = make_quadrature(TRIANGLE, exactness)
            self._volume_cache[exactness] = self._build_volume(quad)
        return self._volume_cache[exactness]

    def edge_tables(self, exactness: int) -> list[EdgeTables]:
        """Per-edge tables at a rule of the given exactness (cached)."""
        if exactness not in self._edge_cache:
            quad = make_quadrature(SEGMENT, exactness)
            self._edge_cache[exactness] = self._build_edges(quad)
        return self._edge_cache[exactness]


class Space:
    """Discrete space of one mesh/degree pair with its DOF layout.

    Interior DOFs per element are ordered flux-then-scalar; skeleton DOFs
    per facet are ``p + 1`` flux-trace modes followed by ``p + 1`` scalar
    trace modes, facets in mesh order.
    """

    def __init__(self, mesh: Mesh, degree: int):
        self.mesh = mesh
        self.degree = degree
        p = degree
        self.volume_quad = make_quadrature(TRIANGLE, min(2 * p + 3, MAX_EXACTNESS))
        self.edge_quad = make_quadrature(SEGMENT, min(2 * p + 3, MAX_EXACTNESS))
        self.rhs_quad = make_quadrature(SEGMENT, min(2 * p + 8, MAX_EXACTNESS))
        self.scalar_basis = build_scalar_basis(TRIANGLE, p)
        self.rt_basis = build_rt_basis(p)
        self.facet_basis = build_scalar_basis(SEGMENT, p)

        self.n_sigma = self.rt_basis.dim
        self.n_u = self.scalar_basis.dim
        self.n_interior = self.n_sigma + self.n_u
        self.n_facet_modes = p + 1
        self.n_facet_local = 6 * self.n_facet_modes
        self.skeleton_dim = 2 * self.n_facet_modes * mesh.n_facets
        self.ndof_volume = self.n_interior * mesh.n_elements

        self.rhs_facet_values = self.facet_basis.evaluate(self.rhs_quad.points)

        # the criss-cross mesh has exactly two geometry classes: the even
        # elements (lower triangles) and the odd ones (upper triangles)
        self._tables = tuple(
            ElementTables(self, mesh.element_jacobian(e)[1]) for e in (0, 1)
        )

    def element_tables(self, elem: int) -> ElementTables:
        return self._tables[elem % 2]

    def element_offset(self, elem: int) -> np.ndarray:
        return self.mesh.element_coords(elem)[0]

    def element_points(self, elem: int, ref_points: np.ndarray) -> np.ndarray:
        """Map reference points into element ``elem``."""
        tables = self.element_tables(elem)
        return self.element_offset(elem)[None, :] + ref_points @ tables.jac.T

    def reference_coords(self, elem: int, points: np.ndarray) -> np.ndarray:
        """Pull physical points back onto the reference triangle."""
        tables = self.element_tables(elem)
        return (points - self.element_offset(elem)[None, :]) @ tables.inv_jac.T

    # -- skeleton DOF layout ----------------------------------------------

    def sigma_hat_dofs(self, facet: int) -> np.ndarray:
        m = self.n_facet_modes
        return np.arange(2 * m * facet, 2 * m * facet + m)

    def u_hat_dofs(self, facet: int) -> np.ndarray:
        m = self.n_facet_modes
        return np.arange(2 * m * facet + m, 2 * m * (facet + 1))

    def element_facet_dofs(self, elem: int) -> np.ndarray:
        m = self.n_facet_modes
        out = np.empty(self.n_facet_local, dtype=int)
        for loc in range(3):
            f = self.mesh.elem_facets[elem, loc]
            out[2 * m * loc : 2 * m * (loc + 1)] = np.arange(
                2 * m * f, 2 * m * (f + 1)
            )
        return out

    def edge_flip(self, elem: int, edge: int) -> bool:
        """True when the facet parameterization runs against the element's."""
        la, lb = ((0, 1), (1, 2), (2, 0))[edge]
        f = self.mesh.elem_facets[elem, edge]
        return self.mesh.facet_vertices[f, 0] != self.mesh.elements[elem, la]


@dataclass
class ElementBlocks:
    """Dense coupling blocks of one element.

    ``a_ii`` couples interior DOFs, ``a_ff`` the element's six facet DOF
    groups (three facets, flux-trace then scalar-trace modes each);
    ``facet_dofs`` maps local facet DOFs to skeleton indices.
    """

    elem: int
    a_ii: np.ndarray
    a_if: np.ndarray
    a_fi: np.ndarray
    a_ff: np.ndarray
    rhs_i: np.ndarray
    rhs_f: np.ndarray
    facet_dofs: np.ndarray


def assemble_element(space: Space, elem: int, data: ProblemData) -> ElementBlocks:
    """Assemble the dense blocks of one element."""
    mesh = space.mesh
    tab = space.element_tables(elem)
    ns, nu, m = space.n_sigma, space.n_u, space.n_facet_modes
    jk = 1j * data.kappa
    alpha = data.alpha
    beta = -data.beta if data.debug_flip_beta_sign else data.beta

    a_ii = np.zeros((ns + nu, ns + nu), dtype=complex)
    a_ii[:ns, :ns] = beta * tab.sws_sum
    a_ii[:ns, :ns] += jk * np.eye(ns)
    a_ii[:ns, ns:] = tab.k_du
    a_ii[ns:, :ns] = tab.k_du.T
    if data.coefficient is None:
        mass_c = np.eye(nu)
    else:
        vol = tab.volume
        c = np.asarray(
            data.coefficient(space.element_points(elem, vol.ref_points)), dtype=float
        )
        mass_c = (vol.scalar * (vol.weights * c)) @ vol.scalar.T
    a_ii[ns:, ns:] = -alpha * tab.uwu_sum - jk * mass_c

    nf = space.n_facet_local
    a_if = np.zeros((ns + nu, nf))
    a_fi = np.zeros((nf, ns + nu))
    a_ff = np.zeros((nf, nf))
    rhs_f = np.zeros(nf, dtype=complex)
    for loc in range(3):
        f = mesh.elem_facets[elem, loc]
        s = mesh.elem_facet_signs[elem, loc]
        flip = int(space.edge_flip(elem, loc))
        swm = tab.swm[loc][flip]
        uwm = tab.uwm[loc][flip]
        mwm = tab.mwm[loc]
        sh = slice(2 * m * loc, 2 * m * loc + m)
        uh = slice(2 * m * loc + m, 2 * m * (loc + 1))
        a_if[:ns, sh] = -beta * s * swm
        a_if[:ns, uh] = -swm
        a_if[ns:, uh] = alpha * uwm
        a_fi[sh, :ns] = -beta * s * swm.T
        a_fi[uh, :ns] = -swm.T
        a_fi[uh, ns:] = alpha * uwm.T
        a_ff[sh, sh] = beta * mwm
        a_ff[uh, uh] = -alpha * mwm
        if mesh.facet_boundary[f]:
            a_ff[uh, uh] -= mwm
            if data.excitation is not None:
                t = space.rhs_quad.points  # boundary facets are never flipped
                g = np.asarray(
                    data.excitation(mesh.facet_points(f, t)), dtype=complex
                )
                w = space.rhs_quad.weights * mesh.facet_lengths[f]
                rhs_f[uh] = -space.rhs_facet_values @ (w * g)

    return ElementBlocks(
        elem=elem,
        a_ii=a_ii,
        a_if=a_if,
        a_fi=a_fi,
        a_ff=a_ff,
        rhs_i=np.zeros(ns + nu, dtype=complex),
        rhs_f=rhs_f,
        facet_dofs=space.element_facet_dofs(elem),
    )


def assemble_all(space: Space, data: ProblemData) -> Iterable[ElementBlocks]:
    """Yield the blocks of every element in mesh order."""
    for elem in range(space.mesh.n_elements):
        yield assemble_element(space, elem, data)


def assemble_rhs(space: Space, data: ProblemData) -> np.ndarray:
    """Assemble the skeleton right-hand side directly facet by facet.

    Independent of the element loop; the trace-test entries are
    ``-(g, v_hat)`` over each boundary facet.
    """
    rhs = np.zeros(space.skeleton_dim, dtype=complex)
    if data.excitation is None:
        return rhs
    mesh = space.mesh
    t = space.rhs_quad.points
    for f in np.flatnonzero(mesh.facet_boundary):
        g = np.asarray(data.excitation(mesh.facet_points(f, t)), dtype=complex)
        w = space.rhs_quad.weights * mesh.facet_lengths[f]
        rhs[space.u_hat_dofs(f)] = -space.rhs_facet_values @ (w * g)
    return rhs
