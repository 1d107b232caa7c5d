"""Error measurement, invariant checks and convergence-rate fitting.

The checks in this module come in two families.  Error norms compare the
discrete solution against a smooth reference field using over-integrated
quadrature.  Invariant checks (energy identities, stability bounds, local
facet elimination) are algebraic consequences of the discrete system
itself; they integrate with exactly the rules used during assembly, so
their residuals sit at solver precision independently of how well the
quadrature resolves the data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .assembly import Space
from .ref_fem import MAX_EXACTNESS, SEGMENT, make_quadrature
from .solver import Solution


@dataclass(frozen=True)
class ExactSolution:
    """Reference field with flux and impedance trace.

    ``u`` and ``sigma`` map point arrays ``(n, 2)`` to values ``(n,)`` and
    ``(n, 2)``; ``boundary_g`` evaluates ``sigma . n + u`` on the domain
    boundary using the outward normal inferred from the point position.
    """

    u: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    boundary_g: Callable[[np.ndarray], np.ndarray]


def outward_normals(
    points: np.ndarray,
    xlim: tuple[float, float],
    ylim: tuple[float, float],
    tol: float = 1e-10,
) -> np.ndarray:
    """Outward unit normal of an axis-aligned rectangle at boundary points."""
    points = np.atleast_2d(points)
    scale = max(xlim[1] - xlim[0], ylim[1] - ylim[0])
    normals = np.zeros_like(points)
    on_edge = np.zeros(points.shape[0], dtype=bool)
    for value, axis, sign in (
        (xlim[0], 0, -1.0),
        (xlim[1], 0, 1.0),
        (ylim[0], 1, -1.0),
        (ylim[1], 1, 1.0),
    ):
        hit = ~on_edge & (np.abs(points[:, axis] - value) <= tol * scale)
        normals[hit, axis] = sign
        on_edge |= hit
    if not on_edge.all():
        raise ValueError("point not on the domain boundary")
    return normals


def plane_wave(
    kappa: float,
    theta: float,
    xlim: tuple[float, float] = (0.0, 1.0),
    ylim: tuple[float, float] = (0.0, 1.0),
) -> ExactSolution:
    """Plane wave ``exp(j kappa (x, y) . d)`` travelling along angle ``theta``.

    The associated flux is ``d u``, so the pair solves the mixed system
    exactly and ``u(0, 0) = 1``.
    """
    d = np.array([np.cos(theta), np.sin(theta)])

    def u(points):
        points = np.atleast_2d(points)
        return np.exp(1j * kappa * (points @ d))

    def sigma(points):
        return d[None, :] * u(points)[:, None]

    def boundary_g(points):
        n = outward_normals(points, xlim, ylim)
        return u(points) * (1.0 + n @ d)

    return ExactSolution(u=u, sigma=sigma, boundary_g=boundary_g)


# ---------------------------------------------------------------------------
# projections


def l2_project_volume(
    space: Space,
    elem: int,
    f: Callable[[np.ndarray], np.ndarray],
    kind: str = "scalar",
    exactness: int | None = None,
) -> np.ndarray:
    """L2 projection of a field onto one element's scalar or flux basis."""
    if exactness is None:
        exactness = min(2 * space.degree + 4, MAX_EXACTNESS)
    tab = space.element_tables(elem)
    vol = tab.volume_tables(exactness)
    points = space.element_points(elem, vol.ref_points)
    values = np.asarray(f(points))
    if kind == "scalar":
        basis = vol.scalar
        rhs = (basis * vol.weights) @ values
        gram = (basis * vol.weights) @ basis.T
    elif kind == "flux":
        basis = vol.flux
        rhs = np.einsum("ind,n,nd->i", basis, vol.weights, values)
        gram = np.einsum("ind,n,jnd->ij", basis, vol.weights, basis)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return np.linalg.solve(gram, rhs)


def l2_project_facet(
    space: Space,
    facet: int,
    f: Callable[[np.ndarray], np.ndarray],
    exactness: int | None = None,
) -> np.ndarray:
    """L2 projection of a boundary/interface field onto one facet's basis."""
    if exactness is None:
        exactness = min(2 * space.degree + 4, MAX_EXACTNESS)
    quad = make_quadrature(SEGMENT, exactness)
    values = np.asarray(f(space.mesh.facet_points(facet, quad.points)))
    basis = space.facet_basis.evaluate(quad.points)
    w = quad.weights * space.mesh.facet_lengths[facet]
    gram = (basis * w) @ basis.T
    return np.linalg.solve(gram, (basis * w) @ values)


# ---------------------------------------------------------------------------
# solution evaluation helpers


def _facet_coeffs(sol: Solution) -> tuple[np.ndarray, np.ndarray]:
    """Per-facet flux-trace and scalar-trace coefficients, shapes (nf, p+1)."""
    m = sol.space.n_facet_modes
    per_facet = sol.skeleton.reshape(sol.space.mesh.n_facets, 2 * m)
    return per_facet[:, :m], per_facet[:, m:]


def _interior_coeffs(sol: Solution) -> tuple[np.ndarray, np.ndarray]:
    ns = sol.space.n_sigma
    return sol.interior[:, :ns], sol.interior[:, ns:]


def _class_elements(space: Space) -> tuple[np.ndarray, np.ndarray]:
    ne = space.mesh.n_elements
    return np.arange(0, ne, 2), np.arange(1, ne, 2)


def _element_quad_points(space: Space, elems: np.ndarray, ref_points: np.ndarray):
    """Physical quadrature points of many same-class elements, (ne, nq, 2)."""
    tab = space.element_tables(elems[0])
    offsets = space.mesh.vertices[space.mesh.elements[elems, 0]]
    return offsets[:, None, :] + ref_points @ tab.jac.T


def _facet_quad_points(space: Space, facets: np.ndarray, t: np.ndarray):
    verts = space.mesh.vertices
    a = verts[space.mesh.facet_vertices[facets, 0]]
    b = verts[space.mesh.facet_vertices[facets, 1]]
    return a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]


def sample_solution(sol: Solution, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the scalar field at arbitrary physical points.

    Returns ``(values, inside)``; values are zero where ``inside`` is
    False (point outside the domain).
    """
    space = sol.space
    points = np.atleast_2d(points)
    elems = space.mesh.locate(points)
    inside = elems >= 0
    values = np.zeros(points.shape[0], dtype=complex)
    _, coeff_u = _interior_coeffs(sol)
    for cls in (0, 1):
        sel = np.flatnonzero(inside & (elems % 2 == cls))
        if sel.size == 0:
            continue
        tab = space.element_tables(cls)
        offsets = space.mesh.vertices[space.mesh.elements[elems[sel], 0]]
        ref = (points[sel] - offsets) @ tab.inv_jac.T
        basis = tab.eval_scalar(ref)  # (n_u, n_sel)
        values[sel] = np.einsum("ei,ie->e", coeff_u[elems[sel]], basis)
    return values, inside


# ---------------------------------------------------------------------------
# energy identities and stability


@dataclass
class EnergyReport:
    """Residuals and ingredients of the two discrete energy identities.

    The real identity balances the jump/boundary dissipation against
    ``Re (g, u_hat)``; the imaginary one balances the weighted field
    energies against ``-Im (g, u_hat)``.  Residuals are normalized by
    ``max(|lhs|, |rhs|, ||g||^2)``.
    """

    real_residual: float
    imag_residual: float
    jump_energy: float
    boundary_trace_sq: float
    sigma_sq: float
    u_sq_weighted: float
    g_pairing: complex
    g_sq: float


def check_energy_identities(sol: Solution) -> EnergyReport:
    space, data = sol.space, sol.data
    mesh = space.mesh
    coeff_s, coeff_u = _interior_coeffs(sol)
    hat_s, hat_u = _facet_coeffs(sol)

    jump_energy = 0.0
    sigma_sq = 0.0
    u_sq = 0.0
    for cls, elems in zip((0, 1), _class_elements(space)):
        tab = space.element_tables(cls)
        vol = tab.volume
        # orthonormal volume bases: field energies are coefficient norms,
        # but the c-weighted scalar mass must match the assembled one
        sigma_sq += float(np.sum(np.abs(coeff_s[elems]) ** 2))
        if data.coefficient is None:
            u_sq += float(np.sum(np.abs(coeff_u[elems]) ** 2))
        else:
            pts = _element_quad_points(space, elems, vol.ref_points)
            c = np.asarray(data.coefficient(pts.reshape(-1, 2))).reshape(
                len(elems), -1
            )
            u_vals = coeff_u[elems] @ vol.scalar
            u_sq += float(np.sum(vol.weights * c * np.abs(u_vals) ** 2))
        for loc in range(3):
            edge = tab.edges[loc]
            facets = mesh.elem_facets[elems, loc]
            signs = mesh.elem_facet_signs[elems, loc]
            flips = mesh.facet_vertices[facets, 0] != mesh.elements[elems, (0, 1, 2)[loc]]
            u_vals = coeff_u[elems] @ edge.scalar
            s_vals = coeff_s[elems] @ edge.flux_n
            for flip in (0, 1):
                sub = np.flatnonzero(flips == bool(flip))
                if sub.size == 0:
                    continue
                m_tab = tab.facet_values[loc][flip]
                ju = u_vals[sub] - hat_u[facets[sub]] @ m_tab
                js = s_vals[sub] - signs[sub, None] * (hat_s[facets[sub]] @ m_tab)
                jump_energy += float(
                    np.sum(edge.weights * (data.alpha * np.abs(ju) ** 2
                                           + data.beta * np.abs(js) ** 2))
                )

    # boundary terms with the same rule used for the assembled load
    t = space.rhs_quad.points
    bfacets = np.flatnonzero(mesh.facet_boundary)
    basis = space.rhs_facet_values
    w = space.rhs_quad.weights[None, :] * mesh.facet_lengths[bfacets, None]
    u_hat_vals = hat_u[bfacets] @ basis
    boundary_trace_sq = float(np.sum(w * np.abs(u_hat_vals) ** 2))
    if data.excitation is None:
        g_vals = np.zeros_like(u_hat_vals)
    else:
        pts = _facet_quad_points(space, bfacets, t)
        g_vals = np.asarray(data.excitation(pts.reshape(-1, 2))).reshape(
            len(bfacets), -1
        )
    g_pairing = complex(np.sum(w * g_vals * np.conj(u_hat_vals)))
    g_sq = float(np.sum(w * np.abs(g_vals) ** 2))

    kappa = data.kappa
    lhs_re = jump_energy + boundary_trace_sq
    rhs_re = g_pairing.real
    lhs_im = kappa * sigma_sq - kappa * u_sq
    rhs_im = -g_pairing.imag

    def residual(lhs, rhs):
        scale = max(abs(lhs), abs(rhs), g_sq)
        return abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)

    return EnergyReport(
        real_residual=residual(lhs_re, rhs_re),
        imag_residual=residual(lhs_im, rhs_im),
        jump_energy=jump_energy,
        boundary_trace_sq=boundary_trace_sq,
        sigma_sq=sigma_sq,
        u_sq_weighted=u_sq,
        g_pairing=g_pairing,
        g_sq=g_sq,
    )


@dataclass
class StabilityReport:
    """Slacks of the two a-priori stability bounds (negative = violated)."""

    dissipation_slack: float
    field_slack: float
    g_sq: float

    def passed(self, tol_factor: float = 1e-8) -> bool:
        slack = -tol_factor * max(self.g_sq, 1.0)
        return self.dissipation_slack >= slack and self.field_slack >= slack


def check_stability_bounds(sol: Solution) -> StabilityReport:
    """Check the unconditional bounds implied by the energy identities.

    Dissipation: jump energy plus the boundary trace energy is at most
    ``||g||^2``.  Field: ``kappa ||sigma||^2`` is at most the weighted
    scalar energy plus ``||g||^2``.
    """
    rep = check_energy_identities(sol)
    kappa = sol.data.kappa
    return StabilityReport(
        dissipation_slack=rep.g_sq - (rep.jump_energy + rep.boundary_trace_sq),
        field_slack=kappa * rep.u_sq_weighted + rep.g_sq - kappa * rep.sigma_sq,
        g_sq=rep.g_sq,
    )


# ---------------------------------------------------------------------------
# local facet elimination


@dataclass
class EliminationReport:
    """Relative residuals of the closed-form facet updates."""

    interior_flux: float
    interior_scalar: float
    boundary_flux: float
    boundary_scalar: float

    def max_residual(self) -> float:
        return max(
            self.interior_flux,
            self.interior_scalar,
            self.boundary_flux,
            self.boundary_scalar,
        )


def check_facet_elimination(sol: Solution) -> EliminationReport:
    """Verify the facet variables against their local stationarity formulas.

    On interior facets the flux trace must equal the mean normal flux and
    the scalar trace the mean scalar minus the flux jump over ``2 alpha``;
    on boundary facets the flux trace equals the element's normal flux and
    the scalar trace is ``(P g - sigma . n + alpha u) / (1 + alpha)`` with
    ``P`` the facet L2 projection.
    """
    space, data = sol.space, sol.data
    mesh = space.mesh
    alpha = data.alpha
    coeff_s, coeff_u = _interior_coeffs(sol)
    hat_s, hat_u = _facet_coeffs(sol)
    quad = space.edge_quad
    t = quad.points
    basis = space.facet_basis.evaluate(t)

    num = np.zeros(4)
    den = np.zeros(4)
    for f in range(mesh.n_facets):
        w = quad.weights * mesh.facet_lengths[f]
        hat_s_vals = hat_s[f] @ basis
        hat_u_vals = hat_u[f] @ basis
        traces = []  # per owner: (u trace, outward flux trace) at facet params
        for owner in mesh.facet_owners[f]:
            if owner < 0:
                continue
            loc = int(np.flatnonzero(mesh.elem_facets[owner] == f)[0])
            tab = space.element_tables(owner)
            te = 1.0 - t if space.edge_flip(owner, loc) else t
            ref = tab.edge_ref_points(loc, te)
            u_tr = coeff_u[owner] @ tab.eval_scalar(ref)
            s_tr = coeff_s[owner] @ tab.eval_flux_normal_trace(loc, te)
            traces.append((u_tr, s_tr))
        if mesh.facet_boundary[f]:
            u_tr, s_tr = traces[0]  # boundary facets keep the owner's normal
            pg = np.zeros_like(t, dtype=complex)
            if data.excitation is not None:
                pg = l2_project_facet(
                    space, f, data.excitation, space.rhs_quad.exactness_degree
                ) @ basis
            pred_s = s_tr
            pred_u = (pg - s_tr + alpha * u_tr) / (1.0 + alpha)
            num[2] += float(np.sum(w * np.abs(pred_s - hat_s_vals) ** 2))
            den[2] += float(np.sum(w * np.abs(hat_s_vals) ** 2))
            num[3] += float(np.sum(w * np.abs(pred_u - hat_u_vals) ** 2))
            den[3] += float(np.sum(w * np.abs(hat_u_vals) ** 2))
        else:
            (u0, s0), (u1, s1) = traces
            # s0, s1 are outward traces; s0 follows the facet normal
            pred_s = 0.5 * (s0 - s1)
            pred_u = 0.5 * (u0 + u1) - (s0 + s1) / (2.0 * alpha)
            num[0] += float(np.sum(w * np.abs(pred_s - hat_s_vals) ** 2))
            den[0] += float(np.sum(w * np.abs(hat_s_vals) ** 2))
            num[1] += float(np.sum(w * np.abs(pred_u - hat_u_vals) ** 2))
            den[1] += float(np.sum(w * np.abs(hat_u_vals) ** 2))

    res = np.sqrt(num) / np.where(den > 0, np.sqrt(den), 1.0)
    return EliminationReport(
        interior_flux=float(res[0]),
        interior_scalar=float(res[1]),
        boundary_flux=float(res[2]),
        boundary_scalar=float(res[3]),
    )


# ---------------------------------------------------------------------------
# error norms


@dataclass
class ErrorRow:
    """Error measures of one solve at one mesh level."""

    n_cells: int
    h: float
    ndof_volume: int
    ndof_skeleton: int
    err_u: float
    err_sigma: float
    err_proj_u: float
    err_uhat: float
    err_sighat: float
    jump_energy: float
    real_residual: float
    imag_residual: float


def compute_errors(sol: Solution, exact: ExactSolution) -> ErrorRow:
    """L2 errors of every solution component against a reference field.

    Volume and trace integrals are over-integrated (exactness
    ``2 p + 6``); facet errors aggregate plainly over the skeleton, which
    carries a factor ``1 / sqrt(h)`` more facets than any one element has.
    """
    space = sol.space
    mesh = space.mesh
    ex = min(2 * space.degree + 6, MAX_EXACTNESS)
    coeff_s, coeff_u = _interior_coeffs(sol)
    hat_s, hat_u = _facet_coeffs(sol)

    err_u_sq = 0.0
    err_sig_sq = 0.0
    err_proj_sq = 0.0
    for cls, elems in zip((0, 1), _class_elements(space)):
        tab = space.element_tables(cls)
        vol = tab.volume_tables(ex)
        pts = _element_quad_points(space, elems, vol.ref_points)
        flat = pts.reshape(-1, 2)
        u_ex = np.asarray(exact.u(flat)).reshape(len(elems), -1)
        sig_ex = np.asarray(exact.sigma(flat)).reshape(len(elems), -1, 2)
        u_h = coeff_u[elems] @ vol.scalar
        sig_h = np.einsum("ei,ind->end", coeff_s[elems], vol.flux)
        err_u_sq += float(np.sum(vol.weights * np.abs(u_h - u_ex) ** 2))
        err_sig_sq += float(
            np.sum(vol.weights[None, :, None] * np.abs(sig_h - sig_ex) ** 2)
        )
        # projection of the exact scalar, elementwise (orthonormal basis)
        proj = u_ex * vol.weights @ vol.scalar.T
        diff = (proj - coeff_u[elems]) @ vol.scalar
        err_proj_sq += float(np.sum(vol.weights * np.abs(diff) ** 2))

    quad = make_quadrature(SEGMENT, ex)
    t = quad.points
    basis = space.facet_basis.evaluate(t)
    facets = np.arange(mesh.n_facets)
    pts = _facet_quad_points(space, facets, t)
    flat = pts.reshape(-1, 2)
    u_ex = np.asarray(exact.u(flat)).reshape(mesh.n_facets, -1)
    sig_ex = np.asarray(exact.sigma(flat)).reshape(mesh.n_facets, -1, 2)
    sig_n_ex = np.einsum("fnd,fd->fn", sig_ex, mesh.facet_normals)
    w = quad.weights[None, :] * mesh.facet_lengths[:, None]
    err_uhat = float(np.sqrt(np.sum(w * np.abs(hat_u @ basis - u_ex) ** 2)))
    err_sighat = float(np.sqrt(np.sum(w * np.abs(hat_s @ basis - sig_n_ex) ** 2)))

    energy = check_energy_identities(sol)
    return ErrorRow(
        n_cells=mesh.n_cells,
        h=mesh.h_max,
        ndof_volume=space.ndof_volume,
        ndof_skeleton=space.skeleton_dim,
        err_u=float(np.sqrt(err_u_sq)),
        err_sigma=float(np.sqrt(err_sig_sq)),
        err_proj_u=float(np.sqrt(err_proj_sq)),
        err_uhat=err_uhat,
        err_sighat=err_sighat,
        jump_energy=energy.jump_energy,
        real_residual=energy.real_residual,
        imag_residual=energy.imag_residual,
    )


# ---------------------------------------------------------------------------
# convergence rates


@dataclass
class RateFit:
    """Least-squares slope over the finest levels plus pairwise rates."""

    slope: float
    pairwise: list[float]
    used_levels: int


def fit_convergence_rate(hs, errors, n_fit: int = 3) -> RateFit:
    """Fit ``log error`` against ``log h`` over the finest ``n_fit`` levels.

    Levels with non-positive error are excluded with a warning; at least
    three usable levels are required.
    """
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.shape != errors.shape:
        raise ValueError("hs and errors must have equal length")
    keep = errors > 0
    if not keep.all():
        warnings.warn(
            f"excluding {int((~keep).sum())} level(s) with non-positive error",
            stacklevel=2,
        )
    hs, errors = hs[keep], errors[keep]
    if hs.size < 3:
        raise ValueError("need at least three levels with positive error")
    order = np.argsort(hs)[::-1]  # coarse to fine
    hs, errors = hs[order], errors[order]
    log_h = np.log(hs)
    log_e = np.log(errors)
    slope = float(np.polyfit(log_h[-n_fit:], log_e[-n_fit:], 1)[0])
    pairwise = [
        float((log_e[i] - log_e[i + 1]) / (log_h[i] - log_h[i + 1]))
        for i in range(hs.size - 1)
    ]
    return RateFit(slope=slope, pairwise=pairwise, used_levels=int(hs.size))
