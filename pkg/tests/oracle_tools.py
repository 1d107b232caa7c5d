"""Independent evaluation paths used to cross-check the assembly code.

``sesquilinear_value`` integrates every term of the element-wise form
directly with its own quadrature tables; ``blocks_value`` contracts the
assembled blocks with the same coefficient vectors.  Agreement of the two
is the main correctness anchor for the assembly module.
"""

import numpy as np

from hdg_helmholtz import assemble_all
from hdg_helmholtz.ref_fem import MAX_EXACTNESS


def random_state(space, rng):
    """Random complex interior/skeleton coefficient vectors."""
    interior = rng.normal(size=(space.mesh.n_elements, space.n_interior)) \
        + 1j * rng.normal(size=(space.mesh.n_elements, space.n_interior))
    skeleton = rng.normal(size=space.skeleton_dim) \
        + 1j * rng.normal(size=space.skeleton_dim)
    return interior, skeleton


def sesquilinear_value(space, data, trial, test, exactness=None):
    """Evaluate the full sesquilinear form by direct quadrature."""
    if exactness is None:
        exactness = min(2 * space.degree + 8, MAX_EXACTNESS)
    mesh = space.mesh
    ns = space.n_sigma
    jk = 1j * data.kappa
    alpha = data.alpha
    beta = -data.beta if data.debug_flip_beta_sign else data.beta
    trial_i, trial_f = trial
    test_i, test_f = test
    total = 0.0 + 0.0j
    for e in range(mesh.n_elements):
        tab = space.element_tables(e)
        vol = tab.volume_tables(exactness)
        w = vol.weights
        sig_t = np.einsum("i,ind->nd", trial_i[e, :ns], vol.flux)
        sig_v = np.einsum("i,ind->nd", test_i[e, :ns], vol.flux)
        div_t = trial_i[e, :ns] @ vol.flux_div
        div_v = test_i[e, :ns] @ vol.flux_div
        u_t = trial_i[e, ns:] @ vol.scalar
        u_v = test_i[e, ns:] @ vol.scalar
        if data.coefficient is None:
            c = 1.0
        else:
            c = np.asarray(data.coefficient(space.element_points(e, vol.ref_points)))
        total += jk * np.sum(w * np.sum(sig_t * np.conj(sig_v), axis=-1))
        total += np.sum(w * u_t * np.conj(div_v))
        total += np.sum(w * div_t * np.conj(u_v))
        total -= jk * np.sum(w * c * u_t * np.conj(u_v))
        edges = tab.edge_tables(exactness)
        for loc in range(3):
            et = edges[loc]
            f = mesh.elem_facets[e, loc]
            s = mesh.elem_facet_signs[e, loc]
            t_global = 1.0 - et.t if space.edge_flip(e, loc) else et.t
            mu = space.facet_basis.evaluate(t_global)
            sh = space.sigma_hat_dofs(f)
            uh = space.u_hat_dofs(f)
            uhat_t = trial_f[uh] @ mu
            uhat_v = test_f[uh] @ mu
            sighat_t = trial_f[sh] @ mu
            sighat_v = test_f[sh] @ mu
            u_tr_t = trial_i[e, ns:] @ et.scalar
            u_tr_v = test_i[e, ns:] @ et.scalar
            sn_t = trial_i[e, :ns] @ et.flux_n
            sn_v = test_i[e, :ns] @ et.flux_n
            we = et.weights
            total -= np.sum(we * uhat_t * np.conj(sn_v))
            total -= np.sum(we * sn_t * np.conj(uhat_v))
            total -= alpha * np.sum(
                we * (u_tr_t - uhat_t) * np.conj(u_tr_v - uhat_v)
            )
            total += beta * np.sum(
                we * (sn_t - s * sighat_t) * np.conj(sn_v - s * sighat_v)
            )
            if mesh.facet_boundary[f]:
                total -= np.sum(we * uhat_t * np.conj(uhat_v))
    return total


def blocks_value(space, data, trial, test):
    """Contract the assembled blocks with trial/test coefficient vectors."""
    trial_i, trial_f = trial
    test_i, test_f = test
    total = 0.0 + 0.0j
    for blk in assemble_all(space, data):
        x_i = trial_i[blk.elem]
        x_f = trial_f[blk.facet_dofs]
        y_i = np.conj(test_i[blk.elem])
        y_f = np.conj(test_f[blk.facet_dofs])
        total += y_i @ (blk.a_ii @ x_i + blk.a_if @ x_f)
        total += y_f @ (blk.a_fi @ x_i + blk.a_ff @ x_f)
    return total


def rhs_value(space, data, test, exactness=None):
    """Evaluate ``-(g, v_hat)`` over the boundary by direct quadrature."""
    from hdg_helmholtz.ref_fem import SEGMENT, make_quadrature

    if exactness is None:
        exactness = MAX_EXACTNESS
    _, test_f = test
    mesh = space.mesh
    quad = make_quadrature(SEGMENT, exactness)
    basis = space.facet_basis.evaluate(quad.points)
    total = 0.0 + 0.0j
    for f in np.flatnonzero(mesh.facet_boundary):
        g = np.asarray(data.excitation(mesh.facet_points(f, quad.points)))
        vhat = test_f[space.u_hat_dofs(f)] @ basis
        total -= np.sum(quad.weights * mesh.facet_lengths[f] * g * np.conj(vhat))
    return total
