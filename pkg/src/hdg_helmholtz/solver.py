"""Static condensation onto the facet skeleton and linear solvers.

Interior flux/scalar DOFs are eliminated element by element, leaving a
sparse complex-symmetric system for the facet traces.  That system is
solved either by a sparse direct factorization or by BiCGSTAB with a
right-applied multiplicative block Gauss-Seidel preconditioner whose
blocks are overlapping vertex patches (all facet DOFs incident to one
mesh vertex, so every skeleton DOF lies in exactly two blocks).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import splu

from .assembly import ElementBlocks, ProblemData, Space, assemble_all


class SingularBlockError(RuntimeError):
    """Raised when an interior block cannot be factorized."""


class BreakdownError(RuntimeError):
    """Raised when BiCGSTAB breaks down twice in a row."""


@dataclass
class CondensedElement:
    """Element data surviving condensation.

    ``recover`` and ``recover_rhs`` are ``A_ii^-1 A_if`` and
    ``A_ii^-1 rhs_i``; together with the facet solution they reproduce the
    interior DOFs.
    """

    elem: int
    facet_dofs: np.ndarray
    s_local: np.ndarray
    recover: np.ndarray
    recover_rhs: np.ndarray


@dataclass
class SkeletonSystem:
    """Condensed sparse system for the facet unknowns."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    patches: list[np.ndarray] | None = None


@dataclass
class SolveStats:
    solver: str
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    wall_time: float = 0.0


@dataclass
class Solution:
    """Assembled, solved and reconstructed discrete solution."""

    space: Space
    data: ProblemData
    interior: np.ndarray  # (n_elements, n_interior)
    skeleton: np.ndarray  # (skeleton_dim,)
    stats: SolveStats


def _factor_interior(elem: int, a_ii: np.ndarray):
    lu, piv = lu_factor(a_ii)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-14 * max(diag.max(), 1.0):
        raise SingularBlockError(f"interior block of element {elem} is singular")
    return lu, piv


def condense(space: Space, blocks) -> tuple[list[CondensedElement], SkeletonSystem]:
    """Eliminate interior DOFs and scatter the local Schur complements.

    ``blocks`` may be any iterable of :class:`ElementBlocks`; elements are
    consumed one at a time, so a generator keeps peak memory low.
    """
    nf = space.n_facet_local
    rows = []
    cols = []
    vals = []
    rhs = np.zeros(space.skeleton_dim, dtype=complex)
    condensed = []
    for blk in blocks:
        lu = _factor_interior(blk.elem, blk.a_ii)
        recover = lu_solve(lu, blk.a_if.astype(complex))
        recover_rhs = lu_solve(lu, blk.rhs_i)
        s_local = blk.a_ff - blk.a_fi @ recover
        r_local = blk.rhs_f - blk.a_fi @ recover_rhs
        condensed.append(
            CondensedElement(
                elem=blk.elem,
                facet_dofs=blk.facet_dofs,
                s_local=s_local,
                recover=recover,
                recover_rhs=recover_rhs,
            )
        )
        rows.append(np.repeat(blk.facet_dofs, nf))
        cols.append(np.tile(blk.facet_dofs, nf))
        vals.append(s_local.ravel())
        rhs[blk.facet_dofs] += r_local
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.skeleton_dim, space.skeleton_dim),
    ).tocsr()
    return condensed, SkeletonSystem(matrix=matrix, rhs=rhs)


def reconstruct_interior(
    condensed: list[CondensedElement], skeleton: np.ndarray
) -> np.ndarray:
    """Recover the interior DOFs of every element from the facet solution."""
    out = np.empty((len(condensed), condensed[0].recover.shape[0]), dtype=complex)
    for k, ce in enumerate(condensed):
        out[k] = ce.recover_rhs - ce.recover @ skeleton[ce.facet_dofs]
    return out


def full_residual(
    space: Space,
    data: ProblemData,
    interior: np.ndarray,
    skeleton: np.ndarray,
) -> float:
    """Relative residual of the uncondensed system at a reconstructed solution."""
    res_sq = 0.0
    rhs_sq = 0.0
    res_f = np.zeros(space.skeleton_dim, dtype=complex)
    rhs_f = np.zeros(space.skeleton_dim, dtype=complex)
    for blk in assemble_all(space, data):
        xf = skeleton[blk.facet_dofs]
        r_i = blk.a_ii @ interior[blk.elem] + blk.a_if @ xf - blk.rhs_i
        res_sq += float(np.vdot(r_i, r_i).real)
        rhs_sq += float(np.vdot(blk.rhs_i, blk.rhs_i).real)
        res_f[blk.facet_dofs] += blk.a_fi @ interior[blk.elem] + blk.a_ff @ xf
        rhs_f[blk.facet_dofs] += blk.rhs_f
    res_f -= rhs_f
    res_sq += float(np.vdot(res_f, res_f).real)
    rhs_sq += float(np.vdot(rhs_f, rhs_f).real)
    scale = np.sqrt(rhs_sq)
    return float(np.sqrt(res_sq) / scale) if scale > 0 else float(np.sqrt(res_sq))


def solve_direct(system: SkeletonSystem, tol: float = 1e-10) -> np.ndarray:
    """Solve the skeleton system by sparse LU and verify the residual."""
    lu = splu(system.matrix.tocsc())
    x = lu.solve(system.rhs)
    rhs_norm = np.linalg.norm(system.rhs)
    res = np.linalg.norm(system.matrix @ x - system.rhs)
    rel = res / rhs_norm if rhs_norm > 0 else res
    if rel > tol:
        raise RuntimeError(f"direct solve residual {rel:.3e} exceeds {tol:.1e}")
    return x


@dataclass
class Preconditioner:
    """Overlapping vertex-patch block Gauss-Seidel preconditioner.

    ``blocks[v]`` lists the skeleton DOFs of every facet touching vertex
    ``v``; blocks are swept multiplicatively in vertex order (plus the
    reverse order when ``sweep == "symmetric"``) using most-recent values.
    """

    blocks: list[np.ndarray]
    sweep: str = "forward"
    _factors: list = field(default_factory=list, repr=False)
    _columns: list = field(default_factory=list, repr=False)

    def factorize(self, matrix: sp.spmatrix) -> None:
        csc = matrix.tocsc()
        self._factors = []
        self._columns = []
        for idx in self.blocks:
            block = matrix[np.ix_(idx, idx)].toarray()
            self._factors.append(lu_factor(block))
            self._columns.append(csc[:, idx])
        order = list(range(len(self.blocks)))
        if self.sweep == "symmetric":
            order = order + order[::-1]
        self._order = order

    def apply(self, r: np.ndarray) -> np.ndarray:
        """Approximately solve ``A z = r`` by one block Gauss-Seidel sweep."""
        if not self._factors:
            raise RuntimeError("preconditioner not factorized")
        z = np.zeros_like(r)
        rc = r.copy()
        for k in self._order:
            idx = self.blocks[k]
            delta = lu_solve(self._factors[k], rc[idx])
            z[idx] += delta
            rc -= self._columns[k] @ delta
        return z


def build_vertex_patch_blocks(
    mesh, degree: int, sweep: str = "forward"
) -> Preconditioner:
    """Group skeleton DOFs into one overlapping block per mesh vertex.

    A facet contributes both of its trace DOF groups to the patch of each
    endpoint, so every skeleton DOF appears in exactly two blocks.
    """
    m = degree + 1
    incident: list[list[int]] = [[] for _ in range(mesh.n_vertices)]
    for f in range(mesh.n_facets):
        for v in mesh.facet_vertices[f]:
            incident[v].append(f)
    blocks = []
    for facets in incident:
        idx = np.concatenate(
            [np.arange(2 * m * f, 2 * m * (f + 1)) for f in sorted(facets)]
        )
        blocks.append(idx)
    return Preconditioner(blocks=blocks, sweep=sweep)


def solve_bicgstab(
    system: SkeletonSystem,
    precond: Preconditioner,
    tol: float = 1e-5,
    max_iter: int = 2000,
) -> tuple[np.ndarray, SolveStats]:
    """Right-preconditioned BiCGSTAB on the skeleton system.

    Convergence is declared on the true (unpreconditioned) residual
    relative to ``||b||``.  A rho-breakdown restarts the recurrence from
    the current iterate once; a second breakdown raises
    :class:`BreakdownError`.  Running out of iterations returns the best
    iterate with ``converged=False``.
    """
    if not precond._factors:
        precond.factorize(system.matrix)
    a = system.matrix
    b = system.rhs
    start = time.perf_counter()
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros_like(b), SolveStats("bicgstab", 0, 0.0, True, 0.0)

    x = np.zeros_like(b)
    r = b.copy()
    restarted = False
    iterations = 0
    best_x = x.copy()
    best_res = np.linalg.norm(r) / b_norm

    while iterations < max_iter:
        r_shadow = r.copy()
        rho = 1.0 + 0.0j
        alpha = 1.0 + 0.0j
        omega = 1.0 + 0.0j
        v = np.zeros_like(b)
        p = np.zeros_like(b)
        broke = False
        while iterations < max_iter:
            rho_new = np.vdot(r_shadow, r)
            if abs(rho_new) < 1e-30 * b_norm**2:
                broke = True
                break
            beta = (rho_new / rho) * (alpha / omega)
            rho = rho_new
            p = r + beta * (p - omega * v)
            y = precond.apply(p)
            v = a @ y
            denom = np.vdot(r_shadow, v)
            if abs(denom) < 1e-30 * b_norm**2:
                broke = True
                break
            alpha = rho / denom
            s = r - alpha * v
            x = x + alpha * y
            res = np.linalg.norm(s) / b_norm
            iterations += 1
            if res < best_res:
                best_res, best_x = res, x.copy()
            if res <= tol:
                elapsed = time.perf_counter() - start
                return x, SolveStats("bicgstab", iterations, res, True, elapsed)
            z = precond.apply(s)
            t = a @ z
            t_sq = np.vdot(t, t)
            if abs(t_sq) < 1e-30 * b_norm**2:
                broke = True
                break
            omega = np.vdot(t, s) / t_sq
            x = x + omega * z
            r = s - omega * t
            res = np.linalg.norm(r) / b_norm
            if res < best_res:
                best_res, best_x = res, x.copy()
            if res <= tol:
                elapsed = time.perf_counter() - start
                return x, SolveStats("bicgstab", iterations, res, True, elapsed)
        if not broke:
            break
        if restarted:
            raise BreakdownError(
                f"BiCGSTAB broke down twice (iteration {iterations})"
            )
        restarted = True
        r = b - a @ x  # restart from the current iterate

    elapsed = time.perf_counter() - start
    return best_x, SolveStats("bicgstab", iterations, best_res, False, elapsed)


def solve_monolithic(space: Space, data: ProblemData) -> tuple[np.ndarray, np.ndarray]:
    """Solve the uncondensed system as one dense matrix.

    Reference path for validating condensation; only sensible on small
    meshes.  Returns ``(interior, skeleton)`` shaped like the condensed
    solve output.
    """
    ni = space.n_interior
    ne = space.mesh.n_elements
    n = ne * ni + space.skeleton_dim
    a = np.zeros((n, n), dtype=complex)
    rhs = np.zeros(n, dtype=complex)
    off = ne * ni
    for blk in assemble_all(space, data):
        sl = slice(blk.elem * ni, (blk.elem + 1) * ni)
        fd = off + blk.facet_dofs
        a[sl, sl] = blk.a_ii
        a[sl, fd] += blk.a_if
        a[fd, sl] += blk.a_fi
        a[np.ix_(fd, fd)] += blk.a_ff
        rhs[sl] = blk.rhs_i
        rhs[fd] += blk.rhs_f
    x = np.linalg.solve(a, rhs)
    return x[:off].reshape(ne, ni), x[off:]


def solve(
    space: Space,
    data: ProblemData,
    method: str = "direct",
    tol: float = 1e-5,
    max_iter: int = 2000,
    sweep: str = "forward",
) -> Solution:
    """Assemble, condense, solve and reconstruct in one call."""
    start = time.perf_counter()
    condensed, system = condense(space, assemble_all(space, data))
    if method == "direct":
        skeleton = solve_direct(system)
        stats = SolveStats("direct")
    elif method == "bicgstab":
        precond = build_vertex_patch_blocks(space.mesh, space.degree, sweep=sweep)
        skeleton, stats = solve_bicgstab(system, precond, tol=tol, max_iter=max_iter)
    else:
        raise ValueError(f"unknown solver {method!r}")
    interior = reconstruct_interior(condensed, skeleton)
    stats.wall_time = time.perf_counter() - start
    return Solution(space=space, data=data, interior=interior, skeleton=skeleton, stats=stats)
