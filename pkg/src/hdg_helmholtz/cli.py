"""Command-line driver for convergence studies, field solves and verification.

Three subcommands share one flag set:

``converge``
    Plane-wave convergence sweep over a list of mesh levels; writes one
    CSV row per level plus trailing ``slope`` rows.
``solve``
    Single solve with field sampling on a uniform grid; supports the
    heterogeneous lens materials ``c1``/``c2`` on the square ``(-1, 1)^2``
    with a Gaussian line source on the left boundary.
``verify``
    Self-contained invariant suite (mesh/quadrature/basis checks, energy
    identities, stability bounds, facet elimination, condensation against
    a monolithic solve, and a deliberate sign-fault that must be caught).

Exit codes: 0 success, 1 verification failure, 2 solver non-convergence,
3 bad configuration.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from .analysis import (
    check_energy_identities,
    check_facet_elimination,
    check_stability_bounds,
    compute_errors,
    fit_convergence_rate,
    plane_wave,
    sample_solution,
)
from .assembly import ProblemData, Space
from .mesh import build_structured_mesh
from .ref_fem import (
    MAX_DEGREE,
    MAX_EXACTNESS,
    SEGMENT,
    TRIANGLE,
    build_rt_basis,
    build_scalar_basis,
    make_quadrature,
    triangle_powers,
)
from .solver import solve, solve_monolithic

C_MIN = 0.02
C_MAX = 50.0

ERROR_COLUMNS = ("err_u", "err_sigma", "err_proj_u", "err_uhat", "err_sighat")


class ConfigError(Exception):
    """Raised for semantically invalid run configurations."""


@dataclass
class RunConfig:
    """Validated configuration of one CLI invocation."""

    command: str
    kappa: float = 5.0
    theta: float = math.pi / 6.0
    degree: int = 1
    levels: list[int] | None = None
    alpha: float = 1.0
    beta: float = 1.0
    solver: str = "direct"
    tol: float = 1e-5
    max_iter: int = 2000
    material: str = "none"
    excitation: str = "auto"
    out: str | None = None
    samples: int = 101

    def validate(self) -> None:
        if self.command not in ("converge", "solve", "verify"):
            raise ConfigError(f"unknown command {self.command!r}")
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        if not 0 <= self.degree <= MAX_DEGREE:
            raise ConfigError(f"degree must be in [0, {MAX_DEGREE}]")
        if self.levels is not None:
            if not self.levels or any(n < 1 for n in self.levels):
                raise ConfigError("levels must be positive integers")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("alpha and beta must be positive")
        if self.solver not in ("direct", "bicgstab"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max-iter must be positive")
        if self.material not in ("none", "c1", "c2"):
            raise ConfigError(f"unknown material {self.material!r}")
        if self.excitation not in ("auto", "planewave", "gaussian"):
            raise ConfigError(f"unknown excitation {self.excitation!r}")
        if self.samples < 2:
            raise ConfigError("samples must be at least 2")
        if self.command == "converge":
            if self.material != "none":
                raise ConfigError("converge requires material none")
            if self.excitation == "gaussian":
                raise ConfigError("converge requires the plane-wave excitation")

    def metadata_lines(self) -> list[str]:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "levels":
                value = "auto" if value is None else ",".join(map(str, value))
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"# {f.name} = {value}")
        return lines


# ---------------------------------------------------------------------------
# materials and excitations


def _radial_mix(points: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """Linear blend over the lens ``r <= 1/2``; unity outside."""
    points = np.atleast_2d(points)
    r = np.hypot(points[:, 0], points[:, 1])
    blend = 2.0 * r * inner + (1.0 - 2.0 * r) * outer
    return np.where(r <= 0.5, blend, 1.0)


def material_c1(points: np.ndarray) -> np.ndarray:
    """Lens profile falling from ``C_MAX`` at the center to ``C_MIN``."""
    return _radial_mix(points, C_MIN, C_MAX)


def material_c2(points: np.ndarray) -> np.ndarray:
    """Lens profile rising from ``C_MIN`` at the center to ``C_MAX``."""
    return _radial_mix(points, C_MAX, C_MIN)


MATERIALS: dict[str, Callable] = {"c1": material_c1, "c2": material_c2}


def gaussian_excitation(kappa: float, xlim: tuple[float, float]) -> Callable:
    """Gaussian line source on the left boundary, zero elsewhere."""

    def g(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        scale = max(1.0, abs(xlim[0]))
        out = np.zeros(points.shape[0], dtype=complex)
        left = np.abs(points[:, 0] - xlim[0]) <= 1e-12 * scale
        out[left] = -10j * kappa * np.exp(-20.0 * (points[left, 1] + 0.1) ** 2)
        return out

    return g


def default_heterogeneous_cells(kappa: float) -> int:
    """Mesh level placing the largest facet at an eighth of a wavelength."""
    return math.ceil(8.0 * math.sqrt(2.0) * kappa / math.pi)


# ---------------------------------------------------------------------------
# CSV output


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12e}"


def _write_csv(config: RunConfig, header: list[str], rows: list[list[str]],
               extra_meta: list[str] | None = None) -> None:
    lines = config.metadata_lines()
    if extra_meta:
        lines += extra_meta
    text = "\n".join(lines + [",".join(header)] + [",".join(r) for r in rows]) + "\n"
    if config.out is None:
        sys.stdout.write(text)
    else:
        with open(config.out, "w", newline="\n") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# converge


def run_converge(config: RunConfig) -> int:
    levels = config.levels if config.levels is not None else [4, 8, 16]
    exact = plane_wave(config.kappa, config.theta)
    header = [
        "n_cells", "h", "ndof_volume", "ndof_skeleton",
        *ERROR_COLUMNS, "jump_energy", "real_residual", "imag_residual",
        "solver", "iterations", "solver_residual", "converged",
    ]
    rows = []
    reports = []
    failed = False
    for n in levels:
        t0 = time.perf_counter()
        space = Space(build_structured_mesh(n), config.degree)
        data = ProblemData(
            kappa=config.kappa,
            alpha=config.alpha,
            beta=config.beta,
            excitation=exact.boundary_g,
        )
        sol = solve(space, data, method=config.solver,
                    tol=config.tol, max_iter=config.max_iter)
        if not sol.stats.converged:
            failed = True
        row = compute_errors(sol, exact)
        reports.append(row)
        rows.append([
            _fmt(row.n_cells), _fmt(row.h),
            _fmt(row.ndof_volume), _fmt(row.ndof_skeleton),
            _fmt(row.err_u), _fmt(row.err_sigma), _fmt(row.err_proj_u),
            _fmt(row.err_uhat), _fmt(row.err_sighat), _fmt(row.jump_energy),
            _fmt(row.real_residual), _fmt(row.imag_residual),
            sol.stats.solver, _fmt(sol.stats.iterations),
            _fmt(sol.stats.residual), _fmt(sol.stats.converged),
        ])
        print(
            f"level N={n}: err_u={row.err_u:.3e} err_sigma={row.err_sigma:.3e} "
            f"({time.perf_counter() - t0:.2f} s)",
            file=sys.stderr,
        )
    hs = [r.h for r in reports]
    for name in ERROR_COLUMNS:
        errs = [getattr(r, name) for r in reports]
        try:
            fit = fit_convergence_rate(hs, errs)
        except ValueError:
            continue
        rows.append(["slope", name, _fmt(fit.slope)])
    _write_csv(config, header, rows)
    return 2 if failed else 0


# ---------------------------------------------------------------------------
# solve


def run_solve(config: RunConfig) -> int:
    heterogeneous = config.material != "none"
    if heterogeneous:
        xlim = ylim = (-1.0, 1.0)
        coefficient = MATERIALS[config.material]
        default_n = default_heterogeneous_cells(config.kappa)
    else:
        xlim = ylim = (0.0, 1.0)
        coefficient = None
        default_n = 16
    n = config.levels[-1] if config.levels else default_n

    excitation_kind = config.excitation
    if excitation_kind == "auto":
        excitation_kind = "gaussian" if heterogeneous else "planewave"
    if excitation_kind == "gaussian":
        excitation = gaussian_excitation(config.kappa, xlim)
    else:
        excitation = plane_wave(config.kappa, config.theta, xlim, ylim).boundary_g

    mesh = build_structured_mesh(n, xlim, ylim)
    space = Space(mesh, config.degree)
    data = ProblemData(
        kappa=config.kappa,
        alpha=config.alpha,
        beta=config.beta,
        coefficient=coefficient,
        excitation=excitation,
    )
    sol = solve(space, data, method=config.solver,
                tol=config.tol, max_iter=config.max_iter)
    energy = check_energy_identities(sol)

    xs = np.linspace(xlim[0], xlim[1], config.samples)
    ys = np.linspace(ylim[0], ylim[1], config.samples)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack((gx.ravel(), gy.ravel()))
    values, inside = sample_solution(sol, points)
    skipped = int((~inside).sum())

    rows = [
        [_fmt(x), _fmt(y), _fmt(v.real), _fmt(v.imag), _fmt(abs(v))]
        for (x, y), v in zip(points[inside], values[inside])
    ]
    extra = [
        f"# n_cells = {n}",
        f"# skipped_samples = {skipped}",
        f"# real_residual = {energy.real_residual:.12e}",
        f"# imag_residual = {energy.imag_residual:.12e}",
        f"# iterations = {sol.stats.iterations}",
        f"# solver_residual = {sol.stats.residual:.12e}",
        f"# converged = {int(sol.stats.converged)}",
    ]
    _write_csv(config, ["x", "y", "re_u", "im_u", "abs_u"], rows, extra)
    print(
        f"solve N={n} p={config.degree} kappa={config.kappa} "
        f"material={config.material}: solver={sol.stats.solver} "
        f"iterations={sol.stats.iterations} wall={sol.stats.wall_time:.2f}s "
        f"real_residual={energy.real_residual:.3e}",
        file=sys.stderr,
    )
    return 0 if sol.stats.converged else 2


# ---------------------------------------------------------------------------
# verify


def _check(name, ok, detail=""):
    return (name, bool(ok), detail)


def _verify_mesh() -> list[tuple[str, bool, str]]:
    out = []
    for n in (1, 2, 4, 5):
        mesh = build_structured_mesh(n)
        areas = mesh.element_areas()
        ok = (
            mesh.n_elements == 2 * n * n
            and mesh.n_facets == 3 * n * n + 2 * n
            and int(mesh.facet_boundary.sum()) == 4 * n
            and areas.min() > 0
            and abs(areas.sum() - 1.0) < 1e-13
            and abs(mesh.h_max - math.sqrt(2.0) / n) < 1e-13
        )
        out.append(_check(f"mesh invariants N={n}", ok))
    try:
        build_structured_mesh(0)
        out.append(_check("mesh rejects N=0", False))
    except ValueError:
        out.append(_check("mesh rejects N=0", True))
    return out


def _verify_quadrature() -> list[tuple[str, bool, str]]:
    out = []
    worst = 0.0
    for deg in range(0, 11):
        quad = make_quadrature(TRIANGLE, deg)
        for a, b in triangle_powers(deg):
            val = np.sum(quad.weights * quad.points[:, 0] ** a * quad.points[:, 1] ** b)
            ref = (
                math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            )
            worst = max(worst, abs(val - ref))
        seg = make_quadrature(SEGMENT, deg)
        for a in range(deg + 1):
            worst = max(worst, abs(np.sum(seg.weights * seg.points**a) - 1.0 / (a + 1)))
    out.append(_check("quadrature exactness to degree 10", worst <= 1e-13,
                      f"max error {worst:.2e}"))
    try:
        make_quadrature(TRIANGLE, MAX_EXACTNESS + 1)
        out.append(_check("quadrature rejects excess exactness", False))
    except ValueError:
        out.append(_check("quadrature rejects excess exactness", True))
    return out


def _verify_bases() -> list[tuple[str, bool, str]]:
    out = []
    worst_mass = 0.0
    worst_div = 0.0
    worst_trace = 0.0
    for p in range(0, MAX_DEGREE + 1):
        tri = build_scalar_basis(TRIANGLE, p)
        rt = build_rt_basis(p)
        seg = build_scalar_basis(SEGMENT, p)
        dims_ok = (
            tri.dim == (p + 1) * (p + 2) // 2
            and rt.dim == (p + 1) * (p + 3)
            and seg.dim == p + 1
        )
        out.append(_check(f"basis dimensions p={p}", dims_ok))
        quad = tri.quadrature
        mass = (tri.values * quad.weights) @ tri.values.T
        worst_mass = max(worst_mass, np.abs(mass - np.eye(tri.dim)).max())
        mass = np.einsum("ind,n,jnd->ij", rt.values, quad.weights, rt.values)
        worst_mass = max(worst_mass, np.abs(mass - np.eye(rt.dim)).max())
        # divergence must lie in P^p: expanding in the scalar basis and
        # evaluating back must reproduce the table (residual measured
        # relative to the table size, which reaches O(100))
        coeff = (tri.values * quad.weights) @ rt.divergences.T
        recon = coeff.T @ tri.values
        dev = np.abs(recon - rt.divergences).max()
        worst_div = max(worst_div, dev / max(1.0, np.abs(rt.divergences).max()))
        # normal traces must lie in P^p along each edge
        tq = seg.quadrature
        seg_vals = seg.evaluate(tq.points)
        for edge in range(3):
            tr = rt.evaluate_normal_trace(edge, tq.points)
            coeff = (seg_vals * tq.weights) @ tr.T
            dev = np.abs(coeff.T @ seg_vals - tr).max()
            worst_trace = max(worst_trace, dev / max(1.0, np.abs(tr).max()))
    out.append(_check("basis orthonormality", worst_mass <= 1e-12,
                      f"max deviation {worst_mass:.2e}"))
    out.append(_check("flux divergence lies in P^p", worst_div <= 1e-12,
                      f"max deviation {worst_div:.2e}"))
    out.append(_check("flux normal traces lie in P^p", worst_trace <= 1e-12,
                      f"max deviation {worst_trace:.2e}"))
    return out


def _verify_solves(config: RunConfig) -> list[tuple[str, bool, str]]:
    out = []

    # condensed and monolithic paths must agree
    worst = 0.0
    for n, p in ((1, 0), (1, 1), (2, 1)):
        space = Space(build_structured_mesh(n), p)
        exact = plane_wave(config.kappa, config.theta)
        data = ProblemData(kappa=config.kappa, excitation=exact.boundary_g)
        sol = solve(space, data)
        mono_int, mono_skel = solve_monolithic(space, data)
        scale = max(np.abs(mono_skel).max(), np.abs(mono_int).max())
        worst = max(
            worst,
            np.abs(sol.skeleton - mono_skel).max() / scale,
            np.abs(sol.interior - mono_int).max() / scale,
        )
    out.append(_check("condensation matches monolithic solve", worst <= 1e-9,
                      f"max relative deviation {worst:.2e}"))

    # zero excitation must give the zero solution
    space = Space(build_structured_mesh(2), 1)
    data = ProblemData(kappa=config.kappa)
    sol = solve(space, data)
    worst = max(np.abs(sol.interior).max(), np.abs(sol.skeleton).max())
    out.append(_check("zero excitation gives zero solution", worst <= 1e-12,
                      f"max magnitude {worst:.2e}"))

    # energy identities, stability and elimination on real solves
    for kappa, n, p in ((config.kappa, 4, 1), (50.0, 8, 1)):
        exact = plane_wave(kappa, config.theta)
        space = Space(build_structured_mesh(n), p)
        data = ProblemData(kappa=kappa, alpha=config.alpha, beta=config.beta,
                           excitation=exact.boundary_g)
        sol = solve(space, data)
        energy = check_energy_identities(sol)
        ok = energy.real_residual <= 1e-8 and energy.imag_residual <= 1e-8
        out.append(_check(
            f"energy identities kappa={kappa:g} N={n} p={p}", ok,
            f"residuals {energy.real_residual:.2e}/{energy.imag_residual:.2e}"))
        stab = check_stability_bounds(sol)
        out.append(_check(
            f"stability bounds kappa={kappa:g} N={n} p={p}", stab.passed(),
            f"slacks {stab.dissipation_slack:.2e}/{stab.field_slack:.2e}"))
        elim = check_facet_elimination(sol)
        out.append(_check(
            f"facet elimination kappa={kappa:g} N={n} p={p}",
            elim.max_residual() <= 1e-9,
            f"max residual {elim.max_residual():.2e}"))

    # iterative path agrees with the direct one
    exact = plane_wave(config.kappa, config.theta)
    space = Space(build_structured_mesh(8), 1)
    data = ProblemData(kappa=config.kappa, excitation=exact.boundary_g)
    direct = solve(space, data)
    iterative = solve(space, data, method="bicgstab", tol=1e-8, max_iter=500)
    dev = np.abs(iterative.skeleton - direct.skeleton).max() / np.abs(
        direct.skeleton
    ).max()
    ok = iterative.stats.converged and dev <= 1e-4
    out.append(_check(
        "preconditioned iteration matches direct solve", ok,
        f"{iterative.stats.iterations} iterations, deviation {dev:.2e}"))

    # fault injection: a flipped jump-penalty sign must break the identity
    data = ProblemData(kappa=config.kappa, excitation=exact.boundary_g,
                       debug_flip_beta_sign=True)
    faulty = solve(Space(build_structured_mesh(4), 1), data)
    energy = check_energy_identities(faulty)
    out.append(_check(
        "sign fault is detected by the identity check",
        energy.real_residual > 1e-8,
        f"residual under fault {energy.real_residual:.2e}"))
    return out


def run_verify(config: RunConfig) -> int:
    checks = (
        _verify_mesh()
        + _verify_quadrature()
        + _verify_bases()
        + _verify_solves(config)
    )
    failures = 0
    for name, ok, detail in checks:
        tag = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        print(f"[{tag}] {name}{suffix}")
        failures += 0 if ok else 1
    print(f"{len(checks) - failures}/{len(checks)} checks passed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad flags are a config error, not solver failure
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(3)


def _parse_levels(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdg-helmholtz", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (
        ("converge", "plane-wave convergence sweep"),
        ("solve", "single solve with field sampling"),
        ("verify", "run the invariant suite"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--kappa", type=float, default=5.0, help="wave number")
        p.add_argument("--theta", type=float, default=math.pi / 6.0,
                       help="plane-wave angle in radians")
        p.add_argument("--degree", type=int, default=1, help="polynomial degree")
        p.add_argument("--levels", type=_parse_levels, default=None,
                       help="comma-separated mesh levels, e.g. 4,8,16")
        p.add_argument("--alpha", type=float, default=1.0,
                       help="scalar jump penalty")
        p.add_argument("--beta", type=float, default=1.0,
                       help="flux jump penalty")
        p.add_argument("--solver", choices=("direct", "bicgstab"),
                       default="direct")
        p.add_argument("--tol", type=float, default=1e-5,
                       help="iterative solver tolerance")
        p.add_argument("--max-iter", type=int, default=2000)
        p.add_argument("--material", choices=("none", "c1", "c2"),
                       default="none")
        p.add_argument("--excitation", choices=("auto", "planewave", "gaussian"),
                       default="auto")
        p.add_argument("--out", default=None, help="output CSV path (default stdout)")
        p.add_argument("--samples", type=int, default=101,
                       help="field sample grid resolution")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = RunConfig(**vars(args))
    try:
        config.validate()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    runner = {
        "converge": run_converge,
        "solve": run_solve,
        "verify": run_verify,
    }[config.command]
    return runner(config)


if __name__ == "__main__":
    sys.exit(main())
