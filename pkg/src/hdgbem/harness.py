"""Manufactured solutions, convergence studies and relaxation sweeps.

The manufactured cases live on the annulus between circles of radius 1/2
and 1.  The workhorse is a dipole field x . d / |x|^2 (optionally plus a
constant), which is harmonic off the origin, decays to its constant at
infinity, and has the closed interface traces

    g(theta) = cos(theta),   flux q . n = cos(theta),
    exterior Neumann density = -cos(theta),   u_inf = c.

A variable-coefficient variant multiplies the identity by a radial bump
compactly supported inside the annulus (the source term follows in closed
form), and polynomial cases exercise the discrete-exactness paths.
"""

import time

import numpy as np

from .bem import TrigPolynomial, assemble_layer_operators
from .coupling import (
    CouplingConfig,
    estimate_contraction,
    run_fixed_point,
)
from .errors import DivergenceError
from .geometry import (
    Curve,
    build_annulus_mesh,
    build_boundary_map,
    build_extension_patches,
    proximity_parameter,
)
from .hdg import MaterialField, build_system, l2_errors, solve_interior

CASE_IDS = ("dipole", "dipole-plus-constant", "variable-kappa-bump",
            "polynomial-patch")


class ManufacturedCase:
    """Exact solution bundle: fields, induced data and interface traces."""

    def __init__(self, case_id, kappa, f, u, q, grad_u, u_inf, gamma, gamma0,
                 supports_coupling, description=""):
        self.id = case_id
        self.kappa = kappa
        self.f = f
        self.u = u
        self.q = q
        self.grad_u = grad_u
        self.u_inf = u_inf
        self.gamma = gamma
        self.gamma0 = gamma0
        self.supports_coupling = supports_coupling
        self.description = description

    def u0(self, pts):
        """Dirichlet datum on the inner problem boundary."""
        return self.u(pts)

    def g_exact(self, n):
        """Mean-zero part of the exact interface trace."""
        t = np.arange(2 * n) * np.pi / n
        vals = self.u(self.gamma.point(t))
        poly = TrigPolynomial.from_samples(vals)
        poly.cos[0] = 0.0
        poly.mean_zero = True
        return poly

    def lam_exact(self, n):
        """Exterior Neumann density: negated interface normal flux."""
        t = np.arange(2 * n) * np.pi / n
        pts = self.gamma.point(t)
        nrm = self.gamma.normal(t)
        flux = np.einsum("pd,pd->p", self.q(pts), nrm)
        poly = TrigPolynomial.from_samples(-flux)
        poly.cos[0] = 0.0
        poly.mean_zero = True
        return poly


def _bump(r, lo=0.55, hi=0.95, amp=0.3):
    # complex-step safe: the support test uses the real part only
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    z = (r - mid) / half
    inside = np.abs(np.real(z)) < 1.0
    out = np.zeros_like(z)
    zi = np.where(inside, z, 0.0)
    body = amp * np.exp(1.0 - 1.0 / (1.0 - zi ** 2))
    return np.where(inside, body, out)


def _bump_deriv(r, lo=0.55, hi=0.95, amp=0.3):
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    z = (r - mid) / half
    inside = np.abs(np.real(z)) < 1.0
    zi = np.where(inside, z, 0.0)
    body = amp * np.exp(1.0 - 1.0 / (1.0 - zi ** 2)) \
        * (-2.0 * zi / (1.0 - zi ** 2) ** 2) / half
    return np.where(inside, body, np.zeros_like(z))


def manufactured_case(case_id, degree=1, constant=3.0):
    """Build one of the named verification cases.

    ``degree`` selects the polynomial for the patch case; ``constant`` is
    the far-field constant of the plus-constant variant.
    """
    gamma = Curve.circle((0.0, 0.0), 1.0)
    gamma0 = Curve.circle((0.0, 0.0), 0.5)

    if case_id in ("dipole", "dipole-plus-constant", "variable-kappa-bump"):
        c = {"dipole": 0.0, "dipole-plus-constant": float(constant),
             "variable-kappa-bump": 1.0}[case_id]

        def u(p):
            p = np.atleast_2d(p)
            return p[:, 0] / (p[:, 0] ** 2 + p[:, 1] ** 2) + c

        def grad_u(p):
            p = np.atleast_2d(p)
            r2 = p[:, 0] ** 2 + p[:, 1] ** 2
            return np.column_stack([(p[:, 1] ** 2 - p[:, 0] ** 2) / r2 ** 2,
                                    -2.0 * p[:, 0] * p[:, 1] / r2 ** 2])

        if case_id == "variable-kappa-bump":
            def kval(p):
                p = np.atleast_2d(p)
                r = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)   # analytic radius
                return 1.0 + _bump(r)

            kappa = MaterialField(lambda p: np.real(kval(p)), bounds=(1.0, 1.3))

            def q(p):
                return -kval(p)[:, None] * grad_u(p)

            def f(p):
                # div q = kappa'(r) cos(theta)/r^2 for the radial coefficient
                p = np.atleast_2d(p)
                r = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)
                return _bump_deriv(r) * (p[:, 0] / r) / r ** 2
        else:
            kappa = MaterialField.identity()

            def q(p):
                return -grad_u(p)

            f = None
        return ManufacturedCase(case_id, kappa, f, u, q, grad_u, c, gamma,
                                gamma0, supports_coupling=True,
                                description="dipole-type exterior field")

    if case_id == "polynomial-patch":
        if degree == 1:
            u = lambda p: np.atleast_2d(p)[:, 0]
            grad_u = lambda p: np.tile([1.0, 0.0], (len(np.atleast_2d(p)), 1))
            f = None
        else:
            u = lambda p: np.atleast_2d(p)[:, 0] ** 2
            grad_u = lambda p: np.column_stack(
                [2.0 * np.atleast_2d(p)[:, 0], np.zeros(len(np.atleast_2d(p)))])
            f = -2.0
        q = lambda p: -np.asarray(grad_u(p))
        return ManufacturedCase("polynomial-patch", MaterialField.identity(),
                                f, u, q, grad_u, 0.0, gamma, gamma0,
                                supports_coupling=False,
                                description=f"global degree-{min(degree, 2)} polynomial")
    raise KeyError(f"unknown case id {case_id!r}; choose from {CASE_IDS}")


def pde_residual(case, pts, step=1e-30):
    """Complex-step residuals of the two first-order equations at points.

    Returns (|div q - f|, |q + kappa grad u|) sampled rows; both should be
    at rounding level for a consistent case.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    h = step

    def dd(fun, comp, axis):
        shift = np.zeros(2, dtype=complex)
        shift[axis] = 1j * h
        return np.imag(np.asarray(fun(pts + shift))[..., comp]) / h

    div_q = dd(case.q, 0, 0) + dd(case.q, 1, 1)
    if case.f is None:
        fv = np.zeros(len(pts))
    elif np.isscalar(case.f):
        fv = np.full(len(pts), float(case.f))
    else:
        fv = np.asarray(case.f(pts))
    res_div = np.abs(div_q - fv)
    kap = case.kappa.value(pts)
    res_flux = np.linalg.norm(case.q(pts) + np.einsum("pab,pb->pa", kap,
                                                      case.grad_u(pts)), axis=1)
    return res_div, res_flux


# ---------------------------------------------------------------------------
# level setup
# ---------------------------------------------------------------------------

class SolverBundle:
    """Everything needed to solve one refinement level."""

    def __init__(self, mesh, bmap, patches, system, ops, proximity):
        self.mesh = mesh
        self.bmap = bmap
        self.patches = patches
        self.system = system
        self.ops = ops
        self.proximity = proximity


def setup_level(case, target_h, k, n=32, fitted=False, tau=1.0):
    """Mesh, maps, patches, trace system and layer operators for one level."""
    mesh = build_annulus_mesh(case.gamma, case.gamma0, target_h, fitted=fitted)
    bmap = build_boundary_map(mesh, case.gamma, case.gamma0, n_nodes=k + 2)
    patches = build_extension_patches(mesh, bmap, case.gamma, case.gamma0)
    system = build_system(mesh, bmap, patches, case.kappa, tau, k)
    ops = assemble_layer_operators(case.gamma, n)
    return SolverBundle(mesh, bmap, patches, system, ops,
                        proximity_parameter(mesh, bmap))


# ---------------------------------------------------------------------------
# study report
# ---------------------------------------------------------------------------

_MACHINE_FLOOR = 1e-12


class StudyReport:
    """Per-level errors plus successive log2 rates between halved levels."""

    columns = ("level", "h", "R_h", "err_q", "err_u", "rate_q", "rate_u",
               "iters", "ratio")

    def __init__(self, case_id, k, n):
        self.case_id = case_id
        self.k = k
        self.n = n
        self.rows = []

    def add_row(self, **kw):
        if self.rows and kw["h"] >= self.rows[-1]["h"]:
            raise ValueError("study rows must have strictly decreasing h")
        self.rows.append(kw)

    def rate(self, key, i):
        """log2 error ratio between rows i-1 and i; None when not defined."""
        if i == 0:
            return None
        e0, e1 = self.rows[i - 1][key], self.rows[i][key]
        if not (np.isfinite(e0) and np.isfinite(e1)):
            return None
        if e0 < _MACHINE_FLOOR or e1 < _MACHINE_FLOOR:
            return None      # exactness regime, rate meaningless
        return float(np.log2(e0 / e1))

    def to_csv(self, path, full=False):
        cols = list(self.columns)
        if full:
            cols += ["mesh_h", "n", "dofs", "err_g", "err_uinf", "converged",
                     "wall_time"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i, row in enumerate(self.rows):
                vals = []
                for cname in cols:
                    if cname == "level":
                        vals.append(str(i))
                    elif cname == "rate_q":
                        r = self.rate("err_q", i)
                        vals.append("" if r is None else f"{r:.6f}")
                    elif cname == "rate_u":
                        r = self.rate("err_u", i)
                        vals.append("" if r is None else f"{r:.6f}")
                    else:
                        v = row.get(cname, "")
                        if isinstance(v, float):
                            vals.append(f"{v:.10e}")
                        else:
                            vals.append(str(v))
                fh.write(",".join(vals) + "\n")

    def summary(self):
        lines = [f"case={self.case_id} k={self.k} n={self.n}",
                 "level      h        R_h      err_q      err_u    rate_q rate_u iters  ratio"]
        for i, row in enumerate(self.rows):
            rq = self.rate("err_q", i)
            ru = self.rate("err_u", i)
            ratio = f"{row['ratio']:6.3f}" if np.isfinite(row["ratio"]) else "   --"
            lines.append(
                f"{i:5d} {row['h']:8.4f} {row['R_h']:8.4f} "
                f"{row['err_q']:10.3e} {row['err_u']:10.3e} "
                f"{'  --  ' if rq is None else f'{rq:6.2f}'} "
                f"{'  --  ' if ru is None else f'{ru:6.2f}'} "
                f"{row['iters']:5d} {ratio}")
        return "\n".join(lines)


def convergence_study(case, k, hs, n=32, config=None, fitted=False, tau=1.0):
    """Solve the case on a sequence of meshes and tabulate errors and rates.

    Coupled cases run the relaxed fixed point per level; interior-only
    cases (polynomial patches) solve the interior problem with the exact
    interface trace as data.  A diverging level is recorded and the study
    continues.
    """
    config = config or CouplingConfig(n=n)
    report = StudyReport(case.id, k, n)
    for target_h in hs:
        t0 = time.time()
        bundle = setup_level(case, target_h, k, n=n, fitted=fitted, tau=tau)
        iters, ratio, conv = 0, np.nan, True
        err_g, err_uinf = np.nan, np.nan
        try:
            if case.supports_coupling:
                state = run_fixed_point(bundle.system, bundle.ops, f=case.f,
                                        u0=case.u0, config=config)
                field = state.field
                iters = state.iteration
                ratio = estimate_contraction(state.history) \
                    if len(state.history) >= 3 else np.nan
                err_g = (state.g - case.g_exact(n)).l2_norm(
                    speed=case.gamma.radius)
                err_uinf = abs(state.u_inf - case.u_inf)
            else:
                field = solve_interior(bundle.system, f=case.f,
                                       g_gamma=case.u, u0_gamma0=case.u0)
                iters = 1
            err_q, err_u = l2_errors(field, bundle.system, case.u, case.q)
        except DivergenceError:
            conv = False
            err_q = err_u = np.nan
        report.add_row(h=float(target_h), mesh_h=bundle.mesh.h,
                       R_h=bundle.proximity.R_h, n=n,
                       dofs=bundle.system.n_trace, err_q=err_q, err_u=err_u,
                       err_g=err_g, err_uinf=err_uinf, iters=iters,
                       ratio=float(ratio), converged=conv,
                       wall_time=time.time() - t0)
    return report


def omega_sweep(case, target_h, k, omegas, n=32, tol=1e-8, max_iterations=100):
    """Convergence behavior of the relaxed iteration across weights.

    Divergent weights are recorded, not raised.  Returns a list of dicts
    (omega, converged, iterations, ratio) plus the best-performing weight.
    """
    bundle = setup_level(case, target_h, k, n=n)
    rows = []
    for omega in omegas:
        cfg = CouplingConfig(omega=omega, tol=tol, n=n,
                             max_iterations=max_iterations)
        try:
            state = run_fixed_point(bundle.system, bundle.ops, f=case.f,
                                    u0=case.u0, config=cfg)
            converged = True
            iters = state.iteration
            hist = state.history
        except DivergenceError as err:
            converged = False
            iters = max_iterations
            hist = err.state.history
        ratio = estimate_contraction(hist) if len(hist) >= 3 else np.nan
        rows.append({"omega": float(omega), "converged": converged,
                     "iterations": iters, "ratio": float(ratio)})
    converged_rows = [r for r in rows if r["converged"]]
    best = min(converged_rows, key=lambda r: r["iterations"]) \
        if converged_rows else None
    return rows, best


def write_sweep_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("omega,converged,iterations,ratio\n")
        for r in rows:
            fh.write(f"{r['omega']:.6f},{int(r['converged'])},"
                     f"{r['iterations']},{r['ratio']:.10e}\n")
