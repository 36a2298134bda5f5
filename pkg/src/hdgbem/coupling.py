"""Relaxed alternating coupling of the interior and exterior solvers.

One cycle maps the interface Dirichlet trace g (a mean-zero trigonometric
polynomial plus a separately tracked far-field constant) to a new trace:

  1. solve the interior problem with Dirichlet data g + u_inf on the
     interface and the problem datum on the inner boundary;
  2. extrapolate the interior flux to the interface nodes, project onto
     mean-zero densities and flip the sign to obtain the exterior Neumann
     density, then solve the boundary integral equation for the new trace;
  3. relax:  g  <-  omega * g_tilde + (1 - omega) * g.

The constant mode cannot travel through the mean-zero integral equation,
so it is driven by the radiation-condition compatibility "total interface
flux = 0": its update is an exact Newton step using the flux response to a
unit constant datum (one extra interior solve at setup).  A fixed point of
the relaxed map is a fixed point of the unrelaxed one, so converged
answers do not depend on the relaxation weight.

``monolithic_solve`` assembles the same coupling conditions into a single
linear system and is the equivalence oracle for the iteration's limit.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bem import (
    TrigPolynomial,
    _coeff_to_samples,
    _mean_zero_injection,
    compute_u_infinity,
    project_mean_zero,
    solve_exterior,
)
from .errors import DimensionError, DivergenceError, EstimationError, SolverError
from .hdg import PatchLocator

TWO_PI = 2.0 * np.pi


class CouplingConfig:
    """Iteration controls: relaxation weight, cap, tolerance, density degree."""

    def __init__(self, omega=0.5, max_iterations=100, tol=1e-8, n=32,
                 g0=None, u_inf0=0.0, aitken=False, method="galerkin"):
        if not 0.0 < omega <= 1.0:
            raise ValueError(f"relaxation weight must lie in (0, 1], got {omega}")
        if tol <= 0.0:
            raise ValueError("tolerance must be positive")
        self.omega = float(omega)
        self.max_iterations = int(max_iterations)
        self.tol = float(tol)
        self.n = int(n)
        self.g0 = g0
        self.u_inf0 = float(u_inf0)
        self.aitken = bool(aitken)
        self.method = method


class CouplingState:
    """Current densities, far-field estimate and convergence history."""

    def __init__(self, n):
        self.iteration = 0
        self.g = TrigPolynomial.zero(n)
        self.lam = TrigPolynomial.zero(n)
        self.u_inf = 0.0
        self.u_inf_formula = 0.0
        self.history = []
        self.u_inf_history = []
        self.residual_history = []
        self.lambda_mean_max = 0.0
        self.mean_flux = 0.0
        self.field = None
        self.converged = False
        self.omega = None


class InterfaceSampler:
    """Flux sampling at the 2n interface nodes of the density grid."""

    def __init__(self, system, curve, n):
        self.curve = curve
        self.n = int(n)
        self.params = np.arange(2 * self.n) * np.pi / self.n
        self.locator = PatchLocator(system.bmap, system.patches)
        self.parents = self.locator.locate(self.params)
        pts = curve.point(self.params)
        normals = curve.normal(self.params)
        disc = system.disc
        mesh = system.mesh
        verts = mesh.vertices[mesh.elements[self.parents]]
        rel = pts - verts[:, 0, :]
        ref = np.einsum("pd,ped->pe", rel, disc.invJ[self.parents])
        vals = disc.basis.eval(ref)                       # (2n, d)
        d = disc.d
        rows = np.empty((2 * self.n, 2 * d))
        rows[:, :d] = normals[:, 0:1] * vals
        rows[:, d:] = normals[:, 1:2] * vals
        self.rows = rows
        self.arc_w = curve.speed(self.params) * np.pi / self.n

    def flux(self, field):
        d = field.U.shape[1]
        qflat = field.Q.reshape(len(field.mesh.elements), 2 * d)
        return np.einsum("pc,pc->p", self.rows, qflat[self.parents])

    def mean_flux(self, samples):
        return float(np.sum(self.arc_w * samples))

    def trace_operator(self, system, f_mom):
        """Sparse Z with flux = Z uhat + z_f, for the monolithic assembly."""
        disc = system.disc
        mesh = system.mesh
        d, ne = disc.d, disc.ne
        part = disc.local_particular(f_mom)
        rows, cols, vals = [], [], []
        z_f = np.empty(2 * self.n)
        for j in range(2 * self.n):
            t = int(self.parents[j])
            Gq = disc.recovery[t][:2 * d]                 # (2d, 3ne)
            coeff_row = self.rows[j] @ Gq                 # (3ne,)
            ecols = (mesh.element_edges[t][:, None] * ne
                     + np.arange(ne)[None, :]).ravel()
            rows.append(np.full(3 * ne, j))
            cols.append(ecols)
            vals.append(coeff_row)
            z_f[j] = self.rows[j] @ part[t][:2 * d]
        Z = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * self.n, system.n_trace)).tocsr()
        return Z, z_f


class _CachedInterior:
    """Reusable right-hand-side pieces for repeated interface solves."""

    def __init__(self, system, ops, f, u0):
        self.system = system
        self.ops = ops
        self.f_mom = system.disc.f_moments(f)
        rhs_f, _ = system.rhs(f_mom=self.f_mom)
        self.rhs_f = rhs_f
        self.data_u0 = system.boundary_data_vector(None, u0)
        bmap = system.bmap
        from .geometry import TAG_OUTER
        self.out_rows = [r for r in range(len(bmap.edge_ids))
                         if bmap.tags[r] == TAG_OUTER]
        self.out_edges = [int(bmap.edge_ids[r]) for r in self.out_rows]
        self.out_params = np.stack([bmap.params[r] for r in self.out_rows])
        self.out_weights = np.stack([bmap.weights[r] for r in self.out_rows])
        self.mu = system.disc.mu_vals

    def data_g(self, g, u_inf):
        vals = g.eval(self.out_params) + u_inf
        moments = np.einsum("rq,rq,qm->rm", self.out_weights, vals, self.mu)
        vec = np.zeros(self.system.n_trace)
        ne = self.system.ne
        for i, e in enumerate(self.out_edges):
            vec[e * ne:(e + 1) * ne] = moments[i]
        return vec

    def solve(self, g, u_inf):
        rhs = self.rhs_f + self.data_u0 + self.data_g(g, u_inf)
        uhat = self.system.solve_trace(rhs)
        field = self.system.recover(uhat, self.f_mom)
        return field, self.system.residual(uhat, rhs)


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

def dtn_step(system, ops, sampler, g, u_inf=0.0, f=None, u0=None, cache=None):
    """Interior solve followed by flux extraction and mean-zero projection.

    Returns (lam, field, mean_flux): lam is the negated projected normal
    flux at the interface nodes, the Neumann density handed to the
    exterior solver.
    """
    if cache is None:
        cache = _CachedInterior(system, ops, f, u0)
    field, _ = cache.solve(g, u_inf)
    samples = sampler.flux(field)
    lam = project_mean_zero(-samples, curve=ops.curve)
    return lam, field, sampler.mean_flux(samples)


def ntd_step(ops, lam, method="galerkin"):
    """Exterior solve: new Dirichlet trace and the far-field test value."""
    g_tilde = solve_exterior(ops, lam, method=method)
    return g_tilde, compute_u_infinity(ops, lam, g_tilde)


def relax_update(g_old, g_tilde, omega):
    """Convex combination omega * g_tilde + (1 - omega) * g_old."""
    if g_old.n != g_tilde.n:
        raise DimensionError("relaxation requires equal density degrees")
    out = omega * g_tilde + (1.0 - omega) * g_old
    out.mean_zero = g_old.mean_zero and g_tilde.mean_zero
    return out


def estimate_contraction(history):
    """Geometric-mean ratio of successive updates over the tail half."""
    if len(history) < 3:
        raise EstimationError("need at least three update norms")
    tail = np.asarray(history[len(history) // 2:], dtype=float)
    num, den = tail[1:], tail[:-1]
    keep = den > 0
    if not np.any(keep):
        return 0.0
    ratios = num[keep] / den[keep]
    if np.any(ratios == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(ratios))))


# ---------------------------------------------------------------------------
# fixed-point driver
# ---------------------------------------------------------------------------

def run_fixed_point(system, ops, f=None, u0=None, config=None):
    """Iterate interior/exterior solves with relaxation until the trace settles.

    Raises DivergenceError (carrying the state and its history) when the
    iteration cap is hit; callers may retry with a smaller weight.
    """
    config = config or CouplingConfig(n=ops.n)
    n = ops.n
    if config.g0 is not None and config.g0.n != n:
        raise DimensionError("initial trace degree does not match the operator set")
    speed = ops.curve.radius if ops.curve.is_circle else \
        ops.curve.length() / TWO_PI
    sampler = InterfaceSampler(system, ops.curve, n)
    cache = _CachedInterior(system, ops, f, u0)

    # flux response to a unit constant interface datum (far-field channel)
    probe, _ = cache.solve(TrigPolynomial.zero(n), 1.0)
    base, _ = cache.solve(TrigPolynomial.zero(n), 0.0)
    chi = sampler.mean_flux(sampler.flux(probe)) - sampler.mean_flux(sampler.flux(base))
    if abs(chi) < 1e-12:
        raise SolverError("degenerate far-field channel: zero flux response")

    state = CouplingState(n)
    state.omega = config.omega
    g = config.g0 if config.g0 is not None else TrigPolynomial.zero(n)
    u_inf = config.u_inf0
    omega = config.omega
    prev_resid = None
    for it in range(1, config.max_iterations + 1):
        state.iteration = it
        field, lin_res = cache.solve(g, u_inf)
        samples = sampler.flux(field)
        mflux = sampler.mean_flux(samples)
        lam = project_mean_zero(-samples, curve=ops.curve)
        state.lambda_mean_max = max(state.lambda_mean_max,
                                    abs(lam.weighted_mean(
                                        None if ops.curve.is_circle else ops.curve)))
        g_tilde, u_inf_formula = ntd_step(ops, lam, method=config.method)
        u_inf_new = u_inf - mflux / chi
        if config.aitken and prev_resid is not None:
            resid = (g_tilde - g).coefficients()
            dr = resid - prev_resid
            denom = float(dr @ dr)
            if denom > 0:
                omega = float(np.clip(-omega * (prev_resid @ dr) / denom, 0.05, 1.0))
            prev_resid = resid
        elif config.aitken:
            prev_resid = (g_tilde - g).coefficients()
        g_new = relax_update(g, g_tilde, omega)
        delta = g_new - g
        delta.cos[0] += u_inf_new - u_inf
        update = delta.l2_norm(speed=speed)
        g, u_inf = g_new, u_inf_new

        state.history.append(update)
        state.u_inf_history.append(u_inf)
        state.residual_history.append(lin_res)
        state.g, state.lam = g, lam
        state.u_inf, state.u_inf_formula = u_inf, u_inf_formula
        state.field = field
        state.mean_flux = mflux

        trace = TrigPolynomial(g.cos.copy(), g.sin.copy())
        trace.cos[0] += u_inf
        if update <= config.tol * max(1.0, trace.l2_norm(speed=speed)):
            state.converged = True
            break
    if not state.converged:
        raise DivergenceError(
            f"no convergence in {config.max_iterations} iterations "
            f"(last update {state.history[-1]:.3e})", state=state)
    # synchronize the stored field and density with the converged trace
    field, lin_res = cache.solve(g, u_inf)
    samples = sampler.flux(field)
    state.field = field
    state.lam = project_mean_zero(-samples, curve=ops.curve)
    state.mean_flux = sampler.mean_flux(samples)
    state.residual_history.append(lin_res)
    return state


def write_iteration_log(state, path):
    """CSV rows (iter, update-norm, u_inf estimate, interior residual)."""
    with open(path, "w") as fh:
        fh.write("iter,update_norm,u_inf,interior_residual\n")
        for i, upd in enumerate(state.history):
            res = state.residual_history[i] if i < len(state.residual_history) else ""
            fh.write(f"{i + 1},{upd:.17e},{state.u_inf_history[i]:.17e},{res:.3e}\n")


# ---------------------------------------------------------------------------
# monolithic oracle
# ---------------------------------------------------------------------------

def monolithic_solve(system, ops, f=None, u0=None, size_limit=400000):
    """Solve interior, interface equation and flux compatibility at once.

    Unknowns are the interior trace coefficients, the mean-zero interface
    trace and the far-field constant.  Returns (field, g, lam, u_inf).
    """
    n = ops.n
    n_trace = system.n_trace
    n_red = 2 * n - 1
    if n_trace + n_red + 1 > size_limit:
        raise SolverError("coupled system exceeds the desk-scale limit")
    sampler = InterfaceSampler(system, ops.curve, n)
    cache = _CachedInterior(system, ops, f, u0)
    f_mom = cache.f_mom
    Z_flux, z_f = sampler.trace_operator(system, f_mom)

    # interface data columns: moments of the trig basis and of the constant
    ne = system.ne
    basis_vals = _coeff_to_samples(n, cache.out_params.ravel())
    basis_vals = basis_vals.reshape(cache.out_params.shape + (2 * n,))
    Bg = sp.lil_matrix((n_trace, 2 * n))
    bc = np.zeros(n_trace)
    for i, e in enumerate(cache.out_edges):
        mom = np.einsum("q,qc,qm->mc", cache.out_weights[i], basis_vals[i], cache.mu)
        Bg[e * ne:(e + 1) * ne, :] = mom
        bc[e * ne:(e + 1) * ne] = np.einsum("q,qm->m", cache.out_weights[i], cache.mu)
    Zinj = _mean_zero_injection(ops)
    Bg_red = Bg.tocsr() @ Zinj

    # sample -> mean-zero-coefficient projection
    nodes = sampler.params
    Pmat = np.zeros((2 * n, 2 * n))
    Pmat[0, :] = 1.0 / (2 * n)
    for m in range(1, n):
        Pmat[m, :] = np.cos(m * nodes) / n
        Pmat[n + m, :] = np.sin(m * nodes) / n
    Pmat[n, :] = np.cos(n * nodes) / (2 * n)
    if ops.curve.is_circle:
        Pmat[0, :] = 0.0
    else:
        t8 = np.linspace(0.0, TWO_PI, 8 * n, endpoint=False)
        w8 = ops.curve.speed(t8)
        moms = (w8[:, None] * _coeff_to_samples(n, t8)).mean(axis=0) * TWO_PI
        Pmat -= np.outer(np.eye(2 * n)[:, 0], moms @ Pmat) / moms[0]

    A_bie = 0.5 * np.eye(2 * n) - ops.K
    G = ops.gram[:, None]
    rows_bie_g = Zinj.T @ (G * A_bie) @ Zinj
    # lam = -P flux  =>  (1/2 - K) g - V P flux = 0
    coupling = Zinj.T @ (G * ops.V) @ (Pmat @ Z_flux.toarray())
    rhs_bie = Zinj.T @ ((G * ops.V) @ (Pmat @ z_f)).ravel()

    w_arc = sampler.arc_w
    row_flux = w_arc @ Z_flux.toarray()

    top = sp.hstack([system.matrix,
                     sp.csr_matrix(-Bg_red),
                     sp.csr_matrix(-bc[:, None])])
    mid = sp.hstack([sp.csr_matrix(-coupling),
                     sp.csr_matrix(rows_bie_g),
                     sp.csr_matrix((n_red, 1))])
    bot = sp.hstack([sp.csr_matrix(row_flux[None, :]),
                     sp.csr_matrix((1, n_red)),
                     sp.csr_matrix((1, 1))])
    A = sp.vstack([top, mid, bot]).tocsc()
    rhs = np.concatenate([cache.rhs_f + cache.data_u0, rhs_bie,
                          [-float(w_arc @ z_f)]])
    x = spla.spsolve(A, rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("monolithic coupled solve produced non-finite values")
    uhat = x[:n_trace]
    g = TrigPolynomial.from_coefficients(Zinj @ x[n_trace:n_trace + n_red],
                                         mean_zero=True)
    u_inf = float(x[-1])
    field = system.recover(uhat, f_mom)
    samples = sampler.flux(field)
    lam = project_mean_zero(-samples, curve=ops.curve)
    return field, g, lam, u_inf
