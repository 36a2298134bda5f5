"""Hybridizable DG discretization of the interior diffusion problem.

The mixed form seeks (q, u, uhat) with q + kappa grad u = 0 and div q = f,
where uhat is a single-valued polynomial trace on the mesh skeleton.  On
interior edges the numerical flux q.nu + tau (u - uhat) is conserved; on the
computational boundary the trace is matched against the Dirichlet datum
carried over from the true boundary along short transfer segments,

    uhat(x) = data(mapped x) + int_0^l(x) kappa^{-1} E q (x + s t) . t ds,

with E the polynomial extrapolation of the parent element.  The transfer
line integral couples the boundary trace to the element flux and is kept in
the system matrix, so the condensed problem stays linear in the trace
unknowns and its factorization is reused for every right-hand side.

Element unknowns are eliminated per element (static condensation); the
global system is posed on the trace coefficients of every edge, boundary
edges included, because the transfer coupling keeps them in the graph.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import TriangleBasis, edge_legendre
from .errors import (
    AssemblyError,
    CoverageError,
    SolverError,
    TransferIntegrationError,
)
from .geometry import TAG_OUTER
from .quadrature import gauss01, triangle_rule

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

class MaterialField:
    """Symmetric positive definite diffusion coefficient kappa(x).

    Accepts the identity (None), a scalar, a constant 2x2 matrix, or a
    callable mapping points (m, 2) to scalars (m,) or matrices (m, 2, 2).
    The declared bounds are the extreme entries used in diagnostics only.
    """

    def __init__(self, kappa=None, bounds=None):
        self._fun = None
        self._const = None
        if kappa is None:
            self._const = np.eye(2)
        elif np.isscalar(kappa):
            self._const = float(kappa) * np.eye(2)
        elif callable(kappa):
            self._fun = kappa
        else:
            mat = np.asarray(kappa, dtype=float)
            if mat.shape != (2, 2) or not np.allclose(mat, mat.T):
                raise AssemblyError("constant kappa must be a symmetric 2x2 matrix")
            self._const = mat
        if self._const is not None:
            ev = np.linalg.eigvalsh(self._const)
            if ev.min() <= 0:
                raise AssemblyError("kappa must be positive definite")
            self.bounds = (float(ev.min()), float(ev.max()))
        else:
            self.bounds = bounds if bounds is not None else (None, None)

    @classmethod
    def identity(cls):
        return cls(None)

    @property
    def is_identity(self):
        return self._const is not None and np.array_equal(self._const, np.eye(2))

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        lead = pts.shape[:-1]
        if self._const is not None:
            return np.broadcast_to(self._const, lead + (2, 2)).copy()
        raw = np.asarray(self._fun(pts.reshape(-1, 2)), dtype=float)
        if raw.ndim == 1:
            out = raw[:, None, None] * np.eye(2)[None, :, :]
        else:
            out = raw
        return out.reshape(lead + (2, 2))

    def inv(self, pts):
        return np.linalg.inv(self.value(pts))


class Stabilization:
    """Positive piecewise-constant stabilization on the mesh skeleton."""

    def __init__(self, value=1.0):
        self.value = value

    def on_edges(self, mesh):
        tau = np.asarray(self.value, dtype=float)
        if tau.ndim == 0:
            tau = np.full(mesh.n_edges, float(tau))
        if tau.shape != (mesh.n_edges,):
            raise AssemblyError("tau must be scalar or one value per edge")
        if np.any(tau <= 0):
            raise AssemblyError("tau must be strictly positive")
        return tau

    @property
    def bar(self):
        return float(np.max(self.value))


class DGField:
    """Element-wise (q, u) coefficients plus the single-valued edge trace."""

    def __init__(self, mesh, k, Q, U, Uhat):
        self.mesh = mesh
        self.k = k
        self.Q = Q          # (M, 2, d)
        self.U = U          # (M, d)
        self.Uhat = Uhat    # (E, k+1)
        self._basis = TriangleBasis(k)

    def _ref(self, elem, pts):
        v = self.mesh.vertices[self.mesh.elements[elem]]
        J = np.column_stack([v[1] - v[0], v[2] - v[0]])
        return np.atleast_2d(pts - v[0]) @ np.linalg.inv(J).T

    def u_at(self, elem, pts):
        return self._basis.eval(self._ref(elem, pts)) @ self.U[elem]

    def q_at(self, elem, pts):
        vals = self._basis.eval(self._ref(elem, pts))
        return np.stack([vals @ self.Q[elem, 0], vals @ self.Q[elem, 1]], axis=-1)

    def copy(self):
        return DGField(self.mesh, self.k, self.Q.copy(), self.U.copy(), self.Uhat.copy())


# ---------------------------------------------------------------------------
# discretization cache
# ---------------------------------------------------------------------------

class _Discretization:
    """All element/edge quadrature tables for one (mesh, material, tau, k)."""

    def __init__(self, mesh, material, tau, k):
        self.mesh = mesh
        self.material = material
        self.k = int(k)
        self.tau = Stabilization(tau).on_edges(mesh) if not isinstance(tau, Stabilization) \
            else tau.on_edges(mesh)
        self.basis = TriangleBasis(k)
        d = self.basis.dim
        self.d = d
        self.ne = k + 1
        M = len(mesh.elements)

        # volume tables
        ref_pts, ref_w = triangle_rule(2 * self.k + 3)
        vals, grads = self.basis.eval_grad(ref_pts)
        verts = mesh.vertices[mesh.elements]                       # (M,3,2)
        J = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]], axis=2)
        detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(detJ <= 0):
            raise AssemblyError("element with non-positive Jacobian")
        invJ = np.linalg.inv(J)
        self.J, self.invJ, self.detJ = J, invJ, detJ
        phys = verts[:, None, 0, :] + ref_pts[None, :, :] @ np.swapaxes(J, 1, 2)
        wphys = detJ[:, None] * ref_w[None, :]                     # (M,nq)
        self.phys_pts, self.phys_w = phys, wphys
        kinv = material.inv(phys)                                  # (M,nq,2,2)
        gx = np.einsum("qbd,mde->mqbe", grads, invJ)               # phys grads (M,nq,dim,2)
        self.vol_vals, self.vol_grads = vals, gx

        # kappa^{-1}-weighted vector mass, grouped [x-block | y-block]
        Mk = np.empty((M, 2 * d, 2 * d))
        for c1 in range(2):
            for c2 in range(2):
                Mk[:, c1 * d:(c1 + 1) * d, c2 * d:(c2 + 1) * d] = np.einsum(
                    "mq,q a,qb->mab", wphys * kinv[:, :, c1, c2], vals, vals)
        self.mass_kinv = Mk
        Dx = np.einsum("mq,qa,mqb->mab", wphys, vals, gx[..., 0])
        Dy = np.einsum("mq,qa,mqb->mab", wphys, vals, gx[..., 1])
        self.div = np.concatenate([Dx, Dy], axis=2)                # (M,d,2d) = (w, div q)

        # edge tables: Gauss nodes along the canonical edge direction
        q1, w1 = gauss01(self.k + 2)
        self.edge_q1, self.edge_w1 = q1, w1
        self.nq_edge = len(q1)
        self.mu_vals = edge_legendre(self.k, 2.0 * q1 - 1.0)       # (qe, ne)

        E = mesh.n_edges
        edge_pts = (mesh.vertices[mesh.edges[:, 0]][:, None, :]
                    + q1[None, :, None]
                    * (mesh.vertices[mesh.edges[:, 1]]
                       - mesh.vertices[mesh.edges[:, 0]])[:, None, :])  # (E,qe,2)
        self.edge_pts = edge_pts
        self.edge_len = np.linalg.norm(
            mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]], axis=1)
        self.edge_w = self.edge_len[:, None] * w1[None, :]          # (E,qe)

        # per (element, side): traces of the volume basis at the edge nodes
        side_edges = mesh.element_edges                             # (M,3)
        pts_es = edge_pts[side_edges]                               # (M,3,qe,2)
        rel = pts_es - verts[:, None, None, 0, :]
        ref_es = np.einsum("msqd,med->msqe", rel, invJ)
        self.trace_vals = self.basis.eval(
            ref_es.reshape(-1, 2)).reshape(M, 3, self.nq_edge, d)

        # outward side normals
        nrm = np.empty((M, 3, 2))
        for s_loc in range(3):
            a = verts[:, (s_loc + 1) % 3, :]
            b = verts[:, (s_loc + 2) % 3, :]
            t_vec = b - a
            n = np.stack([t_vec[:, 1], -t_vec[:, 0]], axis=1)
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            mid = 0.5 * (a + b)
            cent = verts.mean(axis=1)
            flip = np.einsum("md,md->m", n, cent - mid) > 0
            n[flip] *= -1.0
            nrm[:, s_loc, :] = n
        self.side_normals = nrm

        # E_e (2d x ne) and F_e (d x ne) per (element, side); S (d x d)
        w_es = self.edge_w[side_edges]                              # (M,3,qe)
        tau_es = self.tau[side_edges]                               # (M,3)
        tr = self.trace_vals
        mu = self.mu_vals
        En = np.einsum("msq,msqa,qb->msab", w_es, tr, mu)           # (M,3,d,ne)
        E_side = np.empty((M, 3, 2 * d, self.ne))
        E_side[:, :, :d, :] = nrm[:, :, 0, None, None] * En
        E_side[:, :, d:, :] = nrm[:, :, 1, None, None] * En
        self.E_side = E_side
        self.F_side = tau_es[:, :, None, None] * En
        self.S_elem = np.einsum("ms,msq,msqa,msqb->mab",
                                tau_es, w_es, tr, tr)
        self.edge_mass = np.einsum("eq,qa,qb->eab", self.edge_w, mu, mu)

        self._local_solvers()

    def _local_solvers(self):
        M = len(self.mesh.elements)
        d, ne = self.d, self.ne
        nloc = 3 * d
        L = np.zeros((M, nloc, nloc))
        L[:, :2 * d, :2 * d] = self.mass_kinv
        L[:, :2 * d, 2 * d:] = -np.swapaxes(self.div, 1, 2)
        L[:, 2 * d:, :2 * d] = self.div
        L[:, 2 * d:, 2 * d:] = self.S_elem
        try:
            self.local_inv = np.linalg.inv(L)
        except np.linalg.LinAlgError as exc:
            raise AssemblyError("singular element local solver") from exc
        R = np.zeros((M, nloc, 3 * ne))
        for s_loc in range(3):
            R[:, :2 * d, s_loc * ne:(s_loc + 1) * ne] = -self.E_side[:, s_loc]
            R[:, 2 * d:, s_loc * ne:(s_loc + 1) * ne] = self.F_side[:, s_loc]
        self.recovery = self.local_inv @ R      # (q,u) = recovery @ uhat_loc + local_inv @ [0; f]

    def f_moments(self, f):
        """Element load vectors (M, d) for callable/constant/zero f."""
        M = len(self.mesh.elements)
        if f is None:
            return np.zeros((M, self.d))
        if np.isscalar(f):
            fv = np.full(self.phys_pts.shape[:2], float(f))
        else:
            fv = np.asarray(f(self.phys_pts.reshape(-1, 2)), dtype=float).reshape(
                self.phys_pts.shape[:2])
        return np.einsum("mq,qa->ma", self.phys_w * fv, self.vol_vals)

    def local_particular(self, f_mom):
        rhs = np.zeros((len(self.mesh.elements), 3 * self.d))
        rhs[:, 2 * self.d:] = f_mom
        return np.einsum("mab,mb->ma", self.local_inv, rhs)


# ---------------------------------------------------------------------------
# transfer couplings
# ---------------------------------------------------------------------------

class TransferBlocks:
    """Path-integral couplings of one boundary edge.

    path_moments : (2d, ne)  line integral of extrapolated flux tested
                   against the edge trace basis (enters the trace system)
    flux_flux    : (2d, 2d)  same integral tested against v . nu
    flux_scalar  : (d, 2d)   tau-weighted integral tested against w
    """

    def __init__(self, path_moments, flux_flux, flux_scalar):
        self.path_moments = path_moments
        self.flux_flux = flux_flux
        self.flux_scalar = flux_scalar


def assemble_transfer(disc, bmap, row):
    """Transfer blocks for boundary-map row ``row`` (zero when fitted)."""
    mesh = disc.mesh
    e = int(bmap.edge_ids[row])
    parent = int(bmap.parents[row])
    d, ne = disc.d, disc.ne
    nodes, l, t = bmap.nodes[row], bmap.l[row], bmap.t[row]
    w_edge = bmap.weights[row]
    if np.max(l) > 3.0 * mesh.h_T[parent]:
        raise TransferIntegrationError(
            f"transfer path on edge {e} leaves the extension patch")
    mu = disc.mu_vals                                   # nodes follow gauss01(k+2)
    nu = bmap.nu[row]
    tr = disc.trace_vals[parent, list(mesh.element_edges[parent]).index(e)]
    nq = len(w_edge)
    if np.max(l) == 0.0:
        z2, zf, zs = np.zeros((2 * d, ne)), np.zeros((2 * d, 2 * d)), np.zeros((d, 2 * d))
        return TransferBlocks(z2, zf, zs)
    qs, ws = gauss01(disc.k + 2)
    # path points (nq, ns, 2) and the inner integral of kappa^{-1} phi . t
    pts = nodes[:, None, :] + (l[:, None] * qs[None, :])[:, :, None] * t[:, None, :]
    kinv = disc.material.inv(pts)                        # (nq,ns,2,2)
    kt = np.einsum("qsab,qb->qsa", kinv, t)              # kappa^{-1} t
    verts = mesh.vertices[mesh.elements[parent]]
    ref = (pts.reshape(-1, 2) - verts[0]) @ disc.invJ[parent].T
    phi = disc.basis.eval(ref).reshape(nq, len(qs), d)   # extrapolated basis
    # inner[q, c, b] = int_0^l (kappa^{-1} t)_c phi_b ds
    inner = np.einsum("s,q,qsc,qsb->qcb", ws, l, kt, phi)
    tau_e = disc.tau[e]
    inner_flat = inner.reshape(nq, 2 * d)
    path_moments = np.einsum("q,qc,qm->cm", w_edge, inner_flat, mu)
    vdotnu = np.concatenate([nu[0] * tr, nu[1] * tr], axis=1)   # (nq, 2d)
    flux_flux = np.einsum("q,qc,qv->vc", w_edge, inner_flat, vdotnu)
    flux_scalar = tau_e * np.einsum("q,qc,qw->wc", w_edge, inner_flat, tr)
    return TransferBlocks(path_moments, flux_flux, flux_scalar)


# ---------------------------------------------------------------------------
# local block view (diagnostics and low-level tests)
# ---------------------------------------------------------------------------

class LocalBlocks:
    def __init__(self, mass_kinv, div, jump_penalty, edge_flux, edge_scalar):
        self.mass_kinv = mass_kinv      # (2d, 2d)  (kappa^{-1} q, v)_T
        self.div = div                  # (d, 2d)   (w, div q)_T
        self.jump_penalty = jump_penalty  # list per side, own-side 1/(2 tau) <q.nu, v.nu>
        self.edge_flux = edge_flux      # list per side, <q.nu, mu>
        self.edge_scalar = edge_scalar  # list per side, <u, w>_e


def assemble_local(mesh, elem, material, tau, k):
    """Per-element blocks of the bilinear forms (exact Gauss quadrature).

    Diagnostic view: builds the full discretization cache on each call, so
    query single elements of small meshes; production assembly goes through
    build_system, which shares one cache across all elements.
    """
    disc = _Discretization(mesh, material, tau, k)
    t = int(elem)
    jump, eflux, escal = [], [], []
    w_es = disc.edge_w[mesh.element_edges[t]]
    for s_loc in range(3):
        e = mesh.element_edges[t, s_loc]
        tr = disc.trace_vals[t, s_loc]
        nrm = disc.side_normals[t, s_loc]
        vn = np.concatenate([nrm[0] * tr, nrm[1] * tr], axis=1)
        jump.append(0.5 / disc.tau[e] * np.einsum("q,qa,qb->ab", w_es[s_loc], vn, vn))
        eflux.append(np.einsum("q,qa,qm->am", w_es[s_loc], vn, disc.mu_vals))
        escal.append(np.einsum("q,qa,qb->ab", w_es[s_loc], tr, tr))
    return LocalBlocks(disc.mass_kinv[t], disc.div[t], jump, eflux, escal)


# ---------------------------------------------------------------------------
# condensed global system
# ---------------------------------------------------------------------------

class HDGSystem:
    """Condensed trace system with reusable factorization.

    The matrix couples the single-valued trace coefficients of all edges:
    flux-continuity rows on interior edges, transfer rows on boundary
    edges.  Right-hand sides carry the volume load and the Dirichlet data
    evaluated at the mapped boundary points, so repeated solves with fresh
    data reuse the one-time factorization.
    """

    def __init__(self, mesh, bmap, patches, material, tau, k, transfer=True):
        self.mesh = mesh
        self.bmap = bmap
        self.patches = patches
        self.material = material
        self.k = int(k)
        self.transfer_enabled = transfer
        self.disc = _Discretization(mesh, material, tau, k)
        self.ne = self.disc.ne
        self.n_trace = mesh.n_edges * self.ne
        self.transfer = [assemble_transfer(self.disc, bmap, row) if transfer else
                         TransferBlocks(np.zeros((2 * self.disc.d, self.ne)),
                                        np.zeros((2 * self.disc.d, 2 * self.disc.d)),
                                        np.zeros((self.disc.d, 2 * self.disc.d)))
                         for row in range(len(bmap.edge_ids))]
        self._assemble()
        self._lu = None

    # -- assembly ---------------------------------------------------------

    def edge_dofs(self, edge_id):
        return np.arange(edge_id * self.ne, (edge_id + 1) * self.ne)

    def _assemble(self):
        mesh, disc = self.mesh, self.disc
        d, ne = disc.d, disc.ne
        M = len(mesh.elements)
        rows, cols, vals = [], [], []

        # trace-side functionals  C_side = [E^T | F^T]  (ne x 3d)
        C = np.concatenate([np.swapaxes(disc.E_side, 2, 3),
                            np.swapaxes(disc.F_side, 2, 3)], axis=3)  # (M,3,ne,3d)
        contrib = np.einsum("msab,mbc->msac", C, disc.recovery)       # (M,3,ne,3ne)
        elem_cols = (mesh.element_edges[:, :, None] * ne
                     + np.arange(ne)[None, None, :]).reshape(M, 3 * ne)
        is_interior = mesh.boundary_tags[mesh.element_edges] < 0      # (M,3)

        for s_loc in range(3):
            sel = np.nonzero(is_interior[:, s_loc])[0]
            if len(sel) == 0:
                continue
            e_ids = mesh.element_edges[sel, s_loc]
            r = (e_ids[:, None] * ne + np.arange(ne)[None, :])        # (m, ne)
            block = contrib[sel, s_loc]                               # (m, ne, 3ne)
            rows.append(np.repeat(r, 3 * ne, axis=1).ravel())
            cols.append(np.tile(elem_cols[sel][:, None, :], (1, ne, 1)).ravel())
            vals.append(block.ravel())

        # interior diagonal  -2 tau M_e
        for e in mesh.interior_edge_ids:
            dof = self.edge_dofs(e)
            blk = -2.0 * disc.tau[e] * disc.edge_mass[e]
            rows.append(np.repeat(dof, ne))
            cols.append(np.tile(dof, ne))
            vals.append(blk.ravel())

        # boundary rows:  M_e uhat_e - T^t q(uhat, f) = data
        self._bdry_Ct = []
        for row, e in enumerate(self.bmap.edge_ids):
            t = int(self.bmap.parents[row])
            dof = self.edge_dofs(e)
            Ct = np.zeros((ne, 3 * d))
            Ct[:, :2 * d] = self.transfer[row].path_moments.T
            self._bdry_Ct.append(Ct)
            blk = -Ct @ disc.recovery[t]
            rows.append(np.repeat(dof, 3 * ne))
            cols.append(np.tile(elem_cols[t], ne))
            vals.append(blk.ravel())
            rows.append(np.repeat(dof, ne))
            cols.append(np.tile(dof, ne))
            vals.append(disc.edge_mass[e].ravel())

        self.matrix = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_trace, self.n_trace)).tocsc()
        self._contrib = contrib
        self._elem_cols = elem_cols
        self._is_interior = is_interior

    @property
    def lu(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.matrix)
            except RuntimeError as exc:
                raise SolverError(f"trace factorization failed: {exc}") from exc
        return self._lu

    # -- right-hand sides ---------------------------------------------------

    def boundary_data_vector(self, g_gamma=None, u0_gamma0=None):
        """Moments <data(mapped x), mu>_e for every boundary edge.

        ``g_gamma`` supplies the datum on the outer interface, ``u0_gamma0``
        on the inner problem boundary; each is a callable of points (m, 2).
        """
        bmap, disc = self.bmap, self.disc
        rhs = np.zeros(self.n_trace)
        for row, e in enumerate(bmap.edge_ids):
            fun = g_gamma if bmap.tags[row] == TAG_OUTER else u0_gamma0
            if fun is None:
                continue
            vals = np.asarray(fun(bmap.mapped[row]), dtype=float)
            rhs[self.edge_dofs(e)] = np.einsum(
                "q,q,qm->m", bmap.weights[row], vals, disc.mu_vals)
        return rhs

    def rhs(self, f=None, g_gamma=None, u0_gamma0=None, f_mom=None):
        disc = self.disc
        mesh = self.mesh
        ne = self.ne
        if f_mom is None:
            f_mom = disc.f_moments(f)
        part = disc.local_particular(f_mom)            # (M, 3d)
        rhs = self.boundary_data_vector(g_gamma, u0_gamma0)
        C = np.concatenate([np.swapaxes(disc.E_side, 2, 3),
                            np.swapaxes(disc.F_side, 2, 3)], axis=3)
        side_rhs = -np.einsum("msab,mb->msa", C, part)  # interior rows
        for s_loc in range(3):
            sel = np.nonzero(self._is_interior[:, s_loc])[0]
            if len(sel) == 0:
                continue
            e_ids = mesh.element_edges[sel, s_loc]
            idx = (e_ids[:, None] * ne + np.arange(ne)[None, :]).ravel()
            np.add.at(rhs, idx, side_rhs[sel, s_loc].ravel())
        for row, e in enumerate(self.bmap.edge_ids):
            t = int(self.bmap.parents[row])
            rhs[self.edge_dofs(e)] += self._bdry_Ct[row] @ part[t]
        return rhs, f_mom

    # -- solve and recovery ---------------------------------------------------

    def solve_trace(self, rhs):
        x = self.lu.solve(rhs)
        res = np.linalg.norm(self.matrix @ x - rhs)
        scale = np.linalg.norm(rhs)
        if not np.all(np.isfinite(x)) or res > 1e-8 * max(scale, 1.0):
            try:
                cond = spla.onenormest(self.matrix) * spla.onenormest(
                    spla.inv(self.matrix.tocsc()))
            except Exception:
                cond = np.inf
            raise SolverError(
                f"trace solve residual {res:.3e} (rhs norm {scale:.3e}, "
                f"condition estimate {cond:.3e})")
        return x

    def recover(self, uhat, f_mom):
        disc = self.disc
        mesh = self.mesh
        d, ne = disc.d, disc.ne
        M = len(mesh.elements)
        uhat_loc = uhat[(mesh.element_edges[:, :, None] * ne
                         + np.arange(ne)[None, None, :]).reshape(M, 3 * ne)[..., None]][..., 0]
        qu = np.einsum("mab,mb->ma", disc.recovery, uhat_loc) \
            + disc.local_particular(f_mom)
        Q = qu[:, :2 * d].reshape(M, 2, d)
        U = qu[:, 2 * d:]
        return DGField(mesh, self.k, Q, U, uhat.reshape(mesh.n_edges, ne))

    def residual(self, uhat, rhs):
        return float(np.linalg.norm(self.matrix @ uhat - rhs)
                     / max(np.linalg.norm(rhs), 1.0))


def build_system(mesh, bmap, patches, material, tau, k, transfer=True):
    """Assemble the condensed trace system (factorization happens lazily)."""
    return HDGSystem(mesh, bmap, patches, material, tau, k, transfer=transfer)


def solve_interior(system, f=None, g_gamma=None, u0_gamma0=None):
    """Solve the interior problem with transferred Dirichlet data.

    ``g_gamma`` and ``u0_gamma0`` are evaluated at the mapped points on the
    true curves (composition with the boundary map happens here).
    """
    rhs, f_mom = system.rhs(f=f, g_gamma=g_gamma, u0_gamma0=u0_gamma0)
    uhat = system.solve_trace(rhs)
    return system.recover(uhat, f_mom)


# ---------------------------------------------------------------------------
# flux extrapolation onto the interface
# ---------------------------------------------------------------------------

class PatchLocator:
    """Parameter-interval lookup from curve positions to parent elements."""

    def __init__(self, bmap, patches, tag=TAG_OUTER):
        rows = [r for r in range(len(bmap.edge_ids)) if bmap.tags[r] == tag]
        ivals = []
        for r in rows:
            lo, hi = patches[r].param_interval
            lo_m = np.mod(lo, TWO_PI)
            ivals.append((lo_m, hi - lo, patches[r].parent, r))
        ivals.sort()
        self.starts = np.array([i[0] for i in ivals])
        self.widths = np.array([i[1] for i in ivals])
        self.parents = np.array([i[2] for i in ivals], dtype=np.int64)
        self.rows = np.array([i[3] for i in ivals], dtype=np.int64)

    def locate(self, params):
        s = np.mod(np.asarray(params, dtype=float), TWO_PI)
        idx = np.searchsorted(self.starts, s, side="right") - 1
        idx = np.where(idx < 0, len(self.starts) - 1, idx)
        offset = np.mod(s - self.starts[idx], TWO_PI)
        bad = offset > self.widths[idx] + 1e-9
        if np.any(bad):
            nxt = (idx + 1) % len(self.starts)
            offs2 = np.mod(s - self.starts[nxt], TWO_PI)
            use2 = bad & (offs2 <= self.widths[nxt] + 1e-9)
            idx = np.where(use2, nxt, idx)
            offset = np.mod(s - self.starts[idx], TWO_PI)
            if np.any(offset > self.widths[idx] + 1e-9):
                raise CoverageError("interface point not covered by any extension patch")
        return self.parents[idx]


def extrapolate_flux(field, curve, locator, params):
    """Normal flux E q . n at curve parameters, via patch-parent extrapolation."""
    params = np.asarray(params, dtype=float)
    parents = locator.locate(params)
    pts = curve.point(params)
    normals = curve.normal(params)
    out = np.empty(len(params))
    for t in np.unique(parents):
        m = parents == t
        qv = field.q_at(int(t), pts[m])
        out[m] = np.einsum("pd,pd->p", qv, normals[m])
    return out


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def j_functional(field, material, tau, mesh):
    """Energy-style seminorm combining flux mass, boundary traces and jumps."""
    disc = _Discretization(mesh, material, tau, field.k)
    d = disc.d
    qc = field.Q.reshape(len(mesh.elements), 2 * d)
    total = np.einsum("ma,mab,mb->", qc, disc.mass_kinv, qc)

    u_tr = np.einsum("msqa,ma->msq", disc.trace_vals, field.U)
    qn_tr = np.einsum("msqa,msd,mda->msq",
                      disc.trace_vals, disc.side_normals, field.Q)
    w_es = disc.edge_w[mesh.element_edges]
    tau_es = disc.tau[mesh.element_edges]
    tags = mesh.boundary_tags[mesh.element_edges]

    bdry = tags >= 0
    total += np.sum(np.where(bdry, tau_es, 0.0)[:, :, None] * w_es * u_tr ** 2)

    # interior terms need both sides of each edge
    for e in mesh.interior_edge_ids:
        t1, t2 = mesh.edge_elements[e]
        s1 = list(mesh.element_edges[t1]).index(e)
        s2 = list(mesh.element_edges[t2]).index(e)
        w = disc.edge_w[e]
        mean_u = 0.5 * (u_tr[t1, s1] + u_tr[t2, s2])
        jump_q = qn_tr[t1, s1] + qn_tr[t2, s2]
        total += disc.tau[e] * np.sum(w * ((u_tr[t1, s1] - mean_u) ** 2
                                           + (u_tr[t2, s2] - mean_u) ** 2))
        total += np.sum(w * jump_q ** 2) / disc.tau[e]
    return float(np.sqrt(total))


def local_conservation_residual(field, system, f=None):
    """Per-element defect of <qhat.nu, 1>_dT = (f, 1)_T."""
    mesh, disc = system.mesh, system.disc
    f_mom = disc.f_moments(f)
    f_int = f_mom[:, 0]        # first basis function is identically 1
    u_tr = np.einsum("msqa,ma->msq", disc.trace_vals, field.U)
    qn_tr = np.einsum("msqa,msd,mda->msq",
                      disc.trace_vals, disc.side_normals, field.Q)
    mu = disc.mu_vals
    ne = disc.ne
    uhat_tr = np.einsum("msn,qn->msq", field.Uhat[mesh.element_edges], mu)
    w_es = disc.edge_w[mesh.element_edges]
    tau_es = disc.tau[mesh.element_edges]
    flux = np.einsum("msq,msq->m",
                     w_es, qn_tr + tau_es[:, :, None] * (u_tr - uhat_tr))
    return flux - f_int


def trace_identity_residual(field, system):
    """Sup over interior edges of || uhat - jump(q)/(2 tau) - mean(u) ||_e."""
    mesh, disc = system.mesh, system.disc
    u_tr = np.einsum("msqa,ma->msq", disc.trace_vals, field.U)
    qn_tr = np.einsum("msqa,msd,mda->msq",
                      disc.trace_vals, disc.side_normals, field.Q)
    worst = 0.0
    for e in mesh.interior_edge_ids:
        t1, t2 = mesh.edge_elements[e]
        s1 = list(mesh.element_edges[t1]).index(e)
        s2 = list(mesh.element_edges[t2]).index(e)
        uhat = field.Uhat[e] @ disc.mu_vals.T
        target = (0.5 / disc.tau[e]) * (qn_tr[t1, s1] + qn_tr[t2, s2]) \
            + 0.5 * (u_tr[t1, s1] + u_tr[t2, s2])
        err = np.sqrt(np.sum(disc.edge_w[e] * (uhat - target) ** 2))
        worst = max(worst, float(err))
    return worst


def l2_errors(field, system, u_exact, q_exact, kappa_weight=True):
    """Weighted flux error ||kappa^{-1/2}(q - q_h)|| and scalar L2 error."""
    disc = system.disc
    pts = disc.phys_pts
    M, nq, _ = pts.shape
    uv = np.einsum("qa,ma->mq", disc.vol_vals, field.U)
    qv = np.einsum("qa,mca->mqc", disc.vol_vals, field.Q)
    ue = np.asarray(u_exact(pts.reshape(-1, 2)), dtype=float).reshape(M, nq)
    qe = np.asarray(q_exact(pts.reshape(-1, 2)), dtype=float).reshape(M, nq, 2)
    diff = qv - qe
    if kappa_weight:
        kinv = system.material.inv(pts)
        err_q = np.sqrt(np.einsum("mq,mqc,mqcd,mqd->", disc.phys_w, diff, kinv, diff))
    else:
        err_q = np.sqrt(np.einsum("mq,mqc,mqc->", disc.phys_w, diff, diff))
    err_u = np.sqrt(np.sum(disc.phys_w * (uv - ue) ** 2))
    return float(err_q), float(err_u)


# ---------------------------------------------------------------------------
# reference solves used only as oracles in the tests
# ---------------------------------------------------------------------------

def assemble_uncondensed(system, f=None, g_gamma=None, u0_gamma0=None):
    """Full saddle system in (q, u, uhat) without condensation."""
    mesh, disc = system.mesh, system.disc
    d, ne = disc.d, disc.ne
    M = len(mesh.elements)
    nq, nu = 2 * d * M, d * M
    ntr = mesh.n_edges * ne
    N = nq + nu + ntr
    A = sp.lil_matrix((N, N))
    b = np.zeros(N)
    f_mom = disc.f_moments(f)
    data = system.boundary_data_vector(g_gamma, u0_gamma0)
    for t in range(M):
        sq = slice(t * 2 * d, (t + 1) * 2 * d)
        su = slice(nq + t * d, nq + (t + 1) * d)
        A[sq, sq] = disc.mass_kinv[t]
        A[sq, su] = -disc.div[t].T
        A[su, sq] = disc.div[t]
        A[su, su] = disc.S_elem[t]
        b[su] = f_mom[t]
        for s_loc in range(3):
            e = mesh.element_edges[t, s_loc]
            st = slice(nq + nu + e * ne, nq + nu + (e + 1) * ne)
            A[sq, st] = disc.E_side[t, s_loc]
            A[su, st] += -disc.F_side[t, s_loc]
            if mesh.boundary_tags[e] < 0:
                A[st, sq] += disc.E_side[t, s_loc].T
                A[st, su] += disc.F_side[t, s_loc].T
                A[st, st] += -disc.tau[e] * disc.edge_mass[e]
    for row, e in enumerate(system.bmap.edge_ids):
        t = int(system.bmap.parents[row])
        st = slice(nq + nu + e * ne, nq + nu + (e + 1) * ne)
        sq = slice(t * 2 * d, (t + 1) * 2 * d)
        A[st, st] = disc.edge_mass[e]
        A[st, sq] = -system.transfer[row].path_moments.T
        b[nq + nu + e * ne:nq + nu + (e + 1) * ne] = data[e * ne:(e + 1) * ne]
    return A.tocsc(), b


def solve_uncondensed(system, f=None, g_gamma=None, u0_gamma0=None):
    A, b = assemble_uncondensed(system, f, g_gamma, u0_gamma0)
    x = spla.spsolve(A, b)
    mesh, disc = system.mesh, system.disc
    d, ne = disc.d, disc.ne
    M = len(mesh.elements)
    Q = x[:2 * d * M].reshape(M, 2, d)
    U = x[2 * d * M:3 * d * M].reshape(M, d)
    Uhat = x[3 * d * M:].reshape(mesh.n_edges, ne)
    return DGField(mesh, system.k, Q, U, Uhat)


def assemble_eliminated(system, f=None, g_gamma=None, u0_gamma0=None):
    """Two-field realization with explicit jump/average forms.

    Eliminating the trace from the hybridized equations yields forms in
    (q, u) only: the kappa^{-1} mass plus an interior jump penalty, the
    divergence form with an average coupling, a semi-definite scalar form,
    and the two transfer couplings.  Used as an algebraic oracle for the
    condensed path.
    """
    mesh, disc = system.mesh, system.disc
    d = disc.d
    M = len(mesh.elements)
    nq, nu = 2 * d * M, d * M
    Aq = sp.lil_matrix((nq, nq))
    Bm = sp.lil_matrix((nu, nq))
    Bt = sp.lil_matrix((nu, nq))
    Cm = sp.lil_matrix((nu, nu))
    F1 = np.zeros(nq)
    F2 = np.zeros(nu)
    f_mom = disc.f_moments(f)
    u_trace_mats = np.einsum("msq,msqa,msqb->msab",
                             disc.edge_w[mesh.element_edges],
                             disc.trace_vals, disc.trace_vals)
    for t in range(M):
        sq = slice(t * 2 * d, (t + 1) * 2 * d)
        su = slice(t * d, (t + 1) * d)
        Aq[sq, sq] += disc.mass_kinv[t]
        Bm[su, sq] += -disc.div[t]
        F2[t * d:(t + 1) * d] += -f_mom[t]
        for s_loc in range(3):
            e = mesh.element_edges[t, s_loc]
            Cm[su, su] += disc.tau[e] * u_trace_mats[t, s_loc]
    for e in mesh.interior_edge_ids:
        (t1, t2) = mesh.edge_elements[e]
        sides = (list(mesh.element_edges[t1]).index(e),
                 list(mesh.element_edges[t2]).index(e))
        w = disc.edge_w[e]
        tau_e = disc.tau[e]
        vn, tr, slq, slu = [], [], [], []
        for t, s_loc in zip((t1, t2), sides):
            trv = disc.trace_vals[t, s_loc]
            nrm = disc.side_normals[t, s_loc]
            vn.append(np.concatenate([nrm[0] * trv, nrm[1] * trv], axis=1))
            tr.append(trv)
            slq.append(slice(t * 2 * d, (t + 1) * 2 * d))
            slu.append(slice(t * d, (t + 1) * d))
        for a in range(2):
            for c in range(2):
                pen = 0.5 / tau_e * np.einsum("q,qi,qj->ij", w, vn[a], vn[c])
                Aq[slq[a], slq[c]] += pen
                avg = 0.5 * np.einsum("q,qi,qj->ij", w, tr[a], vn[c])
                Bm[slu[a], slq[c]] += avg
                Cm[slu[a], slu[c]] += -2.0 * tau_e * 0.25 * np.einsum(
                    "q,qi,qj->ij", w, tr[a], tr[c])
    data = system.boundary_data_vector(g_gamma, u0_gamma0)  # reuse moments
    for row, e in enumerate(system.bmap.edge_ids):
        t = int(system.bmap.parents[row])
        sq = slice(t * 2 * d, (t + 1) * 2 * d)
        su = slice(t * d, (t + 1) * d)
        Aq[sq, sq] += system.transfer[row].flux_flux
        Bt[su, sq] += system.transfer[row].flux_scalar
        bm = system.bmap
        vals_mu = disc.mu_vals
        tr = disc.trace_vals[t, list(mesh.element_edges[t]).index(e)]
        nrm = bm.nu[row]
        vnb = np.concatenate([nrm[0] * tr, nrm[1] * tr], axis=1)
        fun_w = data[e * disc.ne:(e + 1) * disc.ne]
        # reconstruct nodal data values from the moments for the F terms
        nodal = np.linalg.solve(disc.edge_mass[e], fun_w) @ vals_mu.T
        F1[t * 2 * d:(t + 1) * 2 * d] += -np.einsum("q,q,qa->a",
                                                    bm.weights[row], nodal, vnb)
        F2[t * d:(t + 1) * d] += -disc.tau[e] * np.einsum("q,q,qa->a",
                                                          bm.weights[row], nodal, tr)
    big = sp.bmat([[Aq.tocsc(), Bm.tocsc().T],
                   [(Bm + Bt).tocsc(), -Cm.tocsc()]]).tocsc()
    rhs = np.concatenate([F1, F2])
    return big, rhs


def solve_eliminated(system, f=None, g_gamma=None, u0_gamma0=None):
    A, b = assemble_eliminated(system, f, g_gamma, u0_gamma0)
    x = spla.spsolve(A, b)
    d = system.disc.d
    M = len(system.mesh.elements)
    Q = x[:2 * d * M].reshape(M, 2, d)
    U = x[2 * d * M:].reshape(M, d)
    return Q, U


# ---------------------------------------------------------------------------
# elementwise projection oracle
# ---------------------------------------------------------------------------

def hdg_projection(q_fun, u_fun, verts, tau, k, quad_degree=None):
    """Elementwise projection matching volume moments and stabilized fluxes.

    Solves, on the triangle with the given vertices, for (Pq, Pu) of degree
    k satisfying the degree k-1 volume moments of q and u and the edge
    moments of q.n + tau u.  Returns the coefficient arrays in the modal
    basis.  Intended as a test oracle.
    """
    verts = np.asarray(verts, dtype=float)
    k = int(k)
    basis = TriangleBasis(k)
    d = basis.dim
    d_low = (k * (k + 1)) // 2
    qd = quad_degree if quad_degree is not None else 2 * k + 8
    ref_pts, ref_w = triangle_rule(qd)
    J = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
    detJ = float(np.linalg.det(J))
    if detJ <= 0:
        verts = verts[[0, 2, 1]]
        J = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
        detJ = float(np.linalg.det(J))
    phys = verts[0] + ref_pts @ J.T
    w = detJ * ref_w
    vals = basis.eval(ref_pts)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (3,))

    n_rows = 2 * d_low + d_low + 3 * (k + 1)
    if n_rows != 3 * d:
        raise AssemblyError("projection system is not square")
    A = np.zeros((3 * d, 3 * d))
    b = np.zeros(3 * d)
    qe = np.asarray(q_fun(phys), dtype=float)
    ue = np.asarray(u_fun(phys), dtype=float)
    r = 0
    if d_low:
        Mlow = np.einsum("q,qa,qb->ab", w, vals[:, :d_low], vals)
        for c in range(2):
            A[r:r + d_low, c * d:(c + 1) * d] = Mlow
            b[r:r + d_low] = np.einsum("q,qa->a", w, vals[:, :d_low] * qe[:, c:c + 1])
            r += d_low
        A[r:r + d_low, 2 * d:] = Mlow
        b[r:r + d_low] = np.einsum("q,qa->a", w, vals[:, :d_low] * ue[:, None])
        r += d_low
    nq1d = max(k + 3, (qd + 2) // 2)
    xg, wg = gauss01(nq1d)
    mu = edge_legendre(k, 2.0 * xg - 1.0)
    invJ = np.linalg.inv(J)
    return _projection_edges(A, b, r, verts, invJ, basis, k, tau, xg, wg, mu,
                             q_fun, u_fun, d)


def _projection_edges(A, b, r, verts, invJ, basis, k, tau, xg, wg, mu, q_fun,
                      u_fun, d):
    for s_loc in range(3):
        p0, p1 = verts[(s_loc + 1) % 3], verts[(s_loc + 2) % 3]
        pts = p0 + xg[:, None] * (p1 - p0)
        length = np.linalg.norm(p1 - p0)
        t_vec = (p1 - p0) / length
        nrm = np.array([t_vec[1], -t_vec[0]])
        if np.dot(nrm, verts.mean(axis=0) - 0.5 * (p0 + p1)) > 0:
            nrm = -nrm
        ref = (pts - verts[0]) @ invJ.T
        tv = basis.eval(ref)
        wq = wg * length
        qe = np.asarray(q_fun(pts), dtype=float)
        ue = np.asarray(u_fun(pts), dtype=float)
        target = qe @ nrm + tau[s_loc] * ue
        for m in range(k + 1):
            A[r, 0 * d:1 * d] = np.einsum("q,qa->a", wq * mu[:, m] * nrm[0], tv)
            A[r, 1 * d:2 * d] = np.einsum("q,qa->a", wq * mu[:, m] * nrm[1], tv)
            A[r, 2 * d:] = tau[s_loc] * np.einsum("q,qa->a", wq * mu[:, m], tv)
            b[r] = np.sum(wq * mu[:, m] * target)
            r += 1
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise AssemblyError("singular projection system") from exc
    return sol[:d], sol[d:2 * d], sol[2 * d:]


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def write_vtk(field, path, refine=None):
    """Legacy ASCII unstructured-grid file with u point data and q vectors.

    Each element is subdivided into refine^2 congruent triangles (defaults
    to the polynomial degree) and the discontinuous fields are written as
    per-element point data.
    """
    mesh = field.mesh
    r = int(refine) if refine else max(field.k, 1)
    # lattice on the reference triangle
    nodes = []
    idx = {}
    for i in range(r + 1):
        for j in range(r + 1 - i):
            idx[(i, j)] = len(nodes)
            nodes.append((i / r, j / r))
    tris = []
    for i in range(r):
        for j in range(r - i):
            tris.append((idx[(i, j)], idx[(i + 1, j)], idx[(i, j + 1)]))
            if i + j < r - 1:
                tris.append((idx[(i + 1, j)], idx[(i + 1, j + 1)], idx[(i, j + 1)]))
    nodes = np.array(nodes)
    pts_all, u_all, q_all, cells = [], [], [], []
    off = 0
    for t in range(len(mesh.elements)):
        v = mesh.vertices[mesh.elements[t]]
        J = np.column_stack([v[1] - v[0], v[2] - v[0]])
        phys = v[0] + nodes @ J.T
        pts_all.append(phys)
        u_all.append(field.u_at(t, phys))
        q_all.append(field.q_at(t, phys))
        cells.extend([(a + off, b + off, c + off) for a, b, c in tris])
        off += len(nodes)
    pts_all = np.vstack(pts_all)
    u_all = np.concatenate(u_all)
    q_all = np.vstack(q_all)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ninterior field\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts_all)} double\n")
        for x, y in pts_all:
            fh.write(f"{x:.16e} {y:.16e} 0.0\n")
        fh.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
        for c in cells:
            fh.write(f"3 {c[0]} {c[1]} {c[2]}\n")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        fh.write("\n".join(["5"] * len(cells)) + "\n")
        fh.write(f"POINT_DATA {len(pts_all)}\n")
        fh.write("SCALARS u double 1\nLOOKUP_TABLE default\n")
        for uv in u_all:
            fh.write(f"{uv:.16e}\n")
        fh.write("VECTORS q double\n")
        for qx, qy in q_all:
            fh.write(f"{qx:.16e} {qy:.16e} 0.0\n")


def write_coefficients_csv(field, path):
    """Regression dump: one row per element with its coefficient block."""
    d = field.U.shape[1]
    header = ["element"] + [f"qx_{i}" for i in range(d)] \
        + [f"qy_{i}" for i in range(d)] + [f"u_{i}" for i in range(d)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for t in range(len(field.mesh.elements)):
            row = np.concatenate([field.Q[t, 0], field.Q[t, 1], field.U[t]])
            fh.write(str(t) + "," + ",".join(f"{v:.17e}" for v in row) + "\n")
