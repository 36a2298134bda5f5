import numpy as np
import pytest

from hdgbem import (
    AssemblyError,
    CoverageError,
    Curve,
    MaterialField,
    PatchLocator,
    Stabilization,
    UnfittedMesh,
    assemble_local,
    build_annulus_mesh,
    build_boundary_map,
    build_extension_patches,
    build_system,
    extrapolate_flux,
    hdg_projection,
    j_functional,
    l2_errors,
    local_conservation_residual,
    solve_interior,
    trace_identity_residual,
    write_coefficients_csv,
    write_vtk,
)
from hdgbem.basis import TriangleBasis
from hdgbem.geometry import BoundaryMap
from hdgbem.hdg import (
    _Discretization,
    assemble_transfer,
    solve_eliminated,
    solve_uncondensed,
)
from hdgbem.quadrature import triangle_rule


def _unit_right_triangle():
    return UnfittedMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                        np.array([[0, 1, 2]]))


# ---------------------------------------------------------------------------
# local blocks
# ---------------------------------------------------------------------------

def test_k0_mass_block_is_area_times_identity():
    mesh = _unit_right_triangle()
    blocks = assemble_local(mesh, 0, MaterialField.identity(), 1.0, 0)
    assert np.allclose(blocks.mass_kinv, 0.5 * np.eye(2), atol=1e-15)


def test_mass_block_scales_inversely_with_kappa():
    mesh = _unit_right_triangle()
    b1 = assemble_local(mesh, 0, MaterialField.identity(), 1.0, 0)
    b2 = assemble_local(mesh, 0, MaterialField(2.0), 1.0, 0)
    assert np.allclose(b2.mass_kinv, 0.5 * b1.mass_kinv, atol=1e-15)


def test_blocks_match_dense_quadrature_oracle():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(2, 2))
    kappa = A @ A.T + 2.0 * np.eye(2)
    mesh = _unit_right_triangle()
    k = 2
    blocks = assemble_local(mesh, 0, MaterialField(kappa), 1.0, k)
    # independent oracle: dense high-order rule, direct basis contraction
    basis = TriangleBasis(k)
    pts, w = triangle_rule(12)
    vals = basis.eval(pts)
    kinv = np.linalg.inv(kappa)
    d = basis.dim
    oracle = np.zeros((2 * d, 2 * d))
    for c1 in range(2):
        for c2 in range(2):
            oracle[c1 * d:(c1 + 1) * d, c2 * d:(c2 + 1) * d] = \
                kinv[c1, c2] * np.einsum("q,qa,qb->ab", w, vals, vals)
    assert np.abs(blocks.mass_kinv - oracle).max() < 1e-12


# ---------------------------------------------------------------------------
# transfer couplings
# ---------------------------------------------------------------------------

def _synthetic_boundary_map(mesh, edge_id, d, t_dir, n_nodes=4):
    """Fabricated straight-path map for the given boundary edge."""
    from hdgbem.quadrature import gauss01
    xg, wg = gauss01(n_nodes)
    p = mesh.edge_vertices(edge_id)
    nodes = p[0] + xg[:, None] * (p[1] - p[0])
    length = np.linalg.norm(p[1] - p[0])
    t_dir = np.asarray(t_dir, dtype=float)
    return BoundaryMap(
        edge_ids=np.array([edge_id]),
        tags=np.array([0], dtype=np.int8),
        parents=np.array([mesh.edge_elements[edge_id, 0]]),
        nu=t_dir[None, :].copy(),
        nodes=nodes[None, :, :],
        mapped=(nodes + d * t_dir)[None, :, :],
        l=np.full((1, n_nodes), d),
        t=np.tile(t_dir, (1, n_nodes, 1)),
        params=np.zeros((1, n_nodes)),
        normals=np.tile(t_dir, (1, n_nodes, 1)),
        weights=(wg * length)[None, :],
        endpoint_params=np.zeros((1, 2)),
        strategy="radial", n_nodes=n_nodes,
    )


def test_transfer_constant_flux_straight_path():
    # edge of length L, straight paths of length d, kappa = I, q = (1, 0),
    # t = nu = (1, 0): the flux-flux coupling contracts to L * d
    mesh = UnfittedMesh(np.array([[0.9, -0.025], [0.9, 0.025], [0.85, 0.0]]),
                        np.array([[0, 1, 2]]))
    edge = next(e for e in mesh.boundary_edge_ids
                if abs(mesh.edge_vertices(e).mean(axis=0)[0] - 0.9) < 1e-12)
    length = mesh.edge_length(edge)
    d = 0.07
    for k in (0, 1, 2):
        disc = _Discretization(mesh, MaterialField.identity(), 1.0, k)
        bmap = _synthetic_boundary_map(mesh, edge, d, (1.0, 0.0), n_nodes=k + 2)
        blocks = assemble_transfer(disc, bmap, 0)
        qcoeff = np.zeros(2 * disc.d)
        qcoeff[0] = 1.0      # first basis function is 1, so q = (1, 0)
        val = qcoeff @ blocks.flux_flux @ qcoeff
        assert val == pytest.approx(length * d, rel=1e-13)
        # doubling the path length doubles the coupling
        bmap2 = _synthetic_boundary_map(mesh, edge, 2 * d, (1.0, 0.0), n_nodes=k + 2)
        blocks2 = assemble_transfer(disc, bmap2, 0)
        assert qcoeff @ blocks2.flux_flux @ qcoeff == pytest.approx(2 * val, rel=1e-13)


def test_transfer_vanishes_on_fitted_edges(fitted_k1):
    mesh, bmap, patches, system = fitted_k1
    for blocks in system.transfer:
        assert np.all(blocks.path_moments == 0.0)
        assert np.all(blocks.flux_flux == 0.0)
        assert np.all(blocks.flux_scalar == 0.0)


# ---------------------------------------------------------------------------
# system assembly and solves
# ---------------------------------------------------------------------------

def test_fitted_matrix_equals_transfer_free_assembly(circles):
    gamma, gamma0 = circles
    mesh = build_annulus_mesh(gamma, gamma0, 0.25, fitted=True)
    bmap = build_boundary_map(mesh, gamma, gamma0, n_nodes=3)
    patches = build_extension_patches(mesh, bmap, gamma, gamma0)
    with_transfer = build_system(mesh, bmap, patches, MaterialField.identity(), 1.0, 1)
    without = build_system(mesh, bmap, patches, MaterialField.identity(), 1.0, 1,
                           transfer=False)
    assert np.array_equal(with_transfer.matrix.toarray(), without.matrix.toarray())


def test_two_element_mesh_trace_dimension():
    mesh = UnfittedMesh(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
                        np.array([[0, 1, 2], [0, 2, 3]]))
    disc = _Discretization(mesh, MaterialField.identity(), 1.0, 0)
    assert mesh.n_edges == 5
    assert mesh.n_edges * disc.ne == 5   # one trace unknown per retained edge


def test_condensation_matches_uncondensed_solve(coarse_k1):
    mesh, bmap, patches, system = coarse_k1
    u_ex = lambda p: p[:, 0] / (p[:, 0] ** 2 + p[:, 1] ** 2)
    fld = solve_interior(system, f=None, g_gamma=u_ex, u0_gamma0=u_ex)
    ref = solve_uncondensed(system, f=None, g_gamma=u_ex, u0_gamma0=u_ex)
    scale = max(np.abs(ref.Q).max(), np.abs(ref.U).max())
    assert np.abs(fld.Q - ref.Q).max() <= 1e-10 * scale
    assert np.abs(fld.U - ref.U).max() <= 1e-10 * scale
    assert np.abs(fld.Uhat - ref.Uhat).max() <= 1e-10 * scale


def test_condensation_matches_eliminated_two_field_form(coarse_k2):
    mesh, bmap, patches, system = coarse_k2
    u_ex = lambda p: p[:, 0] ** 2
    fld = solve_interior(system, f=-2.0, g_gamma=u_ex, u0_gamma0=u_ex)
    Q, U = solve_eliminated(system, f=-2.0, g_gamma=u_ex, u0_gamma0=u_ex)
    assert np.abs(Q - fld.Q).max() < 1e-10
    assert np.abs(U - fld.U).max() < 1e-10


def test_zero_data_gives_zero_solution(coarse_k1):
    _, _, _, system = coarse_k1
    fld = solve_interior(system)
    assert np.abs(fld.Q).max() == 0.0
    assert np.abs(fld.U).max() == 0.0


def test_patch_test_linear_fitted(fitted_k1):
    mesh, bmap, patches, system = fitted_k1
    u_ex = lambda p: p[:, 0]
    q_ex = lambda p: np.tile([-1.0, 0.0], (len(p), 1))
    fld = solve_interior(system, g_gamma=u_ex, u0_gamma0=u_ex)
    eq, eu = l2_errors(fld, system, u_ex, q_ex)
    assert eq < 1e-10 and eu < 1e-10


def test_patch_test_quadratic_unfitted(coarse_k2):
    mesh, bmap, patches, system = coarse_k2
    u_ex = lambda p: p[:, 0] ** 2
    q_ex = lambda p: np.column_stack([-2.0 * p[:, 0], np.zeros(len(p))])
    fld = solve_interior(system, f=-2.0, g_gamma=u_ex, u0_gamma0=u_ex)
    eq, eu = l2_errors(fld, system, u_ex, q_ex)
    assert eq < 1e-8 and eu < 1e-8


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("fitted", [False, True])
def test_patch_exactness_random_polynomial(circles, k, fitted):
    # consistent pair: u random in P_k, q = -kappa grad u, f = div q
    gamma, gamma0 = circles
    rng = np.random.default_rng(3 * k + fitted)
    kappa = 1.7
    coef = rng.normal(size=(k + 1, k + 1))

    def u_ex(p):
        p = np.atleast_2d(p)
        out = np.zeros(len(p))
        for i in range(k + 1):
            for j in range(k + 1 - i):
                out += coef[i, j] * p[:, 0] ** i * p[:, 1] ** j
        return out

    def grad(p):
        p = np.atleast_2d(p)
        gx = np.zeros(len(p))
        gy = np.zeros(len(p))
        for i in range(k + 1):
            for j in range(k + 1 - i):
                if i:
                    gx += coef[i, j] * i * p[:, 0] ** (i - 1) * p[:, 1] ** j
                if j:
                    gy += coef[i, j] * j * p[:, 0] ** i * p[:, 1] ** (j - 1)
        return np.column_stack([gx, gy])

    def q_ex(p):
        return -kappa * grad(p)

    def f_ex(p):
        p = np.atleast_2d(p)
        lap = np.zeros(len(p))
        for i in range(k + 1):
            for j in range(k + 1 - i):
                if i >= 2:
                    lap += coef[i, j] * i * (i - 1) * p[:, 0] ** (i - 2) * p[:, 1] ** j
                if j >= 2:
                    lap += coef[i, j] * j * (j - 1) * p[:, 0] ** i * p[:, 1] ** (j - 2)
        return -kappa * lap

    mesh = build_annulus_mesh(gamma, gamma0, 0.25, fitted=fitted)
    bmap = build_boundary_map(mesh, gamma, gamma0, n_nodes=k + 2)
    patches = build_extension_patches(mesh, bmap, gamma, gamma0)
    system = build_system(mesh, bmap, patches, MaterialField(kappa), 1.0, k)
    fld = solve_interior(system, f=f_ex, g_gamma=u_ex, u0_gamma0=u_ex)
    eq, eu = l2_errors(fld, system, u_ex, q_ex)
    assert eq < 1e-9 and eu < 1e-9


# ---------------------------------------------------------------------------
# conservation, trace identity, stability
# ---------------------------------------------------------------------------

def test_local_conservation_and_trace_identity(coarse_k1):
    _, _, _, system = coarse_k1
    u_ex = lambda p: p[:, 0] / (p[:, 0] ** 2 + p[:, 1] ** 2)
    fld = solve_interior(system, f=None, g_gamma=u_ex, u0_gamma0=u_ex)
    res = local_conservation_residual(fld, system, f=None)
    assert np.abs(res).max() <= 1e-10
    assert trace_identity_residual(fld, system) <= 1e-10


def test_stability_bounded_under_refinement(circles):
    gamma, gamma0 = circles
    u_ex = lambda p: p[:, 0] / (p[:, 0] ** 2 + p[:, 1] ** 2)
    vals = []
    for h in (0.2, 0.1, 0.05):
        mesh = build_annulus_mesh(gamma, gamma0, h)
        bmap = build_boundary_map(mesh, gamma, gamma0, n_nodes=3)
        patches = build_extension_patches(mesh, bmap, gamma, gamma0)
        system = build_system(mesh, bmap, patches, MaterialField.identity(), 1.0, 1)
        fld = solve_interior(system, f=None, g_gamma=u_ex, u0_gamma0=u_ex)
        mass = np.sqrt(np.sum(system.disc.phys_w
                              * np.einsum("qa,ma->mq", system.disc.vol_vals,
                                          fld.U) ** 2))
        vals.append(j_functional(fld, system.material, 1.0, mesh) + mass)
    assert max(vals) / min(vals) < 1.5


# ---------------------------------------------------------------------------
# flux extrapolation
# ---------------------------------------------------------------------------

def test_extrapolated_flux_of_constant_field(coarse_k1, circles):
    mesh, bmap, patches, system = coarse_k1
    gamma, _ = circles
    fld = solve_interior(system)
    fld.Q[:, 0, 0] = 1.0      # q = (1, 0) everywhere
    loc = PatchLocator(bmap, patches)
    s = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    flux = extrapolate_flux(fld, gamma, loc, s)
    assert np.abs(flux - np.cos(s)).max() < 1e-13


def test_extrapolated_flux_zero_field(coarse_k1, circles):
    mesh, bmap, patches, system = coarse_k1
    fld = solve_interior(system)
    loc = PatchLocator(bmap, patches)
    flux = extrapolate_flux(fld, circles[0], loc, np.linspace(0, 6, 11))
    assert np.all(flux == 0.0)


def test_extrapolated_flux_linear_patch(fitted_k1, circles):
    mesh, bmap, patches, system = fitted_k1
    gamma, _ = circles
    u_ex = lambda p: p[:, 0]
    fld = solve_interior(system, g_gamma=u_ex, u0_gamma0=u_ex)
    loc = PatchLocator(bmap, patches)
    s = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    flux = extrapolate_flux(fld, gamma, loc, s)
    # q = (-1, 0), n = (cos s, sin s) on the circle
    assert np.abs(flux + np.cos(s)).max() < 1e-10


def test_uncovered_point_raises(coarse_k1):
    mesh, bmap, patches, system = coarse_k1
    loc = PatchLocator(bmap, patches)
    loc.widths = loc.widths * 0.0       # artificially shrink coverage
    with pytest.raises(CoverageError):
        loc.locate(np.array([0.1]))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def test_j_functional_zero_perimeter_homogeneity(coarse_k1):
    mesh, bmap, patches, system = coarse_k1
    mat = MaterialField.identity()
    zero = solve_interior(system)
    assert j_functional(zero, mat, 1.0, mesh) == 0.0
    one = zero.copy()
    one.U[:, 0] = 1.0
    one.Uhat[:, 0] = 1.0
    perim = sum(mesh.edge_length(e) for e in mesh.boundary_edge_ids)
    assert j_functional(one, mat, 1.0, mesh) == pytest.approx(np.sqrt(perim), rel=1e-12)
    u_ex = lambda p: p[:, 0] / (p[:, 0] ** 2 + p[:, 1] ** 2)
    fld = solve_interior(system, g_gamma=u_ex, u0_gamma0=u_ex)
    j1 = j_functional(fld, mat, 1.0, mesh)
    scaled = fld.copy()
    scaled.Q *= -3.0
    scaled.U *= -3.0
    scaled.Uhat *= -3.0
    assert j_functional(scaled, mat, 1.0, mesh) == pytest.approx(3.0 * j1, rel=1e-12)


# ---------------------------------------------------------------------------
# projection oracle
# ---------------------------------------------------------------------------

VERTS = np.array([[0.1, 0.2], [0.9, 0.15], [0.4, 0.8]])


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_projection_reproduces_polynomial_pairs(k):
    rng = np.random.default_rng(k)
    cu = rng.normal(size=(k + 1, k + 1))
    cqx = rng.normal(size=(k + 1, k + 1))
    cqy = rng.normal(size=(k + 1, k + 1))

    def poly(c, p):
        p = np.atleast_2d(p)
        out = np.zeros(len(p))
        for i in range(k + 1):
            for j in range(k + 1 - i):
                out += c[i, j] * p[:, 0] ** i * p[:, 1] ** j
        return out

    q_fun = lambda p: np.column_stack([poly(cqx, p), poly(cqy, p)])
    u_fun = lambda p: poly(cu, p)
    Qx, Qy, U = hdg_projection(q_fun, u_fun, VERTS, 1.0, k)
    basis = TriangleBasis(k)
    rp = np.array([[0.25, 0.3], [0.5, 0.12], [0.2, 0.61], [0.33, 0.33]])
    J = np.column_stack([VERTS[1] - VERTS[0], VERTS[2] - VERTS[0]])
    pp = VERTS[0] + rp @ J.T
    vals = basis.eval(rp)
    assert np.abs(vals @ Qx - q_fun(pp)[:, 0]).max() < 1e-12
    assert np.abs(vals @ Qy - q_fun(pp)[:, 1]).max() < 1e-12
    assert np.abs(vals @ U - u_fun(pp)).max() < 1e-12


@pytest.mark.parametrize("k", [1, 2])
def test_projection_order_on_nested_elements(k):
    q_fun = lambda p: np.column_stack([np.sin(p[:, 0] + 2 * p[:, 1]),
                                       np.cos(2 * p[:, 0] - p[:, 1])])
    u_fun = lambda p: np.exp(p[:, 0]) * np.sin(p[:, 1])
    basis = TriangleBasis(k)
    dense = np.array([[x, y] for x in np.linspace(0, 1, 15)
                      for y in np.linspace(0, 1 - x, 15) if y <= 1 - x])
    errs = []
    for lvl in range(4):
        s = 0.5 ** lvl
        verts = np.array([[0.0, 0.0], [s, 0.0], [0.0, s]])
        Qx, Qy, U = hdg_projection(q_fun, u_fun, verts, 1.0, k)
        pp = verts[0] + dense @ np.column_stack([verts[1] - verts[0],
                                                 verts[2] - verts[0]]).T
        vals = basis.eval(dense)
        err = max(np.abs(vals @ Qx - q_fun(pp)[:, 0]).max(),
                  np.abs(vals @ U - u_fun(pp)).max())
        errs.append(err)
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert rates[-1] > k + 0.7


def test_projection_divergence_free_flux_keeps_zero_scalar():
    # u = 0 and div q = 0 with polynomial q: the scalar projection stays 0
    q_fun = lambda p: np.column_stack([np.atleast_2d(p)[:, 1] ** 2,
                                       np.atleast_2d(p)[:, 0] ** 2])
    u_fun = lambda p: np.zeros(len(np.atleast_2d(p)))
    Qx, Qy, U = hdg_projection(q_fun, u_fun, VERTS, 1.0, 2)
    assert np.abs(U).max() < 1e-12


# ---------------------------------------------------------------------------
# coefficient classes and exports
# ---------------------------------------------------------------------------

def test_material_field_validation():
    with pytest.raises(AssemblyError):
        MaterialField(np.array([[1.0, 2.0], [0.0, 1.0]]))   # not symmetric
    with pytest.raises(AssemblyError):
        MaterialField(np.array([[1.0, 3.0], [3.0, 1.0]]))   # indefinite
    mat = MaterialField(np.array([[2.0, 0.5], [0.5, 1.0]]))
    pts = np.zeros((4, 2))
    assert np.allclose(mat.inv(pts) @ mat.value(pts), np.eye(2))


def test_stabilization_validation(coarse_k1):
    mesh = coarse_k1[0]
    with pytest.raises(AssemblyError):
        Stabilization(0.0).on_edges(mesh)
    tau = Stabilization(2.5).on_edges(mesh)
    assert tau.shape == (mesh.n_edges,)
    assert Stabilization(2.5).bar == 2.5


def test_field_exports(tmp_path, coarse_k1):
    _, _, _, system = coarse_k1
    u_ex = lambda p: p[:, 0]
    fld = solve_interior(system, g_gamma=u_ex, u0_gamma0=u_ex)
    vtk = tmp_path / "field.vtk"
    csv = tmp_path / "coeff.csv"
    write_vtk(fld, vtk)
    write_coefficients_csv(fld, csv)
    head = vtk.read_text().splitlines()
    assert head[0] == "# vtk DataFile Version 3.0"
    assert any(line.startswith("DATASET UNSTRUCTURED_GRID") for line in head[:6])
    rows = csv.read_text().splitlines()
    assert rows[0].startswith("element,qx_0")
    assert len(rows) == 1 + len(fld.mesh.elements)


def test_transfer_path_leaving_patch_raises():
    from hdgbem import TransferIntegrationError
    mesh = UnfittedMesh(np.array([[0.9, -0.025], [0.9, 0.025], [0.85, 0.0]]),
                        np.array([[0, 1, 2]]))
    edge = next(e for e in mesh.boundary_edge_ids
                if abs(mesh.edge_vertices(e).mean(axis=0)[0] - 0.9) < 1e-12)
    disc = _Discretization(mesh, MaterialField.identity(), 1.0, 1)
    bmap = _synthetic_boundary_map(mesh, edge, 5.0, (1.0, 0.0))  # absurd length
    with pytest.raises(TransferIntegrationError):
        assemble_transfer(disc, bmap, 0)
