"""Non-circular and non-concentric geometries.

The acceptance cases live on concentric circles; these tests drive the
closest-point transfer map, the patch construction and the quadrature
route of the layer operators on harder geometry.
"""

import numpy as np
import pytest

from hdgbem import (
    Curve,
    MaterialField,
    assemble_layer_operators,
    build_annulus_mesh,
    build_boundary_map,
    build_extension_patches,
    build_system,
    l2_errors,
    project_mean_zero,
    proximity_parameter,
    solve_exterior,
    solve_interior,
)
from hdgbem.bem import _coeff_to_samples


@pytest.fixture(scope="module")
def ellipse():
    a, b = 1.1, 0.85
    return Curve.from_parametrization(
        lambda s: np.stack([a * np.cos(s), b * np.sin(s)], axis=-1),
        lambda s: np.stack([-a * np.sin(s), b * np.cos(s)], axis=-1),
        lambda s: np.stack([-a * np.cos(s), -b * np.sin(s)], axis=-1))


def test_non_concentric_annulus_patch_test():
    gamma = Curve.circle((0.0, 0.0), 1.0)
    gamma0 = Curve.circle((0.15, -0.1), 0.4)
    mesh = build_annulus_mesh(gamma, gamma0, 0.15)
    bmap = build_boundary_map(mesh, gamma, gamma0, n_nodes=3)
    patches = build_extension_patches(mesh, bmap, gamma, gamma0)
    system = build_system(mesh, bmap, patches, MaterialField.identity(), 1.0, 1)
    u_ex = lambda p: p[:, 0] - 0.5 * p[:, 1]
    q_ex = lambda p: np.tile([-1.0, 0.5], (len(p), 1))
    fld = solve_interior(system, g_gamma=u_ex, u0_gamma0=u_ex)
    eq, eu = l2_errors(fld, system, u_ex, q_ex)
    assert eq < 1e-9 and eu < 1e-9
    assert proximity_parameter(mesh, bmap).R_h < 0.3


def test_ellipse_annulus_patch_test_and_partition(ellipse):
    gamma0 = Curve.circle((0.15, -0.1), 0.4)
    mesh = build_annulus_mesh(ellipse, gamma0, 0.15)
    bmap = build_boundary_map(mesh, ellipse, gamma0, strategy="closest-point",
                              n_nodes=4)
    patches = build_extension_patches(mesh, bmap, ellipse, gamma0)
    system = build_system(mesh, bmap, patches, MaterialField.identity(), 1.0, 2)
    u_ex = lambda p: p[:, 0] ** 2 - p[:, 1] ** 2     # harmonic quadratic
    q_ex = lambda p: np.column_stack([-2.0 * p[:, 0], 2.0 * p[:, 1]])
    fld = solve_interior(system, g_gamma=u_ex, u0_gamma0=u_ex)
    eq, eu = l2_errors(fld, system, u_ex, q_ex)
    assert eq < 1e-9 and eu < 1e-9
    covered = mesh.area() + sum(p.area for p in patches)
    assert abs(covered - (np.pi * 1.1 * 0.85 - np.pi * 0.16)) < 1e-10


def test_ellipse_interface_solve_self_convergence(ellipse):
    # quadrature-route oracle: doubling the density degree must not move a
    # spectrally converged solution
    lam_fun = lambda t: np.cos(t) + 0.4 * np.sin(2 * t)
    sols = []
    for n in (24, 48):
        ops = assemble_layer_operators(ellipse, n)
        lam = project_mean_zero(lam_fun(np.arange(2 * n) * np.pi / n),
                                curve=ellipse)
        sols.append(solve_exterior(ops, lam))
    t = np.linspace(0.0, 2 * np.pi, 500)
    assert np.abs(sols[0].eval(t) - sols[1].eval(t)).max() < 1e-12
    assert abs(sols[1].weighted_mean(ellipse)) < 1e-12


def test_single_layer_self_adjoint_in_arclength_pairing(ellipse):
    # the parameter-measure pairing is only symmetric for constant speed;
    # the arclength-weighted pairing is the invariant that generalizes
    n = 24
    ops = assemble_layer_operators(ellipse, n)
    t = np.linspace(0.0, 2 * np.pi, 16 * n, endpoint=False)
    basis = _coeff_to_samples(n, t)
    w = ellipse.speed(t) * (2 * np.pi / len(t))
    gram_w = basis.T @ (w[:, None] * basis)
    M = gram_w @ ops.V
    assert np.abs(M - M.T).max() < 1e-12
