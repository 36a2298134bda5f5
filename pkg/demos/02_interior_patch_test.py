"""Discrete exactness: polynomial solutions are reproduced to rounding.

The transfer of Dirichlet data along straight segments uses the same
quadrature nodes for the data term and for the line integral of the
extrapolated flux, so any global polynomial pair (q = -kappa grad u) in
the discrete space satisfies the scheme exactly, on fitted and unfitted
meshes alike.
"""

from hdgbem import l2_errors, manufactured_case, setup_level, solve_interior

for k in (1, 2):
    case = manufactured_case("polynomial-patch", degree=k)
    for fitted in (False, True):
        bundle = setup_level(case, 0.15, k, n=8, fitted=fitted)
        field = solve_interior(bundle.system, f=case.f, g_gamma=case.u,
                               u0_gamma0=case.u0)
        err_q, err_u = l2_errors(field, bundle.system, case.u, case.q)
        kind = "fitted  " if fitted else "unfitted"
        print(f"k={k} {kind}: ||q - q_h|| = {err_q:.2e}   "
              f"||u - u_h|| = {err_u:.2e}")
