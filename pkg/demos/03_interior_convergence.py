"""Interior solver convergence with exact interface data.

Solves the annulus problem with the dipole trace prescribed on both
boundaries (no exterior solve involved) and tabulates the weighted flux
error and the scalar error: both decay at order k+1.
"""

import numpy as np

from hdgbem import l2_errors, manufactured_case, setup_level, solve_interior

case = manufactured_case("dipole")

for k in (1, 2):
    prev = None
    print(f"\ndegree k = {k}")
    print("    h      err_q      err_u    rate_q  rate_u")
    for h in (0.2, 0.1, 0.05):
        bundle = setup_level(case, h, k)
        field = solve_interior(bundle.system, f=case.f, g_gamma=case.u,
                               u0_gamma0=case.u0)
        err_q, err_u = l2_errors(field, bundle.system, case.u, case.q)
        if prev is None:
            print(f"{h:6.3f} {err_q:10.3e} {err_u:10.3e}     --      --")
        else:
            rq = np.log2(prev[0] / err_q)
            ru = np.log2(prev[1] / err_u)
            print(f"{h:6.3f} {err_q:10.3e} {err_u:10.3e} {rq:7.2f} {ru:7.2f}")
        prev = (err_q, err_u)
