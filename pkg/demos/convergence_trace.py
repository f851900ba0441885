# Watch the penalty/dual outer loop settle on one three-user instance.
#
# Each outer step either updates the multipliers (violation small enough) or
# shrinks rho. The energy column is the SCA objective without the penalty.

import numpy as np

from nomasec import SystemConfig, draw_instance, pdd

for L in (4e5, 5e5):
    cfg, ch = draw_instance(SystemConfig(L=L), seed=0)
    res = pdd.solve(cfg, ch)
    print(f"L = {L:g} bits per user, status {res.status}, {res.subproblems} subproblems, "
          f"{res.wall_time:.2f} s")
    print(f"{'outer':>5} {'inner':>5} {'energy [J]':>12} {'|g|_inf':>9} {'rho':>7}")
    for t in res.outer_trace:
        print(f"{t['outer']:5d} {t['inner']:5d} {t['energy']:12.6g} {t['g_inf']:9.2e} {t['rho']:7.3g}")

    a = res.allocation
    order = np.argsort(-a.beta.sum(axis=1), kind="stable")
    print("decoded first to last:", order)
    print("transmit power [W]:", np.array2string(a.p, precision=4))
    print("local bits:", np.array2string(a.l, precision=0))
    print(f"repair changed the energy by {res.repair_delta:+.2e} J\n")
