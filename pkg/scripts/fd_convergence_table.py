#!/usr/bin/env python3
"""Grid-refinement study of the 1D finite-difference reference solver
against the closed form."""

import numpy as np

from mfgan.evaluation import TorusGrid, fd_reference_solver_1d, rel_l2_error
from mfgan.problems import ergodic_explicit_problem


def main():
    p = ergodic_explicit_problem(1)
    cf = p.closed_form
    print(f"{'n':>5} {'err_u':>10} {'err_m':>10} {'err_hbar':>10} "
          f"{'order_u':>8} {'order_m':>8}")
    prev = None
    for n in (64, 128, 256, 512):
        u, m, hbar = fd_reference_solver_1d(p, n=n)
        x = np.arange(n) / n
        grid = TorusGrid(1, n)
        eu = rel_l2_error(u, cf.u([x]), grid)
        em = rel_l2_error(m, cf.m(x[:, None]), grid)
        eh = abs(hbar - cf.hbar)
        if prev is None:
            print(f"{n:>5} {eu:>10.3e} {em:>10.3e} {eh:>10.3e} {'-':>8} {'-':>8}")
        else:
            print(f"{n:>5} {eu:>10.3e} {em:>10.3e} {eh:>10.3e} "
                  f"{np.log2(prev[0] / eu):>8.2f} {np.log2(prev[1] / em):>8.2f}")
        prev = (eu, em)


if __name__ == "__main__":
    main()
