#!/usr/bin/env python3
"""ξ on disk(R) × (0, L) under grid refinement, with a Richardson estimate.

Writes ``xi_convergence.csv`` and ``xi_convergence.json`` to the output
directory.  Slices are refined together with the cross-section (Nz = L/h).
"""

import argparse
import time
from pathlib import Path

from hc1solve.critfield import compute_xi, richardson_xi
from hc1solve.bstar import solve_bstar
from hc1solve.elliptic import SolverConfig
from hc1solve.grid import Disk, build_cross_section, embed_cylinder
from hc1solve.io import write_csv, write_json


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--R", type=float, default=1.0)
    ap.add_argument("--L", type=float, default=1.0)
    ap.add_argument("--n", type=int, nargs="+", default=[8, 16, 32],
                    help="cells per unit length (h = 1/n)")
    ap.add_argument("--out", type=Path, default=Path("out/convergence"))
    args = ap.parse_args()

    rows = []
    for n in args.n:
        t0 = time.perf_counter()
        h = 1.0 / n
        cs = build_cross_section(Disk(args.R), h)
        dom = embed_cylinder(cs, args.L, max(2, round(args.L / h)))
        sol = solve_bstar(dom, SolverConfig(), with_potential=False)
        xi, xi2, curve = compute_xi(sol, dom)
        mid = curve[len(curve) // 2][1]
        rows.append((h, xi, xi2, mid, sol.diagnostics["el_residual_interior"],
                     sol.solve_report.iterations, time.perf_counter() - t0))
        print(f"h=1/{n:<4d} xi={xi:.6f} mid-slice={mid:.6f} cg={rows[-1][5]} t={rows[-1][6]:.1f}s")
    xis = [r[1] for r in rows]
    extrap = richardson_xi(xis) if len(xis) > 1 else xis[-1]
    print(f"Richardson (order 2) estimate: {extrap:.6f}")
    tag = "study"
    write_csv(args.out / "xi_convergence.csv",
              ["h", "xi", "xi_route2", "xi_mid_slice", "el_residual", "cg_iterations", "seconds"],
              rows, tag)
    write_json(args.out / "xi_convergence.json",
               {"R": args.R, "L": args.L, "rows": rows, "richardson": extrap}, tag)


if __name__ == "__main__":
    main()
