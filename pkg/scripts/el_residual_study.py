#!/usr/bin/env python3
"""Interior Euler–Lagrange residual of B_* for each free-space kernel.

The lattice kernel makes the discrete field equation hold to solver
precision; the point and cell-averaged kernels leave an O(1) residual in a
band near the lateral wall.  Writes ``el_residual.csv``.
"""

import argparse
from pathlib import Path

from hc1solve.bstar import solve_bstar
from hc1solve.elliptic import SolverConfig
from hc1solve.grid import Disk, build_cross_section, embed_cylinder
from hc1solve.io import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[16, 32])
    ap.add_argument("--kernels", nargs="+", default=["lattice", "point", "integrated"])
    ap.add_argument("--out", type=Path, default=Path("out/el_residual"))
    args = ap.parse_args()

    rows = []
    for kernel in args.kernels:
        for n in args.n:
            cs = build_cross_section(Disk(1.0), 1.0 / n)
            dom = embed_cylinder(cs, 1.0, n)
            sol = solve_bstar(dom, SolverConfig(curl_kernel=kernel), with_potential=False)
            d = sol.diagnostics
            rows.append((kernel, n, d["el_residual_interior"], d["el_residual_max"],
                         d["curl_support_leak"], d["div_B"]))
            print(f"{kernel:10s} h=1/{n:<4d} residual={d['el_residual_interior']:.3e} "
                  f"leak={d['curl_support_leak']:.2e}")
    write_csv(args.out / "el_residual.csv",
              ["kernel", "n", "el_residual_interior", "el_residual_max", "curl_support_leak", "div_B"],
              rows, "study")


if __name__ == "__main__":
    main()
