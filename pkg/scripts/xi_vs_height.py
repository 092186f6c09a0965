#!/usr/bin/env python3
"""ξ as a function of the cylinder height L at fixed cross-section.

Monotonicity in L is only a heuristic, so a violation is flagged in the
output rather than treated as an error.  Writes ``xi_vs_height.json``.
"""

import argparse
from pathlib import Path

import numpy as np

from hc1solve.bstar import solve_bstar
from hc1solve.critfield import compute_xi
from hc1solve.grid import Disk, build_cross_section, embed_cylinder
from hc1solve.io import write_json


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=1 / 16)
    ap.add_argument("--L", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0])
    ap.add_argument("--out", type=Path, default=Path("out/xi_vs_height"))
    args = ap.parse_args()

    cs = build_cross_section(Disk(1.0), args.h)
    rows = []
    for L in sorted(args.L):
        dom = embed_cylinder(cs, L, max(2, round(L / args.h)))
        sol = solve_bstar(dom, with_potential=False)
        xi, _, curve = compute_xi(sol, dom)
        mid = curve[len(curve) // 2][1]
        rows.append({"L": L, "xi": xi, "xi_mid_slice": mid, "edge": curve[0][1]})
        print(f"L={L:<5g} xi={xi:.6f} mid-slice={mid:.6f}")
    xs = np.array([r["xi"] for r in rows])
    flags = [] if np.all(np.diff(xs) >= 0) else ["xi-not-nondecreasing-in-L"]
    for f in flags:
        print("flag:", f)
    write_json(args.out / "xi_vs_height.json", {"h": args.h, "rows": rows, "flags": flags}, "study")


if __name__ == "__main__":
    main()
