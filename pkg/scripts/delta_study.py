"""Probe norm slopes over alternative delta sweeps and grid sizes.

Shows how the fitted H^{1/2} slope of each probe direction moves toward -3/2 as
delta/r0 shrinks, and that the norms are grid converged. Usage:

    python3 scripts/delta_study.py --N 33 --deltas 0.0625 0.0884 0.125
"""
from __future__ import annotations

import argparse

import numpy as np

from dtnprobe import Conductivity, build_domain, build_patches, extend_domain, fit_slope
from dtnprobe.probes import build_probe_family, hfrak_lp_norm
from dtnprobe.traces import trace_gram


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, default=33)
    p.add_argument("--r0", type=float, default=0.44)
    p.add_argument("--r1", type=float, default=0.48)
    p.add_argument("--deltas", type=float, nargs="+", default=[0.0625, 0.0884, 0.125])
    p.add_argument("--min-factor", type=float, default=2.0)
    args = p.parse_args()

    dom = build_domain(3, args.N)
    ext = extend_domain(dom, build_patches(dom, r0=args.r0, r1=args.r1))
    A = Conductivity.identity(3)
    gram = trace_gram(dom)
    deltas = np.array(sorted(args.deltas))
    hh = np.zeros((deltas.size, 3))
    lp = np.zeros_like(hh)
    for i, d in enumerate(deltas):
        fam = build_probe_family(ext, A, d, min_factor=args.min_factor)
        for j in range(3):
            hh[i, j] = gram.norm(fam.traces[:, j])
            lp[i, j] = hfrak_lp_norm(dom, fam, j=j)
        print(f"delta={d:.4f}  h_half={np.array2string(hh[i], precision=5)}  "
              f"lp={np.array2string(lp[i], precision=5)}  corrector={np.array2string(fam.corrector_h1, precision=4)}")
    for j in range(3):
        print(f"j={j + 1}: H^1/2 slope {fit_slope(deltas, hh[:, j]).slope:+.3f}, "
              f"L^6/5 slope {fit_slope(deltas, lp[:, j]).slope:+.3f}")


if __name__ == "__main__":
    main()
