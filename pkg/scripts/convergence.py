"""RMS error of counted coefficients versus shots, averaged over seeds.

Usage: python3 scripts/convergence.py [--seeds N] [--depth D]
"""
from __future__ import annotations

import argparse

import numpy as np

from qlr.counting import CountingContext, count_spectrum
from qlr.operators import UP, FermionOperator, build_hubbard, hermitian_split, jordan_wigner
from qlr.oracle import classical_lanczos, dense_ground_state
from qlr.statevector import RandomStream


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=16)
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--levels", default="1000,10000,100000")
    args = ap.parse_args()
    levels = [int(x) for x in args.levels.split(",")]

    H = jordan_wigner(build_hubbard(2, 1.0, 4.0, 1.5), 2)
    Hd = H.to_dense()
    E0, psi = dense_ground_state(Hd)
    omega = jordan_wigner(hermitian_split(FermionOperator.ladder(0, UP))[0], 2)
    ref = classical_lanczos(Hd, omega.to_dense() @ psi, args.depth - 1)
    ctx = CountingContext(psi, Hd, d=8, energy=E0)
    names = [f"alpha{n}" for n in range(args.depth)] + [f"beta{n}" for n in range(1, args.depth)]
    truth = np.array(list(ref.alpha) + list(ref.beta))
    rms = []
    for shots in levels:
        errs = []
        for seed in range(args.seeds):
            s = count_spectrum(ctx, H, omega, args.depth, shots, RandomStream(seed).spawn(shots)).spectrum
            got = np.full(len(truth), np.nan)
            vals = list(s.alpha) + [np.nan] * (args.depth - s.depth) + list(s.beta)
            vals += [np.nan] * (len(truth) - len(vals))
            got[:] = vals[: len(truth)]
            errs.append(got - truth)
        rms.append(np.sqrt(np.nanmean(np.square(errs), axis=0)))
        print(f"shots={shots:>7}  " + "  ".join(f"{n}={v:.4g}" for n, v in zip(names, rms[-1])))
    x = np.log10(levels)
    print("\nlog-log slopes")
    for k, name in enumerate(names):
        print(f"  {name}: {np.polyfit(x, np.log10(np.array(rms)[:, k]), 1)[0]:+.3f}")


if __name__ == "__main__":
    main()
