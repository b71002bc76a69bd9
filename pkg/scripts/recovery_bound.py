"""Unrecovered fraction after k recovery rounds against 1/(2e(k+1)).

Usage: python3 scripts/recovery_bound.py [--shots N] [--seed S]
"""
from __future__ import annotations

import argparse
import math

import numpy as np

from qlr.counting import CountingContext, CountingTally, count_spectrum
from qlr.operators import UP, FermionOperator, build_hubbard, hermitian_split, jordan_wigner
from qlr.oracle import dense_ground_state
from qlr.statevector import RandomStream


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shots", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--depth", type=int, default=3)
    args = ap.parse_args()

    H = jordan_wigner(build_hubbard(2, 1.0, 4.0, 1.5), 2)
    E0, psi = dense_ground_state(H.to_dense())
    omega = jordan_wigner(hermitian_split(FermionOperator.ladder(0, UP))[0], 2)
    ctx = CountingContext(psi, H.to_dense(), d=8, energy=E0)
    cs = count_spectrum(ctx, H, omega, args.depth, args.shots, RandomStream(args.seed))
    tally = CountingTally()
    print(f"{'run':>8} {'p_acc':>8} {'recoveries':>11}")
    for est, r in zip(["norm"] + [f"{e.kind}{e.n}" for e in cs.estimates], cs.runs):
        print(f"{est:>8} {r.circuit.acceptance_probability:8.4f} {r.tally.rejects:11d}")
        if est != "norm":
            tally = tally.merge(r.tally)
    n = tally.rejects
    print(f"\n{n} triggered recoveries")
    print(f"{'k':>3} {'unrecovered':>12} {'bound':>10} {'bound+3sig':>11}")
    for k in range(1, 21):
        b = 1 / (2 * math.e * (k + 1))
        s = math.sqrt(b * (1 - b) / n)
        u = tally.unrecovered_fraction(k)
        flag = "" if u <= b + 3 * s else "  exceeds"
        print(f"{k:3d} {u:12.3e} {b:10.4f} {b + 3 * s:11.4f}{flag}")
    print(f"\nmean rounds per recovery: "
          f"{sum(r * c for r, c in tally.recovery_steps.items()) / max(n - tally.aborted, 1):.4f}")


if __name__ == "__main__":
    main()
