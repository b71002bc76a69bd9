"""Shared fixtures and independent dense references."""
from __future__ import annotations

from functools import reduce

import numpy as np
import pytest

from qlr.counting import CountingContext
from qlr.operators import FermionOperator, UP, build_hubbard, hermitian_split, jordan_wigner
from qlr.oracle import classical_lanczos, dense_ground_state

I2 = np.eye(2)
Z2 = np.diag([1.0, -1.0])
LOWER = np.array([[0.0, 1.0], [0.0, 0.0]])  # |0><1|, annihilates an occupied qubit


def kron_annihilator(q: int, n: int) -> np.ndarray:
    """Jordan-Wigner annihilator built from explicit Kronecker products.

    Qubit q is bit q of the basis index, so the rightmost Kronecker factor is
    qubit 0.  Written independently of the Pauli algebra under test.
    """
    ops = [Z2] * q + [LOWER] + [I2] * (n - q - 1)
    return reduce(np.kron, list(reversed(ops)))


def kron_hubbard(L: int, t: float, U: float, mu: float) -> np.ndarray:
    n = 2 * L
    c = [kron_annihilator(q, n) for q in range(n)]
    H = np.zeros((1 << n, 1 << n))
    for s in range(2):
        for i in range(L - 1):
            a, b = c[s * L + i], c[s * L + i + 1]
            H -= t * (a.T @ b + b.T @ a)
    for i in range(L):
        nu, nd = c[i].T @ c[i], c[L + i].T @ c[L + i]
        H += U * nu @ nd - mu * (nu + nd)
    return H


class Channel:
    """2-site chain, mu = 1.5, Omega_+ on (site 0, up): unique ground state, 4 poles."""

    L, t, U, mu = 2, 1.0, 4.0, 1.5

    def __init__(self):
        self.H = jordan_wigner(build_hubbard(self.L, self.t, self.U, self.mu), self.L)
        self.Hd = self.H.to_dense()
        self.E0, self.psi = dense_ground_state(self.Hd)
        self.omega = jordan_wigner(hermitian_split(FermionOperator.ladder(0, UP))[0], self.L)
        self.phi = self.omega.to_dense() @ self.psi
        self.spec = classical_lanczos(self.Hd, self.phi, 3)

    def context(self, **kw) -> CountingContext:
        return CountingContext(self.psi, self.Hd, energy=self.E0, **kw)


@pytest.fixture(scope="session")
def channel():
    return Channel()


@pytest.fixture(scope="session")
def ctx(channel):
    return channel.context(d=8)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
