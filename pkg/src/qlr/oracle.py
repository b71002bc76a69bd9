"""Exact classical reference: dense eigensolves, Lanczos, resolvents.

Everything here works on dense matrices of at most 4096 rows and is the
ground truth the quantum-counting estimates are compared with.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

MAX_DIM = 4096

ORACLE = "oracle"
COUNTED = "counted"


@dataclass(frozen=True)
class TridiagonalSpectrum:
    """Lanczos coefficients ``alpha_0..alpha_N`` and ``beta_1..beta_N``.

    ``beta`` holds residual norms (nonnegative).  Provenance and standard
    errors are tracked per coefficient; oracle entries have ``stderr = 0``.
    """

    alpha: tuple
    beta: tuple
    alpha_provenance: tuple = None
    beta_provenance: tuple = None
    alpha_stderr: tuple = None
    beta_stderr: tuple = None

    def __post_init__(self):
        a = tuple(float(x) for x in self.alpha)
        b = tuple(float(x) for x in self.beta)
        if len(a) == 0 and len(b) == 0:
            pass
        elif len(b) != len(a) - 1:
            raise ValueError(f"need len(beta) == len(alpha) - 1, got {len(b)} and {len(a)}")
        if any(x < 0 for x in b):
            raise ValueError("beta entries must be nonnegative")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        for name, n, default in (
            ("alpha_provenance", len(a), ORACLE),
            ("beta_provenance", len(b), ORACLE),
            ("alpha_stderr", len(a), 0.0),
            ("beta_stderr", len(b), 0.0),
        ):
            val = getattr(self, name)
            if val is None:
                val = (default,) * n
            val = tuple(val)
            if len(val) != n:
                raise ValueError(f"{name} has length {len(val)}, expected {n}")
            object.__setattr__(self, name, val)

    @property
    def depth(self) -> int:
        return len(self.alpha)

    @property
    def beta_sq(self) -> tuple:
        return tuple(b * b for b in self.beta)

    def prefix(self, n: int) -> "TridiagonalSpectrum":
        """First ``n`` levels (``alpha_0..alpha_{n-1}``)."""
        n = min(n, self.depth)
        m = max(n - 1, 0)
        return TridiagonalSpectrum(
            self.alpha[:n], self.beta[:m], self.alpha_provenance[:n], self.beta_provenance[:m],
            self.alpha_stderr[:n], self.beta_stderr[:m],
        )

    def matrix(self) -> np.ndarray:
        return np.diag(self.alpha) + np.diag(self.beta, 1) + np.diag(self.beta, -1)

    def to_csv(self) -> str:
        """Long-format table, one coefficient per row: ``n, alpha, beta, provenance, stderr``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "alpha", "beta", "provenance", "stderr"])
        for n, a in enumerate(self.alpha):
            w.writerow([n, repr(a), "", self.alpha_provenance[n], repr(float(self.alpha_stderr[n]))])
            if n < len(self.beta):
                w.writerow([n + 1, "", repr(self.beta[n]), self.beta_provenance[n], repr(float(self.beta_stderr[n]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TridiagonalSpectrum":
        rows = list(csv.DictReader(io.StringIO(text), skipinitialspace=True))
        a, ap, ae, b, bp, be = [], [], [], [], [], []
        for r in rows:
            if r["alpha"] != "":
                a.append(float(r["alpha"]))
                ap.append(r["provenance"])
                ae.append(float(r["stderr"]))
            else:
                b.append(float(r["beta"]))
                bp.append(r["provenance"])
                be.append(float(r["stderr"]))
        return cls(tuple(a), tuple(b), tuple(ap), tuple(bp), tuple(ae), tuple(be))


@dataclass(frozen=True)
class KrylovGroundState:
    """Lowest eigenpair of the tridiagonal matrix (gamma normalized)."""

    gamma: tuple
    energy: float
    basis_dim: int = field(default=None)

    def __post_init__(self):
        g = tuple(float(x) for x in self.gamma)
        object.__setattr__(self, "gamma", g)
        if self.basis_dim is None:
            object.__setattr__(self, "basis_dim", len(g))


def _check_hermitian(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    if H.shape[0] > MAX_DIM:
        raise ValueError(f"dense oracle capped at dimension {MAX_DIM}")
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    if np.abs(H - H.conj().T).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not Hermitian")
    return H


def _fix_phase(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v) > np.abs(v).max() - 1e-9))
    return v * (abs(v[k]) / v[k])


def dense_ground_state(H: np.ndarray) -> tuple:
    """Lowest eigenpair ``(E0, psi)``; psi's largest leading entry made real positive."""
    H = _check_hermitian(H)
    w, v = np.linalg.eigh(H)
    return float(w[0]), _fix_phase(v[:, 0].astype(complex))


def sector_ground_state(H: np.ndarray, mask: np.ndarray) -> tuple:
    """Ground state of ``H`` restricted to basis states where ``mask`` is True."""
    H = _check_hermitian(H)
    idx = np.flatnonzero(mask)
    w, v = np.linalg.eigh(H[np.ix_(idx, idx)])
    psi = np.zeros(H.shape[0], dtype=complex)
    psi[idx] = v[:, 0]
    return float(w[0]), _fix_phase(psi), w


def occupation_sector(n_sites: int, n_up: int, n_down: int) -> np.ndarray:
    """Boolean mask of basis states with the given spin-resolved filling."""
    b = np.arange(1 << (2 * n_sites))
    up = sum((b >> q) & 1 for q in range(n_sites))
    dn = sum((b >> (q + n_sites)) & 1 for q in range(n_sites))
    return (up == n_up) & (dn == n_down)


def classical_lanczos(H: np.ndarray, phi0: np.ndarray, N: int, tol: float = 1e-12,
                      return_vectors: bool = False):
    """Lanczos with full reorthogonalization for at most ``N`` steps.

    Returns ``alpha_0..alpha_n`` and ``beta_1..beta_n`` with ``n <= N``;
    the recursion stops early once the residual norm drops below
    ``tol * max(1, ||H||_inf)``.
    """
    H = _check_hermitian(H)
    phi0 = np.asarray(phi0, dtype=complex)
    nrm = np.linalg.norm(phi0)
    if nrm == 0:
        raise ValueError("Lanczos start vector is zero")
    cut = tol * max(1.0, float(np.abs(H).sum(axis=1).max()))
    V = [phi0 / nrm]
    alpha, beta = [], []
    for n in range(N + 1):
        w = H @ V[n]
        a = float(np.vdot(V[n], w).real)
        alpha.append(a)
        if n == N:
            break
        w = w - a * V[n] - (beta[-1] * V[n - 1] if n > 0 else 0)
        Q = np.array(V)
        for _ in range(2):
            w = w - Q.T @ (Q.conj() @ w)
        b = float(np.linalg.norm(w))
        if b < cut:
            break
        beta.append(b)
        V.append(w / b)
    spec = TridiagonalSpectrum(tuple(alpha), tuple(beta))
    if return_vectors:
        return spec, np.array(V[: len(alpha)])
    return spec


def tridiagonal_eigs(spec: TridiagonalSpectrum) -> tuple:
    """Ascending eigenvalues and the lowest eigenpair of the tridiagonal matrix."""
    if spec.depth == 0:
        raise ValueError("empty spectrum")
    if spec.depth == 1:
        return np.array(spec.alpha), KrylovGroundState((1.0,), spec.alpha[0], 1)
    w, v = sla.eigh_tridiagonal(np.array(spec.alpha), np.array(spec.beta))
    g = v[:, 0]
    if g[0] < 0:
        g = -g
    return w, KrylovGroundState(tuple(g), float(w[0]), spec.depth)


def reference_resolvent(H: np.ndarray, psi_in: np.ndarray, omega_grid, eta: float,
                        sign: int = 1) -> np.ndarray:
    """``<in|(omega - H + sign*i*eta)^-1|in>`` by a direct solve per grid point."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 (retarded) or -1 (advanced)")
    H = _check_hermitian(H)
    psi = np.asarray(psi_in, dtype=complex)
    omega = np.atleast_1d(np.asarray(omega_grid, dtype=float))
    out = np.zeros(len(omega), dtype=complex)
    if not np.any(psi):
        return out
    eye = np.eye(H.shape[0])
    for k, w in enumerate(omega):
        x = np.linalg.solve((w + sign * 1j * eta) * eye - H, psi)
        out[k] = np.vdot(psi, x)
    return out


def reference_cross_resolvent(H: np.ndarray, bra: np.ndarray, ket: np.ndarray, omega_grid,
                              eta: float, sign: int = 1) -> np.ndarray:
    """``<bra|(omega - H + sign*i*eta)^-1|ket>`` by direct solves."""
    H = _check_hermitian(H)
    omega = np.atleast_1d(np.asarray(omega_grid, dtype=float))
    eye = np.eye(H.shape[0])
    ket = np.asarray(ket, dtype=complex)
    return np.array([np.vdot(bra, np.linalg.solve((w + sign * 1j * eta) * eye - H, ket)) for w in omega])


def monic_vectors(H: np.ndarray, phi0: np.ndarray, spec: TridiagonalSpectrum, n: int) -> list:
    """Unnormalized Lanczos vectors ``u_0..u_n`` from the monic recursion.

    ``u_{m+1} = (H - alpha_m) u_m - beta_m^2 u_{m-1}``; these are the images
    ``G_m |Psi>`` the counting operators must reproduce.
    """
    u = [np.asarray(phi0, dtype=complex)]
    for m in range(n):
        nxt = H @ u[m] - spec.alpha[m] * u[m]
        if m > 0:
            nxt = nxt - spec.beta[m - 1] ** 2 * u[m - 1]
        u.append(nxt)
    return u


def gram_schmidt_krylov(H: np.ndarray, phi0: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal Krylov basis by explicit Gram-Schmidt on ``H^k phi0``.

    Independent construction used to cross-check :func:`classical_lanczos`
    (coefficients follow from projecting ``H`` onto this basis).
    """
    vecs = []
    v = np.asarray(phi0, dtype=complex)
    powers = [v]
    for _ in range(dim - 1):
        powers.append(H @ powers[-1])
    for p in powers:
        w = p.copy()
        for _ in range(2):
            for q in vecs:
                w = w - q * np.vdot(q, w)
        nw = np.linalg.norm(w)
        if nw < 1e-9 * max(1.0, np.linalg.norm(p)):
            break
        vecs.append(w / nw)
    return np.array(vecs)
