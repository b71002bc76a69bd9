"""Continued-fraction Green's functions and spectral functions.

A :class:`ContinuedFraction` holds the weight ``w0 = <Omega Psi|Omega Psi>``
and the Lanczos coefficients of ``Omega Psi``; evaluated at
``z = omega + sign*i*eta`` it equals ``<Psi|Omega^dag (z - H)^-1 Omega|Psi>``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .oracle import TridiagonalSpectrum

SIGNS = {1: "retarded", -1: "advanced"}
TARGETS = ("c†c", "cc†", "pair")
_TARGET_ALIASES = {"cdag_c": "c†c", "c_cdag": "cc†", "c†c": "c†c", "cc†": "cc†", "pair": "pair"}


@dataclass(frozen=True)
class ContinuedFraction:
    """``w0 / (z - a0 - b1^2 / (z - a1 - ...))``."""

    weight: float
    alpha: tuple
    beta_sq: tuple
    sign: int = 1
    truncation: str = "none"

    def __post_init__(self):
        a = tuple(float(x) for x in self.alpha)
        b = tuple(float(x) for x in self.beta_sq)
        if len(a) < 1:
            raise ValueError("continued fraction needs depth >= 1")
        if len(b) != len(a) - 1:
            raise ValueError(f"need len(beta_sq) == depth - 1, got {len(b)} for depth {len(a)}")
        if any(x < 0 for x in b):
            raise ValueError("beta_sq entries must be nonnegative")
        if self.sign not in SIGNS:
            raise ValueError("sign must be +1 (retarded) or -1 (advanced)")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta_sq", b)
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def depth(self) -> int:
        return len(self.alpha)

    @classmethod
    def from_spectrum(cls, spec: TridiagonalSpectrum, weight: float, sign: int = 1) -> "ContinuedFraction":
        return cls(weight, spec.alpha, spec.beta_sq, sign)

    def poles(self) -> np.ndarray:
        """Pole positions (eigenvalues of the tridiagonal matrix)."""
        T = np.diag(self.alpha) + np.diag(np.sqrt(self.beta_sq), 1) + np.diag(np.sqrt(self.beta_sq), -1)
        return np.linalg.eigvalsh(T)

    def residues(self) -> tuple:
        """``(poles, residues)`` with residues summing to ``weight``."""
        T = np.diag(self.alpha) + np.diag(np.sqrt(self.beta_sq), 1) + np.diag(np.sqrt(self.beta_sq), -1)
        w, v = np.linalg.eigh(T)
        return w, self.weight * v[0] ** 2

    def dump(self, eta: float | None = None) -> str:
        """JSON text with weight, alpha, beta_sq, sign and eta."""
        doc = {
            "weight": self.weight,
            "alpha": list(self.alpha),
            "beta_sq": list(self.beta_sq),
            "sign": self.sign,
            "eta": eta,
            "depth": self.depth,
            "truncation": self.truncation,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def load(cls, text: str) -> tuple:
        """Inverse of :meth:`dump`; returns ``(cf, eta)``."""
        doc = json.loads(text)
        cf = cls(doc["weight"], doc["alpha"], doc["beta_sq"], int(doc["sign"]), doc.get("truncation", "none"))
        return cf, doc.get("eta")


def eval_cf(cf: ContinuedFraction, omega, eta: float) -> np.ndarray:
    """Evaluate the fraction bottom-up at ``omega + sign*i*eta`` (array in, array out)."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    z = np.atleast_1d(np.asarray(omega, dtype=float)) + cf.sign * 1j * eta
    acc = z - cf.alpha[-1]
    for n in range(cf.depth - 2, -1, -1):
        acc = z - cf.alpha[n] - cf.beta_sq[n] / acc
    return cf.weight / acc


def truncate(cf: ContinuedFraction, beta_tol: float = 1e-8, beta_max: float = 1e3) -> ContinuedFraction:
    """Cut the fraction at the first negligible or overly large ``beta_n``.

    ``beta_n^2 < beta_tol^2`` or ``beta_n^2 > beta_max^2`` at the first such
    ``n`` keeps levels ``0..n-1`` and records which rule fired.
    """
    for k, b2 in enumerate(cf.beta_sq):
        rule = "beta_tol" if b2 < beta_tol ** 2 else "beta_max" if b2 > beta_max ** 2 else None
        if rule:
            n = k + 1
            return ContinuedFraction(cf.weight, cf.alpha[:n], cf.beta_sq[: n - 1], cf.sign, rule)
    return cf


@dataclass(frozen=True)
class SpectralSamples:
    """``A(omega) = -sign * Im G / pi`` on a grid, with the complex ``G`` kept."""

    omega_grid: np.ndarray
    values: np.ndarray
    eta: float
    green: np.ndarray = field(default=None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["omega", "re_G", "im_G", "A"])
        g = self.green if self.green is not None else np.full(len(self.values), np.nan + 0j)
        for x, gv, a in zip(self.omega_grid, g, self.values):
            w.writerow([repr(float(x)), repr(float(gv.real)), repr(float(gv.imag)), repr(float(a))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, eta: float) -> "SpectralSamples":
        rows = list(csv.DictReader(io.StringIO(text)))
        om = np.array([float(r["omega"]) for r in rows])
        g = np.array([complex(float(r["re_G"]), float(r["im_G"])) for r in rows])
        a = np.array([float(r["A"]) for r in rows])
        return cls(om, a, eta, g)

    def integral(self) -> float:
        """Trapezoid integral of ``A`` over the grid."""
        return float(np.trapezoid(self.values, self.omega_grid))

    def peaks(self, rel_height: float = 1e-3) -> np.ndarray:
        """Grid positions of local maxima above ``rel_height * max(A)``."""
        a = self.values
        if len(a) < 3:
            return np.array([])
        inner = (a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:]) & (a[1:-1] > rel_height * a.max())
        return self.omega_grid[1:-1][inner]


def spectral_from_green(omega_grid, green, eta: float, sign: int = 1) -> SpectralSamples:
    g = np.asarray(green, dtype=complex)
    return SpectralSamples(np.asarray(omega_grid, dtype=float), -sign * g.imag / math.pi, eta, g)


def spectral(cf: ContinuedFraction, omega_grid, eta: float) -> SpectralSamples:
    grid = np.asarray(omega_grid, dtype=float)
    return spectral_from_green(grid, eval_cf(cf, grid, eta), eta, cf.sign)


def default_grid(energies, points: int = 401, margin: float = 2.0) -> np.ndarray:
    """``points`` equally spaced values over ``[min - margin, max + margin]``."""
    e = np.atleast_1d(np.asarray(energies, dtype=float))
    return np.linspace(e.min() - margin, e.max() + margin, int(points))


@dataclass(frozen=True)
class CrossGreens:
    """``<Omega_a Psi|(z - H)^-1|Omega_b Psi>`` by Krylov projection.

    The Lanczos basis ``v_m`` of ``Omega_a Psi`` with tridiagonal ``T``
    gives ``sqrt(w_a) sum_m [(z - T)^-1]_{0m} <v_m|Omega_b Psi>``, exact
    once the Krylov space is invariant under ``H``.
    """

    weight: float
    spectrum: TridiagonalSpectrum
    overlaps: tuple
    sign: int = 1

    def __post_init__(self):
        ov = tuple(complex(x) for x in self.overlaps)
        if len(ov) != self.spectrum.depth:
            raise ValueError("need one overlap per Krylov vector")
        object.__setattr__(self, "overlaps", ov)

    def evaluate(self, omega, eta: float) -> np.ndarray:
        if not eta > 0:
            raise ValueError("eta must be positive")
        T = self.spectrum.matrix()
        w, v = np.linalg.eigh(T)
        proj = v.T @ np.array(self.overlaps)  # eigenbasis components of the ket
        z = np.atleast_1d(np.asarray(omega, dtype=float)) + self.sign * 1j * eta
        return math.sqrt(self.weight) * ((v[0] * proj)[None, :] / (z[:, None] - w[None, :])).sum(axis=1)


def combine_parts(parts, target: str = "c†c") -> np.ndarray:
    """Green's function of a non-Hermitian operator from its Hermitian parts.

    ``parts[a][b]`` (a, b in 0 = plus, 1 = minus) holds samples of
    ``<Omega_a Psi|R|Omega_b Psi>`` where ``X = (Omega_+ + i Omega_-)/2``.
    ``"c†c"`` and ``"pair"`` return ``<X^dag R X>``, ``"cc†"`` returns
    ``<X R X^dag>``.  Missing entries (``None``) count as zero.
    """
    key = _TARGET_ALIASES.get(target)
    if key is None:
        raise ValueError(f"target must be one of {TARGETS}")
    ket = np.array([0.5, 0.5j])
    bra = ket.conj()
    if key == "cc†":
        ket, bra = bra, ket
    shape = None
    for row in parts:
        for g in row:
            if g is not None:
                s = np.shape(g)
                if shape is not None and s != shape:
                    raise ValueError("parts sampled on different grids")
                shape = s
    if shape is None:
        raise ValueError("no Green's function parts given")
    out = np.zeros(shape, dtype=complex)
    for a in range(2):
        for b in range(2):
            g = parts[a][b]
            if g is not None:
                out = out + bra[a] * ket[b] * np.asarray(g)
    return out
