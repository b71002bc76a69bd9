"""Fermionic and Pauli operator algebra.

Fermionic lattice operators are kept in a canonical normal order so that
equality is decidable term by term.  The Jordan-Wigner image lives in
:class:`QubitOperator`, a sparse sum of Pauli words, and
:func:`normalize_and_shift` turns a Hermitian Pauli sum into the
positive-semidefinite, norm-bounded LCU form consumed by the counting
protocol.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Iterator, Mapping

import numpy as np

UP = 0
DOWN = 1
_SPIN_NAMES = {"up": UP, "u": UP, "down": DOWN, "d": DOWN, "dn": DOWN}

Factor = tuple  # (site, spin, dagger)


def parse_spin(spin) -> int:
    """Accept 0/1 or 'up'/'down' and return the integer spin label."""
    if isinstance(spin, str):
        key = spin.strip().lower()
        if key in _SPIN_NAMES:
            return _SPIN_NAMES[key]
        raise ValueError(f"unknown spin label {spin!r}")
    spin = int(spin)
    if spin not in (UP, DOWN):
        raise ValueError(f"spin must be 0 (up) or 1 (down), got {spin}")
    return spin


# ---------------------------------------------------------------------------
# Fermionic operators
# ---------------------------------------------------------------------------

def _in_order(a: Factor, b: Factor) -> bool:
    # creation operators first, then ascending (site, spin) inside each block
    if a[2] != b[2]:
        return a[2]
    return (a[0], a[1]) < (b[0], b[1])


def _normal_order(coeff: complex, factors: tuple) -> dict:
    out: dict = {}
    stack = [(coeff, list(factors))]
    while stack:
        c, fs = stack.pop()
        for k in range(len(fs) - 1):
            a, b = fs[k], fs[k + 1]
            if _in_order(a, b):
                continue
            if a == b:
                # c_a c_a = 0 and c+_a c+_a = 0
                break
            swapped = fs[:k] + [b, a] + fs[k + 2:]
            if (not a[2]) and b[2] and a[:2] == b[:2]:
                # c_a c+_a = 1 - c+_a c_a
                stack.append((c, fs[:k] + fs[k + 2:]))
            stack.append((-c, swapped))
            break
        else:
            key = tuple(fs)
            out[key] = out.get(key, 0) + c
    return out


class FermionOperator:
    """Sum of products of fermionic ladder operators.

    Each factor is ``(site, spin, dagger)``.  Terms are stored normal ordered
    (creation operators left, ascending ``(site, spin)`` within each block)
    with zero coefficients removed, so ``a == b`` compares canonical forms.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping | Iterable | None = None):
        acc: dict = {}
        items = terms.items() if isinstance(terms, Mapping) else (terms or [])
        for factors, coeff in items:
            fs = tuple((int(s), parse_spin(sp), bool(dg)) for s, sp, dg in factors)
            for s, _, _ in fs:
                if s < 0:
                    raise ValueError("site index must be nonnegative")
            for key, c in _normal_order(complex(coeff), fs).items():
                acc[key] = acc.get(key, 0) + c
        self._terms = {k: v for k, v in acc.items() if v != 0}

    # constructors -----------------------------------------------------
    @classmethod
    def ladder(cls, site: int, spin=UP, dagger: bool = False) -> "FermionOperator":
        return cls({((site, spin, dagger),): 1.0})

    @classmethod
    def identity(cls, coeff: complex = 1.0) -> "FermionOperator":
        return cls({(): coeff})

    @classmethod
    def zero(cls) -> "FermionOperator":
        return cls()

    @classmethod
    def number(cls, site: int, spin=UP) -> "FermionOperator":
        return cls({((site, spin, True), (site, spin, False)): 1.0})

    # algebra ----------------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator:
        return iter(sorted(self._terms.items(), key=lambda kv: (len(kv[0]), kv[0])))

    def __add__(self, other) -> "FermionOperator":
        other = _as_fermion(other)
        acc = dict(self._terms)
        for k, v in other._terms.items():
            acc[k] = acc.get(k, 0) + v
        return _fermion_from_canonical(acc)

    __radd__ = __add__

    def __neg__(self) -> "FermionOperator":
        return _fermion_from_canonical({k: -v for k, v in self._terms.items()})

    def __sub__(self, other) -> "FermionOperator":
        return self + (-_as_fermion(other))

    def __rsub__(self, other) -> "FermionOperator":
        return _as_fermion(other) - self

    def __mul__(self, other) -> "FermionOperator":
        if isinstance(other, (int, float, complex, np.number)):
            return _fermion_from_canonical({k: v * other for k, v in self._terms.items()})
        other = _as_fermion(other)
        acc: dict = {}
        for ka, va in self._terms.items():
            for kb, vb in other._terms.items():
                for key, c in _normal_order(va * vb, ka + kb).items():
                    acc[key] = acc.get(key, 0) + c
        return _fermion_from_canonical(acc)

    def __rmul__(self, other) -> "FermionOperator":
        if isinstance(other, (int, float, complex, np.number)):
            return self * other
        return _as_fermion(other) * self

    def dagger(self) -> "FermionOperator":
        return FermionOperator(
            {tuple((s, sp, not dg) for s, sp, dg in reversed(k)): np.conj(v) for k, v in self._terms.items()}
        )

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return (self - self.dagger()).is_zero(atol)

    def is_zero(self, atol: float = 0.0) -> bool:
        return all(abs(v) <= atol for v in self._terms.values())

    def max_site(self) -> int:
        return max((s for k in self._terms for s, _, _ in k), default=-1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FermionOperator):
            return NotImplemented
        return (self - other).is_zero()

    def __repr__(self) -> str:
        if not self._terms:
            return "FermionOperator(0)"
        parts = []
        for k, v in self:
            word = " ".join(f"c{'+' if dg else ''}_{s}{'ud'[sp]}" for s, sp, dg in k) or "1"
            parts.append(f"({v:.6g}) {word}")
        return "FermionOperator(" + " + ".join(parts) + ")"


def _fermion_from_canonical(terms: dict) -> FermionOperator:
    op = FermionOperator.__new__(FermionOperator)
    op._terms = {k: v for k, v in terms.items() if v != 0}
    return op


def _as_fermion(x) -> FermionOperator:
    if isinstance(x, FermionOperator):
        return x
    if isinstance(x, (int, float, complex, np.number)):
        return FermionOperator.identity(x)
    raise TypeError(f"cannot combine FermionOperator with {type(x).__name__}")


# ---------------------------------------------------------------------------
# Pauli operators
# ---------------------------------------------------------------------------

_PAULI_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_BITS_PAULI = {v: k for k, v in _PAULI_BITS.items()}


@lru_cache(maxsize=None)
def _word_bits(word: str) -> tuple:
    x = z = 0
    for q, ch in enumerate(word):
        bx, bz = _PAULI_BITS[ch]
        x |= bx << q
        z |= bz << q
    return x, z


def _bits_word(x: int, z: int, n: int) -> str:
    return "".join(_BITS_PAULI[((x >> q) & 1, (z >> q) & 1)] for q in range(n))


def _popcount(v: int) -> int:
    return bin(v).count("1")


@lru_cache(maxsize=1 << 18)
def _mul_words(a: str, b: str) -> tuple:
    # word = i^{|x&z|} X^x Z^z, so Y = iXZ
    x1, z1 = _word_bits(a)
    x2, z2 = _word_bits(b)
    x3, z3 = x1 ^ x2, z1 ^ z2
    k = (_popcount(x1 & z1) + _popcount(x2 & z2) - _popcount(x3 & z3) + 2 * _popcount(z1 & x2)) % 4
    return (1, 1j, -1, -1j)[k], _bits_word(x3, z3, len(a))


def pauli_matrix(word: str) -> np.ndarray:
    """Dense matrix of a Pauli word in the little-endian basis."""
    n = len(word)
    x, z = _word_bits(word)
    dim = 1 << n
    b = np.arange(dim)
    zb = np.zeros(dim, dtype=np.int64)
    for q in range(n):
        if (z >> q) & 1:
            zb += (b >> q) & 1
    vals = (1j ** _popcount(x & z)) * (1 - 2 * (zb % 2))
    m = np.zeros((dim, dim), dtype=complex)
    m[b ^ x, b] = vals
    return m


class QubitOperator:
    """Sparse sum of Pauli words on ``n_qubits`` qubits.

    Character ``q`` of a word acts on qubit ``q``; dense matrices use the
    little-endian basis (qubit ``q`` is bit ``q`` of the basis index).
    """

    __slots__ = ("n_qubits", "_terms")

    def __init__(self, n_qubits: int, terms: Mapping | Iterable | None = None):
        if n_qubits < 0:
            raise ValueError("n_qubits must be nonnegative")
        self.n_qubits = int(n_qubits)
        acc: dict = {}
        items = terms.items() if isinstance(terms, Mapping) else (terms or [])
        for word, coeff in items:
            word = str(word).upper()
            if len(word) != self.n_qubits or any(ch not in _PAULI_BITS for ch in word):
                raise ValueError(f"bad Pauli word {word!r} for {self.n_qubits} qubits")
            acc[word] = acc.get(word, 0) + complex(coeff)
        self._terms = {k: v for k, v in acc.items() if v != 0}

    @classmethod
    def identity(cls, n_qubits: int, coeff: complex = 1.0) -> "QubitOperator":
        return cls(n_qubits, {"I" * n_qubits: coeff})

    @classmethod
    def zero(cls, n_qubits: int) -> "QubitOperator":
        return cls(n_qubits)

    @classmethod
    def single(cls, n_qubits: int, ops: Mapping[int, str], coeff: complex = 1.0) -> "QubitOperator":
        """Word with ``ops[q]`` on qubit ``q`` and identity elsewhere."""
        word = ["I"] * n_qubits
        for q, p in ops.items():
            word[q] = p
        return cls(n_qubits, {"".join(word): coeff})

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator:
        return iter(sorted(self._terms.items()))

    def coefficient(self, word: str) -> complex:
        return self._terms.get(word, 0j)

    def _check(self, other: "QubitOperator") -> None:
        if other.n_qubits != self.n_qubits:
            raise ValueError(f"qubit count mismatch: {self.n_qubits} vs {other.n_qubits}")

    def _coerce(self, x) -> "QubitOperator":
        if isinstance(x, QubitOperator):
            self._check(x)
            return x
        if isinstance(x, (int, float, complex, np.number)):
            return QubitOperator.identity(self.n_qubits, x)
        raise TypeError(f"cannot combine QubitOperator with {type(x).__name__}")

    def __add__(self, other) -> "QubitOperator":
        other = self._coerce(other)
        acc = dict(self._terms)
        for k, v in other._terms.items():
            acc[k] = acc.get(k, 0) + v
        return _qubit_from_canonical(self.n_qubits, acc)

    __radd__ = __add__

    def __neg__(self) -> "QubitOperator":
        return _qubit_from_canonical(self.n_qubits, {k: -v for k, v in self._terms.items()})

    def __sub__(self, other) -> "QubitOperator":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "QubitOperator":
        return self._coerce(other) - self

    def __mul__(self, other) -> "QubitOperator":
        if isinstance(other, (int, float, complex, np.number)):
            return _qubit_from_canonical(self.n_qubits, {k: v * other for k, v in self._terms.items()})
        other = self._coerce(other)
        acc: dict = {}
        for wa, ca in self._terms.items():
            for wb, cb in other._terms.items():
                ph, w = _mul_words(wa, wb)
                acc[w] = acc.get(w, 0) + ph * ca * cb
        return _qubit_from_canonical(self.n_qubits, acc)

    def __rmul__(self, other) -> "QubitOperator":
        if isinstance(other, (int, float, complex, np.number)):
            return self * other
        return self._coerce(other) * self

    __matmul__ = __mul__

    def dagger(self) -> "QubitOperator":
        return _qubit_from_canonical(self.n_qubits, {k: np.conj(v) for k, v in self._terms.items()})

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        # Pauli words are self-adjoint, so Hermitian <=> real coefficients
        return all(abs(v.imag) <= atol for v in self._terms.values())

    def hermitian_part(self) -> "QubitOperator":
        """(A + A^dag)/2; strips round-off imaginary parts from Hermitian sums."""
        return _qubit_from_canonical(self.n_qubits, {k: complex(v.real) for k, v in self._terms.items()})

    def is_zero(self, atol: float = 0.0) -> bool:
        return all(abs(v) <= atol for v in self._terms.values())

    def simplify(self, tol: float = 1e-13) -> "QubitOperator":
        """Drop terms below ``tol`` relative to the largest coefficient."""
        if not self._terms:
            return self
        cut = tol * max(abs(v) for v in self._terms.values())
        return _qubit_from_canonical(self.n_qubits, {k: v for k, v in self._terms.items() if abs(v) > cut})

    def identity_coefficient(self) -> complex:
        return self._terms.get("I" * self.n_qubits, 0j)

    def one_norm(self, include_identity: bool = True) -> float:
        ident = "I" * self.n_qubits
        return float(sum(abs(v) for k, v in self._terms.items() if include_identity or k != ident))

    def to_dense(self) -> np.ndarray:
        dim = 1 << self.n_qubits
        m = np.zeros((dim, dim), dtype=complex)
        b = np.arange(dim)
        for word, c in self._terms.items():
            x, z = _word_bits(word)
            zb = np.zeros(dim, dtype=np.int64)
            for q in range(self.n_qubits):
                if (z >> q) & 1:
                    zb += (b >> q) & 1
            m[b ^ x, b] += c * (1j ** _popcount(x & z)) * (1 - 2 * (zb % 2))
        return m

    def allclose(self, other: "QubitOperator", atol: float = 1e-12) -> bool:
        return (self - other).is_zero(atol)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QubitOperator):
            return NotImplemented
        return self.n_qubits == other.n_qubits and (self - other).is_zero()

    # text format -----------------------------------------------------
    def to_text(self) -> str:
        """Serialize as lines ``coeff_re coeff_im pauli_word``."""
        lines = [f"{c.real!r} {c.imag!r} {w}" for w, c in self]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, n_qubits: int | None = None) -> "QubitOperator":
        terms = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"expected 'coeff_re coeff_im word', got {raw!r}")
            terms.append((parts[2], complex(float(parts[0]), float(parts[1]))))
        if n_qubits is None:
            if not terms:
                raise ValueError("cannot infer qubit count from an empty operator")
            n_qubits = len(terms[0][0])
        return cls(n_qubits, terms)

    def __repr__(self) -> str:
        if not self._terms:
            return f"QubitOperator({self.n_qubits}, 0)"
        return f"QubitOperator({self.n_qubits}, " + " + ".join(f"({c:.6g}) {w}" for w, c in self) + ")"


def _qubit_from_canonical(n: int, terms: dict) -> QubitOperator:
    op = QubitOperator.__new__(QubitOperator)
    op.n_qubits = n
    op._terms = {k: v for k, v in terms.items() if v != 0}
    return op


# ---------------------------------------------------------------------------
# Models and mappings
# ---------------------------------------------------------------------------

def mode_index(site: int, spin, n_sites: int) -> int:
    """Qubit carrying mode (site, spin): up on 0..L-1, down on L..2L-1."""
    return int(site) + parse_spin(spin) * int(n_sites)


def build_hubbard(L: int, t: float, U: float, mu: float) -> FermionOperator:
    """Open-boundary Hubbard chain ``-t sum c+c - mu sum n + U sum n_up n_dn``."""
    if L < 1:
        raise ValueError("Hubbard chain needs at least one site")
    terms: dict = {}
    for i in range(L - 1):
        for s in (UP, DOWN):
            terms[((i, s, True), (i + 1, s, False))] = -t
            terms[((i + 1, s, True), (i, s, False))] = -t
    for i in range(L):
        terms[((i, UP, True), (i, UP, False), (i, DOWN, True), (i, DOWN, False))] = U
        for s in (UP, DOWN):
            terms[((i, s, True), (i, s, False))] = -mu
    return FermionOperator(terms)


def hopping_part(L: int, t: float) -> FermionOperator:
    return build_hubbard(L, t, 0.0, 0.0)


@lru_cache(maxsize=None)
def _jw_ladder(q: int, n_qubits: int, dagger: bool) -> QubitOperator:
    z = {p: "Z" for p in range(q)}
    x = QubitOperator.single(n_qubits, {**z, q: "X"}, 0.5)
    y = QubitOperator.single(n_qubits, {**z, q: "Y"}, -0.5j if dagger else 0.5j)
    return x + y


def jordan_wigner(op: FermionOperator, n_sites: int) -> QubitOperator:
    """Map a fermionic operator on ``n_sites`` sites to ``2*n_sites`` qubits."""
    if op.max_site() >= n_sites:
        raise IndexError(f"site {op.max_site()} out of range for {n_sites} sites")
    n = 2 * n_sites
    out = QubitOperator.zero(n)
    for factors, coeff in op:
        term = QubitOperator.identity(n, coeff)
        for site, spin, dagger in factors:
            term = term * _jw_ladder(mode_index(site, spin, n_sites), n, dagger)
        out = out + term
    return out


def hermitian_parts(op):
    """Return ``(A, B)`` Hermitian with ``op = (A + iB)/2``.

    ``A = op + op^dag`` and ``B = i(op^dag - op)``; works for fermionic and
    qubit operators alike.
    """
    dag = op.dagger()
    return op + dag, (dag - op) * 1j


def hermitian_split(ladder: FermionOperator) -> tuple:
    """Split a single ladder operator into ``(c+ + c, i(c+ - c))``."""
    terms = list(ladder)
    if len(terms) != 1 or len(terms[0][0]) != 1 or terms[0][1] != 1:
        raise ValueError("hermitian_split expects a single ladder operator c or c+")
    site, spin, _ = terms[0][0][0]
    c = FermionOperator.ladder(site, spin, False)
    return hermitian_parts(c)


def recombine(omega_plus, omega_minus, dagger: bool = False):
    """Inverse of the split: ``2c = O+ + iO-`` and ``2c+ = O+ - iO-``."""
    sign = -1j if dagger else 1j
    return (omega_plus + omega_minus * sign) * 0.5


# ---------------------------------------------------------------------------
# LCU decompositions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LcuDecomposition:
    """``source = scale * sum_l q_l U_l - shift * I`` with Pauli-word unitaries.

    The encoded operator ``sum_l q_l U_l`` is what a PREPARE/SELECT block
    encoding realizes, up to the subnormalization ``sum_l q_l``.
    """

    unitaries: tuple
    weights: np.ndarray
    scale: float
    shift: float
    source: QubitOperator = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) != len(self.unitaries) or len(w) == 0:
            raise ValueError("need one nonnegative weight per unitary")
        if np.any(w < 0):
            raise ValueError("LCU weights must be nonnegative")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_qubits(self) -> int:
        return self.source.n_qubits

    @property
    def n_terms(self) -> int:
        return len(self.unitaries)

    @property
    def n_ancilla(self) -> int:
        return max(1, math.ceil(math.log2(self.n_terms))) if self.n_terms > 1 else 1

    @property
    def subnormalization(self) -> float:
        return float(self.weights.sum())

    @property
    def effective_scale(self) -> float:
        """Scale relating the block-encoded operator to the source."""
        return self.scale * self.subnormalization

    def encoded(self) -> QubitOperator:
        out = QubitOperator.zero(self.n_qubits)
        for q, u in zip(self.weights, self.unitaries):
            out = out + u * float(q)
        return out

    def reconstruct(self) -> QubitOperator:
        return self.encoded() * self.scale - self.shift

    @cached_property
    def unitary_matrices(self) -> np.ndarray:
        mats = np.array([u.to_dense() for u in self.unitaries])
        mats.setflags(write=False)
        return mats

    @cached_property
    def prepare_amplitudes(self) -> np.ndarray:
        amp = np.sqrt(self.weights / self.subnormalization)
        amp.setflags(write=False)
        return amp


def _unit_word(n: int, word: str, phase: complex) -> QubitOperator:
    return QubitOperator(n, {word: phase})


def lcu_decompose(op: QubitOperator) -> LcuDecomposition:
    """Plain LCU of an arbitrary Pauli sum: phases go into the unitaries."""
    n = op.n_qubits
    items = [(w, c) for w, c in op]
    if not items:
        return _scalar_lcu(op, 0.0)
    norm = sum(abs(c) for _, c in items)
    unitaries = tuple(_unit_word(n, w, c / abs(c)) for w, c in items)
    weights = np.array([abs(c) / norm for _, c in items])
    return LcuDecomposition(unitaries, weights, norm, 0.0, op)


def _scalar_lcu(op: QubitOperator, shift: float) -> LcuDecomposition:
    n = op.n_qubits
    ident = "I" * n
    unitaries = (_unit_word(n, ident, 1.0), _unit_word(n, ident, -1.0))
    return LcuDecomposition(unitaries, np.array([0.5, 0.5]), 1.0, shift, op)


def normalize_and_shift(op: QubitOperator, tight: bool = False) -> LcuDecomposition:
    """Shifted, scaled LCU with ``(op + c)/s`` positive semidefinite, norm <= 1.

    The default bound uses the Pauli 1-norm ``L`` of the non-identity terms:
    ``c = L - h_I`` and ``s = 2L``, which makes the weights sum to exactly 1.
    ``tight=True`` uses the dense spectral range instead.
    """
    if not op.is_hermitian():
        raise ValueError("normalize_and_shift needs a Hermitian operator; split it first")
    op = op.hermitian_part()
    n = op.n_qubits
    ident = "I" * n
    h_id = op.identity_coefficient().real
    lam = op.one_norm(include_identity=False)
    if lam == 0.0:
        return _scalar_lcu(op, -h_id)
    if tight:
        ev = np.linalg.eigvalsh(op.to_dense())
        shift = -float(ev[0])
        scale = float(ev[-1] - ev[0]) or 1.0
    else:
        shift = lam - h_id
        scale = 2.0 * lam
    items = [(w, c.real) for w, c in op if w != ident]
    items.append((ident, h_id + shift))
    items = [(w, c) for w, c in items if c != 0]
    unitaries = tuple(_unit_word(n, w, np.sign(c)) for w, c in items)
    weights = np.array([abs(c) / scale for _, c in items])
    return LcuDecomposition(unitaries, weights, scale, shift, op)
