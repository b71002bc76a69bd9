"""Dense statevector simulation of the counting registers.

Registers, in qubit order: ``system``, ``e`` (reference energy E),
``e_prime`` (comparison energy E'), ``ancilla`` (LCU) and ``pointer``.
Basis indices are little-endian.

A register that sits in a definite basis state may be stored as a classical
label instead of a tensor axis; E is kept that way by default since it is
written once per experiment.  Any operation touching a classical register
promotes it to a dense axis first, and QPE demotes its target again when the
readout is deterministic, so callers never see the difference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import QubitOperator, pauli_matrix

REGISTERS = ("system", "e", "e_prime", "ancilla", "pointer")
READOUTS = ("textbook", "rounded")


@dataclass(frozen=True)
class RegisterLayout:
    n_system: int
    d: int = 8
    n_ancilla: int = 0

    def __post_init__(self):
        if self.n_system < 1 or self.d < 1 or self.n_ancilla < 0:
            raise ValueError("need n_system >= 1, d >= 1, n_ancilla >= 0")

    def width(self, name: str) -> int:
        return {"system": self.n_system, "e": self.d, "e_prime": self.d,
                "ancilla": self.n_ancilla, "pointer": 1}[name]

    def offset(self, name: str) -> int:
        return sum(self.width(r) for r in REGISTERS[: REGISTERS.index(name)])

    def qubits(self, name: str) -> range:
        o = self.offset(name)
        return range(o, o + self.width(name))

    @property
    def total_qubits(self) -> int:
        return self.n_system + 2 * self.d + self.n_ancilla + 1

    @property
    def pointer(self) -> int:
        return self.total_qubits - 1

    def register_of(self, qubit: int) -> tuple:
        for name in REGISTERS:
            r = self.qubits(name)
            if qubit in r:
                return name, qubit - r.start
        raise IndexError(f"qubit {qubit} outside layout of {self.total_qubits} qubits")


class RandomStream:
    """Seeded uniform stream; ``counter`` counts the draws made so far."""

    def __init__(self, seed: int, key: tuple = ()):
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        self.counter = 0
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=self.key)))

    def random(self, size: int | None = None):
        self.counter += 1 if size is None else int(size)
        return self._gen.random(size)

    def spawn(self, *key: int) -> "RandomStream":
        """Independent child stream identified by ``key``."""
        return RandomStream(self.seed, self.key + tuple(key))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, key={self.key}, counter={self.counter})"


class StateVector:
    """Normalized pure state over a :class:`RegisterLayout`.

    Instances are treated as immutable; every operation returns a new state.
    """

    __slots__ = ("layout", "_amps", "_live", "_labels")

    def __init__(self, layout: RegisterLayout, amps: np.ndarray, live: tuple, labels: dict):
        self.layout = layout
        self._amps = amps
        self._live = tuple(r for r in REGISTERS if r in live and layout.width(r) > 0)
        self._labels = dict(labels)

    # construction ----------------------------------------------------
    @classmethod
    def from_system(cls, layout: RegisterLayout, psi: np.ndarray, classical=("e",),
                    labels: dict | None = None) -> "StateVector":
        """System register holds ``psi``; every other register starts at 0.

        Registers named in ``classical`` are stored as basis labels
        (``labels`` can preset them, e.g. the reference energy readout).
        """
        psi = np.asarray(psi, dtype=complex)
        if psi.shape != (1 << layout.n_system,):
            raise ValueError("system vector has the wrong dimension")
        nrm = np.linalg.norm(psi)
        if abs(nrm - 1) > 1e-10:
            raise ValueError("system vector must be normalized")
        labels = dict(labels or {})
        for name in labels:
            if name not in classical:
                raise ValueError(f"label given for quantum register {name!r}")
        labels = {name: int(labels.get(name, 0)) for name in classical if layout.width(name) > 0}
        live = tuple(r for r in REGISTERS if r not in labels)
        shape = [1 << layout.width(r) for r in reversed(live) if layout.width(r) > 0]
        t = np.zeros(shape, dtype=complex)
        t[(0,) * (len(shape) - 1)] = psi
        return cls(layout, t.reshape(-1), live, labels)

    @classmethod
    def from_amplitudes(cls, layout: RegisterLayout, amps: np.ndarray) -> "StateVector":
        amps = np.asarray(amps, dtype=complex).reshape(-1)
        if amps.shape != (1 << layout.total_qubits,):
            raise ValueError("amplitude vector has the wrong length")
        if abs(np.vdot(amps, amps).real - 1) > 1e-10:
            raise ValueError("amplitudes must be normalized")
        return cls(layout, amps.copy(), REGISTERS, {})

    # views -------------------------------------------------------------
    def _shape(self, live=None) -> tuple:
        live = self._live if live is None else live
        return tuple(1 << self.layout.width(r) for r in reversed(live))

    def tensor(self) -> np.ndarray:
        return self._amps.reshape(self._shape())

    def axis(self, name: str) -> int:
        return len(self._live) - 1 - self._live.index(name)

    def is_classical(self, name: str) -> bool:
        return name in self._labels

    def label(self, name: str) -> int:
        return self._labels[name]

    def _new(self, amps, live=None, labels=None) -> "StateVector":
        return StateVector(self.layout, amps.reshape(-1), self._live if live is None else live,
                           self._labels if labels is None else labels)

    def promote(self, name: str) -> "StateVector":
        if name not in self._labels:
            return self
        labels = dict(self._labels)
        value = labels.pop(name)
        live = tuple(r for r in REGISTERS if r in self._live or r == name)
        new = np.zeros(self._shape(live), dtype=complex)
        ax = len(live) - 1 - live.index(name)
        idx = [slice(None)] * new.ndim
        idx[ax] = value
        new[tuple(idx)] = self.tensor()
        return StateVector(self.layout, new.reshape(-1), live, labels)

    def demote(self, name: str, atol: float = 1e-24) -> "StateVector":
        """Store ``name`` as a label if it is in a definite basis state."""
        if name in self._labels or name == "system" or self.layout.width(name) == 0:
            return self
        t = self.tensor()
        ax = self.axis(name)
        weight = np.sum(np.abs(np.moveaxis(t, ax, 0).reshape(t.shape[ax], -1)) ** 2, axis=1)
        nz = np.flatnonzero(weight > atol)
        if len(nz) != 1 or weight.sum() - weight[nz[0]] > atol:
            return self
        value = int(nz[0])
        live = tuple(r for r in self._live if r != name)
        labels = {**self._labels, name: value}
        return StateVector(self.layout, np.take(t, value, axis=ax).reshape(-1).copy(), live, labels)

    @property
    def amplitudes(self) -> np.ndarray:
        """Full 2^n amplitude vector (materializes classical registers)."""
        s = self
        for name in list(self._labels):
            s = s.promote(name)
        return s._amps.copy()

    @property
    def norm_sq(self) -> float:
        return float(np.vdot(self._amps, self._amps).real)

    def system_fidelity(self, psi: np.ndarray) -> float:
        """``<psi| rho_system |psi>`` with every other register traced out."""
        m = self._amps.reshape(-1, 1 << self.layout.n_system)
        return float(np.sum(np.abs(m @ np.conj(psi)) ** 2))

    def system_vector(self) -> np.ndarray:
        """System amplitudes when every other register is in a basis state."""
        s = self
        for name in REGISTERS[1:]:
            s = s.demote(name)
        if any(r != "system" for r in s._live):
            raise ValueError("system register is entangled with other registers")
        return s._amps.copy()

    def register_probabilities(self, name: str) -> np.ndarray:
        if self.layout.width(name) == 0:
            return np.ones(1)
        if name in self._labels:
            p = np.zeros(1 << self.layout.width(name))
            p[self._labels[name]] = 1.0
            return p
        t = self.tensor()
        ax = self.axis(name)
        return np.sum(np.abs(np.moveaxis(t, ax, 0).reshape(t.shape[ax], -1)) ** 2, axis=1)

    def register_is_zero(self, name: str, atol: float = 1e-12) -> bool:
        return 1.0 - self.register_probabilities(name)[0] <= atol

    def dump(self, atol: float = 1e-14) -> str:
        """Text listing ``bitstring re im`` (bitstring most significant qubit first)."""
        amps = self.amplitudes
        n = self.layout.total_qubits
        lines = [f"{format(i, f'0{n}b')} {float(a.real)!r} {float(a.imag)!r}" for i, a in enumerate(amps) if abs(a) > atol]
        return "\n".join(lines) + "\n"

    def __repr__(self) -> str:
        return f"StateVector(live={self._live}, labels={self._labels}, dim={self._amps.size})"


# ---------------------------------------------------------------------------
# Gates
# ---------------------------------------------------------------------------

def _as_matrix(op, k: int) -> np.ndarray:
    if isinstance(op, str):
        return pauli_matrix(op)
    if isinstance(op, QubitOperator):
        return op.to_dense()
    return np.asarray(op, dtype=complex)


def apply_matrix(state: StateVector, op, targets) -> StateVector:
    """Apply a unitary (dense matrix, Pauli word or QubitOperator) to ``targets``.

    Bit ``j`` of the operator's index acts on ``targets[j]``.
    """
    targets = [int(q) for q in np.atleast_1d(targets)]
    k = len(targets)
    if len(set(targets)) != k:
        raise ValueError("duplicate target qubits")
    U = _as_matrix(op, k)
    if U.shape != (1 << k, 1 << k):
        raise ValueError("operator size does not match the number of targets")
    if np.abs(U.conj().T @ U - np.eye(1 << k)).max() > 1e-10:
        raise ValueError("operator is not unitary")
    lay = state.layout
    for q in targets:
        state = state.promote(lay.register_of(q)[0])
    # map global qubits to positions among the live qubits
    pos, base = {}, 0
    for r in state._live:
        for j in range(lay.width(r)):
            pos[lay.offset(r) + j] = base + j
        base += lay.width(r)
    n = base
    live_t = [pos[q] for q in targets]
    psi = state._amps.reshape([2] * n)
    axes = [n - 1 - q for q in reversed(live_t)]
    out = np.tensordot(U.reshape([2] * (2 * k)), psi, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    return state._new(np.ascontiguousarray(out))


def _wht(a: np.ndarray, axis: int) -> np.ndarray:
    """Normalized Walsh-Hadamard transform along ``axis`` (length 2^d)."""
    a = np.moveaxis(a, axis, -1)
    shape = a.shape
    N = shape[-1]
    out = a.reshape(-1, N).copy()
    h = 1
    while h < N:
        out = out.reshape(-1, N // (2 * h), 2, h)
        x, y = out[:, :, 0, :].copy(), out[:, :, 1, :]
        out[:, :, 0, :] = x + y
        out[:, :, 1, :] = x - y
        h *= 2
    out = out.reshape(shape) / np.sqrt(N)
    return np.moveaxis(out, -1, axis)


class PhaseEstimator:
    """Semantic QPE for a fixed Hermitian ``h0`` whose eigenvalues are phases.

    For each eigenvector ``|k>`` with phase ``phi_k`` the target register
    ``|0>`` is mapped to ``sum_j c_j(phi_k) |j>`` where
    ``c_j = N^-1 sum_x exp(2 pi i x (phi_k - j/N))`` (textbook circuit,
    sinc^2 leakage).  ``readout="rounded"`` snaps every phase to the nearest
    grid point first, which models an ideal d-bit energy measurement.
    The map is a unitary on the full register, so the exact inverse exists.
    """

    def __init__(self, h0: np.ndarray, d: int, readout: str = "textbook"):
        if readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")
        h0 = np.asarray(h0, dtype=complex)
        if np.abs(h0 - h0.conj().T).max() > 1e-10:
            raise ValueError("QPE Hamiltonian must be Hermitian")
        phases, vecs = np.linalg.eigh(h0)
        if phases[0] < -1e-12 or phases[-1] >= 1.0:
            raise ValueError("QPE Hamiltonian must be scaled so all eigenphases lie in [0, 1)")
        self.d = int(d)
        self.readout = readout
        N = 1 << self.d
        phases = np.clip(phases, 0.0, None)
        if readout == "rounded":
            phases = (np.round(phases * N) % N) / N
        self.phases = phases
        self.vectors = vecs
        x = np.arange(N)[:, None]
        self._diag = np.exp(2j * np.pi * x * phases[None, :])

    def readout_distribution(self, k: int) -> np.ndarray:
        """Probability of each register value for eigenvector ``k``."""
        N = 1 << self.d
        a = np.zeros((N, 1), dtype=complex)
        a[0] = 1.0
        a = _wht(a, 0) * self._diag[:, k:k + 1]
        return np.abs(np.fft.fft(a, axis=0)[:, 0] / np.sqrt(N)) ** 2

    def apply(self, state: StateVector, target: str = "e_prime", inverse: bool = False) -> StateVector:
        if target not in ("e", "e_prime"):
            raise ValueError("QPE target must be 'e' or 'e_prime'")
        if state.layout.d != self.d:
            raise ValueError("layout d differs from the estimator's d")
        state = state.promote(target)
        t = state.tensor()
        ax_r, ax_s = state.axis(target), state.axis("system")
        t = np.moveaxis(t, (ax_r, ax_s), (-2, -1))
        N = 1 << self.d
        x = t @ self.vectors.conj()
        if not inverse:
            x = _wht(x, -2) * self._diag
            x = np.fft.fft(x, axis=-2) / np.sqrt(N)
        else:
            x = np.fft.ifft(x, axis=-2) * np.sqrt(N)
            x = _wht(x * self._diag.conj(), -2)
        t = x @ self.vectors.T
        t = np.moveaxis(t, (-2, -1), (ax_r, ax_s))
        return state._new(np.ascontiguousarray(t)).demote(target)


def qpe(state: StateVector, H0: np.ndarray, d: int | None = None, target: str = "e_prime",
        readout: str = "textbook", inverse: bool = False) -> StateVector:
    """Phase estimation of the system register into ``target``."""
    d = state.layout.d if d is None else d
    return PhaseEstimator(H0, d, readout).apply(state, target, inverse)


def inverse_qpe(state: StateVector, H0: np.ndarray, d: int | None = None, target: str = "e_prime",
                readout: str = "textbook") -> StateVector:
    return qpe(state, H0, d, target, readout, inverse=True)


def _householder(amps: np.ndarray, dim: int) -> np.ndarray:
    """Real reflection mapping |0> to ``amps`` (padded to ``dim``)."""
    target = np.zeros(dim)
    target[: len(amps)] = amps
    v = target.copy()
    v[0] -= 1.0
    nv = np.dot(v, v)
    if nv < 1e-30:
        return np.eye(dim)
    return np.eye(dim) - 2.0 * np.outer(v, v) / nv


def block_encode(state: StateVector, dec, adjoint: bool = False) -> StateVector:
    """Apply ``W = PREP^dag SELECT PREP`` (or ``W^dag``) on system and ancilla.

    ``<0|W|0> = sum_l q_l U_l / sum_l q_l``; PREP is a real Householder
    reflection, hence self-inverse.
    """
    lay = state.layout
    if dec.n_qubits != lay.n_system:
        raise ValueError("decomposition acts on a different number of qubits")
    if dec.n_ancilla > lay.n_ancilla:
        raise ValueError(f"layout has {lay.n_ancilla} ancillas, decomposition needs {dec.n_ancilla}")
    state = state.promote("ancilla")
    A = 1 << lay.n_ancilla
    prep = _householder(dec.prepare_amplitudes, A)
    mats = dec.unitary_matrices
    if adjoint:
        mats = np.conj(np.swapaxes(mats, 1, 2))
    t = state.tensor()
    ax_a, ax_s = state.axis("ancilla"), state.axis("system")
    t = np.moveaxis(t, (ax_a, ax_s), (-2, -1))
    t = np.einsum("ab,...bs->...as", prep, t)
    tau = len(mats)
    sel = t.copy()
    sel[..., :tau, :] = np.einsum("lts,...ls->...lt", mats, t[..., :tau, :])
    t = np.einsum("ab,...bs->...as", prep, sel)
    t = np.moveaxis(t, (-2, -1), (ax_a, ax_s))
    return state._new(np.ascontiguousarray(t))


def cnot_compare(state: StateVector, d_match: int | None = None, watch_ancilla: bool = False) -> StateVector:
    """XOR a mismatch flag into the pointer qubit.

    The flag is 1 when the top ``d_match`` bits of E and E' differ (bitwise
    XOR reduced by OR), or, with ``watch_ancilla``, when the ancilla register
    is not all-zero.  Applying it twice is the identity.
    """
    lay = state.layout
    d = lay.d
    d_match = d if d_match is None else int(d_match)
    if not 0 <= d_match <= d:
        raise ValueError(f"d_match must lie in [0, {d}]")
    state = state.promote("pointer")
    t = state.tensor()
    ax_p = state.axis("pointer")
    rest = [r for r in state._live if r != "pointer"]
    shape_rest = [1] * len(rest)

    def values(name):
        if state.is_classical(name):
            return np.array(state.label(name))
        v = np.arange(1 << lay.width(name))
        sh = list(shape_rest)
        sh[len(rest) - 1 - rest.index(name)] = len(v)
        return v.reshape(sh)

    shift = d - d_match
    mask = ((values("e") ^ values("e_prime")) >> shift) != 0
    if watch_ancilla and lay.n_ancilla > 0:
        mask = mask | (values("ancilla") != 0)
    t0 = np.take(t, 0, axis=ax_p)
    t1 = np.take(t, 1, axis=ax_p)
    mask = np.broadcast_to(mask, t0.shape)
    new = np.stack([np.where(mask, t1, t0), np.where(mask, t0, t1)], axis=ax_p)
    return state._new(new)


def _qubit_split(state: StateVector, qubit: int) -> tuple:
    lay = state.layout
    name, off = lay.register_of(qubit)
    state = state.promote(name)
    t = state.tensor()
    ax = state.axis(name)
    vals = np.arange(t.shape[ax])
    bit = ((vals >> off) & 1).astype(bool)
    return state, ax, bit


def probability_one(state: StateVector, qubit: int) -> float:
    state, ax, bit = _qubit_split(state, qubit)
    t = state.tensor()
    return float(np.sum(np.abs(np.compress(bit, t, axis=ax)) ** 2))


def project(state: StateVector, qubit: int, outcome: int) -> tuple:
    """Collapse ``qubit`` onto ``outcome``; returns ``(probability, state)``."""
    state, ax, bit = _qubit_split(state, qubit)
    t = state.tensor().copy()
    keep = bit if outcome else ~bit
    idx = [slice(None)] * t.ndim
    idx[ax] = ~keep
    t[tuple(idx)] = 0.0
    p = float(np.vdot(t, t).real)
    if p <= 0.0:
        raise ValueError(f"outcome {outcome} has zero probability")
    return p, state._new(t / np.sqrt(p))


def measure(state: StateVector, qubit: int, rng: RandomStream) -> tuple:
    """Born-rule measurement of one qubit; returns ``(bit, collapsed state)``."""
    p1 = probability_one(state, qubit)
    bit = int(rng.random() < p1)
    _, post = project(state, qubit, bit)
    name = state.layout.register_of(qubit)[0]
    return bit, post.demote(name)


def measure_register(state: StateVector, name: str, rng: RandomStream) -> tuple:
    """Measure every qubit of a register, lowest first; returns ``(value, state)``."""
    value = 0
    for j, q in enumerate(state.layout.qubits(name)):
        bit, state = measure(state, q, rng)
        value |= bit << j
    return value, state


def project_register_zero(state: StateVector, name: str, zero: bool) -> tuple:
    """Project register ``name`` onto (``zero``) or off (not ``zero``) the all-0 value."""
    state = state.promote(name)
    t = state.tensor().copy()
    ax = state.axis(name)
    idx = [slice(None)] * t.ndim
    if zero:
        idx[ax] = slice(1, None)
    else:
        idx[ax] = 0
    t[tuple(idx)] = 0.0
    p = float(np.vdot(t, t).real)
    if p <= 0.0:
        raise ValueError("projection has zero probability")
    return p, state._new(t / np.sqrt(p))


def apply_lcu(state: StateVector, dec, rng: RandomStream) -> tuple:
    """Block-encode ``dec`` and measure whether the ancilla register is all-zero.

    On success the system holds ``encoded * psi`` renormalized.  On failure the
    state is the renormalized orthogonal branch (ancilla not zero) and the
    caller is responsible for recovery.  The measured event is binary (an OR
    of the ancilla bits), so a failed branch keeps its coherence.
    """
    if not state.register_is_zero("ancilla"):
        raise ValueError("ancilla register is not reset")
    state = block_encode(state, dec)
    p0 = state.register_probabilities("ancilla")[0]
    success = bool(rng.random() < p0)
    _, post = project_register_zero(state, "ancilla", success)
    return post.demote("ancilla"), success


def flip(state: StateVector, qubit: int) -> StateVector:
    return apply_matrix(state, "X", [qubit])


def xor_register(state: StateVector, source: str = "e", target: str = "e_prime") -> StateVector:
    """``target ^= source`` bitwise (a CNOT ladder)."""
    lay = state.layout
    if lay.width(source) != lay.width(target):
        raise ValueError("registers differ in width")
    if state.is_classical(source):
        value = state.label(source)
        if state.is_classical(target):
            return StateVector(lay, state._amps, state._live, {**state._labels, target: state.label(target) ^ value})
        t = state.tensor()
        ax = state.axis(target)
        perm = np.arange(t.shape[ax]) ^ value
        return state._new(np.ascontiguousarray(np.take(t, perm, axis=ax)))
    state = state.promote(target)
    t = state.tensor()
    ax_s, ax_t = state.axis(source), state.axis(target)
    t = np.moveaxis(t, (ax_s, ax_t), (0, 1))
    n = t.shape[0]
    src = np.arange(n)[:, None]
    tgt = np.arange(n)[None, :]
    t = t[src, tgt ^ src]
    t = np.moveaxis(t, (0, 1), (ax_s, ax_t))
    return state._new(np.ascontiguousarray(t))
