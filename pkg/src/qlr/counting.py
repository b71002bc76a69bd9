"""State-preserving quantum counting of Lanczos coefficients.

A counted quantity is ``M = <Psi|O|Psi>`` for a Hermitian polynomial
operator ``O``.  ``O`` is normalized and shifted into a PSD block encoding
``A = (O + c)/s``; one round applies the encoding, re-measures the energy
into E' and accepts when E' matches E and the ancillas are clean, which
happens with probability ``<Psi|A|Psi>^2``.  Rejections are undone by a
Marriott-Watrous style alternation so ``Psi`` never has to be re-prepared.

Lanczos bookkeeping uses the monic recursion ``u_{n+1} = (H - a_n) u_n -
beta_n^2 u_{n-1}`` with ``u_n = G_n Psi``:

* ``nu_n = ||u_n||^2 = <u_{n-1}|H|u_n>``
* ``alpha_n = <u_n|H|u_n> / nu_n``
* ``beta_n = sqrt(nu_n / nu_{n-1})``
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .operators import (
    FermionOperator,
    LcuDecomposition,
    QubitOperator,
    hermitian_parts,
    jordan_wigner,
    normalize_and_shift,
)
from .oracle import COUNTED, TridiagonalSpectrum, tridiagonal_eigs
from .statevector import (
    PhaseEstimator,
    RandomStream,
    RegisterLayout,
    StateVector,
    block_encode,
    cnot_compare,
    measure,
    project,
    xor_register,
)


class DegenerateReferenceError(ValueError):
    """The reference energy is not isolated at the chosen d-bit resolution."""


class RecoveryExhausted(RuntimeError):
    """Recovery used all ``k_max`` rounds without restoring the input state."""

    def __init__(self, state, rounds):
        super().__init__(f"state not recovered after {rounds} rounds")
        self.state = state
        self.rounds = rounds


# ---------------------------------------------------------------------------
# G_n operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GnOperator:
    """``G_n = p_n(H) Omega`` with the monic Lanczos polynomial ``p_n``."""

    n: int
    alpha: tuple
    beta_sq: tuple
    polynomial: np.polynomial.Polynomial
    hamiltonian: QubitOperator = field(repr=False)
    omega: QubitOperator = field(repr=False)
    operator: QubitOperator = field(repr=False)

    @cached_property
    def compiled(self) -> LcuDecomposition:
        from .operators import lcu_decompose
        return lcu_decompose(self.operator)

    def dense(self) -> np.ndarray:
        return self.operator.to_dense()


def lanczos_polynomials(alpha, beta_sq, n: int) -> list:
    """Monic polynomials ``p_0..p_n`` (numpy Polynomial, powers of H)."""
    P = np.polynomial.Polynomial
    x = P([0.0, 1.0])
    polys = [P([1.0])]
    for m in range(n):
        nxt = (x - alpha[m]) * polys[m]
        if m > 0:
            nxt = nxt - beta_sq[m - 1] * polys[m - 1]
        polys.append(nxt)
    return polys


def build_gn_series(n: int, spec: TridiagonalSpectrum, omega: QubitOperator,
                    hamiltonian: QubitOperator) -> list:
    """``[G_0, ..., G_n]`` by the three-term recursion on operators."""
    if len(spec.alpha) < n or len(spec.beta) < max(n - 1, 0):
        raise ValueError(f"G_{n} needs alpha_0..alpha_{n - 1} and beta_1..beta_{n - 1}")
    if omega.n_qubits != hamiltonian.n_qubits:
        raise ValueError("Omega and H act on different qubit counts")
    alpha = spec.alpha[:n]
    beta_sq = spec.beta_sq[: max(n - 1, 0)]
    polys = lanczos_polynomials(alpha, beta_sq, n)
    ops = [omega]
    for m in range(n):
        nxt = hamiltonian * ops[m] - ops[m] * alpha[m]
        if m > 0:
            nxt = nxt - ops[m - 1] * beta_sq[m - 1]
        ops.append(nxt.simplify(1e-14))
    return [
        GnOperator(m, alpha[:m], beta_sq[: max(m - 1, 0)], polys[m], hamiltonian, omega, ops[m])
        for m in range(n + 1)
    ]


def build_gn(n: int, spec: TridiagonalSpectrum, omega: QubitOperator, hamiltonian: QubitOperator) -> GnOperator:
    """Operator mapping ``Psi`` to the n-th (unnormalized) Lanczos vector."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return build_gn_series(n, spec, omega, hamiltonian)[-1]


def _hermitian(op: QubitOperator, what: str) -> QubitOperator:
    scale = max(1.0, op.one_norm())
    anti = max((abs(c.imag) for _, c in op), default=0.0)
    if anti > 1e-9 * scale:
        raise ValueError(f"{what} is not Hermitian (imaginary part {anti:.3g})")
    return op.hermitian_part().simplify(1e-14)


def alpha_operator(gn: GnOperator) -> QubitOperator:
    """``G_n^dag H G_n``."""
    return _hermitian(gn.operator.dagger() * gn.hamiltonian * gn.operator, "G_n^dag H G_n")


def beta_operator(g_prev: GnOperator, g_n: GnOperator) -> QubitOperator:
    """``G_{n-1}^dag H G_n``; Hermitian because both are real polynomials in H."""
    return _hermitian(g_prev.operator.dagger() * g_n.hamiltonian * g_n.operator, "G_{n-1}^dag H G_n")


def norm_operator(omega: QubitOperator) -> QubitOperator:
    return _hermitian(omega.dagger() * omega, "Omega^dag Omega")


# ---------------------------------------------------------------------------
# Experiment context: reference state, QPE model and gap condition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseMap:
    """Affine map energy -> phase placing ``energy`` exactly on the d-bit grid."""

    energy: float
    width: float
    index: int
    d: int

    def phase(self, x):
        return self.index / (1 << self.d) + (np.asarray(x) - self.energy) / self.width

    def scaled(self, h: np.ndarray) -> np.ndarray:
        eye = np.eye(h.shape[0])
        return (h - self.energy * eye) / self.width + self.index / (1 << self.d) * eye


def make_phase_map(eigenvalues: np.ndarray, energy: float, d: int) -> PhaseMap:
    N = 1 << d
    lo, hi = float(np.min(eigenvalues)), float(np.max(eigenvalues))
    spread = hi - lo
    if spread <= 0:
        return PhaseMap(energy, 1.0, 0, d)
    if N <= 2:
        raise ValueError("need at least 2 phase bits")
    width = spread * N / (N - 2)
    index = int(math.ceil((energy - lo) / (width / N) - 1e-12))
    return PhaseMap(energy, width, index, d)


class CountingContext:
    """Reference state ``psi`` (eigenvector of ``h0`` at ``energy``) plus QPE setup.

    The d-bit gap condition is asserted here: no other eigenvalue of ``h0``
    may read out inside the accepted window of E.
    """

    def __init__(self, psi: np.ndarray, h0: np.ndarray, d: int = 8, d_match: int | None = None,
                 k_max: int = 50, readout: str = "rounded", energy: float | None = None):
        psi = np.asarray(psi, dtype=complex)
        h0 = np.asarray(h0, dtype=complex)
        if abs(np.linalg.norm(psi) - 1) > 1e-10:
            raise ValueError("reference state must be normalized")
        if energy is None:
            energy = float(np.vdot(psi, h0 @ psi).real)
        resid = np.linalg.norm(h0 @ psi - energy * psi)
        if resid > 1e-8 * max(1.0, np.abs(h0).max()):
            raise ValueError(f"reference state is not an eigenvector of the QPE Hamiltonian (residual {resid:.3g})")
        self.psi = psi
        self.h0 = h0
        self.energy = float(energy)
        self.d = int(d)
        self.d_match = self.d if d_match is None else int(d_match)
        if not 1 <= self.d_match <= self.d:
            raise ValueError("d_match must lie in [1, d]")
        self.k_max = int(k_max)
        self.readout = readout
        self.n_system = int(round(math.log2(len(psi))))
        eig = np.linalg.eigvalsh(h0)
        self.phase_map = make_phase_map(eig, self.energy, self.d)
        self.estimator = PhaseEstimator(self.phase_map.scaled(h0), self.d, readout)
        N = 1 << self.d
        shift = self.d - self.d_match
        read = np.round(self.phase_map.phase(eig) * N).astype(int) % N
        in_window = (read >> shift) == (self.phase_map.index >> shift)
        if in_window.sum() != 1:
            others = eig[in_window]
            raise DegenerateReferenceError(
                f"{in_window.sum()} eigenvalues of the QPE Hamiltonian read out in the window of "
                f"E={self.energy:.6g} at d={self.d}, d_match={self.d_match}: {np.round(others, 6)}"
            )
        dist = np.abs(eig - self.energy)
        self.gap = float(np.min(dist[dist > 1e-9])) if np.any(dist > 1e-9) else math.inf
        self.window = float(self.phase_map.width / N * (1 << shift))

    def layout(self, n_ancilla: int) -> RegisterLayout:
        return RegisterLayout(self.n_system, self.d, n_ancilla)

    def start_state(self, layout: RegisterLayout) -> StateVector:
        """``|Psi>`` with E written by QPE; E', ancilla and pointer at 0."""
        s = StateVector.from_system(layout, self.psi, classical=("e", "e_prime", "ancilla", "pointer"))
        s = self.estimator.apply(s, "e")
        if not s.is_classical("e") or s.label("e") != self.phase_map.index:
            raise DegenerateReferenceError("reference energy readout is not deterministic")
        return s

    def reset_e_prime(self, state: StateVector) -> StateVector:
        """Return E' to 0 on a branch where it matches E."""
        if self.d_match == self.d:
            state = xor_register(state, "e", "e_prime")
        else:
            state = self.estimator.apply(state, "e_prime", inverse=True)
        return _compact(state)


def _compact(state: StateVector) -> StateVector:
    for name in ("e_prime", "ancilla", "pointer"):
        state = state.demote(name, atol=1e-26)
    return state


# ---------------------------------------------------------------------------
# Counting rounds
# ---------------------------------------------------------------------------

@dataclass
class CountingTally:
    accepts: int = 0
    rejects: int = 0
    aborted: int = 0
    recovery_steps: dict = field(default_factory=dict)

    @property
    def shots(self) -> int:
        return self.accepts + self.rejects

    def merge(self, other: "CountingTally") -> "CountingTally":
        hist = dict(self.recovery_steps)
        for k, v in other.recovery_steps.items():
            hist[k] = hist.get(k, 0) + v
        return CountingTally(self.accepts + other.accepts, self.rejects + other.rejects,
                             self.aborted + other.aborted, hist)

    def unrecovered_fraction(self, k: int) -> float:
        """Fraction of triggered recoveries not finished within ``k`` rounds."""
        if self.rejects == 0:
            return 0.0
        done = sum(v for r, v in self.recovery_steps.items() if r <= k)
        return (self.rejects - done) / self.rejects


class CountingCircuit:
    """One counting round for a fixed encoded operator, with cached branches.

    Every shot starts from the canonical state and ends in it again, so the
    outcome tree is a single chain: step 0 is the accept test, odd steps test
    the input projector after undoing the round, even steps re-apply the
    round.  Branch probabilities and post-measurement states are computed
    once, lazily, and shots are sampled from them.
    """

    def __init__(self, context: CountingContext, dec: LcuDecomposition):
        if dec.n_qubits != context.n_system:
            raise ValueError("operator and reference state act on different qubit counts")
        self.context = context
        self.dec = dec
        self.layout = context.layout(dec.n_ancilla)
        self.start = context.start_state(self.layout)
        self._steps = []
        self._fail = self.start

    # primitive legs --------------------------------------------------
    def forward(self, state: StateVector) -> StateVector:
        """W, QPE into E', comparator onto the pointer (not yet measured)."""
        ctx = self.context
        s = block_encode(state, self.dec)
        s = ctx.estimator.apply(s, "e_prime")
        return cnot_compare(s, ctx.d_match, watch_ancilla=True)

    def undo_forward(self, state: StateVector) -> StateVector:
        ctx = self.context
        s = cnot_compare(state, ctx.d_match, watch_ancilla=True)
        s = ctx.estimator.apply(s, "e_prime", inverse=True)
        return _compact(block_encode(s, self.dec, adjoint=True))

    def check_input(self, state: StateVector) -> StateVector:
        """QPE and comparator in the input frame (ancillas watched too)."""
        ctx = self.context
        s = ctx.estimator.apply(state, "e_prime")
        return cnot_compare(s, ctx.d_match, watch_ancilla=True)

    def undo_check(self, state: StateVector) -> StateVector:
        ctx = self.context
        s = cnot_compare(state, ctx.d_match, watch_ancilla=True)
        return _compact(ctx.estimator.apply(s, "e_prime", inverse=True))

    def _legs(self, step: int):
        if step % 2 == 0:
            return self.forward, self.undo_forward
        return self.check_input, self.undo_check

    # cached chain ------------------------------------------------------
    def _branch(self, step: int, state: StateVector):
        pre = self._legs(step)[0](state)
        ptr = self.layout.pointer
        p_ok = 1.0 - float(np.sum(np.abs(_pointer_slice(pre, 1)) ** 2))
        p_ok = min(max(p_ok, 0.0), 1.0)
        ok_state = fail_state = None
        if p_ok > 0:
            ok_state = self.context.reset_e_prime(project(pre, ptr, 0)[1])
        if p_ok < 1:
            fail_state = project(pre, ptr, 1)[1]
        return p_ok, ok_state, fail_state

    def step(self, k: int) -> tuple:
        """``(success probability, success state)`` of chain step ``k``."""
        while len(self._steps) <= k:
            m = len(self._steps)
            if self._fail is None:
                self._steps.append((1.0, None))
                continue
            state = self._fail
            if m > 0:
                # undo the previous leg (pointer read 1) before the next test
                state = self._legs(m - 1)[1](state)
            p_ok, ok_state, fail_state = self._branch(m, state)
            self._steps.append((p_ok, ok_state))
            self._fail = fail_state
        return self._steps[k]

    @property
    def acceptance_probability(self) -> float:
        return self.step(0)[0]

    def run(self, shots: int, rng: RandomStream, k_max: int | None = None) -> "CountingRun":
        """Sample ``shots`` rounds (recovering every rejection)."""
        if shots < 1:
            raise ValueError("shots must be >= 1")
        k_max = self.context.k_max if k_max is None else int(k_max)
        p0 = self.step(0)[0]
        accepted = rng.random(shots) < p0
        rounds = np.zeros(shots, dtype=np.int64)
        terminal = np.zeros(shots, dtype=np.int64)
        remaining = np.flatnonzero(~accepted)
        k = 1
        while remaining.size and k <= 2 * k_max:
            q = self.step(k)[0]
            ok = rng.random(remaining.size) < q
            rounds[remaining[ok]] = (k + 1) // 2
            terminal[remaining[ok]] = k
            remaining = remaining[~ok]
            k += 1
        aborted = np.zeros(shots, dtype=bool)
        aborted[remaining] = True
        rounds[remaining] = k_max
        terminal[remaining] = -1
        return CountingRun(self, accepted, rounds, aborted, terminal)


def _pointer_slice(state: StateVector, bit: int) -> np.ndarray:
    if state.is_classical("pointer"):
        return state.tensor() if state.label("pointer") == bit else np.zeros(1)
    return np.take(state.tensor(), bit, axis=state.axis("pointer"))


@dataclass
class CountingRun:
    circuit: CountingCircuit
    accepted: np.ndarray
    rounds: np.ndarray
    aborted: np.ndarray
    terminal: np.ndarray

    @property
    def tally(self) -> CountingTally:
        rej = ~self.accepted
        done = rej & ~self.aborted
        hist = {int(r): int(c) for r, c in zip(*np.unique(self.rounds[done], return_counts=True))}
        return CountingTally(int(self.accepted.sum()), int(rej.sum()), int(self.aborted.sum()), hist)

    @property
    def frequency(self) -> float:
        n = len(self.accepted) - int(self.aborted.sum())
        return float(self.accepted.sum()) / n if n else math.nan

    def terminal_states(self) -> dict:
        """Distinct end-of-shot states actually reached, keyed by chain step."""
        out = {}
        for k in np.unique(self.terminal[self.terminal >= 0]):
            out[int(k)] = self.circuit.step(int(k))[1]
        return out

    def min_fidelity(self) -> float:
        psi = self.circuit.context.psi
        states = self.terminal_states()
        return min((s.system_fidelity(psi) for s in states.values()), default=1.0)

    def final_state(self) -> StateVector | None:
        k = int(self.terminal[-1])
        return None if k < 0 else self.circuit.step(k)[1]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["shot", "accepted", "recovery_rounds", "aborted"])
        for i, (a, r, ab) in enumerate(zip(self.accepted, self.rounds, self.aborted)):
            w.writerow([i, int(a), int(r) if not a else 0, int(ab)])
        return buf.getvalue()


def counting_round(state: StateVector, circuit: CountingCircuit, rng: RandomStream) -> tuple:
    """One explicit round: returns ``(accept, state)``.

    On accept E' is reset and the system holds ``Psi``; on reject the state
    is left in the rejected branch (pointer = 1) for :func:`recover`.
    """
    if not (state.register_is_zero("ancilla") and state.register_is_zero("pointer")):
        raise ValueError("ancilla or pointer register is not reset")
    pre = circuit.forward(state)
    bit, post = measure(pre, circuit.layout.pointer, rng)
    if bit == 0:
        return True, circuit.context.reset_e_prime(post)
    return False, post


def recover(state: StateVector, circuit: CountingCircuit, rng: RandomStream, k_max: int | None = None) -> tuple:
    """Alternate input-check and accept-check until ``Psi`` is restored.

    Returns ``(state, rounds_used)``; raises :class:`RecoveryExhausted`
    after ``k_max`` rounds.
    """
    k_max = circuit.context.k_max if k_max is None else int(k_max)
    ptr = circuit.layout.pointer
    for r in range(1, k_max + 1):
        state = circuit.undo_forward(state)
        bit, state = measure(circuit.check_input(state), ptr, rng)
        if bit == 0:
            return circuit.context.reset_e_prime(state), r
        state = circuit.undo_check(state)
        bit, state = measure(circuit.forward(state), ptr, rng)
        if bit == 0:
            return circuit.context.reset_e_prime(state), r
    raise RecoveryExhausted(state, k_max)


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------

KINDS = ("expectation", "norm", "alpha", "beta")


@dataclass(frozen=True)
class CoefficientEstimate:
    """A decoded counting result.

    ``matrix_element = scale * sqrt(raw_frequency) - shift`` and ``value``
    follows from it and ``norm``: equal for expectations and norms,
    ``M / norm`` for alpha, ``sqrt(max(M, 0) / norm)`` for beta.
    """

    kind: str
    value: float
    raw_frequency: float
    stderr: float
    scale: float
    shift: float
    norm: float = 1.0
    norm_stderr: float = 0.0
    n: int = 0
    shots: int = 0
    accepts: int = 0
    aborted: int = 0
    matrix_stderr: float = 0.0
    min_fidelity: float = 1.0

    @property
    def matrix_element(self) -> float:
        return decode_matrix_element(self.raw_frequency, self.scale, self.shift)

    @property
    def abort_fraction(self) -> float:
        return self.aborted / self.shots if self.shots else 0.0


def decode_matrix_element(f: float, scale: float, shift: float) -> float:
    return scale * math.sqrt(max(f, 0.0)) - shift


def decode_value(kind: str, m: float, norm: float = 1.0) -> float:
    if kind in ("expectation", "norm"):
        return m
    if kind == "alpha":
        return m / norm
    if kind == "beta":
        return math.sqrt(max(m, 0.0) / norm)
    raise ValueError(f"unknown estimate kind {kind!r}")


def _value_stderr(kind: str, m: float, se_m: float, norm: float, se_norm: float) -> float:
    if kind in ("expectation", "norm"):
        return se_m
    if kind == "alpha":
        return math.sqrt(se_m ** 2 + (m / norm) ** 2 * se_norm ** 2) / abs(norm)
    b2 = max(m, 0.0) / norm
    se_b2 = math.sqrt(se_m ** 2 + b2 ** 2 * se_norm ** 2) / abs(norm)
    b = math.sqrt(b2)
    return min(se_b2 / (2 * b), math.sqrt(se_b2)) if b > 0 else math.sqrt(se_b2)


def estimate_from_run(kind: str, run: CountingRun, n: int = 0, norm: float = 1.0,
                      norm_stderr: float = 0.0) -> CoefficientEstimate:
    dec = run.circuit.dec
    f = run.frequency
    scale = dec.effective_scale
    n_eff = len(run.accepted) - int(run.aborted.sum())
    m = decode_matrix_element(f, scale, dec.shift) if n_eff else math.nan
    se_m = 0.5 * scale * math.sqrt(max(1.0 - f, 0.0) / n_eff) if n_eff else math.inf
    value = decode_value(kind, m, norm) if n_eff else math.nan
    se = _value_stderr(kind, m, se_m, norm, norm_stderr) if n_eff else math.inf
    tally = run.tally
    return CoefficientEstimate(kind, value, f, se, scale, dec.shift, norm, norm_stderr, n,
                               len(run.accepted), tally.accepts, tally.aborted, se_m, run.min_fidelity())


def count_expectation(op: QubitOperator, context: CountingContext, shots: int, rng: RandomStream,
                      kind: str = "expectation", n: int = 0, norm: float = 1.0, norm_stderr: float = 0.0):
    """Count ``<Psi|op|Psi>`` for Hermitian ``op``; returns ``(estimate, run)``."""
    dec = normalize_and_shift(op)
    run = CountingCircuit(context, dec).run(shots, rng)
    return estimate_from_run(kind, run, n, norm, norm_stderr), run


def count_norm(omega: QubitOperator, context: CountingContext, shots: int, rng: RandomStream):
    """``nu_0 = <Psi|Omega^dag Omega|Psi>``."""
    return count_expectation(norm_operator(omega), context, shots, rng, kind="norm")


def count_alpha(n: int, context: CountingContext, hamiltonian: QubitOperator, omega: QubitOperator,
                prefix: TridiagonalSpectrum, nu: tuple, shots: int, rng: RandomStream):
    """Estimate ``alpha_n`` from ``G_n^dag H G_n``; ``nu = (nu_n, stderr)``."""
    gn = build_gn(n, prefix, omega, hamiltonian)
    return count_expectation(alpha_operator(gn), context, shots, rng, "alpha", n, nu[0], nu[1])


def count_beta(n: int, context: CountingContext, hamiltonian: QubitOperator, omega: QubitOperator,
               prefix: TridiagonalSpectrum, nu_prev: tuple, shots: int, rng: RandomStream):
    """Estimate ``beta_n`` from ``G_{n-1}^dag H G_n``; its matrix element is ``nu_n``."""
    if n < 1:
        raise ValueError("beta is defined for n >= 1")
    series = build_gn_series(n, prefix, omega, hamiltonian)
    return count_expectation(beta_operator(series[n - 1], series[n]), context, shots, rng, "beta", n,
                             nu_prev[0], nu_prev[1])


@dataclass(frozen=True)
class OverlapEstimate:
    """Complex ``<Psi|X|Psi>`` assembled from the Hermitian parts of ``X``."""

    real: CoefficientEstimate
    imag: CoefficientEstimate | None

    @property
    def value(self) -> complex:
        if self.imag is None:
            return complex(self.real.value)
        return complex(self.real.value, self.imag.value) / 2

    @property
    def stderr(self) -> float:
        if self.imag is None:
            return self.real.stderr
        return 0.5 * math.hypot(self.real.stderr, self.imag.stderr)


def count_operator(op: QubitOperator, context: CountingContext, shots: int, rng: RandomStream) -> OverlapEstimate:
    """Count a possibly non-Hermitian ``op`` via ``op = (A + iB)/2``."""
    if op.is_hermitian():
        return OverlapEstimate(count_expectation(op, context, shots, rng)[0], None)
    a, b = hermitian_parts(op)
    ea = count_expectation(a.hermitian_part(), context, shots, rng.spawn(0))[0]
    eb = count_expectation(b.hermitian_part(), context, shots, rng.spawn(1))[0]
    return OverlapEstimate(ea, eb)


def count_overlap(context: CountingContext, n_sites: int, j: int, i: int, spins: tuple, shots: int,
                  rng: RandomStream) -> OverlapEstimate:
    """Numerator weight ``<Psi|c+_{j s'} c_{i s}|Psi>`` with ``spins = (s', s)``."""
    s_bar, s = spins
    x = FermionOperator.ladder(j, s_bar, True) * FermionOperator.ladder(i, s, False)
    return count_operator(jordan_wigner(x, n_sites), context, shots, rng)


# ---------------------------------------------------------------------------
# Full coefficient extraction
# ---------------------------------------------------------------------------

@dataclass
class CountedSpectrum:
    """Counted coefficients; ``spectrum`` carries fully propagated stderr.

    Each :class:`CoefficientEstimate` in ``estimates`` reports the error of
    its own run only (conditional on the prefix it was built from).
    """

    spectrum: TridiagonalSpectrum
    nu0: CoefficientEstimate
    estimates: list
    runs: list
    stop_reason: str

    @property
    def min_fidelity(self) -> float:
        return min([self.nu0.min_fidelity] + [e.min_fidelity for e in self.estimates])

    @property
    def aborted(self) -> int:
        return self.nu0.aborted + sum(e.aborted for e in self.estimates)

    @property
    def total_shots(self) -> int:
        return self.nu0.shots + sum(e.shots for e in self.estimates)


def _quadrature(alpha, beta_sq, nu0: float) -> tuple:
    """Gauss rule of the Jacobi matrix: nodes and weights summing to ``nu0``."""
    import scipy.linalg as sla

    if len(alpha) == 1:
        return np.array(alpha, dtype=float), np.array([nu0])
    off = np.sqrt(np.maximum(beta_sq, 0.0))
    x, v = sla.eigh_tridiagonal(np.asarray(alpha, dtype=float), off)
    return x, nu0 * v[0] ** 2


def _moment_polynomial(kind: str, n: int, alpha, beta_sq):
    """Polynomial ``P`` with ``E[M] = <Omega Psi| P(H) |Omega Psi>``."""
    polys = lanczos_polynomials(alpha, beta_sq, n)
    x = np.polynomial.Polynomial([0.0, 1.0])
    if kind == "alpha":
        return polys[n] * x * polys[n]
    return polys[n - 1] * x * polys[n]


def prefix_sensitivity(kind: str, n: int, alpha, beta_sq, quad: tuple, h: float = 1e-5) -> np.ndarray:
    """``d E[M] / d(alpha_0..alpha_{n-1}, beta_1^2..beta_{n-1}^2)``.

    ``M`` is quadratic in each single coefficient, so the central difference
    is exact up to rounding.  ``quad`` must integrate polynomials of the
    derivative's degree exactly.
    """
    nodes, weights = quad
    coeffs = np.concatenate([np.asarray(alpha[:n], float), np.asarray(beta_sq[: max(n - 1, 0)], float)])
    na = n
    out = np.zeros(len(coeffs))
    for m in range(len(coeffs)):
        vals = []
        for sgn in (1.0, -1.0):
            c = coeffs.copy()
            c[m] += sgn * h
            P = _moment_polynomial(kind, n, c[:na], c[na:])
            vals.append(float(np.dot(weights, P(nodes))))
        out[m] = (vals[0] - vals[1]) / (2 * h)
    return out


def propagate_errors(raw: list, n_alpha: int, n_beta: int) -> tuple:
    """Standard errors of counted alphas and betas with prefix errors included.

    ``raw`` is the measurement sequence ``[("norm", 0, M, se), ("alpha", 0,
    ...), ("beta", 1, ...), ...]`` in counting order.  Every raw matrix
    element is an independent measurement; each coefficient is a function of
    all earlier ones, both directly and through the prefix that shaped the
    counted operator.  Gradients are carried with respect to the raw values.
    """
    k = len(raw)
    se_raw = np.array([r[3] for r in raw], dtype=float)
    grad_nu, grad_a, grad_b2 = {}, {}, {}
    alpha, beta_sq, nu = [], [], {}
    a_se, b_se = [], []
    for i, (kind, n, m, _) in enumerate(raw):
        g = np.zeros(k)
        g[i] = 1.0
        if kind == "norm":
            nu[0], grad_nu[0] = m, g
            continue
        if kind == "alpha" and n >= len(alpha) + 1 or kind == "beta" and n > len(alpha):
            raise ValueError("raw measurements out of order")
        if n > 0:
            if kind == "alpha":
                quad = _quadrature(list(alpha[:n]) + [0.0], beta_sq[:n], nu[0])
            else:
                quad = _quadrature(alpha[:n], beta_sq[: n - 1], nu[0])
            sens = prefix_sensitivity(kind, n, alpha, beta_sq, quad)
            prefix_grads = [grad_a[j] for j in range(n)] + [grad_b2[j] for j in range(1, n)]
            for s_m, gm in zip(sens, prefix_grads):
                g = g + s_m * gm
        if kind == "alpha":
            a = m / nu[n]
            alpha.append(a)
            grad_a[n] = g / nu[n] - a / nu[n] * grad_nu[n]
            a_se.append(float(np.sqrt(np.sum((grad_a[n] * se_raw) ** 2))))
        else:
            nu[n], grad_nu[n] = m, g
            b2 = m / nu[n - 1]
            beta_sq.append(b2)
            grad_b2[n] = g / nu[n - 1] - b2 / nu[n - 1] * grad_nu[n - 1]
            se_b2 = float(np.sqrt(np.sum((grad_b2[n] * se_raw) ** 2)))
            b = math.sqrt(max(b2, 0.0))
            b_se.append(min(se_b2 / (2 * b), math.sqrt(se_b2)) if b > 0 else math.sqrt(se_b2))
    return tuple(a_se[:n_alpha]), tuple(b_se[:n_beta])


def count_spectrum(context: CountingContext, hamiltonian: QubitOperator, omega: QubitOperator, depth: int,
                   shots: int, rng: RandomStream, beta_tol: float = 1e-6, energy_tol: float = 0.0,
                   significance: float = 0.0) -> CountedSpectrum:
    """Count ``alpha_0..alpha_{N-1}`` and ``beta_1..beta_{N-1}`` (at most ``depth`` levels).

    Stops early when beta_n drops below ``beta_tol``, when beta_n^2 is not
    significantly positive (``nu_n <= significance * stderr``; with the
    default 0 only a nonpositive estimate stops), or when the lowest
    tridiagonal eigenvalue moves by less than ``energy_tol``.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    nu0, run0 = count_norm(omega, context, shots, rng.spawn(0))
    runs = [run0]
    if not nu0.value > 0:
        raise ValueError("Omega annihilates the reference state (counted norm <= 0)")
    raw = [("norm", 0, nu0.value, nu0.stderr)]
    nus = [(nu0.value, nu0.stderr)]
    alphas, betas, estimates = [], [], []
    reason = "depth"
    prev_e0 = None
    for n in range(depth):
        prefix = TridiagonalSpectrum(tuple(alphas), tuple(betas[: max(n - 1, 0)]))
        ea, run = count_alpha(n, context, hamiltonian, omega, prefix, nus[n], shots, rng.spawn(1, n))
        estimates.append(ea)
        runs.append(run)
        raw.append(("alpha", n, ea.matrix_element, ea.matrix_stderr))
        alphas.append(ea.value)
        if energy_tol > 0:
            e0 = tridiagonal_eigs(TridiagonalSpectrum(tuple(alphas), tuple(betas)))[1].energy
            if prev_e0 is not None and abs(e0 - prev_e0) < energy_tol:
                reason = "energy"
                break
            prev_e0 = e0
        if n == depth - 1:
            break
        prefix = TridiagonalSpectrum(tuple(alphas), tuple(betas))
        eb, run = count_beta(n + 1, context, hamiltonian, omega, prefix, nus[n], shots, rng.spawn(2, n + 1))
        estimates.append(eb)
        runs.append(run)
        nu_next = eb.matrix_element
        if eb.value < beta_tol or nu_next <= significance * eb.matrix_stderr:
            reason = "beta"
            break
        raw.append(("beta", n + 1, nu_next, eb.matrix_stderr))
        betas.append(eb.value)
        nus.append((nu_next, eb.matrix_stderr))
    a_se, b_se = propagate_errors(raw, len(alphas), len(betas))
    spec = TridiagonalSpectrum(
        tuple(alphas), tuple(betas), (COUNTED,) * len(alphas), (COUNTED,) * len(betas), a_se, b_se
    )
    return CountedSpectrum(spec, nu0, estimates, runs, reason)


# ---------------------------------------------------------------------------
# LCU application with recovery (repeat until success)
# ---------------------------------------------------------------------------

@dataclass
class LcuApplication:
    state: StateVector
    attempts: int
    steps: int
    success_probability: float


def apply_with_recovery(context: CountingContext, dec: LcuDecomposition, rng: RandomStream,
                        max_steps: int = 100000) -> LcuApplication:
    """Apply the block-encoded ``dec`` to ``context.psi`` until the ancillas read 0.

    After a failed attempt the same alternation as in counting is used:
    undo W and test whether the input state is back (then retry), otherwise
    re-apply W and test the ancillas again.
    """
    layout = context.layout(dec.n_ancilla)
    start = context.start_state(layout)
    ptr = layout.pointer

    def fwd(s):
        return cnot_compare(block_encode(s, dec), 0, watch_ancilla=True)

    def undo_fwd(s):
        return _compact(block_encode(cnot_compare(s, 0, watch_ancilla=True), dec, adjoint=True))

    def chk(s):
        return cnot_compare(context.estimator.apply(s, "e_prime"), context.d_match, watch_ancilla=True)

    def undo_chk(s):
        s = cnot_compare(s, context.d_match, watch_ancilla=True)
        return _compact(context.estimator.apply(s, "e_prime", inverse=True))

    cache = {}

    def branch(k, state):
        if k not in cache:
            pre = (fwd if k % 2 == 0 else chk)(state)
            p_ok = min(max(1.0 - float(np.sum(np.abs(_pointer_slice(pre, 1)) ** 2)), 0.0), 1.0)
            ok = project(pre, ptr, 0)[1] if p_ok > 0 else None
            bad = project(pre, ptr, 1)[1] if p_ok < 1 else None
            if ok is not None:
                ok = _compact(ok) if k % 2 == 0 else context.reset_e_prime(ok)
            if bad is not None:
                bad = undo_fwd(bad) if k % 2 == 0 else undo_chk(bad)
            cache[k] = (p_ok, ok, bad)
        return cache[k]

    attempts, steps, k, state = 1, 0, 0, start
    p_first = branch(0, start)[0]
    while steps < max_steps:
        p_ok, ok, bad = branch(k, state)
        steps += 1
        if rng.random() < p_ok:
            if k % 2 == 0:
                return LcuApplication(ok, attempts, steps, p_first)
            attempts += 1
            k, state = 0, start
            continue
        k, state = k + 1, bad
    raise RecoveryExhausted(state, steps)
