"""Statevector engine: registers, gates, QPE, block encodings, measurement."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qlr.operators import QubitOperator, lcu_decompose, normalize_and_shift
from qlr.statevector import (
    PhaseEstimator,
    RandomStream,
    RegisterLayout,
    StateVector,
    apply_lcu,
    apply_matrix,
    block_encode,
    cnot_compare,
    inverse_qpe,
    measure,
    measure_register,
    probability_one,
    project,
    qpe,
    xor_register,
)

seeds = st.integers(0, 2**32 - 1)


def random_state(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return v / np.linalg.norm(v)


def random_unitary(k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(1 << k, 1 << k)) + 1j * rng.normal(size=(1 << k, 1 << k)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def test_layout_offsets():
    lay = RegisterLayout(4, d=3, n_ancilla=2)
    assert lay.total_qubits == 4 + 3 + 3 + 2 + 1
    assert list(lay.qubits("e")) == [4, 5, 6]
    assert list(lay.qubits("e_prime")) == [7, 8, 9]
    assert lay.pointer == 12
    assert lay.register_of(8) == ("e_prime", 1)
    with pytest.raises(ValueError):
        RegisterLayout(0)


def test_from_system_places_psi_with_registers_zero():
    lay = RegisterLayout(2, d=3, n_ancilla=1)
    psi = random_state(2, 0)
    s = StateVector.from_system(lay, psi)
    amps = s.amplitudes
    np.testing.assert_allclose(amps[:4], psi)
    assert np.allclose(amps[4:], 0)
    np.testing.assert_allclose(s.system_vector(), psi)
    with pytest.raises(ValueError):
        StateVector.from_system(lay, 2 * psi)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(0, 2))
def test_apply_matrix_matches_kron(seed, q):
    lay = RegisterLayout(3, d=1)
    psi = random_state(3, seed)
    U = random_unitary(1, seed + 1)
    s = apply_matrix(StateVector.from_system(lay, psi), U, [q])
    full = np.kron(np.kron(np.eye(1 << (2 - q)), U), np.eye(1 << q))
    np.testing.assert_allclose(s.system_vector(), full @ psi, atol=1e-12)


def test_apply_matrix_rejects_non_unitary():
    s = StateVector.from_system(RegisterLayout(1, d=1), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        apply_matrix(s, np.array([[1.0, 1.0], [0.0, 1.0]]), [0])


def test_qpe_exact_phase_is_deterministic():
    d = 4
    h0 = np.diag([0.25, 0.5 + 1 / 16])
    lay = RegisterLayout(1, d=d)
    for k, expected in ((0, 4), (1, 9)):
        psi = np.eye(2)[k].astype(complex)
        s = qpe(StateVector.from_system(lay, psi, classical=()), h0)
        p = s.register_probabilities("e_prime")
        assert p[expected] == pytest.approx(1.0)


def test_textbook_readout_is_fejer_kernel():
    d, phi = 5, 0.3137
    N = 1 << d
    est = PhaseEstimator(np.array([[phi]]), d, "textbook")
    j = np.arange(N)
    delta = phi - j / N
    with np.errstate(invalid="ignore", divide="ignore"):
        kernel = (np.sin(np.pi * N * delta) / (N * np.sin(np.pi * delta))) ** 2
    np.testing.assert_allclose(est.readout_distribution(0), kernel, atol=1e-12)


def test_rounded_readout_snaps_to_nearest_bin():
    est = PhaseEstimator(np.array([[0.3137]]), 5, "rounded")
    p = est.readout_distribution(0)
    assert np.argmax(p) == round(0.3137 * 32) and p.max() == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(seeds, st.sampled_from(["textbook", "rounded"]))
def test_inverse_qpe_restores_state(seed, readout):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4))
    h = (A + A.T) / 2
    w = np.linalg.eigvalsh(h)
    h0 = (h - w[0] * np.eye(4)) / (w[-1] - w[0] + 1.0)
    lay = RegisterLayout(2, d=4)
    s0 = StateVector.from_system(lay, random_state(2, seed))
    s1 = qpe(s0, h0, readout=readout)
    s2 = inverse_qpe(s1, h0, readout=readout)
    assert s2.system_fidelity(s0.system_vector()) == pytest.approx(1.0, abs=1e-10)
    assert s2.register_is_zero("e_prime")


def test_qpe_rejects_unscaled_hamiltonian():
    with pytest.raises(ValueError):
        PhaseEstimator(np.diag([-0.5, 0.2]), 3)


@settings(max_examples=20, deadline=None)
@given(st.dictionaries(st.text("IXYZ", min_size=2, max_size=2), st.floats(-2, 2, allow_nan=False),
                       min_size=1, max_size=5), seeds)
def test_block_encoding_top_left_block(terms, seed):
    op = QubitOperator(2, terms)
    dec = normalize_and_shift(op)
    lay = RegisterLayout(2, d=1, n_ancilla=dec.n_ancilla)
    psi = random_state(2, seed)
    s = block_encode(StateVector.from_system(lay, psi, classical=("e", "e_prime", "pointer")), dec)
    t = s.tensor()
    block = np.take(t, 0, axis=s.axis("ancilla")).reshape(-1)
    expected = dec.encoded().to_dense() @ psi / dec.subnormalization
    np.testing.assert_allclose(block, expected, atol=1e-10)
    back = block_encode(s, dec, adjoint=True)
    assert back.system_fidelity(psi) == pytest.approx(1.0, abs=1e-10)
    assert back.register_is_zero("ancilla")


def test_cnot_compare_flags_mismatch_and_is_involution():
    lay = RegisterLayout(1, d=3, n_ancilla=1)
    s = StateVector.from_system(lay, np.array([1.0, 0.0]), classical=("e",), labels={"e": 5})
    flagged = cnot_compare(s)
    assert probability_one(flagged, lay.pointer) == pytest.approx(1.0)
    s_match = xor_register(s, "e", "e_prime")
    assert probability_one(cnot_compare(s_match), lay.pointer) == pytest.approx(0.0)
    # only the top two bits compared: 5 = 101 vs 4 = 100 match
    s4 = StateVector.from_system(lay, np.array([1.0, 0.0]), classical=("e", "e_prime"), labels={"e": 5, "e_prime": 4})
    assert probability_one(cnot_compare(s4, d_match=2), lay.pointer) == pytest.approx(0.0)
    twice = cnot_compare(cnot_compare(flagged))
    np.testing.assert_allclose(twice.amplitudes, flagged.amplitudes)


def test_compare_watches_ancilla():
    lay = RegisterLayout(1, d=2, n_ancilla=1)
    s = StateVector.from_system(lay, np.array([1.0, 0.0]))
    s = apply_matrix(s, np.array([[0, 1], [1, 0]]), [lay.offset("ancilla")])
    assert probability_one(cnot_compare(s, 0, watch_ancilla=True), lay.pointer) == pytest.approx(1.0)
    assert probability_one(cnot_compare(s, 0, watch_ancilla=False), lay.pointer) == pytest.approx(0.0)


def test_measurement_collapse_and_statistics():
    lay = RegisterLayout(1, d=1)
    psi = np.array([np.sqrt(0.3), np.sqrt(0.7)], dtype=complex)
    s = StateVector.from_system(lay, psi)
    rng = RandomStream(11)
    ones = 0
    n = 4000
    for _ in range(n):
        bit, post = measure(s, 0, rng)
        ones += bit
        assert probability_one(post, 0) == pytest.approx(float(bit))
    assert abs(ones / n - 0.7) < 3 * np.sqrt(0.21 / n)
    with pytest.raises(ValueError):
        project(StateVector.from_system(lay, np.array([1.0, 0.0])), 0, 1)


def test_measure_register_reads_basis_value():
    lay = RegisterLayout(3, d=1)
    psi = np.zeros(8, dtype=complex)
    psi[6] = 1
    value, _ = measure_register(StateVector.from_system(lay, psi), "system", RandomStream(0))
    assert value == 6


def test_apply_lcu_postselects_encoded_action():
    op = QubitOperator(1, {"Z": 0.5, "I": 0.5})  # projector onto |0>
    dec = lcu_decompose(op)
    lay = RegisterLayout(1, d=1, n_ancilla=dec.n_ancilla)
    psi = np.array([0.6, 0.8], dtype=complex)
    rng = RandomStream(5)
    hits = 0
    n = 3000
    for _ in range(n):
        out, ok = apply_lcu(StateVector.from_system(lay, psi), dec, rng)
        if ok:
            hits += 1
            assert out.system_fidelity(np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert abs(hits / n - 0.36) < 4 * np.sqrt(0.36 * 0.64 / n)


def test_apply_lcu_requires_reset_ancilla():
    dec = lcu_decompose(QubitOperator(1, {"X": 1.0, "Z": 1.0}))
    lay = RegisterLayout(1, d=1, n_ancilla=1)
    s = apply_matrix(StateVector.from_system(lay, np.array([1.0, 0.0])), np.array([[0, 1], [1, 0]]),
                     [lay.offset("ancilla")])
    with pytest.raises(ValueError):
        apply_lcu(s, dec, RandomStream(0))


def test_random_stream_determinism():
    a, b = RandomStream(42, (1, 2)), RandomStream(42, (1, 2))
    np.testing.assert_array_equal(a.random(5), b.random(5))
    c = RandomStream(42).spawn(1, 2)
    np.testing.assert_array_equal(c.random(5), RandomStream(42, (1, 2)).random(5))
    assert not np.array_equal(RandomStream(42).spawn(0).random(5), RandomStream(42).spawn(1).random(5))


def test_dump_lists_nonzero_amplitudes():
    lay = RegisterLayout(1, d=1)
    s = StateVector.from_system(lay, np.array([0.0, 1.0]))
    lines = s.dump().splitlines()
    assert len(lines) == 1 and lines[0] == "0001 1.0 0.0"
