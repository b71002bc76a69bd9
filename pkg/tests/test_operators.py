"""Fermionic and Pauli algebra, Jordan-Wigner, LCU encodings."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import kron_annihilator, kron_hubbard
from qlr.operators import (
    DOWN,
    UP,
    FermionOperator,
    QubitOperator,
    build_hubbard,
    hermitian_parts,
    hermitian_split,
    jordan_wigner,
    lcu_decompose,
    mode_index,
    normalize_and_shift,
    pauli_matrix,
    recombine,
)

L = 2
N_QUBITS = 2 * L

ladders = st.tuples(st.integers(0, L - 1), st.sampled_from([UP, DOWN]), st.booleans())
coeffs = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)
monomials = st.tuples(coeffs, st.lists(ladders, max_size=4))
fermion_ops = st.lists(monomials, min_size=1, max_size=4).map(
    lambda terms: sum((FermionOperator({tuple(f): c}) for c, f in terms), FermionOperator.zero())
)
words = st.text(alphabet="IXYZ", min_size=N_QUBITS, max_size=N_QUBITS)
qubit_ops = st.dictionaries(words, coeffs, min_size=1, max_size=6).map(lambda d: QubitOperator(N_QUBITS, d))
hermitian_qubit_ops = st.dictionaries(
    words, st.floats(-3, 3, allow_nan=False), min_size=1, max_size=6
).map(lambda d: QubitOperator(N_QUBITS, d))


def dense(op: FermionOperator) -> np.ndarray:
    return jordan_wigner(op, L).to_dense()


# -- fermions ---------------------------------------------------------------

def test_mode_index_layout():
    assert [mode_index(i, s, 3) for s in (UP, DOWN) for i in range(3)] == list(range(6))
    assert mode_index(1, "down", 3) == 4


def test_annihilator_matches_kron_reference():
    for site in range(L):
        for spin in (UP, DOWN):
            q = mode_index(site, spin, L)
            got = dense(FermionOperator.ladder(site, spin))
            np.testing.assert_allclose(got, kron_annihilator(q, N_QUBITS), atol=1e-14)


def test_canonical_anticommutation():
    modes = [(i, s) for i in range(L) for s in (UP, DOWN)]
    for a in modes:
        for b in modes:
            ca, cb = FermionOperator.ladder(*a), FermionOperator.ladder(*b)
            anti = ca * cb.dagger() + cb.dagger() * ca
            expected = FermionOperator.identity() if a == b else FermionOperator.zero()
            assert anti == expected
            assert (ca * cb + cb * ca).is_zero()


def test_number_operator_is_projector():
    n = FermionOperator.number(1, DOWN)
    assert n * n == n
    assert n.is_hermitian()


@settings(max_examples=40, deadline=None)
@given(fermion_ops, fermion_ops)
def test_product_is_homomorphism(a, b):
    np.testing.assert_allclose(dense(a * b), dense(a) @ dense(b), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(fermion_ops)
def test_dagger_is_conjugate_transpose(a):
    np.testing.assert_allclose(dense(a.dagger()), dense(a).conj().T, atol=1e-12)


def test_jordan_wigner_rejects_out_of_range_site():
    with pytest.raises(IndexError):
        jordan_wigner(FermionOperator.ladder(2, UP), 2)


@pytest.mark.parametrize("L_,mu", [(1, 0.3), (2, 2.0), (2, 1.5), (3, 0.5)])
def test_hubbard_matches_kron_reference(L_, mu):
    got = jordan_wigner(build_hubbard(L_, 1.0, 4.0, mu), L_).to_dense()
    np.testing.assert_allclose(got, kron_hubbard(L_, 1.0, 4.0, mu), atol=1e-12)


def test_hubbard_rejects_empty_chain():
    with pytest.raises(ValueError):
        build_hubbard(0, 1.0, 1.0, 0.0)


def test_hubbard_conserves_particle_number():
    H = jordan_wigner(build_hubbard(2, 1.0, 4.0, 0.7), 2).to_dense()
    N = sum(dense(FermionOperator.number(i, s)) for i in range(2) for s in (UP, DOWN))
    np.testing.assert_allclose(H @ N, N @ H, atol=1e-12)


# -- Hermitian splitting ----------------------------------------------------

@pytest.mark.parametrize("site,spin", [(0, UP), (1, DOWN)])
def test_split_and_recombine(site, spin):
    c = FermionOperator.ladder(site, spin)
    plus, minus = hermitian_split(c)
    assert plus.is_hermitian() and minus.is_hermitian()
    assert recombine(plus, minus) == c
    assert recombine(plus, minus, dagger=True) == c.dagger()


def test_split_rejects_compound_operator():
    with pytest.raises(ValueError):
        hermitian_split(FermionOperator.number(0, UP))


@settings(max_examples=30, deadline=None)
@given(qubit_ops)
def test_hermitian_parts_reassemble(op):
    a, b = hermitian_parts(op)
    assert a.is_hermitian() and b.is_hermitian()
    assert ((a + b * 1j) * 0.5).allclose(op, atol=1e-12)


# -- Pauli algebra ----------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(qubit_ops, qubit_ops)
def test_pauli_product_matches_dense(a, b):
    np.testing.assert_allclose((a * b).to_dense(), a.to_dense() @ b.to_dense(), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(qubit_ops)
def test_text_roundtrip(op):
    back = QubitOperator.from_text(op.to_text(), N_QUBITS)
    assert back == op


def test_text_format_columns():
    op = QubitOperator(2, {"XZ": 0.5 - 0.25j})
    assert op.to_text().split() == ["0.5", "-0.25", "XZ"]


def test_pauli_matrix_little_endian():
    # word[q] acts on qubit q = bit q of the index
    np.testing.assert_allclose(pauli_matrix("XI"), np.kron(np.eye(2), [[0, 1], [1, 0]]))


# -- LCU ----------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(qubit_ops)
def test_lcu_reconstructs_source(op):
    dec = lcu_decompose(op)
    assert dec.reconstruct().allclose(op, atol=1e-12)
    assert dec.subnormalization == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(hermitian_qubit_ops)
def test_normalize_and_shift_is_psd_contraction(op):
    dec = normalize_and_shift(op)
    enc = dec.encoded().to_dense()
    ev = np.linalg.eigvalsh(enc)
    assert ev.min() >= -1e-12 and ev.max() <= 1 + 1e-12
    assert dec.reconstruct().allclose(op, atol=1e-10)
    assert dec.subnormalization == pytest.approx(1.0)


def test_normalize_and_shift_tight_mode():
    op = QubitOperator(2, {"ZI": 1.0, "IZ": 1.0, "XX": 0.5})
    dec = normalize_and_shift(op, tight=True)
    # the block encoding carries the extra subnormalization
    ev = np.linalg.eigvalsh(dec.encoded().to_dense() / dec.subnormalization)
    assert dec.reconstruct().allclose(op, atol=1e-10)
    assert ev.min() >= -1e-12 and ev.max() <= 1 + 1e-12


def test_scalar_operator_encoding():
    dec = normalize_and_shift(QubitOperator.identity(2, 2.5))
    assert dec.encoded().is_zero(1e-15)
    assert dec.reconstruct().allclose(QubitOperator.identity(2, 2.5))
    assert dec.n_ancilla == 1


def test_normalize_rejects_non_hermitian():
    with pytest.raises(ValueError):
        normalize_and_shift(QubitOperator(1, {"X": 1j}))


def test_ancilla_count():
    op = QubitOperator(3, {w: 1.0 for w in ["XII", "IXI", "IIX", "ZZZ", "YYI"]})
    assert lcu_decompose(op).n_ancilla == 3
    assert lcu_decompose(QubitOperator(3, {"XII": 1.0})).n_ancilla == 1
