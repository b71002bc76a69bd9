"""G_n operators, counting rounds, recovery and coefficient decoding."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import Channel
from qlr.counting import (
    CoefficientEstimate,
    CountingCircuit,
    CountingContext,
    CountingTally,
    DegenerateReferenceError,
    RecoveryExhausted,
    alpha_operator,
    apply_with_recovery,
    build_gn,
    build_gn_series,
    count_alpha,
    count_beta,
    count_expectation,
    count_overlap,
    count_spectrum,
    counting_round,
    decode_matrix_element,
    decode_value,
    lanczos_polynomials,
    make_phase_map,
    propagate_errors,
    recover,
)
from qlr.operators import (
    DOWN,
    UP,
    FermionOperator,
    QubitOperator,
    build_hubbard,
    jordan_wigner,
    lcu_decompose,
    normalize_and_shift,
)
from qlr.oracle import TridiagonalSpectrum, classical_lanczos, monic_vectors
from qlr.statevector import RandomStream

SHOTS = 100_000


class AlwaysZero:
    """RNG stub: every uniform is 0, so every measurement returns its '1' branch."""

    def random(self, size=None):
        return 0.0 if size is None else np.zeros(size)


def within(est, target, k=3.0):
    return abs(est.value - target) < k * est.stderr


# -- G_n -------------------------------------------------------------------

def literal_forms(H, Om, a, b2):
    """Closed forms for the first Lanczos operators, written out by hand."""
    I = np.eye(len(H))
    g1 = (H - a[0] * I) @ Om
    g2 = ((H - a[1] * I) @ (H - a[0] * I) - b2[0] * I) @ Om
    g3 = ((H - a[2] * I) @ ((H - a[1] * I) @ (H - a[0] * I) - b2[0] * I) - b2[1] * (H - a[0] * I)) @ Om
    g4 = (H - a[3] * I) @ g3 - b2[2] * g2
    return [Om, g1, g2, g3, g4]


@pytest.fixture(scope="module")
def random_start():
    H = jordan_wigner(build_hubbard(2, 1.0, 4.0, 0.4), 2)
    rng = np.random.default_rng(7)
    Om = QubitOperator(4, {"XIII": 0.7, "ZZII": -0.3, "IIYX": 0.4j, "IZIX": 0.2})
    Om = Om + Om.dagger()
    psi = rng.normal(size=16) + 0j
    psi /= np.linalg.norm(psi)
    spec = classical_lanczos(H.to_dense(), Om.to_dense() @ psi, 6)
    return H, Om, psi, spec


def test_gn_base_case(channel):
    g0 = build_gn(0, TridiagonalSpectrum((), ()), channel.omega, channel.H)
    assert g0.operator == channel.omega


def test_gn_coefficient_free_limit(channel):
    spec = TridiagonalSpectrum((0.0, 0.0), (0.0,))
    g2 = build_gn(2, spec, channel.omega, channel.H)
    assert g2.operator.allclose(channel.H * channel.H * channel.omega, atol=1e-12)


def test_gn_matches_literal_forms(random_start):
    H, Om, psi, spec = random_start
    Hd, Omd = H.to_dense(), Om.to_dense()
    lit = literal_forms(Hd, Omd, spec.alpha, spec.beta_sq)
    series = build_gn_series(4, spec, Om, H)
    vecs = monic_vectors(Hd, Omd @ psi, spec, 4)
    for n in range(5):
        np.testing.assert_allclose(series[n].dense(), lit[n], atol=1e-10)
        np.testing.assert_allclose(series[n].dense() @ psi, vecs[n], atol=1e-8)


def test_polynomials_are_monic():
    polys = lanczos_polynomials([0.3, -1.0, 2.0], [0.5, 0.25], 3)
    assert [p.degree() for p in polys] == [0, 1, 2, 3]
    assert all(p.coef[-1] == 1.0 for p in polys)


def test_gn_requires_prefix(channel):
    with pytest.raises(ValueError):
        build_gn(2, TridiagonalSpectrum((0.1,), ()), channel.omega, channel.H)
    with pytest.raises(ValueError):
        build_gn(-1, TridiagonalSpectrum((), ()), channel.omega, channel.H)


# -- context ---------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=8, unique=True), st.integers(3, 10),
       st.data())
def test_phase_map_puts_reference_on_grid(eigs, d, data):
    eigs = np.array(sorted(eigs))
    if eigs[-1] - eigs[0] < 1e-6:
        return
    E = data.draw(st.sampled_from(list(eigs)))
    pm = make_phase_map(eigs, E, d)
    phases = pm.phase(eigs)
    assert phases.min() >= -1e-12 and phases.max() < 1.0
    assert pm.phase(E) * (1 << d) == pytest.approx(pm.index)


def test_context_rejects_non_eigenvector(channel):
    with pytest.raises(ValueError):
        CountingContext(np.ones(16) / 4, channel.Hd)


def test_context_rejects_degenerate_reference():
    H = np.diag([0.0, 1.0, 1.0, 3.0])
    with pytest.raises(DegenerateReferenceError):
        CountingContext(np.eye(4)[1], H, d=6)


def test_context_rejects_insufficient_resolution():
    H = np.diag([0.0, 0.01, 5.0, 10.0])
    with pytest.raises(DegenerateReferenceError):
        CountingContext(np.eye(4)[0], H, d=4)
    CountingContext(np.eye(4)[0], H, d=12)


def test_gap_condition_recorded(ctx, channel):
    assert ctx.gap == pytest.approx(2 * math.sqrt(2) - 2, rel=1e-9)
    assert ctx.window < ctx.gap


# -- rounds ----------------------------------------------------------------

def test_identity_encoding_always_accepts(ctx, channel):
    circ = CountingCircuit(ctx, lcu_decompose(QubitOperator.identity(4)))
    assert circ.acceptance_probability == pytest.approx(1.0)
    rng = RandomStream(0)
    state = circ.start
    for _ in range(20):
        ok, state = counting_round(state, circ, rng)
        assert ok
    assert state.system_fidelity(channel.psi) == pytest.approx(1.0, abs=1e-12)
    run = circ.run(1000, RandomStream(1))
    assert run.tally.rejects == 0 and run.tally.recovery_steps == {}


def test_orthogonal_image_never_accepts(ctx):
    c = jordan_wigner(FermionOperator.ladder(0, UP), 2)
    circ = CountingCircuit(ctx, lcu_decompose(c))
    assert circ.acceptance_probability == pytest.approx(0.0, abs=1e-15)
    assert circ.run(500, RandomStream(2)).frequency == 0.0


def test_eigenstate_energy_decodes(ctx, channel):
    est, run = count_expectation(channel.H, ctx, SHOTS, RandomStream(3))
    assert within(est, channel.E0)
    assert run.min_fidelity() > 1 - 1e-9


def test_per_shot_functions_match_cached_chain(ctx, channel):
    dec = normalize_and_shift(alpha_operator(build_gn(1, channel.spec, channel.omega, channel.H)))
    circ = CountingCircuit(ctx, dec)
    p = circ.acceptance_probability
    rng = RandomStream(4)
    n, accepts, rounds = 250, 0, []
    for _ in range(n):
        ok, state = counting_round(circ.start, circ, rng)
        if not ok:
            state, r = recover(state, circ, rng)
            rounds.append(r)
        accepts += ok
        assert state.system_fidelity(channel.psi) > 1 - 1e-9
        assert state.register_is_zero("ancilla") and state.register_is_zero("pointer")
        assert state.register_is_zero("e_prime")
    assert abs(accepts / n - p) < 3.5 * math.sqrt(p * (1 - p) / n)
    # first recovery round succeeds with 1 - p^2 in the rank-1 model
    q1 = 1 - p * p
    frac1 = np.mean(np.array(rounds) == 1)
    assert abs(frac1 - q1) < 3.5 * math.sqrt(q1 * (1 - q1) / len(rounds))


def test_chain_two_outcome_statistics(ctx, channel):
    dec = normalize_and_shift(alpha_operator(build_gn(1, channel.spec, channel.omega, channel.H)))
    circ = CountingCircuit(ctx, dec)
    p = circ.acceptance_probability
    for k in range(1, 7):
        assert circ.step(k)[0] == pytest.approx(1 - p, abs=1e-10)
        state = circ.step(k)[1]
        assert state.system_fidelity(channel.psi) == pytest.approx(1.0, abs=1e-10)


def test_recovery_exhausted_raises(ctx, channel):
    dec = normalize_and_shift(alpha_operator(build_gn(1, channel.spec, channel.omega, channel.H)))
    circ = CountingCircuit(ctx, dec)
    ok, state = counting_round(circ.start, circ, AlwaysZero())
    assert not ok
    with pytest.raises(RecoveryExhausted) as info:
        recover(state, circ, AlwaysZero(), k_max=3)
    assert info.value.rounds == 3


def test_unreset_ancilla_rejected(ctx, channel):
    circ = CountingCircuit(ctx, normalize_and_shift(channel.H))
    dirty = circ.forward(circ.start)
    with pytest.raises(ValueError):
        counting_round(dirty, circ, RandomStream(0))


def test_aborts_are_excluded_and_reported(ctx, channel):
    circ = CountingCircuit(ctx, normalize_and_shift(channel.H))
    run = circ.run(5000, RandomStream(6), k_max=1)
    t = run.tally
    assert t.accepts + t.rejects == 5000
    assert t.aborted > 0
    assert run.frequency == pytest.approx(t.accepts / (5000 - t.aborted))


def test_trace_columns(ctx, channel):
    run = CountingCircuit(ctx, normalize_and_shift(channel.H)).run(10, RandomStream(0))
    lines = run.trace_csv().splitlines()
    assert lines[0] == "shot,accepted,recovery_rounds,aborted" and len(lines) == 11


# -- tallies and decoding -----------------------------------------------------

tallies = st.builds(
    lambda a, r, h: CountingTally(a, r, 0, h),
    st.integers(0, 100), st.integers(0, 100),
    st.dictionaries(st.integers(1, 5), st.integers(0, 20), max_size=3),
)


@given(tallies, tallies, tallies)
def test_tally_merge_is_associative_and_commutative(a, b, c):
    assert a.merge(b) == b.merge(a)
    assert a.merge(b).merge(c) == a.merge(b.merge(c))
    m = a.merge(b)
    assert m.shots == a.shots + b.shots


@given(st.floats(0, 1), st.floats(0.1, 50), st.floats(-20, 20))
def test_decoding_inverts_amplitude(f, scale, shift):
    m = decode_matrix_element(f, scale, shift)
    assert ((m + shift) / scale) ** 2 == pytest.approx(f, abs=1e-9)


@given(st.floats(0, 1), st.floats(0.1, 50), st.floats(-20, 20), st.floats(0.1, 5))
def test_estimate_value_is_function_of_frequency(f, scale, shift, norm):
    m = decode_matrix_element(f, scale, shift)
    est = CoefficientEstimate("alpha", decode_value("alpha", m, norm), f, 0.1, scale, shift, norm)
    assert est.matrix_element == pytest.approx(m)
    assert est.value == pytest.approx(m / norm)
    assert decode_value("beta", m, norm) == pytest.approx(math.sqrt(max(m, 0) / norm))


def test_error_propagation_without_prefix_is_delta_method():
    raw = [("norm", 0, 2.0, 0.1), ("alpha", 0, -3.0, 0.2)]
    a_se, b_se = propagate_errors(raw, 1, 0)
    expected = math.sqrt((0.2 / 2.0) ** 2 + (3.0 / 4.0 * 0.1) ** 2)
    assert a_se[0] == pytest.approx(expected)


def test_error_propagation_includes_prefix_sensitivity():
    # M_beta1 = <H^2> - alpha0 <H>: the alpha0 error feeds beta1
    raw = [("norm", 0, 1.0, 0.0), ("alpha", 0, -2.0, 0.1), ("beta", 1, 0.5, 0.0)]
    _, b_se = propagate_errors(raw, 1, 1)
    # d nu1 / d alpha0 = -<H> = 2 ; se(nu1) = 0.2 ; se(beta1) = 0.2 / (2 sqrt(0.5))
    assert b_se[0] == pytest.approx(0.2 / (2 * math.sqrt(0.5)))


# -- coefficients ------------------------------------------------------------

def test_alpha0_identity_channel_is_energy(ctx, channel):
    ident = QubitOperator.identity(4)
    est, _ = count_alpha(0, ctx, channel.H, ident, TridiagonalSpectrum((), ()), (1.0, 0.0), SHOTS, RandomStream(8))
    assert within(est, channel.E0)


def test_zero_hamiltonian_gives_zero_alpha(ctx):
    zero = QubitOperator.zero(4)
    ident = QubitOperator.identity(4)
    est, _ = count_alpha(0, ctx, zero, ident, TridiagonalSpectrum((), ()), (1.0, 0.0), 1000, RandomStream(0))
    assert est.value == 0.0


def test_beta1_vanishes_on_eigenstate(ctx, channel):
    ident = QubitOperator.identity(4)
    prefix = TridiagonalSpectrum((channel.E0,), ())
    est, _ = count_beta(1, ctx, channel.H, ident, prefix, (1.0, 0.0), SHOTS, RandomStream(9))
    assert abs(est.matrix_element) < 3 * est.matrix_stderr


@pytest.mark.parametrize("n", [1])
def test_alpha_and_beta_match_oracle(ctx, channel, n):
    spec = channel.spec
    nu = spec.beta_sq[0]
    ea, run = count_alpha(n, ctx, channel.H, channel.omega, spec.prefix(n), (nu, 0.0), SHOTS, RandomStream(10))
    assert within(ea, spec.alpha[n])
    eb, _ = count_beta(n, ctx, channel.H, channel.omega, spec.prefix(n + 1), (1.0, 0.0), SHOTS, RandomStream(11))
    assert within(eb, spec.beta[n - 1])
    assert run.min_fidelity() > 1 - 1e-9


def test_overlap_number_operator(ctx, channel):
    for spin in (UP, DOWN):
        est = count_overlap(ctx, 2, 0, 0, (spin, spin), SHOTS, RandomStream(12))
        n_op = jordan_wigner(FermionOperator.number(0, spin), 2).to_dense()
        exact = np.vdot(channel.psi, n_op @ channel.psi).real
        assert 0.0 <= exact <= 1.0
        assert abs(est.value - exact) < 3 * est.stderr


def test_overlap_off_diagonal(ctx, channel):
    est = count_overlap(ctx, 2, 1, 0, (UP, UP), SHOTS, RandomStream(13))
    x = FermionOperator.ladder(1, UP, True) * FermionOperator.ladder(0, UP)
    exact = np.vdot(channel.psi, jordan_wigner(x, 2).to_dense() @ channel.psi)
    assert est.imag is not None
    assert abs(est.value - exact) < 3 * math.sqrt(2) * est.stderr


def test_overlap_vacuum_is_zero():
    H = jordan_wigner(build_hubbard(2, 1.0, 4.0, -2.5), 2).to_dense()
    vac = np.zeros(16, dtype=complex)
    vac[0] = 1
    ctx = CountingContext(vac, H, d=8)
    est = count_overlap(ctx, 2, 1, 0, (UP, UP), 2000, RandomStream(0))
    assert est.value == pytest.approx(0.0, abs=1e-12) or abs(est.value) < 3 * est.stderr


def test_spectrum_terminates_on_eigenstate_channel(ctx, channel):
    ident = QubitOperator.identity(4)
    cs = count_spectrum(ctx, channel.H, ident, 3, SHOTS, RandomStream(14), significance=3.0)
    assert cs.stop_reason == "beta"
    assert cs.spectrum.depth == 1
    assert cs.min_fidelity > 1 - 1e-9


def test_counted_spectrum_has_counted_provenance(ctx, channel):
    cs = count_spectrum(ctx, channel.H, channel.omega, 2, 20_000, RandomStream(15))
    assert set(cs.spectrum.alpha_provenance) == {"counted"}
    assert all(s > 0 for s in cs.spectrum.alpha_stderr)


def test_apply_with_recovery_produces_encoded_state(ctx, channel):
    op = (channel.H - channel.E0 * 0.5).simplify()
    dec = lcu_decompose(op * QubitOperator.single(4, {0: "X"}) + QubitOperator.identity(4))
    target = dec.reconstruct().to_dense() @ channel.psi
    target /= np.linalg.norm(target)
    app = apply_with_recovery(ctx, dec, RandomStream(16))
    out = app.state.system_vector()
    assert abs(np.vdot(target, out)) ** 2 == pytest.approx(1.0, abs=1e-9)
    assert app.attempts >= 1
