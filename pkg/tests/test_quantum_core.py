import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from services.errors import ValidationError
from services.gate_synthesis import GateSpec, gate_synthesis
from services.quantum_core import (
    QuantumCore,
    Schedule,
    cardinal_gate_fidelity,
    cardinal_states,
    is_hermitian,
    is_unitary,
    projector,
    quantum_core,
    state_fidelity,
    trace_fidelity,
    validate_density,
    validate_state,
)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)


def _rx_schedule():
    spec = GateSpec.rx(math.pi / 2)
    sol = gate_synthesis.solve_toc_parameters(spec.gamma, -0.5)
    return gate_synthesis.toc_schedule(spec, sol)


def test_matrix_exponential_at_zero_time_is_identity():
    h = np.array([[0.3, 0.1 - 0.2j], [0.1 + 0.2j, -0.7]])
    np.testing.assert_allclose(quantum_core.matrix_exponential(h, 0.0), np.eye(2), atol=1e-14)


def test_matrix_exponential_half_period_flip():
    u = quantum_core.matrix_exponential(0.5 * SIGMA_X, math.pi)
    np.testing.assert_allclose(u, -1j * SIGMA_X, atol=1e-12)
    assert is_unitary(u)


def test_matrix_exponential_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        quantum_core.matrix_exponential(np.array([[0, 1], [0, 0]], dtype=complex), 1.0)


def test_hermitian_predicate_scales_with_magnitude():
    h = np.array([[1e6, 1.0], [1.0 + 1e-9, 0.0]])
    assert is_hermitian(h)
    assert not is_hermitian(np.array([[0.0, 1.0], [1.1, 0.0]]))


def test_constant_schedule_matches_exponential():
    h = np.array([[0.2, 0.5j, 0], [-0.5j, -0.1, 0.3], [0, 0.3, 0.4]])
    u = quantum_core.propagate(Schedule.constant(h, 2.5))
    np.testing.assert_allclose(u, quantum_core.matrix_exponential(h, 2.5), atol=1e-10)


def test_propagate_composes_over_halves():
    schedule = _rx_schedule()
    mid = 0.5 * schedule.duration
    whole = quantum_core.propagate(schedule)
    first = quantum_core.propagate(schedule.window(0.0, mid))
    second = quantum_core.propagate(schedule.window(mid, schedule.duration))
    np.testing.assert_allclose(whole, second @ first, atol=1e-9)


def test_propagate_converges_under_step_halving():
    schedule = _rx_schedule()
    coarse = quantum_core.propagate(schedule, step=2e-3)
    fine = quantum_core.propagate(schedule, step=1e-3)
    assert np.max(np.abs(coarse - fine)) < 1e-8


def test_midpoint_method_agrees_at_fine_step():
    schedule = _rx_schedule()
    magnus = quantum_core.propagate(schedule)
    midpoint = quantum_core.propagate(schedule, step=2e-4, method="midpoint")
    assert np.max(np.abs(magnus - midpoint)) < 1e-6


def test_step_longer_than_duration_is_rejected():
    with pytest.raises(ValidationError):
        quantum_core.propagate(Schedule.constant(np.eye(2), 1.0), step=2.0)


def test_step_override_is_used_when_no_step_given():
    schedule = _rx_schedule()
    reference = quantum_core.propagate(schedule)
    quantum_core.step_override = 1e-3
    np.testing.assert_allclose(quantum_core.propagate(schedule), reference, atol=1e-8)


def test_sequence_schedule_samples_each_piece():
    a = Schedule.constant(np.diag([1.0, -1.0]), 1.0)
    b = Schedule.constant(0.5 * SIGMA_X, 2.0, start=1.0)
    joined = Schedule.sequence([a, b])
    assert joined.duration == pytest.approx(3.0)
    np.testing.assert_allclose(joined.hamiltonian_at(0.5), np.diag([1.0, -1.0]))
    np.testing.assert_allclose(joined.hamiltonian_at(2.0), 0.5 * SIGMA_X)
    expected = quantum_core.matrix_exponential(0.5 * SIGMA_X, 2.0) @ quantum_core.matrix_exponential(
        np.diag([1.0, -1.0]), 1.0)
    np.testing.assert_allclose(quantum_core.propagate(joined), expected, atol=1e-10)


def test_sequence_requires_contiguous_pieces():
    with pytest.raises(ValidationError):
        Schedule.sequence([Schedule.constant(np.eye(2), 1.0), Schedule.constant(np.eye(2), 1.0, start=1.5)])


def test_lindblad_without_dissipation_is_unitary_conjugation():
    schedule = _rx_schedule()
    psi = np.array([1.0, 0.0, 0.0], dtype=complex)
    rho = quantum_core.lindblad_evolve(schedule, [], [], projector(psi))
    u = quantum_core.propagate(schedule)
    np.testing.assert_allclose(rho, projector(u @ psi), atol=1e-8)


def test_lindblad_decay_preserves_trace_and_relaxes():
    lower = np.array([[0, 1], [0, 0]], dtype=complex)
    schedule = Schedule.constant(np.zeros((2, 2)), 5.0, step=1e-2)
    rho0 = projector(np.array([0.0, 1.0], dtype=complex))
    rho = quantum_core.lindblad_evolve(schedule, [lower], [0.4], rho0)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-10)
    assert rho[1, 1].real == pytest.approx(math.exp(-2.0), abs=1e-8)


def test_lindblad_rejects_negative_rate():
    schedule = Schedule.constant(np.zeros((2, 2)), 1.0)
    with pytest.raises(ValidationError):
        quantum_core.lindblad_evolve(schedule, [np.eye(2)], [-0.1], np.diag([1.0, 0.0]))


def test_lindblad_channel_matches_direct_runs():
    schedule = _rx_schedule()
    lowering = np.array([[0, 0, 1], [0, 0, 1], [0, 0, 0]], dtype=complex)
    channel = quantum_core.lindblad_channel(schedule, [lowering], [1e-3])
    for psi in cardinal_states():
        full = np.zeros(3, dtype=complex)
        full[:2] = psi
        direct = quantum_core.lindblad_evolve(schedule, [lowering], [1e-3], projector(full))
        np.testing.assert_allclose(channel(psi), direct, atol=1e-10)


def test_trace_fidelity_ignores_global_phase():
    u = quantum_core.matrix_exponential(0.5 * SIGMA_X, 0.7)
    assert trace_fidelity(u, np.exp(0.4j) * u) == pytest.approx(1.0, abs=1e-14)
    assert trace_fidelity(np.eye(2), SIGMA_X) == pytest.approx(0.0, abs=1e-14)


def test_cardinal_gate_fidelity_of_exact_channel_is_one():
    gate = quantum_core.matrix_exponential(0.5 * SIGMA_X, 1.1)
    assert cardinal_gate_fidelity(gate, lambda psi: projector(gate @ psi)) == pytest.approx(1.0, abs=1e-12)


def test_trace_fidelity_of_quarter_turn_about_z():
    rz = np.diag([np.exp(-0.25j * math.pi), np.exp(0.25j * math.pi)])
    assert trace_fidelity(np.eye(2), rz) == pytest.approx(math.sqrt(0.5), abs=1e-14)


def test_trace_fidelity_is_phase_invariant_for_random_phases():
    rng = np.random.default_rng(7)
    u = quantum_core.matrix_exponential(np.array([[0.3, 0.2 - 0.4j], [0.2 + 0.4j, -0.5]]), 1.3)
    v = quantum_core.matrix_exponential(0.5 * SIGMA_X, 0.4) @ u
    reference = trace_fidelity(u, v)
    for alpha in rng.uniform(0.0, 2 * math.pi, 100):
        assert trace_fidelity(u, np.exp(1j * alpha) * v) == pytest.approx(reference, abs=1e-13)


def test_cardinal_gate_fidelity_of_depolarizing_channel_is_one_third():
    gate = quantum_core.matrix_exponential(0.5 * SIGMA_X, math.pi)
    fidelity = cardinal_gate_fidelity(gate, lambda psi: np.eye(3, dtype=complex) / 3)
    assert fidelity == pytest.approx(1.0 / 3.0, abs=1e-14)
    assert cardinal_gate_fidelity(np.eye(2), lambda psi: np.eye(2, dtype=complex) / 2) == pytest.approx(0.5)
    flipped = cardinal_gate_fidelity(gate, lambda psi: projector(SIGMA_X @ gate @ psi))
    assert flipped == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_cardinal_gate_fidelity_embeds_target_into_larger_space():
    gate = quantum_core.matrix_exponential(0.5 * SIGMA_X, 0.9)

    def channel(psi):
        full = np.zeros(3, dtype=complex)
        full[:2] = gate @ psi
        return projector(full)

    assert cardinal_gate_fidelity(gate, channel) == pytest.approx(1.0, abs=1e-12)


def test_state_fidelity_requires_matching_dimensions():
    rho = np.diag([0.25, 0.75, 0.0]).astype(complex)
    assert state_fidelity(rho, np.array([0.0, 1.0, 0.0])) == pytest.approx(0.75)
    with pytest.raises(ValidationError):
        state_fidelity(rho, np.array([0.0, 1.0]))
    with pytest.raises(ValidationError):
        state_fidelity(rho, np.array([0.0, 1.0, 0.0, 0.0]))


def test_propagate_rejects_schedule_that_turns_non_hermitian():
    raising = np.array([[0, 1], [0, 0]], dtype=complex)

    def sampler(times):
        return np.asarray(times)[:, None, None] * raising + 0.5 * SIGMA_X

    schedule = Schedule(duration=1.0, sampler=sampler, recommended_step=1e-2)
    assert is_hermitian(schedule.hamiltonian_at(0.0))
    with pytest.raises(ValidationError, match="Hermitian"):
        quantum_core.propagate(schedule)
    with pytest.raises(ValidationError):
        quantum_core.propagate(schedule, method="midpoint")


def test_matrix_exponential_is_consistent_under_concurrent_eviction():
    core = QuantumCore()
    rng = np.random.default_rng(3)
    entries = rng.normal(size=(1200, 2, 2)) + 1j * rng.normal(size=(1200, 2, 2))
    hams = 0.5 * (entries + np.conj(np.swapaxes(entries, -1, -2)))
    jobs = [(h, t) for h in hams for t in (0.3, 1.7)]

    def expected(h, t):
        w, v = np.linalg.eigh(h)
        return (v * np.exp(-1j * w * t)) @ v.conj().T

    with ThreadPoolExecutor(max_workers=16) as pool:
        results = list(pool.map(lambda job: core.matrix_exponential(*job), jobs * 2))
    for (h, t), u in zip(jobs * 2, results):
        np.testing.assert_allclose(u, expected(h, t), atol=1e-12)


def test_state_and_density_validation():
    with pytest.raises(ValidationError):
        validate_state(np.array([1.0, 1.0]))
    with pytest.raises(ValidationError):
        validate_density(np.diag([0.6, 0.6]))
    with pytest.raises(ValidationError):
        validate_density(np.diag([1.2, -0.2]))
    validate_density(np.diag([0.3, 0.7]))
