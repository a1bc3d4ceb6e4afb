import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from cachetools import LRUCache
from scipy import optimize

from services.errors import DomainError
from services.gate_synthesis import (
    PAULI_X,
    GateSpec,
    GateSynthesis,
    accelerating_detuning,
    closed_form_tau,
    gate_synthesis,
)
from services.quantum_core import is_unitary, quantum_core, trace_fidelity

PRESETS = [GateSpec.rx(math.pi / 2), GateSpec.ry(math.pi / 2), GateSpec.rz(math.pi / 2),
           GateSpec.rx(math.pi), GateSpec.rz(3 * math.pi / 2)]


def _bisection_ratio(gamma: float, delta2: float) -> float:
    """tau/tau_c from the constraint system xi = pi, gamma = pi + eta tau / 2, by root bracketing."""

    def residual(eta: float) -> float:
        tau = 2.0 * math.pi / math.hypot(1.0, eta + delta2)
        return math.pi + 0.5 * eta * tau - gamma

    if gamma < math.pi:
        eta = optimize.brentq(residual, -1e3, 0.0, xtol=1e-14)
    else:
        eta = optimize.brentq(residual, 0.0, 1e3, xtol=1e-14)
    return 1.0 / math.hypot(1.0, eta + delta2)


@pytest.mark.parametrize("gamma, delta2, ratio", [
    (math.pi / 2, 0.0, math.sqrt(3) / 2),
    (math.pi / 2, -0.5, 0.6),
    (math.pi, -0.5, 2 / math.sqrt(5)),
    (math.pi, 0.0, 1.0),
    (3 * math.pi / 2, 0.0, math.sqrt(3) / 2),
])
def test_derived_gate_times(gamma, delta2, ratio):
    sol = gate_synthesis.solve_toc_parameters(gamma, delta2)
    assert sol.tau_ratio == pytest.approx(ratio, abs=1e-9)
    assert sol.tau_ratio == pytest.approx(_bisection_ratio(gamma, delta2), abs=1e-9)


def test_quarter_rotation_with_half_detuning_solution():
    sol = gate_synthesis.solve_toc_parameters(math.pi / 2, -0.5)
    assert sol.eta == pytest.approx(-5 / 6, abs=1e-12)
    assert sol.tau == pytest.approx(1.2 * math.pi, abs=1e-12)
    assert sol.c == pytest.approx((sol.eta - sol.delta2) / sol.omega)


def test_solution_invariants_and_closed_form_on_random_inputs():
    rng = np.random.default_rng(11)
    for gamma, ratio in zip(rng.uniform(0.01, 2 * math.pi - 0.01, 1000), rng.uniform(-2, 2, 1000)):
        sol = gate_synthesis.solve_toc_parameters(float(gamma), float(ratio))
        x = sol.eta + sol.delta2
        assert math.hypot(sol.omega, x) * sol.tau / 2 == pytest.approx(math.pi, abs=1e-10)
        assert math.pi + 0.5 * sol.eta * sol.tau == pytest.approx(gamma, abs=1e-10)
        assert sol.chi == pytest.approx(2 * math.atan2(sol.omega, x), abs=1e-12)
        if abs(sol.eta) > 1e-6:
            expected = closed_form_tau(sol.gamma, sol.delta2, sol.eta, sol.omega)
            assert sol.tau == pytest.approx(expected, rel=1e-9)


def test_analytic_unitary_matches_propagated_effective_model():
    rng = np.random.default_rng(5)
    for gamma, ratio in zip(rng.uniform(0.2, 2 * math.pi - 0.2, 20), rng.uniform(-1.5, 1.5, 20)):
        sol = gate_synthesis.solve_toc_parameters(float(gamma), float(ratio))
        numeric = quantum_core.propagate(gate_synthesis.effective_schedule(sol))
        assert np.max(np.abs(numeric - gate_synthesis.analytic_unitary(sol))) < 1e-8


def test_degenerate_rotation_is_minus_identity():
    sol = gate_synthesis.solve_toc_parameters(math.pi, 0.0)
    assert sol.eta == 0.0
    np.testing.assert_allclose(gate_synthesis.analytic_unitary(sol), -np.eye(2), atol=1e-12)


@pytest.mark.parametrize("gamma", [0.0, 2 * math.pi, -0.3, 7.0])
def test_gamma_outside_open_interval_is_rejected(gamma):
    with pytest.raises(DomainError):
        gate_synthesis.solve_toc_parameters(gamma, -0.5)


def test_x_rotation_matches_axis_convention():
    gate = gate_synthesis.holonomic_gate(GateSpec.rx(math.pi / 2), -0.5)
    expected = np.exp(-1j * math.pi / 4) * (math.cos(math.pi / 4) * np.eye(2) + 1j * math.sin(math.pi / 4) * PAULI_X)
    np.testing.assert_allclose(gate, expected, atol=1e-12)


def test_z_rotation_is_diagonal_with_determinant():
    gamma = 0.9
    gate = gate_synthesis.holonomic_gate(GateSpec.rz(gamma))
    np.testing.assert_allclose(gate, np.diag([np.exp(-1j * gamma), 1.0]), atol=1e-12)
    assert np.linalg.det(gate) == pytest.approx(np.exp(-1j * gamma))


@pytest.mark.parametrize("spec", PRESETS)
def test_holonomic_gate_is_projector_form(spec):
    basis = gate_synthesis.embed_dressed(np.diag([np.exp(-1j * spec.gamma), 1.0]), spec.theta, spec.phi)
    projector_form = basis[:2, :2]
    gate = gate_synthesis.ideal_gate(spec)
    assert is_unitary(gate)
    np.testing.assert_allclose(gate, projector_form, atol=1e-12)


@pytest.mark.parametrize("spec", PRESETS)
def test_propagated_rotating_frame_gate_matches_target(spec):
    sol = gate_synthesis.solve_toc_parameters(spec.gamma, accelerating_detuning(spec.gamma, 0.5))
    u = quantum_core.propagate(gate_synthesis.toc_schedule(spec, sol))
    np.testing.assert_allclose(u[:2, :2], gate_synthesis.ideal_gate(spec), atol=1e-8)


@pytest.mark.parametrize("spec", PRESETS)
def test_single_loop_baseline_matches_holonomic_gate(spec):
    block, duration = gate_synthesis.single_loop_baseline(spec)
    assert duration == pytest.approx(2 * math.pi)
    assert trace_fidelity(gate_synthesis.ideal_gate(spec), block) == pytest.approx(1.0, abs=1e-9)


def test_single_loop_keeps_dark_state_invariant():
    spec = GateSpec.ry(0.7)
    schedule = gate_synthesis.single_loop_schedule(spec)
    basis_dark = np.array([math.cos(spec.theta / 2), -math.sin(spec.theta / 2) * np.exp(1j * spec.phi), 0.0])
    for piece in schedule.pieces():
        assert np.max(np.abs(piece.hamiltonian_at(piece.start) @ basis_dark)) < 1e-12


def test_toc_baseline_times():
    assert gate_synthesis.toc_baseline(GateSpec.rx(math.pi / 2)).tau_ratio == pytest.approx(math.sqrt(3) / 2)
    assert gate_synthesis.toc_baseline(GateSpec.rx(3 * math.pi / 2)).tau_ratio == pytest.approx(math.sqrt(3) / 2)
    assert gate_synthesis.toc_baseline(GateSpec.rx(math.pi)).tau_ratio == pytest.approx(1.0)


def test_acceleration_ordering_over_rotation_angles():
    for k in range(1, 200):
        gamma = k * math.pi / 100
        ours = gate_synthesis.solve_toc_parameters(gamma, accelerating_detuning(gamma, 0.5)).tau_ratio
        toc = gate_synthesis.solve_toc_parameters(gamma, 0.0).tau_ratio
        assert ours < toc
        if k == 100:
            assert toc == pytest.approx(1.0, abs=1e-12)
        else:
            assert toc < 1.0


def test_gate_time_decreases_with_detuning_magnitude():
    for gamma in (math.pi / 4, math.pi, 5 * math.pi / 3):
        magnitudes = np.linspace(0.0, 2.0, 21)
        curve = gate_synthesis.acceleration_curve(gamma, np.array([accelerating_detuning(gamma, m) for m in magnitudes]))
        assert np.all(np.diff(curve) < 0)


def test_two_qubit_degenerate_branch():
    sol = gate_synthesis.solve_two_qubit_parameters(math.pi, 0.3)
    assert sol.eta == 0.0
    assert sol.tau == pytest.approx(math.pi / 0.3)
    detuned = gate_synthesis.solve_two_qubit_parameters(math.pi, 0.3, 0.2)
    assert detuned.tau == pytest.approx(math.pi / math.sqrt(0.09 + 0.01))


def test_two_qubit_invariants():
    sol = gate_synthesis.solve_two_qubit_parameters(2.2, 0.4, -0.2)
    assert sol.xi == pytest.approx(math.pi)
    assert math.pi + 0.5 * sol.eta * sol.tau == pytest.approx(2.2)
    assert sol.j == pytest.approx(math.hypot(0.4, 0.5 * (sol.delta3 - sol.eta)))


@pytest.mark.parametrize("gamma", [0.6, 2.0, math.pi, 4.1, 5.5])
def test_two_qubit_interaction_reproduces_phase_gate(gamma):
    g = 0.35
    sol = gate_synthesis.solve_two_qubit_parameters(gamma, g, -0.5 * g)
    u = quantum_core.propagate(gate_synthesis.two_qubit_interaction_schedule(sol))
    corrected = gate_synthesis.two_qubit_frame_correction(sol.delta3, sol.tau) @ u
    np.testing.assert_allclose(corrected, np.diag([np.exp(1j * gamma), np.exp(-1j * gamma)]), atol=1e-8)


def test_two_qubit_gate_is_controlled_phase():
    np.testing.assert_allclose(gate_synthesis.two_qubit_gate(math.pi), np.diag([1, 1, -1, 1]))
    with pytest.raises(DomainError):
        gate_synthesis.two_qubit_gate(0.0)


def test_solution_cache_survives_concurrent_eviction():
    synth = GateSynthesis()
    synth._solutions = LRUCache(maxsize=32)
    jobs = [(gamma, delta2) for gamma in np.linspace(0.2, 6.0, 60) for delta2 in (-0.7, -0.3, 0.4)]

    def solve(job):
        return job, synth.solve_toc_parameters(*job)

    with ThreadPoolExecutor(max_workers=16) as pool:
        results = list(pool.map(solve, jobs * 3))
    for (gamma, delta2), sol in results:
        assert sol.gamma == gamma and sol.delta2 == delta2
        if abs(sol.eta) > 1e-6:
            assert sol.tau == pytest.approx(closed_form_tau(gamma, delta2, sol.eta, 1.0), rel=1e-9)
