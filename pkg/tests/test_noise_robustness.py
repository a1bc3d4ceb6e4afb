import math

import numpy as np
import pytest

from services.delta_system import delta_system
from services.errors import ValidationError
from services.gate_synthesis import GateSpec, gate_synthesis
from services.noise_robustness import SCHEMES, ErrorParams, NoiseModel, noise_robustness

ANGLES = [k * math.pi / 82 for k in (8, 20, 41)]
ERRORS = np.linspace(-0.1, 0.1, 9)
PANEL_ANGLES = [k * math.pi / 82 for k in range(1, 42)]
PANEL_ERRORS = np.linspace(-0.1, 0.1, 41)
REFERENCE_KAPPA = 4e-4


def test_unperturbed_hamiltonian_equals_effective_model():
    sol = gate_synthesis.solve_toc_parameters(math.pi / 2, -0.5)
    params = sol.rotating_params(math.pi / 2, 0.0)
    for t in (0.0, 0.7, sol.tau):
        np.testing.assert_allclose(noise_robustness.perturbed_effective_hamiltonian(sol, ErrorParams(), t),
                                   delta_system.effective_hamiltonian(params, t), atol=1e-15)


def test_coupling_error_of_minus_one_removes_drive():
    sol = gate_synthesis.solve_toc_parameters(math.pi / 2, -0.5)
    h = noise_robustness.perturbed_effective_hamiltonian(sol, ErrorParams(epsilon=-1.0), 0.4)
    assert h[0, 1] == 0 and h[1, 0] == 0


def test_frequency_drift_shifts_diagonal():
    sol = gate_synthesis.solve_toc_parameters(math.pi / 2, -0.5)
    h = noise_robustness.perturbed_effective_hamiltonian(sol, ErrorParams(delta=0.1), 0.0)
    assert h[0, 0].real == pytest.approx(0.2)
    assert h[1, 1].real == pytest.approx(-0.2)


@pytest.mark.parametrize("scheme", SCHEMES)
@pytest.mark.parametrize("spec", [GateSpec.rx(math.pi / 2), GateSpec.ry(math.pi / 4), GateSpec.rz(math.pi / 2)])
@pytest.mark.parametrize("model", ["bright", "all_drives"])
def test_zero_error_cells_are_perfect(scheme, spec, model):
    fidelity = noise_robustness.cell_fidelity(spec, scheme, ErrorParams(), coupling_model=model)
    assert fidelity == pytest.approx(1.0, abs=1e-9)


def test_grid_shapes_and_zero_cell():
    spec = GateSpec.rx(math.pi / 2)
    result = noise_robustness.robustness_grid(spec, "ours", ERRORS, ERRORS[::2])
    assert result.shape == (9, 5)
    assert set(result.fidelities) == set(SCHEMES)
    assert result.fidelities["ours"][4, 2] == pytest.approx(1.0, abs=1e-9)
    frame = result.to_frame("ours")
    assert len(frame) == 45
    assert {"fidelity_diff_vs_single_loop", "fidelity_diff_vs_toc", "tau_over_tauc"} <= set(frame.columns)
    assert np.all(frame["fidelity"] <= 1.0 + 1e-12)


def test_grid_rejects_non_finite_errors():
    with pytest.raises(ValidationError):
        noise_robustness.robustness_grid(GateSpec.rx(1.0), "ours", [0.0, np.nan], [0.0])


def test_threaded_grid_matches_serial():
    spec = GateSpec.ry(math.pi / 3)
    serial = noise_robustness.robustness_grid(spec, "ours", ERRORS[:3], ERRORS[:3])
    noise_robustness.threads = 3
    threaded = noise_robustness.robustness_grid(spec, "ours", ERRORS[:3], ERRORS[:3])
    for scheme in SCHEMES:
        np.testing.assert_array_equal(serial.fidelities[scheme], threaded.fidelities[scheme])


def test_coupling_error_panels_agree_for_x_and_y():
    x = noise_robustness.robustness_panel("epsilon", "x", ANGLES, ERRORS)
    y = noise_robustness.robustness_panel("epsilon", "y", ANGLES, ERRORS)
    for scheme in SCHEMES:
        np.testing.assert_allclose(x.fidelities[scheme], y.fidelities[scheme], atol=1e-10)


def test_frequency_drift_panels_agree_for_all_rotations():
    panels = [noise_robustness.robustness_panel("delta", family, ANGLES, ERRORS) for family in ("x", "y", "z")]
    for other in panels[1:]:
        np.testing.assert_allclose(other.difference("ours", "single_loop"),
                                   panels[0].difference("ours", "single_loop"), atol=1e-10)
        np.testing.assert_allclose(other.difference("ours", "toc"), panels[0].difference("ours", "toc"), atol=1e-10)


@pytest.mark.parametrize("axis, model", [("delta", "bright"), ("epsilon", "bright"), ("epsilon", "all_drives")])
def test_detuned_scheme_dominates_baselines(axis, model):
    panel = noise_robustness.robustness_panel(axis, "x", ANGLES, ERRORS, coupling_model=model)
    vs_single = panel.difference("ours", "single_loop")
    assert vs_single.mean() > 0
    assert panel.difference("ours", "toc").mean() > 0
    assert np.all(vs_single >= -1e-4)


@pytest.mark.parametrize("axis, model", [("delta", "bright"), ("epsilon", "all_drives")])
def test_detuned_scheme_dominates_single_loop_on_every_panel_cell(axis, model):
    noise_robustness.threads = 4
    panel = noise_robustness.robustness_panel(axis, "x", PANEL_ANGLES, PANEL_ERRORS, coupling_model=model)
    assert panel.shape == (41, 41)
    vs_single = panel.difference("ours", "single_loop")
    assert np.min(vs_single) >= -1e-4
    assert vs_single.mean() > 0
    assert panel.difference("ours", "toc").mean() > 0


def test_joint_grid_favours_detuned_scheme_on_average():
    noise_robustness.threads = 4
    grid = noise_robustness.robustness_grid(GateSpec.rx(math.pi / 2), "ours", PANEL_ERRORS[::2], PANEL_ERRORS[::2])
    assert grid.difference("ours", "single_loop").mean() > 0
    assert grid.difference("ours", "toc").mean() > 0


def test_detuned_path_is_shortest():
    spec = GateSpec.rx(math.pi / 2)
    initial = np.array([1.0, 0.0, 0.0])
    lengths = {scheme: delta_system.bloch_trajectory(noise_robustness.scheme_schedule(spec, scheme), initial)
               .path_length() for scheme in SCHEMES}
    assert lengths["ours"] < lengths["toc"] < lengths["single_loop"]


def test_decoherence_free_run_stays_on_target():
    run = noise_robustness.decoherence_state_run(GateSpec.rx(math.pi / 2), kappa=0.0)
    assert run.final_fidelity == pytest.approx(1.0, abs=1e-8)
    assert run.populations.shape == (101, 3)


@pytest.mark.parametrize("family, expected", [("x", 0.9992), ("z", 0.9990)])
def test_decoherence_state_fidelity_at_quoted_rate(family, expected):
    run = noise_robustness.decoherence_state_run(GateSpec.preset(family, math.pi / 2), detuning=-0.5,
                                                 kappa=REFERENCE_KAPPA)
    assert run.final_fidelity == pytest.approx(expected, abs=1e-3)
    assert np.all(run.fidelity <= 1.0 + 1e-9)
    assert np.all(run.fidelity >= -1e-9)
    np.testing.assert_allclose(run.populations.sum(axis=1), 1.0, atol=1e-8)


def test_default_initial_states():
    np.testing.assert_allclose(noise_robustness.default_initial(GateSpec.rx(1.0)), [1.0, 0.0])
    np.testing.assert_allclose(noise_robustness.default_initial(GateSpec.rz(1.0)), [math.sqrt(0.5)] * 2)


def test_negative_decoherence_rate_is_rejected():
    with pytest.raises(ValidationError):
        noise_robustness.decoherence_state_run(GateSpec.rx(1.0), kappa=-1e-4)
    with pytest.raises(ValueError):
        NoiseModel(decay=-1.0)


def test_gate_fidelity_without_noise_is_one():
    for scheme in SCHEMES:
        fidelity = noise_robustness.gate_fidelity(GateSpec.rz(math.pi / 2), scheme, NoiseModel())
        assert fidelity == pytest.approx(1.0, abs=1e-8)


def test_gate_curve_orders_schemes_and_decreases():
    spec = GateSpec.rx(math.pi / 2)
    kappas = [0.0, 5e-4, 1e-3]
    result = noise_robustness.decoherence_gate_curve(spec, SCHEMES, kappas)
    ours, toc, single = (result.fidelities[s] for s in ("ours", "toc", "single_loop"))
    np.testing.assert_allclose([ours[0], toc[0], single[0]], 1.0, atol=1e-8)
    assert np.all(ours[1:] > toc[1:])
    assert np.all(toc[1:] > single[1:])
    for curve in (ours, toc, single):
        assert np.all(np.diff(curve) < 0)
