from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from services.delta_system import delta_system
from services.errors import ValidationError
from services.gate_synthesis import DriveSolution, GateSpec, gate_synthesis
from services.quantum_core import (
    Schedule,
    cardinal_gate_fidelity,
    default_step,
    projector,
    quantum_core,
    state_fidelity,
    trace_fidelity,
)

LOG = logging.getLogger(__name__)

Scheme = Literal["ours", "toc", "single_loop"]
CouplingModel = Literal["bright", "all_drives"]
ErrorAxis = Literal["delta", "epsilon"]

SCHEMES: tuple[Scheme, ...] = ("ours", "toc", "single_loop")

LOWERING = np.array([[0, 0, 1], [0, 0, 1], [0, 0, 0]], dtype=complex)
DEPHASING = np.diag([-1.0, -1.0, 2.0]).astype(complex)


class ErrorParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta: float = 0.0
    epsilon: float = 0.0


class NoiseModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    decay: float = Field(0.0, ge=0.0)
    dephasing: float = Field(0.0, ge=0.0)

    @classmethod
    def kappa(cls, rate: float) -> "NoiseModel":
        return cls(decay=rate, dephasing=rate)

    def operators(self, omega: float = 1.0) -> tuple[list[np.ndarray], list[float]]:
        """Collapse operators and rates, rates given in units of omega."""
        return [LOWERING, DEPHASING], [self.decay * omega, self.dephasing * omega]


@dataclass
class SweepResult:
    """Fidelity grids over named axes, one grid per scheme."""

    axes: dict[str, np.ndarray]
    fidelities: dict[str, np.ndarray]
    tau_ratios: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, object] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.axes.values())

    def difference(self, scheme: str, baseline: str) -> np.ndarray:
        return self.fidelities[scheme] - self.fidelities[baseline]

    def to_frame(self, scheme: str) -> pd.DataFrame:
        grids = np.meshgrid(*self.axes.values(), indexing="ij")
        frame = pd.DataFrame({name: grid.ravel() for name, grid in zip(self.axes, grids)})
        frame.insert(0, "scheme", scheme)
        if scheme in self.tau_ratios:
            frame["tau_over_tauc"] = np.broadcast_to(self.tau_ratios[scheme], self.shape).ravel()
        frame["fidelity"] = self.fidelities[scheme].ravel()
        for baseline in ("single_loop", "toc"):
            if baseline in self.fidelities:
                frame[f"fidelity_diff_vs_{baseline}"] = self.difference(scheme, baseline).ravel()
        return frame


@dataclass
class DecoherenceRun:
    times: np.ndarray
    populations: np.ndarray
    fidelity: np.ndarray
    tau: float

    @property
    def final_fidelity(self) -> float:
        return float(self.fidelity[-1])


def _map_cells(func: Callable[[int], float], count: int, threads: int) -> np.ndarray:
    if threads <= 1:
        return np.array([func(i) for i in range(count)])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.array(list(pool.map(func, range(count))))


class NoiseRobustness:
    """Systematic-error sweeps and open-system runs comparing the three schemes."""

    def __init__(self):
        self.threads = 1

    def solution_for(self, spec: GateSpec, scheme: Scheme, detuning: float, omega: float) -> Optional[DriveSolution]:
        if scheme == "ours":
            return gate_synthesis.solve_toc_parameters(spec.gamma, detuning * omega, omega)
        if scheme == "toc":
            return gate_synthesis.toc_baseline(spec, omega)
        return None

    def perturbed_batch(self, sol: DriveSolution, err: ErrorParams, times: np.ndarray) -> np.ndarray:
        detuning = sol.delta2 + err.delta * sol.omega
        coupling = (1.0 + err.epsilon) * sol.omega
        phase = sol.eta * np.asarray(times, dtype=float)
        h = np.zeros((phase.shape[0], 2, 2), dtype=complex)
        h[:, 0, 0] = -0.5 * detuning
        h[:, 1, 1] = 0.5 * detuning
        h[:, 0, 1] = 0.5 * coupling * np.exp(-1j * phase)
        h[:, 1, 0] = np.conj(h[:, 0, 1])
        return h

    def perturbed_effective_hamiltonian(self, sol: DriveSolution, err: ErrorParams, t: float) -> np.ndarray:
        return self.perturbed_batch(sol, err, np.array([t]))[0]

    def _ground_coupling_error(self, spec: GateSpec, sol: DriveSolution, err: ErrorParams) -> np.ndarray:
        params = sol.rotating_params(spec.theta, spec.phi)
        h = np.zeros((3, 3), dtype=complex)
        h[1, 0] = 0.5 * err.epsilon * params.couplings[2] * np.exp(1j * params.phi)
        h[0, 1] = np.conj(h[1, 0])
        return h

    def perturbed_schedule(self, spec: GateSpec, sol: DriveSolution, err: ErrorParams,
                           coupling_model: CouplingModel = "bright") -> Schedule:
        """3-level schedule of the perturbed scheme in the bare basis."""
        matrix = delta_system.dressed_basis(spec.theta, spec.phi).matrix
        extra = self._ground_coupling_error(spec, sol, err) if coupling_model == "all_drives" else 0.0

        def sampler(times: np.ndarray) -> np.ndarray:
            block = self.perturbed_batch(sol, err, times)
            dressed = np.zeros((block.shape[0], 3, 3), dtype=complex)
            dressed[:, 0, 0], dressed[:, 0, 2] = block[:, 0, 0], block[:, 0, 1]
            dressed[:, 2, 0], dressed[:, 2, 2] = block[:, 1, 0], block[:, 1, 1]
            return matrix @ dressed @ matrix.conj().T + extra

        scale = max(sol.omega, abs(sol.delta2), abs(sol.eta))
        return Schedule(duration=sol.tau, sampler=sampler, recommended_step=default_step(sol.tau, scale))

    def single_loop_block(self, omega: float, err: ErrorParams, gamma: float) -> np.ndarray:
        """Perturbed single-loop evolution on (|b>, |2>)."""
        total = np.eye(2, dtype=complex)
        for phase in (0.0, math.pi + gamma):
            h = np.array([
                [-0.5 * err.delta * omega, 0.5 * (1 + err.epsilon) * omega * np.exp(-1j * phase)],
                [0.5 * (1 + err.epsilon) * omega * np.exp(1j * phase), 0.5 * err.delta * omega],
            ])
            total = quantum_core.matrix_exponential(h, math.pi / omega) @ total
        return total

    def scheme_gate(self, spec: GateSpec, scheme: Scheme, err: ErrorParams, detuning: float = -0.5,
                    omega: float = 1.0, coupling_model: CouplingModel = "bright") -> np.ndarray:
        """Computational block of the perturbed gate realized by ``scheme``."""
        sol = self.solution_for(spec, scheme, detuning, omega)
        if sol is None:
            full = gate_synthesis.embed_dressed(self.single_loop_block(omega, err, spec.gamma), spec.theta, spec.phi)
            if coupling_model == "all_drives":
                LOG.debug("single-loop scheme has no |0>-|1> drive; coupling model ignored")
            return full[:2, :2]
        if coupling_model == "all_drives":
            return quantum_core.propagate(self.perturbed_schedule(spec, sol, err, coupling_model))[:2, :2]
        block = quantum_core.propagate(Schedule(
            duration=sol.tau, sampler=lambda ts: self.perturbed_batch(sol, err, ts),
            recommended_step=default_step(sol.tau, max(sol.omega, abs(sol.delta2), abs(sol.eta))),
        ))
        return gate_synthesis.embed_dressed(block, spec.theta, spec.phi)[:2, :2]

    def cell_fidelity(self, spec: GateSpec, scheme: Scheme, err: ErrorParams, detuning: float = -0.5,
                      omega: float = 1.0, coupling_model: CouplingModel = "bright") -> float:
        actual = self.scheme_gate(spec, scheme, err, detuning, omega, coupling_model)
        return trace_fidelity(gate_synthesis.ideal_gate(spec), actual)

    def _tau_ratio(self, spec: GateSpec, scheme: Scheme, detuning: float, omega: float) -> float:
        sol = self.solution_for(spec, scheme, detuning, omega)
        return 1.0 if sol is None else sol.tau_ratio

    def robustness_grid(self, spec: GateSpec, scheme: Scheme, delta_grid: Sequence[float],
                        epsilon_grid: Sequence[float], detuning: float = -0.5, omega: float = 1.0,
                        coupling_model: CouplingModel = "bright") -> SweepResult:
        """Joint (delta, epsilon) grid for one gate; baselines are evaluated for the difference grids."""
        deltas = np.asarray(delta_grid, dtype=float)
        epsilons = np.asarray(epsilon_grid, dtype=float)
        if not (np.all(np.isfinite(deltas)) and np.all(np.isfinite(epsilons))):
            raise ValidationError("error grids must be finite")
        LOG.info("robustness grid %dx%d for gamma=%.4f theta=%.4f phi=%.4f",
                 len(deltas), len(epsilons), spec.gamma, spec.theta, spec.phi)
        schemes = [scheme] + [s for s in SCHEMES if s != scheme]
        fidelities, ratios = {}, {}
        cells = len(deltas) * len(epsilons)
        for name in schemes:
            def cell(index: int, name=name) -> float:
                i, j = divmod(index, len(epsilons))
                err = ErrorParams(delta=float(deltas[i]), epsilon=float(epsilons[j]))
                return self.cell_fidelity(spec, name, err, detuning, omega, coupling_model)

            fidelities[name] = _map_cells(cell, cells, self.threads).reshape(len(deltas), len(epsilons))
            ratios[name] = np.array(self._tau_ratio(spec, name, detuning, omega))
        return SweepResult(
            axes={"delta": deltas, "epsilon": epsilons},
            fidelities=fidelities,
            tau_ratios=ratios,
            metadata={"gamma": spec.gamma, "theta": spec.theta, "phi": spec.phi,
                      "detuning": detuning, "coupling_model": coupling_model},
        )

    def robustness_panel(self, axis: ErrorAxis, family: str, angles: Sequence[float],
                         errors: Sequence[float], detuning: float = -0.5, omega: float = 1.0,
                         coupling_model: CouplingModel = "bright") -> SweepResult:
        """Error axis against rotation angle for one rotation family, all schemes."""
        angles = np.asarray(angles, dtype=float)
        errors = np.asarray(errors, dtype=float)
        LOG.info("robustness panel axis=%s family=%s (%dx%d)", axis, family, len(angles), len(errors))
        fidelities, ratios = {}, {}
        cells = len(angles) * len(errors)
        for name in SCHEMES:
            def cell(index: int, name=name) -> float:
                i, j = divmod(index, len(errors))
                value = float(errors[j])
                err = ErrorParams(delta=value) if axis == "delta" else ErrorParams(epsilon=value)
                spec = GateSpec.preset(family, float(angles[i]))
                return self.cell_fidelity(spec, name, err, detuning, omega, coupling_model)

            fidelities[name] = _map_cells(cell, cells, self.threads).reshape(len(angles), len(errors))
            ratios[name] = np.array([
                self._tau_ratio(GateSpec.preset(family, float(a)), name, detuning, omega) for a in angles
            ])[:, None]
        return SweepResult(
            axes={"gamma": angles, axis: errors},
            fidelities=fidelities,
            tau_ratios=ratios,
            metadata={"family": family, "axis": axis, "detuning": detuning, "coupling_model": coupling_model},
        )

    def scheme_schedule(self, spec: GateSpec, scheme: Scheme, detuning: float = -0.5,
                        omega: float = 1.0) -> Schedule:
        """Error-free rotating-frame 3-level schedule of a scheme."""
        sol = self.solution_for(spec, scheme, detuning, omega)
        if sol is None:
            return gate_synthesis.single_loop_schedule(spec, omega)
        return gate_synthesis.toc_schedule(spec, sol)

    @staticmethod
    def default_initial(spec: GateSpec) -> np.ndarray:
        """|0> for equatorial axes, (|0> + |1>)/sqrt(2) for the z axis."""
        if math.isclose(spec.theta, math.pi):
            return np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
        return np.array([1.0, 0.0], dtype=complex)

    def decoherence_state_run(self, spec: GateSpec, detuning: float = -0.5, kappa: float = 0.0,
                              initial: Optional[np.ndarray] = None, noise: Optional[NoiseModel] = None,
                              omega: float = 1.0, scheme: Scheme = "ours", samples: int = 101) -> DecoherenceRun:
        """Lindblad run from ``initial``; fidelity is against the closed-system state at each sample."""
        if kappa < 0:
            raise ValidationError(f"decoherence rate must be non-negative, got {kappa}")
        noise = noise or NoiseModel.kappa(kappa)
        initial = self.default_initial(spec) if initial is None else np.asarray(initial, dtype=complex)
        schedule = self.scheme_schedule(spec, scheme, detuning, omega)
        psi0 = np.zeros(3, dtype=complex)
        psi0[: len(initial)] = initial
        ops, rates = noise.operators(omega)
        times, rhos = quantum_core.lindblad_series(schedule, ops, rates, projector(psi0), samples=samples)
        ideal = quantum_core.propagate_samples(schedule, times)
        populations = np.array([np.real(np.diag(rho)) for rho in rhos])
        fidelity = np.array([state_fidelity(rho, u @ psi0) for rho, u in zip(rhos, ideal)])
        return DecoherenceRun(times=times, populations=populations, fidelity=fidelity, tau=schedule.duration)

    def gate_fidelity(self, spec: GateSpec, scheme: Scheme, noise: NoiseModel, detuning: float = -0.5,
                      omega: float = 1.0) -> float:
        schedule = self.scheme_schedule(spec, scheme, detuning, omega)
        ops, rates = noise.operators(omega)
        channel = quantum_core.lindblad_channel(schedule, ops, rates)
        return cardinal_gate_fidelity(gate_synthesis.ideal_gate(spec), channel)

    def decoherence_gate_curve(self, spec: GateSpec, schemes: Sequence[Scheme], kappa_grid: Sequence[float],
                               detuning: float = -0.5, omega: float = 1.0) -> SweepResult:
        kappas = np.asarray(kappa_grid, dtype=float)
        if np.any(kappas < 0):
            raise ValidationError("decoherence rates must be non-negative")
        fidelities, ratios = {}, {}
        for name in schemes:
            def cell(index: int, name=name) -> float:
                return self.gate_fidelity(spec, name, NoiseModel.kappa(float(kappas[index])), detuning, omega)

            fidelities[name] = _map_cells(cell, len(kappas), self.threads)
            ratios[name] = np.array(self._tau_ratio(spec, name, detuning, omega))
        return SweepResult(
            axes={"kappa": kappas},
            fidelities=fidelities,
            tau_ratios=ratios,
            metadata={"gamma": spec.gamma, "theta": spec.theta, "phi": spec.phi, "detuning": detuning},
        )


noise_robustness = NoiseRobustness()
