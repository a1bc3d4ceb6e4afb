from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from services.errors import ValidationError
from services.quantum_core import Schedule, default_step, quantum_core, validate_state

LOG = logging.getLogger(__name__)

SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)

# Projection norms below this are reported as flagged Bloch points.
PROJECTION_FLOOR = 1e-6


def wrap_phase(phi: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(phi, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class RotatingFrameParams:
    """Drive parameters of the detuned Delta system in the rotating frame.

    The ramped phase is phi_1(t) = ramp * t + ramp_offset; phi_0 = phi + phi_1
    and phi_2 = phi close the loop.
    """

    omega: float
    theta: float
    phi: float
    delta2: float
    ramp: float = 0.0
    ramp_offset: float = 0.0

    def __post_init__(self):
        if self.omega < 0:
            raise ValidationError(f"omega must be non-negative, got {self.omega}")
        if not 0.0 <= self.theta <= math.pi:
            raise ValidationError(f"theta must lie in [0, pi], got {self.theta}")
        object.__setattr__(self, "phi", wrap_phase(self.phi))

    @property
    def sin_half(self) -> float:
        return math.sin(self.theta / 2.0)

    @property
    def cos_half(self) -> float:
        return math.cos(self.theta / 2.0)

    @property
    def couplings(self) -> tuple[float, float, float]:
        """(Omega_0, Omega_1, Omega_2)."""
        s, c = self.sin_half, self.cos_half
        return self.omega * s, self.omega * c, -self.delta2 * s * c

    @property
    def detunings(self) -> tuple[float, float, float]:
        """(Delta_0, Delta_1, Delta_2)."""
        s, c = self.sin_half, self.cos_half
        return -self.delta2 * s * s, -self.delta2 * c * c, self.delta2

    def ramp_phase(self, times: np.ndarray) -> np.ndarray:
        return self.ramp * np.asarray(times, dtype=float) + self.ramp_offset


@dataclass(frozen=True)
class LabFrameConfig:
    """Lab-frame Delta system: bare energies plus three cosine drives.

    Drive k is Omega_k cos(nu_k t - phi_k(t)) with phi_k(t) = offset_k + rate_k t.
    Index order of the drive tuples is (0<->2, 1<->2, 0<->1).
    """

    level_energies: tuple[float, float, float]
    amplitudes: tuple[float, float, float]
    frequencies: tuple[float, float, float]
    phase_offsets: tuple[float, float, float] = (0.0, 0.0, 0.0)
    phase_rates: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        nu0, nu1, nu2 = self.frequencies
        if abs(nu0 - (nu1 + nu2)) > 1e-9 * max(1.0, abs(nu0)):
            raise ValidationError(f"drive frequencies must close the loop: {nu0} != {nu1} + {nu2}")

    @property
    def frame_energies(self) -> np.ndarray:
        """Frame energies (0, nu_2, nu_0) of the rotating frame."""
        return np.array([0.0, self.frequencies[2], self.frequencies[0]])

    @property
    def energy_scale(self) -> float:
        return max(abs(e) for e in self.level_energies) + sum(abs(a) for a in self.amplitudes)


@dataclass(frozen=True)
class DressedBasis:
    bright: np.ndarray
    dark: np.ndarray
    auxiliary: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Columns |b>, |d>, |2> expressed in the bare basis."""
        return np.column_stack([self.bright, self.dark, self.auxiliary])

    def to_bare(self, op: np.ndarray) -> np.ndarray:
        m = self.matrix
        return m @ op @ m.conj().T


@dataclass
class BlochTrajectory:
    times: np.ndarray
    points: np.ndarray
    leakage: np.ndarray
    flagged: np.ndarray

    def path_length(self) -> float:
        total = 0.0
        for k in range(1, len(self.points)):
            if self.flagged[k] or self.flagged[k - 1]:
                continue
            total += float(np.linalg.norm(self.points[k] - self.points[k - 1]))
        return total


def bloch_vector(psi: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Bloch vector of the normalized computational projection, leakage, flag."""
    psi = np.asarray(psi, dtype=complex)
    comp = psi[:2]
    norm2 = float(np.vdot(comp, comp).real)
    leakage = max(0.0, float(np.vdot(psi, psi).real) - norm2)
    if math.sqrt(norm2) < PROJECTION_FLOOR:
        return np.full(3, np.nan), leakage, True
    c0, c1 = comp
    x = 2.0 * (np.conj(c0) * c1).real / norm2
    y = 2.0 * (np.conj(c0) * c1).imag / norm2
    z = (abs(c0) ** 2 - abs(c1) ** 2) / norm2
    return np.array([x, y, z]), leakage, False


def constraint_residuals(coupling: np.ndarray, omega: float) -> tuple[float, float]:
    """(l1, l2) = (1/2 [Tr(H_c^2) - omega^2/2], Tr(H_c sigma_z))."""
    h_c = np.asarray(coupling, dtype=complex)
    l1 = 0.5 * (np.trace(h_c @ h_c).real - 0.5 * omega ** 2)
    l2 = np.trace(h_c @ SIGMA_Z).real
    return float(l1), float(l2)


class DeltaSystem:
    """Hamiltonians, dressed basis and trajectories of the three-level Delta system."""

    def rotating_frame_batch(self, params: RotatingFrameParams, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        om0, om1, om2 = params.couplings
        d0, d1, d2 = params.detunings
        phi1 = params.ramp_phase(times)
        phi0 = params.phi + phi1
        h = np.zeros((times.shape[0], 3, 3), dtype=complex)
        h[:, 0, 0] = 0.5 * d0
        h[:, 1, 1] = 0.5 * d1
        h[:, 2, 2] = 0.5 * d2
        h[:, 2, 0] = 0.5 * om0 * np.exp(1j * phi0)
        h[:, 2, 1] = 0.5 * om1 * np.exp(1j * phi1)
        h[:, 1, 0] = 0.5 * om2 * np.exp(1j * params.phi)
        h[:, 0, 2] = np.conj(h[:, 2, 0])
        h[:, 1, 2] = np.conj(h[:, 2, 1])
        h[:, 0, 1] = np.conj(h[:, 1, 0])
        return h

    def rotating_frame_hamiltonian(self, params: RotatingFrameParams, t: float) -> np.ndarray:
        return self.rotating_frame_batch(params, np.array([t]))[0]

    def dressed_basis(self, theta: float, phi: float) -> DressedBasis:
        if not 0.0 <= theta <= math.pi:
            raise ValidationError(f"theta must lie in [0, pi], got {theta}")
        s, c = math.sin(theta / 2.0), math.cos(theta / 2.0)
        bright = np.array([s * np.exp(-1j * phi), c, 0.0], dtype=complex)
        dark = np.array([c, -s * np.exp(1j * phi), 0.0], dtype=complex)
        auxiliary = np.array([0.0, 0.0, 1.0], dtype=complex)
        return DressedBasis(bright=bright, dark=dark, auxiliary=auxiliary)

    def effective_batch(self, params: RotatingFrameParams, times: np.ndarray) -> np.ndarray:
        """Two-level Hamiltonian on (|b>, |2>)."""
        phi1 = params.ramp_phase(times)
        h = np.zeros((phi1.shape[0], 2, 2), dtype=complex)
        h[:, 0, 0] = -0.5 * params.delta2
        h[:, 1, 1] = 0.5 * params.delta2
        h[:, 0, 1] = 0.5 * params.omega * np.exp(-1j * phi1)
        h[:, 1, 0] = 0.5 * params.omega * np.exp(1j * phi1)
        return h

    def effective_hamiltonian(self, params: RotatingFrameParams, t: float) -> np.ndarray:
        return self.effective_batch(params, np.array([t]))[0]

    def coupling_hamiltonian(self, params: RotatingFrameParams, t: float) -> np.ndarray:
        h = self.effective_hamiltonian(params, t)
        return h - np.diag(np.diag(h))

    def toc_constraint_residuals(self, params: RotatingFrameParams, t: float) -> tuple[float, float]:
        return constraint_residuals(self.coupling_hamiltonian(params, t), params.omega)

    def rotating_frame_schedule(self, params: RotatingFrameParams, duration: float) -> Schedule:
        scale = max(params.omega, abs(params.delta2), abs(params.ramp), 1e-12)
        return Schedule(duration=duration, sampler=lambda ts: self.rotating_frame_batch(params, ts),
                        recommended_step=default_step(duration, scale))

    def effective_schedule(self, params: RotatingFrameParams, duration: float) -> Schedule:
        scale = max(params.omega, abs(params.delta2), abs(params.ramp), 1e-12)
        return Schedule(duration=duration, sampler=lambda ts: self.effective_batch(params, ts),
                        recommended_step=default_step(duration, scale))

    def lab_config_for(self, params: RotatingFrameParams, carrier_ratio: float = 200.0) -> LabFrameConfig:
        """Lab-frame drives whose rotating-wave limit is ``params``."""
        reference = params.omega if params.omega > 0 else 1.0
        nu1 = carrier_ratio * reference
        nu2 = 0.5 * nu1
        nu0 = nu1 + nu2
        frame = (0.0, nu2, nu0)
        detunings = params.detunings
        levels = tuple(w + 0.5 * d for w, d in zip(frame, detunings))
        return LabFrameConfig(
            level_energies=levels,
            amplitudes=params.couplings,
            frequencies=(nu0, nu1, nu2),
            phase_offsets=(params.phi + params.ramp_offset, params.ramp_offset, params.phi),
            phase_rates=(params.ramp, params.ramp, 0.0),
        )

    def lab_frame_batch(self, config: LabFrameConfig, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        h = np.zeros((times.shape[0], 3, 3), dtype=complex)
        for n, energy in enumerate(config.level_energies):
            h[:, n, n] = energy
        pairs = [(2, 0), (2, 1), (1, 0)]
        for k, (row, col) in enumerate(pairs):
            phase = config.phase_offsets[k] + config.phase_rates[k] * times
            drive = config.amplitudes[k] * np.cos(config.frequencies[k] * times - phase)
            h[:, row, col] = drive
            h[:, col, row] = drive
        return h

    def lab_frame_hamiltonian(self, config: LabFrameConfig, t: float) -> np.ndarray:
        return self.lab_frame_batch(config, np.array([t]))[0]

    def lab_frame_schedule(self, config: LabFrameConfig, duration: float) -> Schedule:
        return Schedule(duration=duration, sampler=lambda ts: self.lab_frame_batch(config, ts),
                        recommended_step=default_step(duration, config.energy_scale))

    def frame_transform(self, config: LabFrameConfig, t: float) -> np.ndarray:
        return np.diag(np.exp(-1j * config.frame_energies * t))

    def rotating_from_lab(self, config: LabFrameConfig, u_lab: np.ndarray, duration: float) -> np.ndarray:
        """U_0(tau)^dagger U_lab U_0(0)."""
        return self.frame_transform(config, duration).conj().T @ u_lab

    def bloch_trajectory(self, schedule: Schedule, initial: np.ndarray, samples: int = 201,
                         step: Optional[float] = None) -> BlochTrajectory:
        psi0 = validate_state(initial)
        if psi0.shape[0] != schedule.dim:
            raise ValidationError(f"initial state has dimension {psi0.shape[0]}, schedule {schedule.dim}")
        times = np.linspace(schedule.start, schedule.stop, samples)
        points = np.zeros((samples, 3))
        leakage = np.zeros(samples)
        flagged = np.zeros(samples, dtype=bool)
        for k, u in enumerate(quantum_core.propagate_samples(schedule, times, step=step)):
            points[k], leakage[k], flagged[k] = bloch_vector(u @ psi0)
        if np.any(flagged):
            LOG.info("Bloch trajectory has %d flagged points", int(np.sum(flagged)))
        return BlochTrajectory(times=times, points=points, leakage=leakage, flagged=flagged)


delta_system = DeltaSystem()
