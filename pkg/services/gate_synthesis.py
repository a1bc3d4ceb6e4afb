from __future__ import annotations

import logging
import math
import threading
from typing import Literal

import numpy as np
from cachetools import LRUCache
from pydantic import BaseModel, ConfigDict, field_validator

from services.delta_system import RotatingFrameParams, delta_system
from services.errors import DomainError, ValidationError
from services.quantum_core import Schedule, default_step, quantum_core

LOG = logging.getLogger(__name__)

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

Axis = Literal["x", "y", "z"]


class GateSpec(BaseModel):
    """Target rotation: angle gamma about the axis set by (theta, phi)."""

    model_config = ConfigDict(frozen=True)

    gamma: float
    theta: float
    phi: float

    @field_validator("theta")
    @classmethod
    def _theta_range(cls, value: float) -> float:
        if not 0.0 <= value <= math.pi:
            raise ValueError("theta must lie in [0, pi]")
        return value

    @classmethod
    def rx(cls, angle: float) -> "GateSpec":
        return cls(gamma=angle, theta=math.pi / 2, phi=math.pi)

    @classmethod
    def ry(cls, angle: float) -> "GateSpec":
        return cls(gamma=angle, theta=math.pi / 2, phi=math.pi / 2)

    @classmethod
    def rz(cls, angle: float) -> "GateSpec":
        return cls(gamma=angle, theta=math.pi, phi=math.pi)

    @classmethod
    def preset(cls, axis: Axis, angle: float) -> "GateSpec":
        return {"x": cls.rx, "y": cls.ry, "z": cls.rz}[axis](angle)

    @property
    def axis_vector(self) -> np.ndarray:
        """n = (sin theta cos phi, sin theta sin phi, -cos theta)."""
        return np.array([
            math.sin(self.theta) * math.cos(self.phi),
            math.sin(self.theta) * math.sin(self.phi),
            -math.cos(self.theta),
        ])


class DriveSolution(BaseModel):
    model_config = ConfigDict(frozen=True)

    omega: float
    delta2: float
    eta: float
    c: float
    tau: float
    xi: float
    chi: float
    gamma: float

    @property
    def tau_c(self) -> float:
        return 2.0 * math.pi / self.omega

    @property
    def tau_ratio(self) -> float:
        return self.tau / self.tau_c

    def rotating_params(self, theta: float, phi: float) -> RotatingFrameParams:
        return RotatingFrameParams(omega=self.omega, theta=theta, phi=phi,
                                   delta2=self.delta2, ramp=self.eta)


class TwoQubitDriveSolution(BaseModel):
    model_config = ConfigDict(frozen=True)

    g: float
    delta3: float
    eta: float
    tau: float
    gamma: float
    xi: float
    chi: float
    j: float


def accelerating_detuning(gamma: float, magnitude: float) -> float:
    """Signed detuning sign(gamma - pi) * |magnitude| that shortens the gate."""
    sign = -1.0 if gamma < math.pi else 1.0
    return sign * abs(magnitude)


def closed_form_tau(gamma: float, delta2: float, eta: float, omega: float) -> float:
    """tau_c * sqrt(1 - (gamma/pi - 1)^2 (1 + delta2/eta)^2), defined for eta != 0."""
    tau_c = 2.0 * math.pi / omega
    return tau_c * math.sqrt(1.0 - (gamma / math.pi - 1.0) ** 2 * (1.0 + delta2 / eta) ** 2)


def _solve_quadratic(gamma: float, offset: float, coupling: float, sign: float) -> float:
    """Root of (pi^2 - k) x^2 - 2 pi^2 d x + pi^2 d^2 - k c^2 = 0 with sign(x - d) = sign."""
    k = (gamma - math.pi) ** 2
    pi2 = math.pi ** 2
    root = math.sqrt(k * (pi2 * offset ** 2 + (pi2 - k) * coupling ** 2))
    return (pi2 * offset + sign * root) / (pi2 - k)


def _check_gamma(gamma: float) -> None:
    if not (0.0 < gamma < 2.0 * math.pi) or not math.isfinite(gamma):
        raise DomainError(f"rotation angle {gamma} outside (0, 2*pi)")


class GateSynthesis:
    """Time-optimal drive solutions, analytic gates and baseline schemes."""

    def __init__(self):
        self._solutions = LRUCache(maxsize=8192)
        self._lock = threading.Lock()

    def solve_toc_parameters(self, gamma: float, delta2: float, omega: float = 1.0) -> DriveSolution:
        _check_gamma(gamma)
        if omega <= 0:
            raise ValidationError(f"omega must be positive, got {omega}")
        key = ("single", gamma, delta2, omega)
        with self._lock:
            cached = self._solutions.get(key)
        if cached is not None:
            return cached
        if gamma == math.pi:
            x = delta2
        else:
            x = _solve_quadratic(gamma, delta2, omega, 1.0 if gamma > math.pi else -1.0)
        eta = x - delta2
        rabi = math.hypot(omega, x)
        tau = 2.0 * math.pi / rabi
        solution = DriveSolution(
            omega=omega, delta2=delta2, eta=eta, c=(eta - delta2) / omega, tau=tau,
            xi=rabi * tau / 2.0, chi=2.0 * math.atan2(omega, x), gamma=gamma,
        )
        target = np.diag([np.exp(-1j * gamma), np.exp(1j * gamma)])
        if np.max(np.abs(self.analytic_unitary(solution) - target)) > 1e-9:
            raise DomainError(f"no time-optimal solution reproduces gamma={gamma}")
        with self._lock:
            self._solutions[key] = solution
        return solution

    def analytic_unitary(self, sol: DriveSolution) -> np.ndarray:
        """Closed-form evolution on (|b>, |2>) at t = tau."""
        half = 0.5 * sol.chi
        s, c = math.sin(sol.xi), math.cos(sol.xi)
        block = np.array([
            [c + 1j * s * math.cos(half), -1j * s * math.sin(half)],
            [-1j * s * math.sin(half), c - 1j * s * math.cos(half)],
        ])
        prefactor = np.diag([np.exp(-0.5j * sol.eta * sol.tau), np.exp(0.5j * sol.eta * sol.tau)])
        return prefactor @ block

    def holonomic_gate(self, spec: GateSpec, delta2: float = 0.0, omega: float = 1.0) -> np.ndarray:
        """e^{-i gamma/2} exp(-i (gamma/2) n.sigma) on the computational subspace."""
        self.solve_toc_parameters(spec.gamma, delta2, omega)
        return self.ideal_gate(spec)

    def ideal_gate(self, spec: GateSpec) -> np.ndarray:
        n = spec.axis_vector
        n_sigma = n[0] * PAULI_X + n[1] * PAULI_Y + n[2] * PAULI_Z
        half = 0.5 * spec.gamma
        return np.exp(-1j * half) * (math.cos(half) * np.eye(2) - 1j * math.sin(half) * n_sigma)

    def embed_dressed(self, block: np.ndarray, theta: float, phi: float) -> np.ndarray:
        """Lift a (|b>, |2>) operator to the bare 3-level basis with |d> left invariant."""
        dressed = np.zeros((3, 3), dtype=complex)
        dressed[np.ix_([0, 2], [0, 2])] = block
        dressed[1, 1] = 1.0
        return delta_system.dressed_basis(theta, phi).to_bare(dressed)

    def toc_schedule(self, spec: GateSpec, sol: DriveSolution) -> Schedule:
        """Rotating-frame 3-level schedule realizing ``spec`` with ``sol``."""
        return delta_system.rotating_frame_schedule(sol.rotating_params(spec.theta, spec.phi), sol.tau)

    def effective_schedule(self, sol: DriveSolution) -> Schedule:
        params = RotatingFrameParams(omega=sol.omega, theta=math.pi / 2, phi=0.0,
                                     delta2=sol.delta2, ramp=sol.eta)
        return delta_system.effective_schedule(params, sol.tau)

    def single_loop_schedule(self, spec: GateSpec, omega: float = 1.0) -> Schedule:
        """Two resonant pi-area segments on |b> <-> |2>, phases 0 and pi + gamma."""
        if omega <= 0:
            raise ValidationError(f"omega must be positive, got {omega}")
        basis = delta_system.dressed_basis(spec.theta, spec.phi)
        half = math.pi / omega
        segments = []
        for index, phase in enumerate((0.0, math.pi + spec.gamma)):
            h = np.zeros((3, 3), dtype=complex)
            h[0, 2] = 0.5 * omega * np.exp(-1j * phase)
            h[2, 0] = np.conj(h[0, 2])
            segments.append(Schedule.constant(basis.to_bare(h), half, start=index * half,
                                              step=default_step(half, omega)))
        return Schedule.sequence(segments)

    def single_loop_baseline(self, spec: GateSpec, omega: float = 1.0) -> tuple[np.ndarray, float]:
        schedule = self.single_loop_schedule(spec, omega)
        total = np.eye(3, dtype=complex)
        for piece in schedule.pieces():
            total = quantum_core.matrix_exponential(piece.hamiltonian_at(piece.start), piece.duration) @ total
        return total[:2, :2], schedule.duration

    def toc_baseline(self, spec: GateSpec, omega: float = 1.0) -> DriveSolution:
        return self.solve_toc_parameters(spec.gamma, 0.0, omega)

    def acceleration_curve(self, gamma: float, detunings: np.ndarray, omega: float = 1.0) -> np.ndarray:
        """tau/tau_c for each detuning at fixed gamma."""
        return np.array([self.solve_toc_parameters(gamma, float(d), omega).tau_ratio for d in detunings])

    def solve_two_qubit_parameters(self, gamma: float, g: float, delta3: float = 0.0) -> TwoQubitDriveSolution:
        _check_gamma(gamma)
        if g <= 0:
            raise ValidationError(f"effective coupling must be positive, got {g}")
        key = ("two", gamma, g, delta3)
        with self._lock:
            cached = self._solutions.get(key)
        if cached is not None:
            return cached
        offset = 0.5 * delta3
        if gamma == math.pi:
            x = offset
        else:
            # x' = (delta3 - eta')/2 lies below delta3/2 when gamma > pi
            x = _solve_quadratic(gamma, offset, g, -1.0 if gamma > math.pi else 1.0)
        eta = 2.0 * (offset - x)
        rabi = math.hypot(g, x)
        tau = math.pi / rabi
        solution = TwoQubitDriveSolution(
            g=g, delta3=delta3, eta=eta, tau=tau, gamma=gamma, xi=rabi * tau,
            chi=2.0 * math.atan2(2.0 * g, delta3 - eta), j=rabi,
        )
        target = np.diag([np.exp(1j * gamma), np.exp(-1j * gamma)])
        if np.max(np.abs(self.two_qubit_analytic_unitary(solution) - target)) > 1e-9:
            raise DomainError(f"no cyclic solution reproduces gamma'={gamma}")
        with self._lock:
            self._solutions[key] = solution
        return solution

    def two_qubit_analytic_unitary(self, sol: TwoQubitDriveSolution) -> np.ndarray:
        """Closed-form evolution on (|10>_L, |f>_L) in the split frame."""
        half = 0.5 * sol.chi
        s, c = math.sin(sol.xi), math.cos(sol.xi)
        block = np.array([
            [c + 1j * s * math.cos(half), -1j * s * math.sin(half)],
            [-1j * s * math.sin(half), c - 1j * s * math.cos(half)],
        ])
        prefactor = np.diag([np.exp(0.5j * sol.eta * sol.tau), np.exp(-0.5j * sol.eta * sol.tau)])
        return prefactor @ block

    def two_qubit_interaction_schedule(self, sol: TwoQubitDriveSolution) -> Schedule:
        """Reduced interaction-picture Hamiltonian on (|11>_23, |20>_23) with phi'(t) = eta' t."""

        def sampler(times: np.ndarray) -> np.ndarray:
            h = np.zeros((times.shape[0], 2, 2), dtype=complex)
            h[:, 1, 0] = sol.g * np.exp(-1j * sol.eta * times) * np.exp(1j * sol.delta3 * times)
            h[:, 0, 1] = np.conj(h[:, 1, 0])
            return h

        scale = max(sol.g, abs(sol.delta3), abs(sol.eta))
        return Schedule(duration=sol.tau, sampler=sampler, recommended_step=default_step(sol.tau, scale))

    def two_qubit_frame_correction(self, delta3: float, t: float) -> np.ndarray:
        """U_2(t)^dagger on (|11>_23, |20>_23)."""
        return np.diag([np.exp(0.5j * delta3 * t), np.exp(-0.5j * delta3 * t)])

    def two_qubit_gate(self, gamma: float) -> np.ndarray:
        _check_gamma(gamma)
        return np.diag([1.0, 1.0, np.exp(1j * gamma), 1.0]).astype(complex)


gate_synthesis = GateSynthesis()
