from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Literal, Optional, Sequence

import numpy as np
from cachetools import LRUCache

from services.errors import IntegrationError, ValidationError

LOG = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10
TRACE_TOL = 1e-10
TRACE_DRIFT_LIMIT = 1e-6

GAUSS_OFFSET = math.sqrt(3.0) / 6.0
MAGNUS_COMMUTATOR = math.sqrt(3.0) / 12.0

# Upper bound on complex entries held per batched chunk.
CHUNK_ENTRIES = 1 << 20

Method = Literal["magnus4", "midpoint"]


def _scale(op: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(op)))) if op.size else 1.0


def is_hermitian(op: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        return False
    return float(np.max(np.abs(op - op.conj().T))) <= tol * _scale(op)


def is_unitary(op: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        return False
    eye = np.eye(op.shape[0])
    return float(np.max(np.abs(op.conj().T @ op - eye))) <= tol


def ket(dim: int, index: int) -> np.ndarray:
    psi = np.zeros(dim, dtype=complex)
    psi[index] = 1.0
    return psi


def projector(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def embed(op: np.ndarray, dim: int) -> np.ndarray:
    """Pad a square operator (or a vector) with zeros up to ``dim``."""
    op = np.asarray(op, dtype=complex)
    if op.ndim == 1:
        out = np.zeros(dim, dtype=complex)
        out[: op.shape[0]] = op
        return out
    out = np.zeros((dim, dim), dtype=complex)
    out[: op.shape[0], : op.shape[1]] = op
    return out


def validate_state(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1 or not np.all(np.isfinite(psi)):
        raise ValidationError("state vector must be a finite 1-d array")
    if abs(np.vdot(psi, psi).real - 1.0) > TRACE_TOL:
        raise ValidationError(f"state vector is not normalized (norm^2={np.vdot(psi, psi).real:.3e})")
    return psi


def validate_density(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if not is_hermitian(rho):
        raise ValidationError("density matrix is not Hermitian")
    trace = np.trace(rho).real
    if abs(trace - 1.0) > TRACE_TOL:
        raise ValidationError(f"density matrix trace is {trace:.12g}, expected 1")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -TRACE_TOL:
        raise ValidationError("density matrix is not positive semidefinite")
    return rho


def default_step(duration: float, energy_scale: float) -> float:
    """Default integration step: min(duration/2000, 0.002/energy_scale)."""
    step = duration / 2000.0
    if energy_scale > 0:
        step = min(step, 0.002 / energy_scale)
    return step


@dataclass(frozen=True)
class Schedule:
    """A time-dependent Hamiltonian on [start, start + duration].

    ``sampler`` maps an array of times to a stack of Hamiltonians. Piecewise
    schedules keep their smooth pieces in ``parts``; integrators never step
    across a breakpoint between parts.
    """

    duration: float
    sampler: Optional[Callable[[np.ndarray], np.ndarray]]
    recommended_step: float
    start: float = 0.0
    parts: tuple["Schedule", ...] = field(default=())

    @property
    def stop(self) -> float:
        return self.start + self.duration

    @property
    def dim(self) -> int:
        return self.hamiltonian_at(self.start).shape[0]

    def hamiltonian_at(self, t: float) -> np.ndarray:
        return self.sample(np.array([t], dtype=float))[0]

    def sample(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if not self.parts:
            return np.asarray(self.sampler(times), dtype=complex)
        bounds = np.array([p.start for p in self.parts[1:]])
        owner = np.searchsorted(bounds, times, side="right")
        first = self.parts[0].hamiltonian_at(self.parts[0].start)
        out = np.empty((times.shape[0],) + first.shape, dtype=complex)
        for index, part in enumerate(self.parts):
            mask = owner == index
            if np.any(mask):
                out[mask] = part.sample(times[mask])
        return out

    def pieces(self) -> list["Schedule"]:
        return list(self.parts) if self.parts else [self]

    def window(self, start: float, stop: float) -> "Schedule":
        """Restrict the schedule to the sub-interval [start, stop]."""
        if stop < start or start < self.start - 1e-12 or stop > self.stop + 1e-12:
            raise ValidationError(f"window [{start}, {stop}] outside schedule [{self.start}, {self.stop}]")
        if not self.parts:
            length = stop - start
            return replace(self, start=start, duration=length,
                           recommended_step=min(self.recommended_step, length) if length > 0 else self.recommended_step)
        kept = []
        for part in self.parts:
            lo, hi = max(start, part.start), min(stop, part.stop)
            if hi - lo > 1e-15:
                kept.append(part.window(lo, hi))
        if len(kept) == 1:
            return kept[0]
        return Schedule.sequence(kept)

    @classmethod
    def constant(cls, hamiltonian: np.ndarray, duration: float, start: float = 0.0,
                 step: Optional[float] = None) -> "Schedule":
        h = np.asarray(hamiltonian, dtype=complex)

        def sampler(times: np.ndarray) -> np.ndarray:
            return np.broadcast_to(h, (len(times),) + h.shape).copy()

        return cls(duration=duration, sampler=sampler, start=start,
                   recommended_step=step or default_step(duration, _scale(h)))

    @classmethod
    def sequence(cls, schedules: Sequence["Schedule"]) -> "Schedule":
        parts: list[Schedule] = []
        for sched in schedules:
            parts.extend(sched.pieces())
        for left, right in zip(parts, parts[1:]):
            if abs(left.stop - right.start) > 1e-9:
                raise ValidationError("schedule pieces must be contiguous")
        return cls(duration=parts[-1].stop - parts[0].start, sampler=None,
                   recommended_step=min(p.recommended_step for p in parts),
                   start=parts[0].start, parts=tuple(parts))


def ordered_product(stack: np.ndarray) -> np.ndarray:
    """Return U_n ... U_2 U_1 for a stack ordered in time."""
    mats = np.asarray(stack)
    dim = mats.shape[-1]
    if mats.shape[0] == 0:
        return np.eye(dim, dtype=complex)
    while mats.shape[0] > 1:
        if mats.shape[0] % 2:
            mats = np.concatenate([mats, np.eye(dim, dtype=complex)[None]], axis=0)
        mats = mats[1::2] @ mats[0::2]
    return mats[0]


def trace_fidelity(u_ideal: np.ndarray, u_actual: np.ndarray) -> float:
    """|Tr(U^dagger U')| / Tr(U^dagger U)."""
    u_ideal = np.asarray(u_ideal, dtype=complex)
    u_actual = np.asarray(u_actual, dtype=complex)
    if u_ideal.shape != u_actual.shape:
        raise ValidationError(f"shape mismatch {u_ideal.shape} vs {u_actual.shape}")
    norm = np.trace(u_ideal.conj().T @ u_ideal).real
    return float(abs(np.trace(u_ideal.conj().T @ u_actual)) / norm)


def state_fidelity(rho: np.ndarray, psi: np.ndarray) -> float:
    psi = np.asarray(psi, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    if psi.ndim != 1 or rho.shape != (psi.shape[0], psi.shape[0]):
        raise ValidationError(f"state of shape {psi.shape} does not match density matrix {rho.shape}")
    return float(np.vdot(psi, rho @ psi).real)


def cardinal_states() -> list[np.ndarray]:
    """The six Bloch-sphere cardinal states |0>, |1>, |+>, |->, |+i>, |-i>."""
    s = 1.0 / math.sqrt(2.0)
    return [
        np.array([1, 0], dtype=complex),
        np.array([0, 1], dtype=complex),
        np.array([s, s], dtype=complex),
        np.array([s, -s], dtype=complex),
        np.array([s, 1j * s], dtype=complex),
        np.array([s, -1j * s], dtype=complex),
    ]


def cardinal_gate_fidelity(ideal_gate: np.ndarray,
                           channel: Callable[[np.ndarray], np.ndarray]) -> float:
    """Average state fidelity of ``channel`` against ``ideal_gate`` over the cardinal states."""
    total = 0.0
    for psi in cardinal_states():
        rho = np.asarray(channel(psi), dtype=complex)
        target = embed(np.asarray(ideal_gate) @ psi, rho.shape[0])
        total += state_fidelity(rho, target)
    return total / 6.0


class QuantumCore:
    """Operator algebra, time-ordered propagation and open-system evolution."""

    def __init__(self):
        self.step_override: Optional[float] = None
        self._expm_cache = LRUCache(maxsize=512)
        self._lock = threading.Lock()

    def matrix_exponential(self, hamiltonian: np.ndarray, t: float) -> np.ndarray:
        """exp(-i H t) for a Hermitian H."""
        h = np.asarray(hamiltonian, dtype=complex)
        if not is_hermitian(h):
            raise ValidationError("matrix_exponential requires a Hermitian operator")
        key = (h.tobytes(), h.shape, float(t))
        with self._lock:
            cached = self._expm_cache.get(key)
        if cached is not None:
            return cached.copy()
        w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
        u = (v * np.exp(-1j * w * t)) @ v.conj().T
        with self._lock:
            self._expm_cache[key] = u
        return u.copy()

    def _resolve_step(self, schedule: Schedule, step: Optional[float]) -> float:
        if step is not None:
            if step <= 0 or not math.isfinite(step):
                raise ValidationError(f"integration step must be positive, got {step}")
            if step > schedule.duration + 1e-12:
                raise ValidationError(f"step {step} exceeds schedule duration {schedule.duration}")
            return step
        if self.step_override is not None:
            return min(self.step_override, schedule.duration) if schedule.duration > 0 else self.step_override
        return schedule.recommended_step

    @staticmethod
    def _require_hermitian_stack(stack: np.ndarray, times: np.ndarray) -> np.ndarray:
        deviation = np.max(np.abs(stack - np.conj(np.swapaxes(stack, -1, -2))), axis=(-2, -1))
        bad = np.flatnonzero(deviation > HERMITIAN_TOL * _scale(stack))
        if bad.size:
            raise ValidationError(f"schedule Hamiltonian is not Hermitian at t={times[bad[0]]:.6g}")
        return stack

    def _step_generators(self, piece: Schedule, t0: float, dt: float, count: int,
                         method: Method) -> np.ndarray:
        mids = t0 + (np.arange(count) + 0.5) * dt
        if method == "midpoint":
            return self._require_hermitian_stack(piece.sample(mids), mids)
        left, right = mids - GAUSS_OFFSET * dt, mids + GAUSS_OFFSET * dt
        h1 = self._require_hermitian_stack(piece.sample(left), left)
        h2 = self._require_hermitian_stack(piece.sample(right), right)
        return 0.5 * (h1 + h2) - 1j * MAGNUS_COMMUTATOR * dt * (h2 @ h1 - h1 @ h2)

    def _propagate_piece(self, piece: Schedule, step: float, method: Method) -> np.ndarray:
        dim = piece.dim
        if piece.duration <= 0:
            return np.eye(dim, dtype=complex)
        n_steps = max(1, math.ceil(piece.duration / step - 1e-9))
        dt = piece.duration / n_steps
        chunk = max(64, CHUNK_ENTRIES // (dim * dim))
        total = np.eye(dim, dtype=complex)
        for first in range(0, n_steps, chunk):
            count = min(chunk, n_steps - first)
            gens = self._step_generators(piece, piece.start + first * dt, dt, count, method)
            gens = 0.5 * (gens + np.conj(np.swapaxes(gens, -1, -2)))
            w, v = np.linalg.eigh(gens)
            steps = (v * np.exp(-1j * w * dt)[:, None, :]) @ np.conj(np.swapaxes(v, -1, -2))
            total = ordered_product(steps) @ total
        if not np.all(np.isfinite(total)):
            raise IntegrationError("propagator contains non-finite entries")
        return total

    def propagate(self, schedule: Schedule, step: Optional[float] = None,
                  method: Method = "magnus4") -> np.ndarray:
        """Time-ordered propagator of ``schedule`` by piecewise exponentiation."""
        if schedule.duration < 0:
            raise ValidationError("schedule duration must be non-negative")
        resolved = self._resolve_step(schedule, step) if schedule.duration > 0 else 1.0
        total = np.eye(schedule.dim, dtype=complex)
        for piece in schedule.pieces():
            initial = piece.hamiltonian_at(piece.start)
            if not is_hermitian(initial):
                raise ValidationError(f"schedule Hamiltonian is not Hermitian at t={piece.start}")
            total = self._propagate_piece(piece, min(resolved, piece.duration) if piece.duration > 0 else resolved,
                                          method) @ total
        if not is_unitary(total, tol=1e-8):
            raise IntegrationError("propagator lost unitarity")
        return total

    def propagate_samples(self, schedule: Schedule, times: Iterable[float],
                          step: Optional[float] = None) -> list[np.ndarray]:
        """Propagators U(t_k, start) at increasing sample times."""
        times = list(times)
        out = []
        current = np.eye(schedule.dim, dtype=complex)
        previous = schedule.start
        for t in times:
            if t > previous:
                window = schedule.window(previous, t)
                current = self.propagate(window, step=min(step, window.duration) if step else None) @ current
                previous = t
            out.append(current.copy())
        return out

    @staticmethod
    def _dissipators(collapse_ops: Sequence[np.ndarray], rates: Sequence[float]):
        if len(collapse_ops) != len(rates):
            raise ValidationError("collapse_ops and rates must have the same length")
        terms = []
        for op, rate in zip(collapse_ops, rates):
            if rate < 0:
                raise ValidationError(f"negative dissipation rate {rate}")
            if rate == 0:
                continue
            a = np.asarray(op, dtype=complex)
            ad = a.conj().T
            terms.append((a, ad, ad @ a, float(rate)))
        return terms

    @staticmethod
    def _lindblad_rhs(rho: np.ndarray, h: np.ndarray, terms) -> np.ndarray:
        # i[rho, H] + sum (G/2)(2 A rho A^dagger - A^dagger A rho - rho A^dagger A)
        drho = -1j * (h @ rho - rho @ h)
        for a, ad, ada, rate in terms:
            drho = drho + 0.5 * rate * (2.0 * a @ rho @ ad - ada @ rho - rho @ ada)
        return drho

    def _lindblad_piece(self, piece: Schedule, rho: np.ndarray, terms, step: float) -> np.ndarray:
        if piece.duration <= 0:
            return rho
        n_steps = max(1, math.ceil(piece.duration / step - 1e-9))
        dt = piece.duration / n_steps
        hs = piece.sample(piece.start + 0.5 * dt * np.arange(2 * n_steps + 1))
        for k in range(n_steps):
            h0, hm, h1 = hs[2 * k], hs[2 * k + 1], hs[2 * k + 2]
            k1 = self._lindblad_rhs(rho, h0, terms)
            k2 = self._lindblad_rhs(rho + 0.5 * dt * k1, hm, terms)
            k3 = self._lindblad_rhs(rho + 0.5 * dt * k2, hm, terms)
            k4 = self._lindblad_rhs(rho + dt * k3, h1, terms)
            rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return rho

    def _check_density_stack(self, rho: np.ndarray, traces0: np.ndarray, t: float) -> None:
        if not np.all(np.isfinite(rho)):
            raise IntegrationError(f"density matrix became non-finite at t={t:.6g}")
        drift = np.max(np.abs(np.trace(rho, axis1=-2, axis2=-1) - traces0))
        if drift > TRACE_DRIFT_LIMIT:
            raise IntegrationError(f"trace drift {drift:.3e} exceeds {TRACE_DRIFT_LIMIT} at t={t:.6g}")
        herm = np.max(np.abs(rho - np.conj(np.swapaxes(rho, -1, -2))))
        if herm > TRACE_DRIFT_LIMIT:
            raise IntegrationError(f"density matrix lost Hermiticity ({herm:.3e}) at t={t:.6g}")

    def _lindblad_run(self, schedule: Schedule, collapse_ops, rates, rho0: np.ndarray,
                      times: Sequence[float], step: Optional[float]) -> list[np.ndarray]:
        terms = self._dissipators(collapse_ops, rates)
        resolved = self._resolve_step(schedule, step) if schedule.duration > 0 else 1.0
        rho = np.asarray(rho0, dtype=complex)
        traces0 = np.trace(rho, axis1=-2, axis2=-1)
        out = []
        previous = schedule.start
        for t in times:
            if t > previous:
                for piece in schedule.window(previous, t).pieces():
                    rho = self._lindblad_piece(piece, rho, terms, min(resolved, piece.duration))
                previous = t
                self._check_density_stack(rho, traces0, t)
            out.append(rho.copy())
        return out

    def lindblad_evolve(self, schedule: Schedule, collapse_ops: Sequence[np.ndarray],
                        rates: Sequence[float], rho0: np.ndarray,
                        step: Optional[float] = None) -> np.ndarray:
        """Fixed-step RK4 integration of the Lindblad master equation."""
        rho0 = validate_density(rho0)
        return self._lindblad_run(schedule, collapse_ops, rates, rho0, [schedule.stop], step)[-1]

    def lindblad_series(self, schedule: Schedule, collapse_ops: Sequence[np.ndarray],
                        rates: Sequence[float], rho0: np.ndarray, samples: int = 101,
                        step: Optional[float] = None) -> tuple[np.ndarray, list[np.ndarray]]:
        rho0 = validate_density(rho0)
        times = np.linspace(schedule.start, schedule.stop, samples)
        return times, self._lindblad_run(schedule, collapse_ops, rates, rho0, list(times), step)

    def lindblad_channel(self, schedule: Schedule, collapse_ops: Sequence[np.ndarray],
                         rates: Sequence[float],
                         step: Optional[float] = None) -> Callable[[np.ndarray], np.ndarray]:
        """Channel on 2-dim computational inputs, from one batched run of the |i><j| block basis."""
        dim = schedule.dim
        # Hermitian basis: |0><0|, |1><1|, X and Y on the computational block.
        basis = np.zeros((4, dim, dim), dtype=complex)
        basis[0, 0, 0] = basis[1, 1, 1] = 1.0
        basis[2, 0, 1] = basis[2, 1, 0] = 1.0
        basis[3, 0, 1], basis[3, 1, 0] = -1j, 1j
        images = self._lindblad_run(schedule, collapse_ops, rates, basis, [schedule.stop], step)[-1]

        def channel(psi: np.ndarray) -> np.ndarray:
            psi = validate_state(np.asarray(psi, dtype=complex)[:2])
            rho = np.outer(psi, psi.conj())
            coeffs = np.array([rho[0, 0].real, rho[1, 1].real, rho[0, 1].real, -rho[0, 1].imag])
            return np.tensordot(coeffs, images, axes=1)

        return channel

    trace_fidelity = staticmethod(trace_fidelity)
    state_fidelity = staticmethod(state_fidelity)
    cardinal_gate_fidelity = staticmethod(cardinal_gate_fidelity)


quantum_core = QuantumCore()
