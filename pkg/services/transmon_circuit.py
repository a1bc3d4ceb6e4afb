from __future__ import annotations

import itertools
import logging
import math
import threading
from dataclasses import dataclass
from functools import reduce
from typing import Literal, Optional, Sequence

import numpy as np
import pandas as pd
from cachetools import LRUCache
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize, special

from services.delta_system import RotatingFrameParams
from services.errors import CapabilityError, DomainError, ValidationError
from services.gate_synthesis import DriveSolution, GateSpec, TwoQubitDriveSolution, gate_synthesis
from services.quantum_core import Schedule, quantum_core, trace_fidelity

LOG = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
LEVELS = 3
BESSEL_LIMIT = 10.0
J1_PEAK_ARG = float(special.jnp_zeros(1, 1)[0])  # ~1.8412
J1_PEAK = float(special.j1(J1_PEAK_ARG))  # ~0.581865
LEAKAGE_FLAG = 0.1
G12_TOLERANCE = 0.05
# Step as a fraction of the fastest lab-frame phase rate.
STEP_SCALE = 0.1

UNIT_SITES = ("1", "a", "2")
PAIR_SITES = ("2", "3")

LOWER = np.array([[0, 1, 0], [0, 0, math.sqrt(2.0)], [0, 0, 0]], dtype=complex)


def bessel_j1(x: float) -> float:
    if not math.isfinite(x) or abs(x) > BESSEL_LIMIT:
        raise DomainError(f"J1 argument {x} outside [-{BESSEL_LIMIT}, {BESSEL_LIMIT}]")
    return float(special.j1(x))


def invert_bessel_j1(value: float) -> float:
    """beta on the monotone branch [0, 1.8412) with J1(beta) = value."""
    if value < 0:
        raise DomainError(f"J1 inversion needs a non-negative value, got {value}")
    if value == 0:
        return 0.0
    if value >= J1_PEAK:
        raise CapabilityError(f"required J1 value {value:.6f} exceeds the J1 peak {J1_PEAK:.6f}")
    return float(optimize.brentq(lambda b: special.j1(b) - value, 0.0, J1_PEAK_ARG, xtol=1e-15, rtol=1e-15))


class TransmonParams(BaseModel):
    """Transmon in GHz: 0->1 frequency and anharmonicity (level 2 at 2f - alpha)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    frequency: float = Field(gt=0)
    anharmonicity: float = Field(0.25, gt=0)

    @property
    def omega_q(self) -> float:
        return TWO_PI * self.frequency

    @property
    def alpha(self) -> float:
        return TWO_PI * self.anharmonicity


class ParametricDrive(BaseModel):
    """Frequency modulation omega_q(t) = omega_q + beta (nu + phase_rate) sin(Phi(t)).

    Phi(t) = nu t + phase + phase_rate t. Angular quantities are in rad/ns.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    beta: float = Field(0.0, ge=0)
    nu: float = 0.0
    phase: float = 0.0
    phase_rate: float = 0.0

    @property
    def amplitude(self) -> float:
        return self.beta * (self.nu + self.phase_rate)

    def total_phase(self, times: np.ndarray) -> np.ndarray:
        return (self.nu + self.phase_rate) * np.asarray(times, dtype=float) + self.phase

    def modulation(self, times: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(self.total_phase(times))

    def frame_phase(self, times: np.ndarray) -> np.ndarray:
        return -self.beta * np.cos(self.total_phase(times))


class LatticeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    transmons: dict[str, TransmonParams]
    couplings: dict[str, float] = {}
    drives: dict[str, ParametricDrive] = {}
    g12_mode: Literal["design", "fixed"] = "design"

    @model_validator(mode="after")
    def _check_pairs(self) -> "LatticeConfig":
        seen: dict[frozenset, float] = {}
        for key, value in self.couplings.items():
            ends = key.split("-")
            if len(ends) != 2 or ends[0] == ends[1]:
                raise ValueError(f"coupling key '{key}' must name two distinct transmons as 'i-j'")
            missing = [e for e in ends if e not in self.transmons]
            if missing:
                raise ValueError(f"coupling '{key}' references undeclared transmon(s) {missing}")
            pair = frozenset(ends)
            if pair in seen and seen[pair] != value:
                raise ValueError(f"coupling '{key}' declared twice with different strengths")
            seen[pair] = value
        for name in self.drives:
            if name not in self.transmons:
                raise ValueError(f"drive on undeclared transmon '{name}'")
        return self

    @classmethod
    def default(cls) -> "LatticeConfig":
        return cls(
            transmons={
                "1": TransmonParams(frequency=5.2),
                "a": TransmonParams(frequency=6.0),
                "2": TransmonParams(frequency=4.6),
                "3": TransmonParams(frequency=3.35),
            },
            couplings={"1-a": 0.015, "a-2": 0.015, "1-2": 0.003, "2-3": 0.015},
        )

    def coupling(self, first: str, second: str) -> Optional[float]:
        """Angular coupling strength between two transmons, None when undeclared."""
        for key in (f"{first}-{second}", f"{second}-{first}"):
            if key in self.couplings:
                return TWO_PI * self.couplings[key]
        return None

    def require_coupling(self, first: str, second: str) -> float:
        value = self.coupling(first, second)
        if value is None:
            raise ValidationError(f"lattice has no coupling between transmons {first} and {second}")
        return value

    def with_coupling(self, first: str, second: str, angular: float) -> "LatticeConfig":
        couplings = {k: v for k, v in self.couplings.items() if set(k.split("-")) != {first, second}}
        couplings[f"{first}-{second}"] = angular / TWO_PI
        return self.model_copy(update={"couplings": couplings})

    def with_drives(self, drives: dict[str, ParametricDrive]) -> "LatticeConfig":
        return self.model_copy(update={"drives": dict(drives)})

    def scaled(self, factor: float, reference: str = "a") -> "LatticeConfig":
        """Scale every frequency separation from ``reference`` and every anharmonicity by ``factor``."""
        base = self.transmons[reference].frequency
        transmons = {
            name: TransmonParams(frequency=base + factor * (p.frequency - base),
                                 anharmonicity=factor * p.anharmonicity)
            for name, p in self.transmons.items()
        }
        return self.model_copy(update={"transmons": transmons, "drives": {}})


@dataclass(frozen=True)
class DriveMapping:
    spec: GateSpec
    solution: DriveSolution
    delta_primes: tuple[float, float, float]
    betas: tuple[float, float]
    nus: tuple[float, float]
    required_g12: float
    configured_g12: float
    lattice: LatticeConfig

    def phi_prime_1(self, t: float) -> float:
        return self.spec.phi + self.solution.eta * t

    def phi_prime_2(self, t: float) -> float:
        return -self.solution.eta * t

    def rotating_params(self) -> RotatingFrameParams:
        return self.solution.rotating_params(self.spec.theta, self.spec.phi)


@dataclass
class LogicalGateResult:
    unitary: np.ndarray
    computational: np.ndarray
    fidelity: float
    leakage: pd.DataFrame
    final_leakage: float
    double_excitation: float
    level2: float
    flagged: bool
    mapping: DriveMapping


@dataclass
class TwoQubitResult:
    operator: np.ndarray
    logical: np.ndarray
    fidelity: float
    solution: TwoQubitDriveSolution
    auxiliary_population: float
    drive: ParametricDrive


def _basis(sites: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(LEVELS), repeat=sites))


def _index(levels: Sequence[int]) -> int:
    return reduce(lambda acc, n: acc * LEVELS + n, levels, 0)


def _local(op: np.ndarray, site: int, sites: int) -> np.ndarray:
    factors = [op if k == site else np.eye(LEVELS) for k in range(sites)]
    return reduce(np.kron, factors)


# Single unit: |0>_L = |100>, |e>_L = |010>, |1>_L = |001> in site order (1, a, 2).
LOGICAL_ZERO = _index((1, 0, 0))
LOGICAL_EXCITED = _index((0, 1, 0))
LOGICAL_ONE = _index((0, 0, 1))
UNIT_LOGICAL = [LOGICAL_ZERO, LOGICAL_EXCITED, LOGICAL_ONE]

# Pair (2, 3): logical order |00>_L..|11>_L is |01>, |00>, |11>, |10>; |f>_L is |20>.
PAIR_LOGICAL = [_index((0, 1)), _index((0, 0)), _index((1, 1)), _index((1, 0)), _index((2, 0))]


class TransmonCircuit:
    """Physical transmon realization of the Delta-system gates."""

    def __init__(self):
        self._couplings = LRUCache(maxsize=64)
        self._lock = threading.Lock()

    def _coupling_matrix(self, cfg: LatticeConfig, sites: Sequence[str]) -> np.ndarray:
        key = (cfg.model_dump_json(exclude={"drives"}), tuple(sites))
        with self._lock:
            cached = self._couplings.get(key)
        if cached is not None:
            return cached
        count = len(sites)
        dim = LEVELS ** count
        x_ops = [_local(LOWER + LOWER.conj().T, k, count) for k in range(count)]
        v = np.zeros((dim, dim), dtype=complex)
        for i, j in itertools.combinations(range(count), 2):
            g = cfg.coupling(sites[i], sites[j])
            if g:
                v += g * (x_ops[i] @ x_ops[j])
        with self._lock:
            self._couplings[key] = v
        return v

    @staticmethod
    def _occupations(sites: int) -> tuple[np.ndarray, np.ndarray]:
        states = np.array(_basis(sites))
        return (states == 1).astype(float), (states == 2).astype(float)

    def _diagonal(self, cfg: LatticeConfig, sites: Sequence[str], times: np.ndarray) -> np.ndarray:
        n1, n2 = self._occupations(len(sites))
        energy = np.zeros((times.shape[0], n1.shape[0]))
        for k, name in enumerate(sites):
            params = cfg.transmons[name]
            omega_t = np.full(times.shape[0], params.omega_q)
            if name in cfg.drives:
                omega_t = omega_t + cfg.drives[name].modulation(times)
            energy += omega_t[:, None] * n1[None, :, k] + (2.0 * omega_t[:, None] - params.alpha) * n2[None, :, k]
        return energy

    def physical_batch(self, cfg: LatticeConfig, sites: Sequence[str], times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        v = self._coupling_matrix(cfg, sites)
        energy = self._diagonal(cfg, sites, times)
        h = np.broadcast_to(v, (times.shape[0],) + v.shape).copy()
        idx = np.arange(v.shape[0])
        h[:, idx, idx] += energy
        return h

    def physical_hamiltonian_single_unit(self, cfg: LatticeConfig, t: float) -> np.ndarray:
        for first, second in (("1", "a"), ("a", "2"), ("1", "2")):
            cfg.require_coupling(first, second)
        return self.physical_batch(cfg, UNIT_SITES, np.array([t]))[0]

    def _frame(self, cfg: LatticeConfig, sites: Sequence[str], residuals: Sequence[float],
               times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Frame phases F(t) and rates dF/dt on the product basis."""
        n1, n2 = self._occupations(len(sites))
        phase = np.zeros((times.shape[0], n1.shape[0]))
        rate = np.zeros_like(phase)
        for k, name in enumerate(sites):
            params = cfg.transmons[name]
            first = params.omega_q - residuals[k]
            second = 2.0 * params.omega_q - params.alpha - residuals[k]
            static = first * n1[:, k] + second * n2[:, k]
            phase += times[:, None] * static[None, :]
            rate += static[None, :]
            if name in cfg.drives:
                drive = cfg.drives[name]
                weight = n1[:, k] + 2.0 * n2[:, k]
                phase += drive.frame_phase(times)[:, None] * weight[None, :]
                rate += drive.modulation(times)[:, None] * weight[None, :]
        return phase, rate

    def frame_batch(self, cfg: LatticeConfig, sites: Sequence[str], residuals: Sequence[float],
                    times: np.ndarray) -> np.ndarray:
        """e^{iF} H e^{-iF} - dF/dt, evaluated numerically."""
        times = np.asarray(times, dtype=float)
        h = self.physical_batch(cfg, sites, times)
        phase, rate = self._frame(cfg, sites, residuals, times)
        rot = np.exp(1j * phase)
        h = rot[:, :, None] * h * np.conj(rot)[:, None, :]
        idx = np.arange(h.shape[-1])
        h[:, idx, idx] -= rate
        return 0.5 * (h + np.conj(np.swapaxes(h, -1, -2)))

    def _recommended_step(self, cfg: LatticeConfig, sites: Sequence[str], duration: float) -> float:
        fastest = 2.0 * max(cfg.transmons[s].omega_q for s in sites)
        fastest += sum(abs(cfg.drives[s].amplitude) for s in sites if s in cfg.drives)
        return min(duration / 2000.0, STEP_SCALE / fastest)

    def frame_schedule(self, cfg: LatticeConfig, sites: Sequence[str], residuals: Sequence[float],
                       duration: float) -> Schedule:
        return Schedule(duration=duration,
                        sampler=lambda ts: self.frame_batch(cfg, sites, residuals, ts),
                        recommended_step=self._recommended_step(cfg, sites, duration))

    def unit_propagator(self, cfg: LatticeConfig, residuals: Sequence[float], duration: float) -> np.ndarray:
        return quantum_core.propagate(self.frame_schedule(cfg, UNIT_SITES, residuals, duration))

    def map_gate_to_drives(self, spec: GateSpec, delta2: float, omega: float,
                           cfg: LatticeConfig) -> DriveMapping:
        sol = gate_synthesis.solve_toc_parameters(spec.gamma, delta2, omega)
        s, c = math.sin(spec.theta / 2.0), math.cos(spec.theta / 2.0)
        residuals = (-0.5 * delta2 * s * s, 0.5 * delta2, -0.5 * delta2 * c * c)
        g1a = cfg.require_coupling("1", "a")
        ga2 = cfg.require_coupling("a", "2")
        g12 = cfg.require_coupling("1", "2")

        betas = []
        for label, g, need in (("g_1a J1(beta_1)", g1a, 0.5 * omega * s), ("g_a2 J1(beta_2)", ga2, 0.5 * omega * c)):
            if need < 1e-12 * omega:
                betas.append(0.0)
                continue
            if g <= 0 or need / g >= J1_PEAK:
                available = max(g, 0.0) * J1_PEAK
                raise CapabilityError(f"unattainable coupling: {label} = {need:.6g} rad/ns needed, "
                                      f"at most {available:.6g} rad/ns available")
            betas.append(invert_bessel_j1(need / g))

        product = bessel_j1(betas[0]) * bessel_j1(betas[1])
        need12 = -0.5 * delta2 * s * c
        if product > 0:
            required = need12 / product
        else:
            required = g12
        if cfg.g12_mode == "fixed":
            mismatch = abs(g12 - required)
            if mismatch > G12_TOLERANCE * max(abs(required), 1e-12):
                raise CapabilityError(f"g_12 product constraint violated: need g_12 = {required / TWO_PI:.6g} GHz, "
                                      f"configured {g12 / TWO_PI:.6g} GHz")
            used = g12
        else:
            used = required
            if abs(g12 - required) > G12_TOLERANCE * max(abs(required), 1e-12):
                LOG.warning("g_12 redesigned from %.6g GHz to %.6g GHz", g12 / TWO_PI, required / TWO_PI)

        omega1, omega_a, omega2 = (cfg.transmons[n].omega_q for n in UNIT_SITES)
        nu1 = (omega1 - residuals[0]) - (omega_a - residuals[1])
        nu2 = (omega_a - residuals[1]) - (omega2 - residuals[2])
        drives = {
            "1": ParametricDrive(beta=betas[0], nu=nu1, phase=spec.phi - math.pi / 2, phase_rate=sol.eta),
            "2": ParametricDrive(beta=betas[1], nu=nu2, phase=math.pi / 2, phase_rate=-sol.eta),
        }
        lattice = cfg.with_coupling("1", "2", used).with_drives(drives)
        return DriveMapping(spec=spec, solution=sol, delta_primes=residuals, betas=(betas[0], betas[1]),
                            nus=(nu1, nu2), required_g12=required, configured_g12=g12, lattice=lattice)

    def effective_logical_hamiltonian(self, cfg: LatticeConfig, mapping: DriveMapping, t: float = 0.0) -> np.ndarray:
        """Delta-type model on (|0>_L, |e>_L, |1>_L) from the first-order Bessel couplings."""
        j1, j2 = bessel_j1(mapping.betas[0]), bessel_j1(mapping.betas[1])
        p1, p2 = mapping.phi_prime_1(t), mapping.phi_prime_2(t)
        h = np.diag(np.array(mapping.delta_primes, dtype=complex))
        h[0, 1] = cfg.require_coupling("1", "a") * j1 * np.exp(-1j * p1)
        h[1, 2] = cfg.require_coupling("a", "2") * j2 * np.exp(-1j * p2)
        h[0, 2] = cfg.require_coupling("1", "2") * j1 * j2 * np.exp(-1j * (p1 + p2))
        return np.triu(h, 1) + np.triu(h, 1).conj().T + np.diag(np.diag(h))

    def _leakage_frame(self, times: np.ndarray, propagators: list[np.ndarray]) -> pd.DataFrame:
        states = np.array(_basis(len(UNIT_SITES)))
        ones = (states == 1).sum(axis=1)
        twos = (states == 2).sum(axis=1)
        single = (ones == 1) & (twos == 0)
        double = (ones == 2) & (twos == 0)
        level2 = twos > 0
        rows = []
        for t, u in zip(times, propagators):
            pops = 0.5 * (np.abs(u[:, LOGICAL_ZERO]) ** 2 + np.abs(u[:, LOGICAL_ONE]) ** 2)
            rows.append({
                "time": t,
                "pop_single_excitation": float(pops[single].sum()),
                "pop_double_excitation": float(pops[double].sum()),
                "pop_level2": float(pops[level2].sum()),
            })
        return pd.DataFrame(rows)

    def simulate_logical_gate(self, spec: GateSpec, delta2: float, omega: float, cfg: LatticeConfig,
                              samples: int = 41) -> LogicalGateResult:
        mapping = self.map_gate_to_drives(spec, delta2, omega, cfg)
        tau = mapping.solution.tau
        LOG.info("simulating logical gate gamma=%.4f over %.3f ns", spec.gamma, tau)
        schedule = self.frame_schedule(mapping.lattice, UNIT_SITES, mapping.delta_primes, tau)
        times = np.linspace(0.0, tau, samples)
        propagators = quantum_core.propagate_samples(schedule, times)
        final = propagators[-1]
        computational = final[np.ix_([LOGICAL_ZERO, LOGICAL_ONE], [LOGICAL_ZERO, LOGICAL_ONE])]
        fidelity = trace_fidelity(gate_synthesis.ideal_gate(spec), computational)
        leakage = self._leakage_frame(times, propagators)
        worst = max(1.0 - float(np.sum(np.abs(final[UNIT_LOGICAL, col]) ** 2)) for col in (LOGICAL_ZERO, LOGICAL_ONE))
        flagged = worst > LEAKAGE_FLAG
        if flagged:
            LOG.warning("logical gate leaked %.3f of the population out of the unit subspace", worst)
        return LogicalGateResult(
            unitary=final[np.ix_(UNIT_LOGICAL, UNIT_LOGICAL)],
            computational=computational,
            fidelity=fidelity,
            leakage=leakage,
            final_leakage=worst,
            double_excitation=float(leakage["pop_double_excitation"].iloc[-1]),
            level2=float(leakage["pop_level2"].iloc[-1]),
            flagged=flagged,
            mapping=mapping,
        )

    def two_qubit_physical(self, cfg: LatticeConfig, gamma: float = math.pi, delta3: float = 0.0,
                           beta3: float = 1.8) -> TwoQubitResult:
        """Controlled phase between units through the |11>_23 <-> |20>_23 sideband."""
        g23 = cfg.require_coupling(*PAIR_SITES)
        q2, q3 = cfg.transmons["2"], cfg.transmons["3"]
        detuning23 = q2.omega_q - q3.omega_q
        limit = min(abs(detuning23), q2.alpha) / 10.0
        if abs(delta3) >= limit:
            raise CapabilityError(f"|delta3'| = {abs(delta3):.4g} rad/ns must stay below {limit:.4g} rad/ns")
        if beta3 <= 0 or beta3 >= BESSEL_LIMIT:
            raise CapabilityError(f"modulation index beta3={beta3} outside (0, {BESSEL_LIMIT})")
        g_eff = math.sqrt(2.0) * bessel_j1(beta3) * g23
        if g_eff <= 0:
            raise CapabilityError("effective sideband coupling vanishes")
        sol = gate_synthesis.solve_two_qubit_parameters(gamma, g_eff, delta3)
        # phi_3(t) = phi'(t) + pi/2 with phi'(t) = eta' t
        drive = ParametricDrive(beta=beta3, nu=detuning23 - q2.alpha - delta3,
                                phase=math.pi / 2, phase_rate=sol.eta)
        lattice = cfg.with_drives({"3": drive})
        LOG.info("simulating two-qubit phase gamma'=%.4f over %.3f ns", gamma, sol.tau)
        u = quantum_core.propagate(self.frame_schedule(lattice, PAIR_SITES, (0.0, 0.0), sol.tau))
        u[_index((1, 1)), :] *= np.exp(0.5j * delta3 * sol.tau)
        u[_index((2, 0)), :] *= np.exp(-0.5j * delta3 * sol.tau)
        operator = u[np.ix_(PAIR_LOGICAL, PAIR_LOGICAL)]
        logical = operator[:4, :4]
        fidelity = trace_fidelity(gate_synthesis.two_qubit_gate(gamma), logical)
        aux = float(np.abs(operator[4, 2]) ** 2)
        return TwoQubitResult(operator=operator, logical=logical, fidelity=fidelity,
                              solution=sol, auxiliary_population=aux, drive=drive)

    @staticmethod
    def _not_on(site: int) -> np.ndarray:
        flip = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=complex)
        return _local(flip, site, len(UNIT_SITES))

    @staticmethod
    def _cnot(control: int, target: int) -> np.ndarray:
        dim = LEVELS ** len(UNIT_SITES)
        out = np.zeros((dim, dim), dtype=complex)
        for levels in _basis(len(UNIT_SITES)):
            image = list(levels)
            if levels[control] == 1 and image[target] in (0, 1):
                image[target] = 1 - image[target]
            out[_index(image), _index(levels)] = 1.0
        return out

    @staticmethod
    def _check_manifold(state: np.ndarray, allowed: Sequence[int], label: str) -> np.ndarray:
        state = np.asarray(state, dtype=complex)
        if state.shape != (LEVELS ** len(UNIT_SITES),):
            raise ValidationError(f"expected a 27-dim register state, got shape {state.shape}")
        outside = np.delete(np.abs(state) ** 2, list(allowed)).sum()
        if outside > 1e-12:
            raise ValidationError(f"state has population {outside:.3e} outside the {label} manifold")
        return state

    def physical_state(self, a: complex, b: complex) -> np.ndarray:
        """a|1>_1 + b|0>_1 with transmons a and 2 in the ground state."""
        state = np.zeros(LEVELS ** len(UNIT_SITES), dtype=complex)
        state[_index((1, 0, 0))] = a
        state[_index((0, 0, 0))] = b
        return state

    def encode_logical(self, state: np.ndarray) -> np.ndarray:
        """NOT on transmon 2, then CNOT controlled by transmon 1."""
        state = self._check_manifold(state, [_index((0, 0, 0)), _index((1, 0, 0))], "initial")
        return self._cnot(0, 2) @ self._not_on(2) @ state

    def decode_logical(self, state: np.ndarray) -> np.ndarray:
        state = self._check_manifold(state, [LOGICAL_ZERO, LOGICAL_ONE], "logical")
        return self._not_on(2) @ self._cnot(0, 2) @ state

    @staticmethod
    def logical_amplitudes(state: np.ndarray) -> np.ndarray:
        return np.array([state[LOGICAL_ZERO], state[LOGICAL_ONE]], dtype=complex)


transmon_circuit = TransmonCircuit()
