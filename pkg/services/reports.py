from __future__ import annotations

import json
import logging
import math
import time
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import pandas as pd

from services import __version__
from services.config import ExperimentConfig, PresetName, config_hash
from services.delta_system import delta_system
from services.errors import ConfigError, ValidationError
from services.gate_synthesis import GateSpec, accelerating_detuning, gate_synthesis
from services.noise_robustness import SCHEMES, SweepResult, noise_robustness
from services.quantum_core import embed
from services.transmon_circuit import TWO_PI, transmon_circuit

LOG = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "scheme", "gamma", "theta", "phi", "delta", "epsilon", "kappa",
    "tau_over_tauc", "fidelity", "fidelity_diff_vs_single_loop", "fidelity_diff_vs_toc",
]
FLOAT_FORMAT = "%.12g"
REFERENCE_KAPPA = 4e-4
FIG2_RATIOS = (0.0, 0.25, -0.25, 0.5, -0.5, 1.0, -1.0)
FIG2_GAMMAS = (math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi)
ACCEL_GAMMAS = tuple(k * math.pi / 4 for k in range(1, 8))
ACCEL_DETUNINGS = (0.0, 0.25, 0.5, 1.0, 2.0)
PANEL_ANGLES = tuple(k * math.pi / 82 for k in range(1, 42))
PANEL_ERRORS = tuple(np.linspace(-0.1, 0.1, 41))


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, np.generic):
        return value.item()
    return value


class ReportWriter:
    """Writes CSV and JSON results under one directory, each starting with ``header``."""

    def __init__(self, out_dir: Path, header: str):
        self.out_dir = Path(out_dir)
        self.header = header
        self.files: list[str] = []
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"{self.out_dir}: output directory is not writable ({exc.strerror})") from None

    def _write(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: cannot write output ({exc.strerror})") from None
        self.files.append(name)
        LOG.info("wrote %s", path)
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return self._write(name, f"# {self.header}\n{body}")

    def write_json(self, name: str, payload: dict) -> Path:
        record = {"header": self.header, **_jsonable(payload)}
        return self._write(name, json.dumps(record, indent=2) + "\n")


def sweep_frame(result: SweepResult, schemes: Optional[list[str]] = None,
                spec: Optional[GateSpec] = None, family: Optional[str] = None) -> pd.DataFrame:
    """Rows of ``result`` for ``schemes`` in the fixed sweep column layout."""
    frames = []
    for scheme in schemes or list(result.fidelities):
        frame = result.to_frame(scheme)
        if family is not None:
            axis = GateSpec.preset(family, 1.0)
            frame["theta"], frame["phi"] = axis.theta, axis.phi
        elif spec is not None:
            frame["gamma"], frame["theta"], frame["phi"] = spec.gamma, spec.theta, spec.phi
        frames.append(frame)
    frame = pd.concat(frames, ignore_index=True)
    for column in ("delta", "epsilon", "kappa"):
        if column not in frame:
            frame[column] = 0.0
    for column in SWEEP_COLUMNS:
        if column not in frame:
            frame[column] = np.nan
    return frame[SWEEP_COLUMNS]


def _solution_record(spec: GateSpec, delta2: float, omega: float) -> dict:
    sol = gate_synthesis.solve_toc_parameters(spec.gamma, delta2, omega)
    record = sol.model_dump()
    record.update({
        "theta": spec.theta,
        "phi": spec.phi,
        "tau_c": sol.tau_c,
        "tau_over_tauc": sol.tau_ratio,
        "gate": gate_synthesis.holonomic_gate(spec, delta2, omega),
    })
    return record


def _population_frame(run) -> pd.DataFrame:
    return pd.DataFrame({
        "time": run.times,
        "pop_0": run.populations[:, 0],
        "pop_1": run.populations[:, 1],
        "pop_2": run.populations[:, 2],
        "fidelity": run.fidelity,
    })


class Reports:
    """Figure presets and config-driven runs writing deterministic result files."""

    def preset_fig2(self, writer: ReportWriter) -> None:
        gammas = np.arange(1, 200) / 100.0 * math.pi
        rows = []
        for ratio in FIG2_RATIOS:
            for gamma in gammas:
                sol = gate_synthesis.solve_toc_parameters(float(gamma), ratio)
                rows.append({"gamma": gamma, "gamma_over_pi": gamma / math.pi, "delta2_over_omega": ratio,
                             "eta_over_omega": sol.eta, "tau_over_tauc": sol.tau_ratio})
        writer.write_csv("fig2_gate_time.csv", pd.DataFrame(rows))

        rows = []
        for gamma in FIG2_GAMMAS:
            for magnitude in np.linspace(0.0, 2.0, 41):
                delta2 = accelerating_detuning(gamma, float(magnitude))
                sol = gate_synthesis.solve_toc_parameters(gamma, delta2)
                rows.append({"gamma": gamma, "gamma_over_pi": gamma / math.pi, "abs_delta2_over_omega": magnitude,
                             "delta2_over_omega": delta2, "tau_over_tauc": sol.tau_ratio})
        writer.write_csv("fig2_detuning.csv", pd.DataFrame(rows))

    def preset_table_accel(self, writer: ReportWriter) -> None:
        rows = []
        for gamma in ACCEL_GAMMAS:
            toc = gate_synthesis.solve_toc_parameters(gamma, 0.0)
            ratios = gate_synthesis.acceleration_curve(
                gamma, np.array([accelerating_detuning(gamma, d) for d in ACCEL_DETUNINGS]))
            for magnitude, ratio in zip(ACCEL_DETUNINGS, ratios):
                rows.append({"gamma": gamma, "gamma_over_pi": gamma / math.pi, "abs_delta2_over_omega": magnitude,
                             "delta2_over_omega": accelerating_detuning(gamma, magnitude),
                             "tau_over_tauc": ratio, "toc_tau_over_tauc": toc.tau_ratio,
                             "speedup_vs_toc": toc.tau_ratio / ratio})
        writer.write_csv("table_accel.csv", pd.DataFrame(rows))

    def preset_fig3(self, writer: ReportWriter) -> None:
        for axis in ("delta", "epsilon"):
            model = "bright" if axis == "delta" else "all_drives"
            for family in ("x", "y", "z"):
                result = noise_robustness.robustness_panel(axis, family, PANEL_ANGLES, PANEL_ERRORS,
                                                           detuning=-0.5, coupling_model=model)
                writer.write_csv(f"fig3_{axis}_{family}.csv", sweep_frame(result, ["ours"], family=family))

    def preset_fig4(self, writer: ReportWriter) -> None:
        finals = {}
        for family in ("x", "z"):
            spec = GateSpec.preset(family, math.pi / 2)
            run = noise_robustness.decoherence_state_run(spec, detuning=-0.5, kappa=REFERENCE_KAPPA)
            frame = _population_frame(run)
            frame.insert(1, "time_over_tauc", run.times / (2.0 * math.pi))
            writer.write_csv(f"fig4_{family}.csv", frame)
            finals[f"r{family}_pi_over_2"] = run.final_fidelity
        writer.write_json("fig4_summary.json", {"kappa": REFERENCE_KAPPA, "detuning": -0.5, "final_fidelity": finals})

    def preset_fig5(self, writer: ReportWriter) -> None:
        kappas = np.linspace(0.0, 1e-3, 11)
        for family in ("x", "z"):
            spec = GateSpec.preset(family, math.pi / 2)
            result = noise_robustness.decoherence_gate_curve(spec, SCHEMES, kappas, detuning=-0.5)
            writer.write_csv(f"fig5_{family}.csv", sweep_frame(result, spec=spec))

    def presets(self) -> dict[str, Callable[[ReportWriter], None]]:
        return {
            "fig2": self.preset_fig2,
            "fig3": self.preset_fig3,
            "fig4": self.preset_fig4,
            "fig5": self.preset_fig5,
            "table-accel": self.preset_table_accel,
        }

    def run_preset(self, name: PresetName, out_dir: Path) -> list[str]:
        runner = self.presets().get(name)
        if runner is None:
            raise ValidationError(f"unknown preset '{name}', expected one of {sorted(self.presets())}")
        LOG.info("running preset %s", name)
        writer = ReportWriter(out_dir, f"holonomy {__version__} preset={name}")
        runner(writer)
        writer.write_json("metadata.json", {"tool_version": __version__, "preset": name,
                                            "files": list(writer.files)})
        return writer.files

    def _synthesize(self, cfg: ExperimentConfig, writer: ReportWriter) -> None:
        spec = cfg.gate.spec()
        writer.write_json("synthesize.json", _solution_record(spec, cfg.detuning * cfg.omega, cfg.omega))

    def _evolve(self, cfg: ExperimentConfig, writer: ReportWriter) -> None:
        spec = cfg.gate.spec()
        run = noise_robustness.decoherence_state_run(spec, detuning=cfg.detuning, noise=cfg.noise.model(),
                                                     omega=cfg.omega, scheme=cfg.scheme, samples=cfg.samples)
        writer.write_csv("evolve.csv", _population_frame(run))
        schedule = noise_robustness.scheme_schedule(spec, cfg.scheme, cfg.detuning, cfg.omega)
        initial = embed(noise_robustness.default_initial(spec), 3)
        trajectory = delta_system.bloch_trajectory(schedule, initial, samples=cfg.samples)
        writer.write_csv("trajectory.csv", pd.DataFrame({
            "t": trajectory.times,
            "x": trajectory.points[:, 0],
            "y": trajectory.points[:, 1],
            "z": trajectory.points[:, 2],
            "leakage": trajectory.leakage,
        }))
        writer.write_json("evolve.json", {"scheme": cfg.scheme, "tau": run.tau,
                                          "final_fidelity": run.final_fidelity})

    def _sweep(self, cfg: ExperimentConfig, writer: ReportWriter) -> None:
        spec = cfg.gate.spec()
        result = noise_robustness.robustness_grid(spec, cfg.scheme, cfg.delta_grid.values(), cfg.epsilon_grid.values(),
                                                  detuning=cfg.detuning, omega=cfg.omega,
                                                  coupling_model=cfg.coupling_model)
        writer.write_csv("sweep.csv", sweep_frame(result, [cfg.scheme], spec=spec))

    def _decoherence(self, cfg: ExperimentConfig, writer: ReportWriter) -> None:
        spec = cfg.gate.spec()
        result = noise_robustness.decoherence_gate_curve(spec, SCHEMES, cfg.kappa_grid.values(),
                                                         detuning=cfg.detuning, omega=cfg.omega)
        writer.write_csv("decoherence.csv", sweep_frame(result, spec=spec))

    def _circuit(self, cfg: ExperimentConfig, writer: ReportWriter) -> None:
        spec = cfg.gate.spec()
        circuit = cfg.circuit
        omega = circuit.omega
        result = transmon_circuit.simulate_logical_gate(spec, cfg.detuning * omega, omega, circuit.lattice,
                                                        samples=circuit.samples)
        writer.write_csv("circuit_leakage.csv", result.leakage)
        mapping = result.mapping
        record = {
            "fidelity": result.fidelity,
            "flagged": result.flagged,
            "final_leakage": result.final_leakage,
            "double_excitation": result.double_excitation,
            "level2": result.level2,
            "tau_ns": mapping.solution.tau,
            "delta_primes_ghz": [d / TWO_PI for d in mapping.delta_primes],
            "betas": list(mapping.betas),
            "nus_ghz": [n / TWO_PI for n in mapping.nus],
            "required_g12_ghz": mapping.required_g12 / TWO_PI,
            "configured_g12_ghz": mapping.configured_g12 / TWO_PI,
            "g12_mode": circuit.lattice.g12_mode,
            "unitary": result.unitary,
        }
        if circuit.two_qubit:
            pair = transmon_circuit.two_qubit_physical(circuit.lattice, circuit.gamma_prime,
                                                       TWO_PI * circuit.delta3_ghz, circuit.beta3)
            record["two_qubit"] = {
                "fidelity": pair.fidelity,
                "tau_ns": pair.solution.tau,
                "eta_ghz": pair.solution.eta / TWO_PI,
                "nu3_ghz": pair.drive.nu / TWO_PI,
                "auxiliary_population": pair.auxiliary_population,
                "operator": pair.operator,
            }
        writer.write_json("circuit.json", record)

    def run_config(self, cfg: ExperimentConfig, out_dir: Path) -> list[str]:
        digest = config_hash(cfg)
        if cfg.experiment == "preset":
            files = self.run_preset(cfg.preset, out_dir)
            started = None
        else:
            handlers = {
                "synthesize": self._synthesize,
                "evolve": self._evolve,
                "sweep": self._sweep,
                "decoherence": self._decoherence,
                "circuit": self._circuit,
            }
            LOG.info("running %s config %s", cfg.experiment, digest[:12])
            writer = ReportWriter(out_dir, f"holonomy {__version__} config={digest}")
            started = time.perf_counter()
            handlers[cfg.experiment](cfg, writer)
            files = writer.files
        meta = {
            "tool_version": __version__,
            "config_hash": digest,
            "config": cfg.model_dump(mode="json"),
            "files": list(files),
        }
        if started is not None:
            meta["wall_time_s"] = time.perf_counter() - started
        ReportWriter(out_dir, f"holonomy {__version__} config={digest}").write_json("run.json", meta)
        return list(files) + ["run.json"]


reports = Reports()
