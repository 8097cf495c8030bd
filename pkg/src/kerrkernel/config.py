"""JSON run configuration (MHz / us units) for the command-line pipeline.

Every block is parsed into a frozen dataclass; unknown keys are rejected and
all values are validated before any simulation starts.  Conversion from MHz
to angular units happens once, in each block's builder method.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .bench import SCALING_ROWS, ScalingProtocol
from .dynamics import PropagatorConfig
from .kernel import EncodingConfig
from .ml import DEFAULT_REFERENCES, GridSpec
from .model import DeviceParams


class ConfigError(ValueError):
    pass


def _build(cls, raw: Any, where: str):
    """Instantiate dataclass ``cls`` from a dict, recursing into nested blocks."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(fields)}")
    kwargs = {}
    for name, value in raw.items():
        sub = _NESTED.get((cls, name))
        if sub is not None:
            if isinstance(sub, list):
                if not isinstance(value, (list, tuple)):
                    raise ConfigError(f"{where}.{name}: expected a list")
                value = tuple(_build(sub[0], v, f"{where}.{name}[{i}]") for i, v in enumerate(value))
            else:
                value = _build(sub, value, f"{where}.{name}")
        elif isinstance(value, (list, tuple)):
            value = tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class DeviceBlock:
    kerr_mhz: float = 400.0
    delta_q_mhz: float = 70.0
    deltas_mhz: tuple[float, ...] = (10.0, -15.0)
    couplings_mhz: float | tuple[float, ...] = 10.0
    mode_dim: int = 9
    qubit_dim: int = 4

    def __post_init__(self):
        if self.kerr_mhz < 0:
            raise ValueError("kerr_mhz must be >= 0")
        if not self.deltas_mhz:
            raise ValueError("deltas_mhz must name at least one mode")
        scalar = isinstance(self.couplings_mhz, (int, float))
        if not scalar and len(self.couplings_mhz) != len(self.deltas_mhz):
            raise ValueError("couplings_mhz needs one entry per mode (or a single number)")
        if self.mode_dim < 2 or self.qubit_dim < 2:
            raise ValueError("mode_dim and qubit_dim must be >= 2")

    def couplings_for(self, n: int) -> list[float]:
        if isinstance(self.couplings_mhz, (int, float)):
            return [float(self.couplings_mhz)] * n
        return [float(g) for g in self.couplings_mhz[:n]]

    def device(self, kerr_mhz: float | None = None, n_modes: int | None = None) -> DeviceParams:
        n = len(self.deltas_mhz) if n_modes is None else n_modes
        if n > len(self.deltas_mhz):
            raise ConfigError(f"{n} modes requested but only {len(self.deltas_mhz)} detunings given")
        return DeviceParams.from_mhz(
            self.kerr_mhz if kerr_mhz is None else kerr_mhz,
            self.delta_q_mhz,
            self.deltas_mhz[:n],
            self.couplings_for(n),
            mode_dim=self.mode_dim,
            qubit_dim=self.qubit_dim,
        )


@dataclass(frozen=True)
class EncodingBlock:
    omega_min_mhz: float = 7.5
    omega_max_mhz: float = 7.6
    t_min_us: float = 5.24
    t_max_us: float = 95.24
    sigma_us: float = 0.08
    drive_detunings_mhz: tuple[float, ...] | None = None

    def encoding(self) -> EncodingConfig:
        return EncodingConfig.from_mhz(
            self.omega_min_mhz, self.omega_max_mhz, self.t_min_us, self.t_max_us,
            self.sigma_us, self.drive_detunings_mhz,
        )


@dataclass(frozen=True)
class ScheduleBlock:
    """Drive for the entanglement demo: one pulse per mode, resonant by default."""

    amplitudes_mhz: tuple[float, ...] = (8.75, 9.25, 9.75)
    sigma_us: float = 0.08
    drive_detunings_mhz: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.sigma_us <= 0:
            raise ValueError("sigma_us must be positive")
        if not self.amplitudes_mhz:
            raise ValueError("amplitudes_mhz must be nonempty")


@dataclass(frozen=True)
class EntangleCase:
    n: int
    kerr_mhz: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.kerr_mhz < 0:
            raise ValueError("kerr_mhz must be >= 0")


@dataclass(frozen=True)
class EntangleBlock:
    cases: tuple[EntangleCase, ...] = (
        EntangleCase(1, 400.0), EntangleCase(2, 400.0), EntangleCase(3, 400.0),
        EntangleCase(2, 0.0),
    )
    t_max_us: float = 20.0
    n_times: int = 2001
    partition: tuple[int, ...] = (0,)
    # the entanglement demo runs on its own three-mode device; per-case K overrides kerr_mhz
    device: DeviceBlock = DeviceBlock(delta_q_mhz=100.0, deltas_mhz=(10.0, -10.0, -30.0),
                                      couplings_mhz=8.0)

    def __post_init__(self):
        if self.n_times < 2:
            raise ValueError("n_times must be >= 2")
        if not self.cases:
            raise ValueError("at least one entangle case is required")


@dataclass(frozen=True)
class GridBlock:
    c_log10_min: float = -2.0
    c_log10_max: float = 1.0
    c_points: int = 50
    gamma_min: float = 1.0
    gamma_max: float = 1000.0
    gamma_points: int = 50
    extended_c_min: float = 1.0
    extended_c_max: float = 3e6
    extended_c_points: int = 500
    extend_c_at_zero_kerr: bool = True

    def spec(self) -> GridSpec:
        ext = ()
        if self.extended_c_points > 0:
            ext = tuple(np.linspace(self.extended_c_min, self.extended_c_max, self.extended_c_points))
        return GridSpec(
            tuple(np.logspace(self.c_log10_min, self.c_log10_max, self.c_points)),
            tuple(np.linspace(self.gamma_min, self.gamma_max, self.gamma_points)),
            ext,
        )


@dataclass(frozen=True)
class ScalingBlock:
    rows: tuple[tuple[int, int], ...] = SCALING_ROWS
    kerr_mhz: float = 400.0
    delta_q_mhz: float = 70.0
    coupling_mhz: float = 10.0
    qubit_dim: int = 4
    amplitude_mhz: float = 5.0
    sigma_us: float = 0.08
    measure_time_us: float = 50.0
    repeats: int = 3

    def __post_init__(self):
        for row in self.rows:
            if len(row) != 2 or row[0] < 1 or row[1] < 2:
                raise ValueError(f"bad scaling row {row}; expected [n >= 1, n_dim >= 2]")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def protocol(self, propagator: PropagatorConfig) -> ScalingProtocol:
        return ScalingProtocol(
            self.kerr_mhz, self.delta_q_mhz, self.coupling_mhz, self.qubit_dim,
            self.amplitude_mhz, self.sigma_us, self.measure_time_us, self.repeats, propagator,
        )


@dataclass(frozen=True)
class ExperimentBlock:
    seed: int = 0
    mesh_resolution: int = 25
    references: tuple[tuple[float, float], ...] | None = DEFAULT_REFERENCES
    training_sizes: tuple[int, ...] = (16, 32, 64, 128)
    trial_seeds: tuple[int, ...] | None = None
    n_trials: int = 3
    kerr_sweep_mhz: tuple[float, ...] = (0.0, 100.0, 200.0, 400.0)
    kerr_sweep_size: int = 64
    kerr_sweep_trials: int = 2
    gram_limit: int | None = None
    grid: GridBlock = field(default_factory=GridBlock)
    entangle: EntangleBlock = field(default_factory=EntangleBlock)
    scaling: ScalingBlock = field(default_factory=ScalingBlock)

    def __post_init__(self):
        if self.mesh_resolution < 2:
            raise ValueError("mesh_resolution must be >= 2")
        if self.references is not None:
            if len(self.references) != 2 or any(len(r) != 2 for r in self.references):
                raise ValueError("references must be two [x1, x2] pairs")
            for r in self.references:
                if not all(0.0 <= v <= 1.0 for v in r):
                    raise ValueError(f"reference {list(r)} outside the unit square")
        n_points = self.mesh_resolution**2
        sweep = (self.kerr_sweep_size,) if self.kerr_sweep_mhz else ()
        for s in tuple(self.training_sizes) + sweep:
            if not 2 <= s <= n_points:
                raise ValueError(f"training size {s} must lie in [2, {n_points}]")
        if self.n_trials < 1 or self.kerr_sweep_trials < 1:
            raise ValueError("n_trials and kerr_sweep_trials must be >= 1")
        if self.gram_limit is not None and self.gram_limit < 1:
            raise ValueError("gram_limit must be positive")
        if any(k < 0 for k in self.kerr_sweep_mhz):
            raise ValueError("kerr_sweep_mhz entries must be >= 0")

    def seeds(self) -> tuple[int, ...]:
        """Training-subset seeds: explicit list, else ``seed, seed+1, ...``."""
        if self.trial_seeds is not None:
            return tuple(int(s) for s in self.trial_seeds)
        return tuple(self.seed + k for k in range(self.n_trials))

    def kerr_sweep_seeds(self) -> tuple[int, ...]:
        """Seeds for the Kerr sweep: the first ``kerr_sweep_trials`` training seeds."""
        seeds = self.seeds()
        extra = tuple(seeds[-1] + 1 + k for k in range(max(0, self.kerr_sweep_trials - len(seeds))))
        return (seeds + extra)[: self.kerr_sweep_trials]


@dataclass(frozen=True)
class PropagatorBlock:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    dense_spectral_max_dim: int = 4096
    krylov_dim: int = 30
    max_steps: int = 5_000_000

    def config(self) -> PropagatorConfig:
        return PropagatorConfig(
            rel_tol=self.rel_tol, abs_tol=self.abs_tol,
            dense_spectral_max_dim=self.dense_spectral_max_dim,
            max_steps=self.max_steps, krylov_dim=self.krylov_dim,
        )


@dataclass(frozen=True)
class RunConfig:
    device: DeviceBlock = field(default_factory=DeviceBlock)
    encoding: EncodingBlock = field(default_factory=EncodingBlock)
    schedule: ScheduleBlock = field(default_factory=ScheduleBlock)
    propagator: PropagatorBlock = field(default_factory=PropagatorBlock)
    experiment: ExperimentBlock = field(default_factory=ExperimentBlock)
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        cfg = _build(cls, raw, "config")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_seed(self, seed: int) -> "RunConfig":
        exp = dataclasses.replace(self.experiment, seed=int(seed), trial_seeds=None)
        return dataclasses.replace(self, experiment=exp)

    def with_output_dir(self, out: str) -> "RunConfig":
        return dataclasses.replace(self, output_dir=str(out))

    def validate(self) -> None:
        """Cross-block checks; building every derived object runs module validation."""
        try:
            self.device.device()
            self.propagator.config()
            enc = self.encoding.encoding()
            self.experiment.grid.spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        n_modes = len(self.device.deltas_mhz)
        if enc.detunings is not None and len(enc.detunings) != n_modes:
            raise ConfigError("encoding.drive_detunings_mhz needs one entry per device mode")
        ent = self.experiment.entangle
        ent_modes = len(ent.device.deltas_mhz)
        for case in ent.cases:
            if case.n > ent_modes:
                raise ConfigError(f"entangle case n={case.n} exceeds the {ent_modes} entangle.device modes")
            if case.n > len(self.schedule.amplitudes_mhz):
                raise ConfigError(f"entangle case n={case.n} needs {case.n} schedule amplitudes")
            det = self.schedule.drive_detunings_mhz
            if det is not None and case.n > len(det):
                raise ConfigError(f"entangle case n={case.n} needs {case.n} drive detunings")
            if case.n >= 2 and any(not 0 <= p < case.n for p in ent.partition):
                raise ConfigError(f"partition {list(ent.partition)} out of range for n={case.n}")
        if ent.t_max_us <= 6 * self.schedule.sigma_us:
            raise ConfigError("entangle.t_max_us must exceed the pulse end (6 sigma)")


_NESTED = {
    (RunConfig, "device"): DeviceBlock,
    (RunConfig, "encoding"): EncodingBlock,
    (RunConfig, "schedule"): ScheduleBlock,
    (RunConfig, "propagator"): PropagatorBlock,
    (RunConfig, "experiment"): ExperimentBlock,
    (ExperimentBlock, "grid"): GridBlock,
    (ExperimentBlock, "entangle"): EntangleBlock,
    (ExperimentBlock, "scaling"): ScalingBlock,
    (EntangleBlock, "device"): DeviceBlock,
    (EntangleBlock, "cases"): [EntangleCase],
}
