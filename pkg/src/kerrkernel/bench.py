"""Classical-simulation cost of one kernel entry as the resonator count grows."""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dynamics
from .dynamics import PropagatorConfig
from .kernel import kernel_entry
from .model import DeviceParams, gaussian_schedule, mhz

SCALING_ROWS = tuple((n, d) for n in (2, 3, 4) for d in (6, 9, 12))


def qubits_required(n: int, n_dim: int) -> int:
    """ceil(log2(2 * n_dim**n)): two-level systems needed to hold the device state."""
    if n < 1 or n_dim < 2:
        raise ValueError(f"need n >= 1 and n_dim >= 2, got n={n}, n_dim={n_dim}")
    return (2 * n_dim**n - 1).bit_length()


def qubits_required_closed_form(n: int, n_dim: int) -> int:
    return math.ceil(1 + n * math.log2(n_dim))


def extended_detunings(n: int, base=(10.0, -15.0), spacing: float = 25.0) -> list[float]:
    """Mode detunings (MHz): 10, -15, 35, -40, 60, ... alternating sides, 25 MHz apart."""
    out = []
    for k in range(n):
        side = base[k % 2]
        step = spacing * (k // 2)
        out.append(side + step if side > 0 else side - step)
    return out


@dataclass(frozen=True)
class ScalingProtocol:
    kerr_mhz: float = 400.0
    delta_q_mhz: float = 70.0
    coupling_mhz: float = 10.0
    qubit_dim: int = 4
    amplitude_mhz: float = 5.0
    sigma: float = 0.08
    measure_time: float = 50.0
    repeats: int = 3
    propagator: PropagatorConfig = field(default_factory=PropagatorConfig)

    def device(self, n: int, n_dim: int) -> DeviceParams:
        return DeviceParams.from_mhz(
            self.kerr_mhz, self.delta_q_mhz, extended_detunings(n), self.coupling_mhz,
            mode_dim=n_dim, qubit_dim=self.qubit_dim,
        )

    def as_dict(self) -> dict:
        return asdict(self)

    def config_hash(self, n: int, n_dim: int) -> str:
        payload = json.dumps({"protocol": self.as_dict(), "n": n, "n_dim": n_dim,
                              "detunings_mhz": extended_detunings(n)}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass
class ScalingRow:
    n: int
    n_dim: int
    n_q: int
    t_c: float
    t_c_std: float
    repeats: int
    config_hash: str


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def _warm_up():
    # trigger numba compilation outside the timed region
    dev = DeviceParams.from_mhz(1.0, 1.0, [1.0], 1.0, mode_dim=2, qubit_dim=2)
    sched = gaussian_schedule([1.0], [0.0], 0.01, [1.0])
    dynamics.run_schedule(dev, sched)
    dynamics.clear_caches()


def _one_entry(protocol: ScalingProtocol, n: int, n_dim: int) -> float:
    dev = protocol.device(n, n_dim)
    amps = [mhz(protocol.amplitude_mhz)] * n
    times = [protocol.measure_time] * n
    rhos = []
    for _ in range(2):
        sched = gaussian_schedule(amps, dev.deltas, protocol.sigma, times)
        traj = dynamics.run_schedule(dev, sched, protocol.propagator)
        rhos.append([traj.at(t) for t in sched.measure_times])
    return kernel_entry(rhos[0], rhos[1])


def time_kernel_entry(n: int, n_dim: int, protocol: ScalingProtocol = ScalingProtocol()) -> ScalingRow:
    """Wall-clock seconds for one complete K_ij (two simulations + fidelities).

    Runs single-threaded; reports the median over ``protocol.repeats`` runs.
    """
    n_q = qubits_required(n, n_dim)
    _warm_up()
    samples = []
    with _single_thread():
        for _ in range(protocol.repeats):
            dynamics.clear_caches()
            start = time.perf_counter()
            _one_entry(protocol, n, n_dim)
            samples.append(time.perf_counter() - start)
    dynamics.clear_caches()
    spread = statistics.stdev(samples) if len(samples) > 1 else 0.0
    return ScalingRow(n, n_dim, n_q, statistics.median(samples), spread, len(samples),
                      protocol.config_hash(n, n_dim))


def machine_metadata() -> dict:
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "processor": platform.processor(),
    }


def run_scaling(rows=SCALING_ROWS, protocol: ScalingProtocol = ScalingProtocol(), progress=None):
    out = []
    for n, n_dim in rows:
        row = time_kernel_entry(n, n_dim, protocol)
        out.append(row)
        if progress:
            progress(row)
    return out


def growth_ratios(rows, n_dim: int) -> list[float]:
    """t_c(n+1) / t_c(n) at fixed n_dim, in increasing n."""
    pick = sorted((r.n, r.t_c) for r in rows if r.n_dim == n_dim)
    return [b[1] / a[1] for a, b in zip(pick, pick[1:]) if b[0] == a[0] + 1]
