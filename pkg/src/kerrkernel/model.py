"""Device parameters, Gaussian drives and Hamiltonian assembly.

Units: angular frequencies in rad/us, times in us, hbar = 1.  Configuration
files carry ordinary frequencies f in MHz; ``mhz`` converts f -> 2*pi*f.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hilbert import ModeLayout, annihilation_op, embed, number_op


TWO_PI = 2.0 * math.pi


def mhz(f: float) -> float:
    """Ordinary frequency in MHz -> angular frequency in rad/us."""
    return TWO_PI * float(f)


@dataclass(frozen=True)
class DeviceParams:
    """Kerr qubit coupled to ``n`` resonator modes (angular units)."""

    kerr: float
    delta_q: float
    deltas: tuple[float, ...]
    couplings: tuple[float, ...]
    layout: ModeLayout

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        object.__setattr__(self, "couplings", tuple(float(g) for g in self.couplings))
        n = self.layout.n_modes
        if len(self.deltas) != n or len(self.couplings) != n:
            raise ValueError(
                f"layout has {n} modes but got {len(self.deltas)} detunings "
                f"and {len(self.couplings)} couplings"
            )
        if self.kerr < 0:
            raise ValueError("kerr must be >= 0; the minus sign is applied at assembly")

    @property
    def n_modes(self) -> int:
        return self.layout.n_modes

    @classmethod
    def from_mhz(cls, kerr, delta_q, deltas, couplings, mode_dim=9, qubit_dim=4):
        """Build from ordinary frequencies in MHz (the usual ``value/2pi`` quoting)."""
        deltas = list(deltas)
        if np.isscalar(couplings):
            couplings = [couplings] * len(deltas)
        layout = ModeLayout.default(len(deltas), mode_dim=mode_dim, qubit_dim=qubit_dim)
        return cls(
            kerr=mhz(kerr),
            delta_q=mhz(delta_q),
            deltas=tuple(mhz(d) for d in deltas),
            couplings=tuple(mhz(g) for g in couplings),
            layout=layout,
        )

    def with_kerr(self, kerr: float) -> "DeviceParams":
        return DeviceParams(kerr, self.delta_q, self.deltas, self.couplings, self.layout)

    def with_layout(self, layout: ModeLayout) -> "DeviceParams":
        return DeviceParams(self.kerr, self.delta_q, self.deltas, self.couplings, layout)


@dataclass(frozen=True)
class GaussianPulse:
    amplitude: float
    drive_detuning: float
    center: float
    width: float
    cutoff_radius: float | None = None

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("pulse width must be positive")
        if self.cutoff_radius is None:
            object.__setattr__(self, "cutoff_radius", 3.0 * self.width)
        elif self.cutoff_radius <= 0:
            raise ValueError("cutoff_radius must be positive")

    @property
    def end(self) -> float:
        return self.center + self.cutoff_radius

    @property
    def start(self) -> float:
        return self.center - self.cutoff_radius


@dataclass(frozen=True)
class DriveSchedule:
    """Pulses applied to the qubit plus the times at which the state is read out.

    ``measure_times`` keep the caller's order (feature order for encoded
    samples); consumers sort and deduplicate as needed.
    """

    pulses: tuple[GaussianPulse, ...]
    measure_times: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        object.__setattr__(self, "measure_times", tuple(float(t) for t in self.measure_times))
        end = self.pulse_end
        for t in self.measure_times:
            if t <= 0:
                raise ValueError(f"measurement time {t} must be positive")
            if t < end:
                raise ValueError(f"measurement time {t} precedes the end of the pulses ({end})")

    @property
    def pulse_end(self) -> float:
        """Reference time t_R: the end of the last pulse support (0 without pulses)."""
        return max((p.end for p in self.pulses), default=0.0)


def pulse_envelope(pulse: GaussianPulse, t):
    """Decaying Gaussian envelope, exactly zero at and beyond the cutoff."""
    t = np.asarray(t, dtype=float)
    x = t - pulse.center
    out = pulse.amplitude * np.exp(-(x**2) / (2.0 * pulse.width**2))
    out = np.where(np.abs(x) < pulse.cutoff_radius, out, 0.0)
    return out if out.ndim else float(out)


def drive_coefficient(schedule: DriveSchedule, t: float) -> complex:
    """c(t) = sum_j Omega_j(t) exp(i delta_j t); H_drive = c a^dag + conj(c) a."""
    c = 0j
    for p in schedule.pulses:
        x = t - p.center
        if abs(x) < p.cutoff_radius:
            c += p.amplitude * math.exp(-x * x / (2.0 * p.width**2)) * complex(
                math.cos(p.drive_detuning * t), math.sin(p.drive_detuning * t)
            )
    return c


def qubit_lowering(layout: ModeLayout, sparse: bool = False):
    return embed(annihilation_op(layout.dims[0]), 0, layout, sparse=sparse)


def mode_lowering(layout: ModeLayout, i: int, sparse: bool = False):
    """Lowering operator of resonator ``i`` (0-based among the modes)."""
    return embed(annihilation_op(layout.dims[i + 1]), i + 1, layout, sparse=sparse)


def h_lin(device: DeviceParams, sparse: bool = False):
    """-dq a^dag a + sum_i [-d_i b_i^dag b_i + g_i (a^dag b_i + b_i^dag a)]."""
    layout = device.layout
    a = qubit_lowering(layout, sparse)
    ad = a.conj().T
    h = -device.delta_q * embed(number_op(layout.dims[0]), 0, layout, sparse)
    for i, (d, g) in enumerate(zip(device.deltas, device.couplings)):
        b = mode_lowering(layout, i, sparse)
        bd = b.conj().T
        h = h - d * embed(number_op(layout.dims[i + 1]), i + 1, layout, sparse)
        h = h + g * (ad @ b + bd @ a)
    return h.tocsr() if sparse else h


def h_kerr(device: DeviceParams, sparse: bool = False):
    """-K a^dag^2 a^2, diagonal with -K n(n-1) at qubit occupation n."""
    dq = device.layout.dims[0]
    n = np.arange(dq, dtype=float)
    local = np.diag(-device.kerr * n * (n - 1)).astype(complex)
    return embed(local, 0, device.layout, sparse)


def h_static(device: DeviceParams, sparse: bool = False):
    h = h_lin(device, sparse) + h_kerr(device, sparse)
    return h.tocsr() if sparse else h


def h_drive(schedule: DriveSchedule, t: float, layout: ModeLayout, sparse: bool = False):
    a = qubit_lowering(layout, sparse)
    c = drive_coefficient(schedule, t)
    h = c * a.conj().T + np.conj(c) * a
    return h.tocsr() if sparse else h


def h_total(device: DeviceParams, schedule: DriveSchedule, t: float, sparse: bool = False):
    h = h_static(device, sparse) + h_drive(schedule, t, device.layout, sparse)
    return h.tocsr() if sparse else h


def gaussian_schedule(
    amplitudes: Sequence[float],
    detunings: Sequence[float],
    width: float,
    measure_times: Sequence[float] = (),
    center: float | None = None,
) -> DriveSchedule:
    """Simultaneous Gaussian pulses sharing one center (default 3 * width)."""
    if len(amplitudes) != len(detunings):
        raise ValueError("need one detuning per pulse amplitude")
    center = 3.0 * width if center is None else center
    pulses = tuple(
        GaussianPulse(float(o), float(d), center, width) for o, d in zip(amplitudes, detunings)
    )
    return DriveSchedule(pulses, tuple(measure_times))
