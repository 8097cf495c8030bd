"""Schrodinger-equation propagation and the per-sample trajectory pipeline.

The pulsed window is integrated with an adaptive Dormand-Prince 5(4) pair;
after the last pulse the Hamiltonian is static and states are advanced
exactly, either spectrally (eigendecomposition per excitation-number block)
or with a Lanczos approximation of ``exp(-iH dt) psi`` for large blocks.
States are rotated into the interaction picture of ``h_lin`` at snapshot
times only, then the qubit is traced out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from numba import njit

from . import model
from .hilbert import annihilation_op, excitation_numbers, vacuum
from .model import DeviceParams, DriveSchedule
from .qinfo import DensityMatrix, log_negativity, partial_trace, uhlmann_fidelity


class IntegrationError(RuntimeError):
    """Adaptive integration could not proceed (step size underflow)."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.9g}")
        self.time = time


@dataclass(frozen=True)
class PropagatorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    dense_spectral_max_dim: int = 4096
    initial_step: float | None = None  # None -> sigma / 50 of the narrowest pulse
    max_steps: int = 5_000_000
    krylov_dim: int = 30

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.krylov_dim < 2:
            raise ValueError("krylov_dim must be >= 2")


# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (
    71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40,
)


_A_MAT = np.zeros((7, 7))
for _i, _row in enumerate(_A):
    _A_MAT[_i, : len(_row)] = _row
_C_VEC = np.array(_C)
_E_VEC = np.array(_E)


@dataclass(frozen=True, eq=False)
class _DeviceOps:
    h_static: sp.csr_matrix
    qubit_lower: np.ndarray
    qubit_dim: int


@lru_cache(maxsize=16)
def _device_ops(device: DeviceParams) -> _DeviceOps:
    dq = device.layout.dims[0]
    h = model.h_static(device, sparse=True)
    h.sort_indices()
    return _DeviceOps(h, annihilation_op(dq), dq)


@njit(cache=True)
def _rhs(t, y, out, indptr, indices, data, lower, dq, amps, dets, centers, widths, cutoffs):
    n = y.size
    for i in range(n):
        acc = 0j
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * y[indices[k]]
        out[i] = acc
    c = 0j
    for j in range(amps.size):
        x = t - centers[j]
        if abs(x) < cutoffs[j]:
            env = amps[j] * math.exp(-x * x / (2.0 * widths[j] * widths[j]))
            c += env * complex(math.cos(dets[j] * t), math.sin(dets[j] * t))
    if c != 0:
        cc = c.conjugate()
        rest = n // dq
        for q in range(dq):
            for p in range(dq):
                lo = lower[q, p]  # <q|a|p>
                if lo != 0:
                    # a: |p> -> |q>,  a^dag: |q> -> |p>
                    for r in range(rest):
                        out[q * rest + r] += cc * lo * y[p * rest + r]
                        out[p * rest + r] += c * lo * y[q * rest + r]
    for i in range(n):
        out[i] = -1j * out[i]


@njit(cache=True)
def _dopri5(y0, t0, t1, h, rtol, atol, max_steps, a_mat, c_vec, e_vec,
            indptr, indices, data, lower, dq, amps, dets, centers, widths, cutoffs):
    n = y0.size
    y = y0.copy()
    ks = np.empty((7, n), dtype=np.complex128)
    stage = np.empty(n, dtype=np.complex128)
    t = t0
    _rhs(t, y, ks[0], indptr, indices, data, lower, dq, amps, dets, centers, widths, cutoffs)
    accepted = 0
    rejected = 0
    while t < t1:
        if accepted + rejected >= max_steps:
            return y, t, accepted, rejected, 2
        last = t + h >= t1
        if last:
            h = t1 - t
        if h <= 1e-14 * max(1.0, abs(t)):
            return y, t, accepted, rejected, 1
        for s in range(1, 7):
            for i in range(n):
                acc = y[i]
                for r in range(s):
                    if a_mat[s, r] != 0.0:
                        acc += h * a_mat[s, r] * ks[r, i]
                stage[i] = acc
            _rhs(t + c_vec[s] * h, stage, ks[s], indptr, indices, data, lower, dq,
                 amps, dets, centers, widths, cutoffs)
        # stage now holds the 5th-order solution (FSAL row)
        err_norm = 0.0
        for i in range(n):
            e = 0j
            for r in range(7):
                if e_vec[r] != 0.0:
                    e += e_vec[r] * ks[r, i]
            scale = atol + rtol * max(abs(y[i]), abs(stage[i]))
            v = abs(h * e) / scale
            if v > err_norm:
                err_norm = v
        if err_norm <= 1.0:
            t = t1 if last else t + h
            y[:] = stage
            ks[0, :] = ks[6]
            accepted += 1
            factor = 5.0 if err_norm == 0.0 else min(5.0, 0.9 * err_norm ** -0.2)
        else:
            rejected += 1
            factor = max(0.2, 0.9 * err_norm ** -0.2)
        h *= factor
    return y, t, accepted, rejected, 0


def _pulse_arrays(schedule: DriveSchedule):
    ps = schedule.pulses
    return tuple(
        np.array([getattr(p, name) for p in ps], dtype=float)
        for name in ("amplitude", "drive_detuning", "center", "width", "cutoff_radius")
    )


def integrate_tdse(
    psi0: np.ndarray,
    device: DeviceParams,
    schedule: DriveSchedule,
    t0: float,
    t1: float,
    config: PropagatorConfig = PropagatorConfig(),
    stats: dict | None = None,
) -> np.ndarray:
    """Solve i dpsi/dt = H(t) psi from ``t0`` to ``t1`` with adaptive DOPRI5.

    Local errors are measured in the max norm, componentwise scaled by
    ``abs_tol + rel_tol * |psi_i|``.  The norm is not renormalized; drift is
    left visible as a diagnostic.  ``stats`` (optional dict) receives the
    accepted/rejected step counts.
    """
    if not t1 > t0:
        raise ValueError(f"t1 ({t1}) must exceed t0 ({t0})")
    ops = _device_ops(device)
    if config.initial_step is not None:
        h = config.initial_step
    else:
        widths = [p.width for p in schedule.pulses]
        h = (min(widths) / 50.0) if widths else (t1 - t0) / 100.0
    h = min(h, t1 - t0)
    hs = ops.h_static
    y, t, accepted, rejected, status = _dopri5(
        np.ascontiguousarray(psi0, dtype=np.complex128), float(t0), float(t1), float(h),
        config.rel_tol, config.abs_tol, config.max_steps, _A_MAT, _C_VEC, _E_VEC,
        hs.indptr.astype(np.int64), hs.indices.astype(np.int64), hs.data.astype(np.complex128),
        ops.qubit_lower.real.copy(), ops.qubit_dim, *_pulse_arrays(schedule),
    )
    if status == 1:
        raise IntegrationError("step size underflow", t)
    if status == 2:
        raise IntegrationError("maximum number of steps exceeded", t)
    if stats is not None:
        stats.update(accepted=accepted, rejected=rejected)
    return y


class SpectralPropagator:
    """exp(-i H dt) via cached eigendecompositions of H's invariant blocks.

    Blocks are the total-excitation sectors when H conserves excitation
    number (true for every static Hamiltonian of the device); otherwise a
    single block spans the whole space.
    """

    def __init__(self, h, blocks: Sequence[np.ndarray] | None = None):
        n = h.shape[0]
        if blocks is None:
            blocks = [np.arange(n)]
        # slice blocks out of a sparse h so the full matrix is never densified
        h = sp.csr_matrix(h) if sp.issparse(h) else np.asarray(h)
        self.dim = n
        self.blocks = []
        for idx in blocks:
            sub = h[idx][:, idx].toarray() if sp.issparse(h) else h[np.ix_(idx, idx)]
            if not np.any(sub.imag):
                sub = sub.real
            try:
                w, v = la.eigh(sub)
            except la.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"eigendecomposition failed: {exc}") from exc
            self.blocks.append((idx, w, v))

    def coefficients(self, psi):
        return [(idx, w, v, v.conj().T @ psi[idx]) for idx, w, v in self.blocks]

    def from_coefficients(self, coeffs, dt: float) -> np.ndarray:
        out = np.empty(self.dim, dtype=complex)
        for idx, w, v, c in coeffs:
            out[idx] = v @ (np.exp(-1j * w * dt) * c)
        return out

    def evolve(self, psi: np.ndarray, dt: float) -> np.ndarray:
        if dt == 0:
            return np.array(psi, dtype=complex)
        return self.from_coefficients(self.coefficients(psi), dt)

    def evolve_many(self, psi: np.ndarray, dts: Iterable[float]) -> Iterator[np.ndarray]:
        coeffs = self.coefficients(psi)
        for dt in dts:
            yield self.from_coefficients(coeffs, dt)


class KrylovPropagator:
    """exp(-i H dt) psi via Lanczos projection with adaptive sub-stepping.

    The local error of each sub-step is estimated from the last Lanczos
    coefficient; sub-steps are shrunk until that estimate stays below
    ``tol * tau / dt`` so the accumulated error is bounded by ``tol``.
    """

    def __init__(self, h, tol: float = 1e-10, m: int = 30):
        self.h = sp.csr_matrix(h) if not sp.issparse(h) else h.tocsr()
        self.dim = self.h.shape[0]
        self.tol = tol
        self.m = m

    def _lanczos(self, v):
        m = min(self.m, self.dim)
        beta0 = np.linalg.norm(v)
        basis = np.zeros((m + 1, self.dim), dtype=complex)
        alpha = np.zeros(m)
        beta = np.zeros(m)
        basis[0] = v / beta0
        k = m
        for j in range(m):
            w = self.h @ basis[j]
            alpha[j] = np.vdot(basis[j], w).real
            w -= alpha[j] * basis[j]
            if j:
                w -= beta[j - 1] * basis[j - 1]
            # full reorthogonalization keeps the short recurrence honest
            w -= basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
            beta[j] = np.linalg.norm(w)
            if beta[j] < 1e-13 * max(1.0, abs(alpha[j])):
                k = j + 1
                break
            basis[j + 1] = w / beta[j]
        return beta0, alpha[:k], beta[:k], basis[:k], k < m or k == self.dim

    def evolve(self, psi: np.ndarray, dt: float) -> np.ndarray:
        y = np.array(psi, dtype=complex)
        if dt == 0:
            return y
        total = abs(dt)
        sign = 1.0 if dt > 0 else -1.0
        done = 0.0
        tau = total
        while done < total:
            tau = min(tau, total - done)
            beta0, alpha, beta, basis, exact = self._lanczos(y)
            k = len(alpha)
            tri = np.diag(alpha) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1)
            # estimates below this are round-off, not truncation error
            floor = 64 * np.finfo(float).eps * beta0
            while True:
                # expm (not an eigen-reconstruction) keeps the tiny corner
                # entry that drives the error estimate accurate
                small = la.expm(-1j * sign * tau * tri)[:, 0]
                err = 0.0 if exact else beta0 * beta[k - 1] * abs(small[-1])
                if err <= max(self.tol * tau / total, floor):
                    break
                tau *= 0.5
                if tau < 1e-12 * total:
                    raise RuntimeError(f"Krylov step collapsed at offset {done:.6g} of {total:.6g}")
            y = beta0 * (basis.T @ small)
            done += tau
            if err < 0.1 * self.tol * tau / total:
                tau *= 2.0
        return y

    def evolve_many(self, psi: np.ndarray, dts: Iterable[float]) -> Iterator[np.ndarray]:
        """Evolve to each offset in turn; offsets must be non-decreasing."""
        cur, cur_t = np.array(psi, dtype=complex), 0.0
        for dt in dts:
            if dt < cur_t:
                raise ValueError("Krylov offsets must be non-decreasing")
            cur = self.evolve(cur, dt - cur_t)
            cur_t = dt
            yield cur


def excitation_blocks(h, numbers: np.ndarray) -> list[np.ndarray] | None:
    """Excitation-number sectors if ``h`` conserves total excitation, else None."""
    coo = sp.coo_matrix(h)
    nz = coo.data != 0
    if np.any(numbers[coo.row[nz]] != numbers[coo.col[nz]]):
        return None
    order = np.argsort(numbers, kind="stable")
    bounds = np.flatnonzero(np.diff(numbers[order])) + 1
    return np.split(order, bounds)


def make_propagator(h, config: PropagatorConfig = PropagatorConfig(), numbers=None):
    """Spectral propagator when its largest block fits the dense limit, else Krylov."""
    blocks = excitation_blocks(h, numbers) if numbers is not None else None
    largest = max(len(b) for b in blocks) if blocks else h.shape[0]
    if largest <= config.dense_spectral_max_dim:
        return SpectralPropagator(h, blocks)
    return KrylovPropagator(h, tol=config.abs_tol, m=config.krylov_dim)


def propagate_static(psi, h, dt: float, config: PropagatorConfig = PropagatorConfig()):
    """exp(-i H dt) |psi> for a time-independent Hermitian ``h``.

    Builds a fresh propagator; use ``make_propagator`` to reuse one.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if h.shape[0] <= config.dense_spectral_max_dim:
        prop = SpectralPropagator(h)
    else:
        prop = KrylovPropagator(h, tol=config.abs_tol, m=config.krylov_dim)
    return prop.evolve(psi, dt)


@dataclass(frozen=True, eq=False)
class _Propagators:
    static: object
    lin: object


@lru_cache(maxsize=8)
def device_propagators(device: DeviceParams, config: PropagatorConfig = PropagatorConfig()):
    """Cached static and linear-part propagators for a device."""
    numbers = excitation_numbers(device.layout)
    return _Propagators(
        static=make_propagator(model.h_static(device, sparse=True), config, numbers),
        lin=make_propagator(model.h_lin(device, sparse=True), config, numbers),
    )


def clear_caches() -> None:
    device_propagators.cache_clear()
    _device_ops.cache_clear()


def to_interaction_picture(psi, device: DeviceParams, t: float, config=PropagatorConfig()):
    """exp(+i h_lin t) |psi>."""
    return device_propagators(device, config).lin.evolve(psi, -t)


@dataclass
class TrajectoryResult:
    reference_time: float
    reference_state: DensityMatrix
    snapshots: list[tuple[float, DensityMatrix]]
    pulse_end_state: np.ndarray  # rotating-frame state at t_R, before any rotation
    norm_error: float
    states: dict[float, np.ndarray] | None = field(default=None, repr=False)

    def at(self, t: float) -> DensityMatrix:
        for ts, rho in self.snapshots:
            if ts == t:
                return rho
        if t == self.reference_time:
            return self.reference_state
        raise KeyError(t)

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.snapshots]


def _pulse_segment(device, schedule, config):
    psi = vacuum(device.layout)
    t_ref = schedule.pulse_end
    if t_ref > 0:
        psi = integrate_tdse(psi, device, schedule, 0.0, t_ref, config)
    return t_ref, psi


def iter_snapshots(
    device: DeviceParams,
    schedule: DriveSchedule,
    times: Sequence[float],
    config: PropagatorConfig = PropagatorConfig(),
) -> Iterator[tuple[float, DensityMatrix, np.ndarray]]:
    """Lazily yield ``(t, rho_t, psi_I(t))`` for sorted ``times`` >= the pulse end.

    The first item is always the reference snapshot at the pulse end.  Use
    this for long trajectories where storing every reduced state is too
    expensive.
    """
    layout = device.layout
    keep = list(range(1, len(layout.dims)))
    t_ref, psi = _pulse_segment(device, schedule, config)
    times = sorted(set(float(t) for t in times))
    if times and times[0] < t_ref:
        raise ValueError(f"snapshot times must be >= pulse end {t_ref}")
    props = device_propagators(device, config)

    def reduce_at(state, t):
        rotated = props.lin.evolve(state, -t)
        return partial_trace(rotated, keep, layout.dims), rotated

    yield (t_ref, *reduce_at(psi, t_ref))
    for t, state in zip(times, props.static.evolve_many(psi, [t - t_ref for t in times])):
        yield (t, *reduce_at(state, t))


def run_schedule(
    device: DeviceParams,
    schedule: DriveSchedule,
    config: PropagatorConfig = PropagatorConfig(),
    times: Sequence[float] | None = None,
    keep_states: bool = False,
) -> TrajectoryResult:
    """Simulate one drive schedule from the vacuum and collect mBAR snapshots.

    ``times`` overrides the schedule's measurement times (e.g. a dense grid
    for trajectory plots); all times must be at or after the pulse end.
    Duplicate times share one snapshot.
    """
    layout = device.layout
    keep = list(range(1, len(layout.dims)))
    t_ref, psi = _pulse_segment(device, schedule, config)
    norm_error = abs(np.linalg.norm(psi) - 1.0)
    want = schedule.measure_times if times is None else tuple(float(t) for t in times)
    uniq = sorted(set(want))
    if uniq and uniq[0] < t_ref:
        raise ValueError(f"snapshot times must be >= pulse end {t_ref}")
    props = device_propagators(device, config)

    def reduce_at(state, t):
        rotated = props.lin.evolve(state, -t)
        return partial_trace(rotated, keep, layout.dims), rotated

    rho_ref, rot_ref = reduce_at(psi, t_ref)
    snaps = []
    states = {t_ref: rot_ref} if keep_states else None
    for t, state in zip(uniq, props.static.evolve_many(psi, [t - t_ref for t in uniq])):
        rho, rot = reduce_at(state, t)
        snaps.append((t, rho))
        if keep_states:
            states[t] = rot
    return TrajectoryResult(t_ref, rho_ref, snaps, psi, norm_error, states)


@dataclass
class FidelityTrace:
    times: np.ndarray
    fidelity: np.ndarray
    log_negativity: np.ndarray  # NaN when there is a single mode


def fidelity_trace(
    device: DeviceParams,
    schedule: DriveSchedule,
    times: Sequence[float],
    config: PropagatorConfig = PropagatorConfig(),
    partition: Sequence[int] = (0,),
    negativity: bool = True,
) -> FidelityTrace:
    """F(rho_R, rho_t) and E_N(rho_t) over ``times`` (reference at the pulse end).

    ``partition`` lists the mode indices (0-based, qubit excluded) on one side
    of the negativity bipartition.  ``negativity=False`` skips E_N (NaN), which
    dominates the cost for three or more modes.
    """
    n_modes = device.n_modes
    ts, fid, neg = [], [], []
    it = iter_snapshots(device, schedule, times, config)
    _, rho_ref, _ = next(it)
    for t, rho, _ in it:
        ts.append(t)
        fid.append(uhlmann_fidelity(rho_ref, rho))
        neg.append(log_negativity(rho, partition) if negativity and n_modes >= 2 else np.nan)
    return FidelityTrace(np.array(ts), np.array(fid), np.array(neg))
