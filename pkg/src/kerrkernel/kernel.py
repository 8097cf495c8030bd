"""Sample encoding, per-sample state caching and fidelity-product Gram matrices."""

from __future__ import annotations

import csv
import json
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np

from .dynamics import PropagatorConfig, run_schedule
from .iohelpers import atomic_write
from .model import DeviceParams, DriveSchedule, gaussian_schedule, mhz
from .qinfo import DensityMatrix, uhlmann_fidelity


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class EncodingConfig:
    """Linear map from features in [0, 1] to pulse amplitudes and readout times.

    Amplitudes are angular (rad/us); times in us.  ``detunings`` default to
    the device's mode detunings, i.e. each pulse is resonant with one mode.
    """

    omega_min: float
    omega_max: float
    t_min: float
    t_max: float
    sigma: float = 0.08
    detunings: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.omega_max < self.omega_min:
            raise ValueError("omega_max must be >= omega_min")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")
        if self.t_min < self.pulse_end:
            raise ValueError(f"t_min {self.t_min} precedes the pulse end {self.pulse_end}")

    @property
    def center(self) -> float:
        return 3.0 * self.sigma

    @property
    def pulse_end(self) -> float:
        return 6.0 * self.sigma

    @classmethod
    def from_mhz(cls, omega_min, omega_max, t_min, t_max, sigma=0.08, detunings=None):
        det = None if detunings is None else tuple(mhz(d) for d in detunings)
        return cls(mhz(omega_min), mhz(omega_max), t_min, t_max, sigma, det)

    @classmethod
    def default(cls) -> "EncodingConfig":
        """7.5-7.6 MHz amplitudes, readout between 5 and 95 us after the pulse center."""
        sigma = 0.08
        return cls.from_mhz(7.5, 7.6, 5.0 + 3 * sigma, 95.0 + 3 * sigma, sigma)

    def amplitude(self, x: float) -> float:
        return self.omega_min + (self.omega_max - self.omega_min) * x

    def time(self, x: float) -> float:
        return self.t_min + (self.t_max - self.t_min) * x


@dataclass(frozen=True)
class Sample:
    id: Hashable
    features: tuple[float, ...]

    def __post_init__(self):
        feats = tuple(float(f) for f in self.features)
        for f in feats:
            if not 0.0 <= f <= 1.0:
                raise EncodingError(f"feature {f} of sample {self.id!r} outside [0, 1]")
        object.__setattr__(self, "features", feats)


def encode_sample(x: Sample, enc: EncodingConfig, device: DeviceParams) -> DriveSchedule:
    """One pulse per feature, all centred at 3 sigma; readout time per feature."""
    d = len(x.features)
    if d != device.n_modes:
        raise EncodingError(f"sample has {d} features but device has {device.n_modes} modes")
    detunings = device.deltas if enc.detunings is None else enc.detunings
    if len(detunings) != d:
        raise EncodingError("need one drive detuning per feature")
    return gaussian_schedule(
        [enc.amplitude(f) for f in x.features],
        detunings,
        enc.sigma,
        [enc.time(f) for f in x.features],
        center=enc.center,
    )


def sample_states(
    x: Sample,
    enc: EncodingConfig,
    device: DeviceParams,
    config: PropagatorConfig = PropagatorConfig(),
) -> list[DensityMatrix]:
    """Reduced all-mode states at each feature's readout time, in feature order."""
    schedule = encode_sample(x, enc, device)
    traj = run_schedule(device, schedule, config)
    return [traj.at(t) for t in schedule.measure_times]


def kernel_entry(rhos1: Sequence[DensityMatrix], rhos2: Sequence[DensityMatrix]) -> float:
    """Product of per-readout Uhlmann fidelities, clipped to [0, 1]."""
    if len(rhos1) != len(rhos2):
        raise ValueError(f"length mismatch: {len(rhos1)} vs {len(rhos2)}")
    k = 1.0
    for r1, r2 in zip(rhos1, rhos2):
        k *= uhlmann_fidelity(r1, r2)
    return float(min(max(k, 0.0), 1.0))


class RhoCache:
    """Sample id -> list of reduced states; each id is computed at most once.

    Concurrent callers asking for the same id block on a per-key lock, so
    there is a single writer per key and everyone else reads.
    """

    def __init__(self):
        self._data: dict[Hashable, list[DensityMatrix]] = {}
        self._locks: dict[Hashable, threading.Lock] = {}
        self._guard = threading.Lock()

    def __contains__(self, key):
        return key in self._data

    def __len__(self):
        return len(self._data)

    def __getitem__(self, key):
        return self._data[key]

    def put(self, key, rhos):
        with self._guard:
            self._data.setdefault(key, rhos)

    def get_or_compute(self, key, compute: Callable[[], list[DensityMatrix]]):
        if key in self._data:
            return self._data[key]
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._data:
                self._data[key] = compute()
        return self._data[key]

    def keys(self):
        return self._data.keys()


@dataclass
class KernelMatrix:
    row_ids: list
    col_ids: list
    values: np.ndarray

    @property
    def is_square(self) -> bool:
        return self.row_ids == self.col_ids

    def to_csv(self, path) -> None:
        with atomic_write(path) as fh:
            w = csv.writer(fh)
            w.writerow(["row_id", "col_id", "value"])
            for i, r in enumerate(self.row_ids):
                for j, c in enumerate(self.col_ids):
                    w.writerow([r, c, repr(float(self.values[i, j]))])

    def to_json(self, path) -> None:
        payload = {
            "row_ids": list(self.row_ids),
            "col_ids": list(self.col_ids),
            "values": [[float(v) for v in row] for row in self.values],
        }
        with atomic_write(path) as fh:
            json.dump(payload, fh, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "KernelMatrix":
        with open(path) as fh:
            data = json.load(fh)
        return cls(data["row_ids"], data["col_ids"], np.array(data["values"], dtype=float))

    @classmethod
    def from_csv(cls, path) -> "KernelMatrix":
        rows, cols, vals = [], [], {}
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                r, c = _parse_id(rec["row_id"]), _parse_id(rec["col_id"])
                if r not in rows:
                    rows.append(r)
                if c not in cols:
                    cols.append(c)
                vals[r, c] = float(rec["value"])
        mat = np.array([[vals[r, c] for c in cols] for r in rows])
        return cls(rows, cols, mat)


def _parse_id(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def clip_negative_spectrum(values: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone by zeroing negative eigenvalues."""
    sym = 0.5 * (values + values.T)
    w, v = np.linalg.eigh(sym)
    return (v * np.clip(w, 0.0, None)) @ v.T


def _simulate(args):
    x, enc, device, config = args
    return x.id, sample_states(x, enc, device, config)


def fill_cache(
    samples: Sequence[Sample],
    enc: EncodingConfig,
    device: DeviceParams,
    config: PropagatorConfig = PropagatorConfig(),
    cache: RhoCache | None = None,
    workers: int = 1,
) -> RhoCache:
    """Simulate every sample whose id is not cached yet (once per unique id)."""
    cache = RhoCache() if cache is None else cache
    todo, seen = [], set()
    for x in samples:
        if x.id not in cache and x.id not in seen:
            seen.add(x.id)
            todo.append(x)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            jobs = [(x, enc, device, config) for x in todo]
            for key, rhos in pool.map(_simulate, jobs, chunksize=max(1, len(todo) // (4 * workers))):
                cache.put(key, rhos)
    else:
        for x in todo:
            cache.get_or_compute(x.id, lambda x=x: sample_states(x, enc, device, config))
    return cache


def gram_from_cache(cache: RhoCache, row_ids: Sequence, col_ids: Sequence) -> np.ndarray:
    row_ids, col_ids = list(row_ids), list(col_ids)
    out = np.empty((len(row_ids), len(col_ids)))
    if row_ids == col_ids:
        for i, r in enumerate(row_ids):
            out[i, i] = kernel_entry(cache[r], cache[r])
            for j in range(i + 1, len(col_ids)):
                out[i, j] = out[j, i] = kernel_entry(cache[r], cache[col_ids[j]])
        return out
    for i, r in enumerate(row_ids):
        for j, c in enumerate(col_ids):
            out[i, j] = kernel_entry(cache[r], cache[c])
    return out


def gram_matrix(
    samples_a: Sequence[Sample],
    samples_b: Sequence[Sample],
    enc: EncodingConfig,
    device: DeviceParams,
    config: PropagatorConfig = PropagatorConfig(),
    cache: RhoCache | None = None,
    workers: int = 1,
    clip_negative: bool = False,
) -> KernelMatrix:
    """Kernel matrix between two sample lists; each sample is simulated once.

    When both lists hold the same ids in the same order the result is
    symmetric by construction.
    """
    cache = fill_cache(list(samples_a) + list(samples_b), enc, device, config, cache, workers)
    rows = [x.id for x in samples_a]
    cols = [x.id for x in samples_b]
    values = gram_from_cache(cache, rows, cols)
    if clip_negative and rows == cols:
        values = clip_negative_spectrum(values)
    return KernelMatrix(rows, cols, values)


def save_states(path, cache: RhoCache, fingerprint: str = "") -> None:
    """Store cached reduced states (as their factors) in one ``.npz`` file."""
    arrays, index = {}, []
    for k, key in enumerate(cache.keys()):
        rhos = cache[key]
        index.append({"id": key, "dims": list(rhos[0].dims), "count": len(rhos)})
        for l, rho in enumerate(rhos):
            arrays[f"s{k}_{l}"] = rho.sqrt_factor
    meta = json.dumps({"fingerprint": fingerprint, "index": index}, sort_keys=True)
    with atomic_write(path, "wb") as fh:
        np.savez_compressed(fh, __meta__=np.array(meta), **arrays)


def load_states(path, fingerprint: str | None = None) -> RhoCache:
    """Inverse of :func:`save_states`; raises if ``fingerprint`` does not match."""
    with np.load(path) as data:
        meta = json.loads(str(data["__meta__"]))
        if fingerprint is not None and meta["fingerprint"] != fingerprint:
            raise ValueError(f"{path} was produced with a different configuration")
        cache = RhoCache()
        for k, entry in enumerate(meta["index"]):
            rhos = [DensityMatrix(dims=entry["dims"], factor=data[f"s{k}_{l}"])
                    for l in range(entry["count"])]
            cache.put(entry["id"], rhos)
    return cache
