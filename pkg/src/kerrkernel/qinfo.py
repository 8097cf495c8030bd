"""Partial traces, Uhlmann fidelity, logarithmic negativity and occupations."""

from __future__ import annotations

from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

EIG_FLOOR = 1e-12


class DensityMatrix:
    """Density matrix over subsystems with truncation ``dims``.

    May be built from a factor ``M`` with ``rho = M M^dag`` (what tracing a
    pure state produces); the dense matrix is then formed only on demand and
    fidelities use the factor directly.
    """

    def __init__(self, data=None, dims: Sequence[int] = (), factor=None):
        self.dims = tuple(int(d) for d in dims)
        n = int(np.prod(self.dims))
        if data is None and factor is None:
            raise ValueError("need either data or factor")
        if data is not None:
            data = np.asarray(data)
            if data.shape != (n, n):
                raise ValueError(f"matrix of shape {data.shape} does not match dims {self.dims}")
            self.__dict__["data"] = data
        if factor is not None and factor.shape[0] != n:
            raise ValueError(f"factor with {factor.shape[0]} rows does not match dims {self.dims}")
        self._factor = factor

    @cached_property
    def data(self) -> np.ndarray:
        return self._factor @ self._factor.conj().T

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @cached_property
    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        herm = 0.5 * (self.data + self.data.conj().T)
        return np.linalg.eigh(herm)

    @cached_property
    def sqrt_factor(self) -> np.ndarray:
        """Some ``B`` with ``rho = B B^dag`` (eigen-based unless a factor was given).

        The eigen route keeps ``v_k sqrt(w_k)`` for eigenvalues above the floor.
        """
        if self._factor is not None:
            return self._factor
        w, v = self.spectrum
        keep = w > EIG_FLOOR
        return v[:, keep] * np.sqrt(w[keep])

    def validate(self, atol: float = 1e-9) -> None:
        """Raise if the matrix is not Hermitian, unit-trace and PSD within ``atol``."""
        herm_err = np.max(np.abs(self.data - self.data.conj().T), initial=0.0)
        if herm_err > atol:
            raise ValueError(f"not Hermitian (max deviation {herm_err:.3g})")
        tr = np.trace(self.data).real
        if abs(tr - 1.0) > atol:
            raise ValueError(f"trace {tr!r} differs from 1")
        wmin = self.spectrum[0][0]
        if wmin < -atol:
            raise ValueError(f"negative eigenvalue {wmin:.3g}")

    def diagonal(self) -> np.ndarray:
        if "data" not in self.__dict__ and self._factor is not None:
            return np.sum(np.abs(self._factor) ** 2, axis=1)
        return np.real(np.diag(self.data))

    def __getstate__(self):
        state = dict(self.__dict__)
        if self._factor is not None:
            state.pop("data", None)
        state.pop("spectrum", None)
        state.pop("sqrt_factor", None)
        return state

    @classmethod
    def pure(cls, psi: np.ndarray, dims: Sequence[int]) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        return cls(dims=tuple(dims), factor=psi.reshape(-1, 1))


def _keep_list(keep: Iterable[int], n_sub: int) -> list[int]:
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    if keep[0] < 0 or keep[-1] >= n_sub:
        raise ValueError(f"subsystem indices {keep} out of range for {n_sub} subsystems")
    return keep


def partial_trace(state, keep: Iterable[int], dims: Sequence[int] | None = None) -> DensityMatrix:
    """Reduce a state vector or density matrix onto the subsystems in ``keep``.

    Kept subsystems retain their original relative order.
    """
    if isinstance(state, DensityMatrix):
        dims = state.dims if dims is None else tuple(dims)
        mat = state.data
    else:
        mat = np.asarray(state)
        if dims is None:
            raise ValueError("dims are required for raw arrays")
    dims = tuple(int(d) for d in dims)
    keep = _keep_list(keep, len(dims))
    traced = [j for j in range(len(dims)) if j not in keep]
    dk = int(np.prod([dims[j] for j in keep]))

    if mat.ndim == 1:
        psi = mat.reshape(dims).transpose(keep + traced).reshape(dk, -1)
        return DensityMatrix(dims=tuple(dims[j] for j in keep), factor=np.ascontiguousarray(psi))
    else:
        n = len(dims)
        t = mat.reshape(dims + dims)
        # bring (keep, traced | keep, traced) and contract the traced pairs
        t = t.transpose(keep + traced + [n + j for j in keep] + [n + j for j in traced])
        dt = mat.shape[0] // dk
        t = t.reshape(dk, dt, dk, dt)
        rho = np.einsum("ajbj->ab", t)
    return DensityMatrix(rho, tuple(dims[j] for j in keep))


def uhlmann_fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """F = Tr sqrt(sqrt(rho) sigma sqrt(rho)), clipped to [0, 1].

    Evaluated as the trace norm of ``B_rho^dag B_sigma`` for factorizations
    ``rho = B_rho B_rho^dag`` (floor-clamped eigen-factors, or the exact
    factor of a traced pure state).  This equals the nested-square-root form
    but does not amplify round-off sitting in tiny eigenvalues.
    """
    if rho.dim != sigma.dim:
        raise ValueError(f"dimension mismatch: {rho.dims} vs {sigma.dims}")
    overlap = rho.sqrt_factor.conj().T @ sigma.sqrt_factor
    if overlap.size == 0:
        return 0.0
    f = np.linalg.svd(overlap, compute_uv=False).sum()
    return float(min(max(f, 0.0), 1.0))


def partial_transpose(rho: DensityMatrix, partition: Iterable[int]) -> np.ndarray:
    dims = rho.dims
    part = _keep_list(partition, len(dims))
    n = len(dims)
    axes = list(range(2 * n))
    for j in part:
        axes[j], axes[n + j] = n + j, j
    d = rho.dim
    return rho.data.reshape(dims + dims).transpose(axes).reshape(d, d)


def log_negativity(rho: DensityMatrix, partition: Iterable[int]) -> float:
    """log2 of the trace norm of the partial transpose over ``partition``."""
    part = _keep_list(partition, len(rho.dims))
    if len(rho.dims) < 2 or len(part) == len(rho.dims):
        raise ValueError("partition must be a proper, nonempty subset of >= 2 subsystems")
    pt = partial_transpose(rho, part)
    lam = np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))
    return float(np.log2(np.abs(lam).sum()))


def mean_occupation(state, site: int, dims: Sequence[int] | None = None) -> float:
    """<n> of subsystem ``site`` for a state vector or density matrix."""
    if isinstance(state, DensityMatrix):
        dims = state.dims
        probs = state.diagonal()
    else:
        if dims is None:
            raise ValueError("dims are required for raw arrays")
        arr = np.asarray(state)
        probs = np.abs(arr) ** 2 if arr.ndim == 1 else np.real(np.diag(arr))
    dims = tuple(dims)
    if not 0 <= site < len(dims):
        raise ValueError(f"site {site} out of range")
    axes = tuple(j for j in range(len(dims)) if j != site)
    marginal = probs.reshape(dims).sum(axis=axes)
    return float(np.dot(np.arange(dims[site]), marginal))
