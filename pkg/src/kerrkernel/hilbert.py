"""Truncated Fock-space operators on the composite qubit + resonator space.

Flattening convention: subsystem 0 (the qubit) is the slowest-varying index,
i.e. basis index = ravel_multi_index(occupations, dims) in C order.  Every
other module inherits this ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Raised for invalid truncation dimensions, sites or occupations."""


@dataclass(frozen=True)
class ModeLayout:
    """Truncation dimensions of the composite system.

    ``dims[0]`` is the qubit, ``dims[1:]`` are the resonator modes.
    """

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise DimensionError("layout needs at least one subsystem")
        if any(d < 2 for d in dims):
            raise DimensionError(f"all truncation dims must be >= 2, got {dims}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def default(cls, n_modes: int, mode_dim: int = 9, qubit_dim: int = 4) -> "ModeLayout":
        return cls((qubit_dim,) + (mode_dim,) * n_modes)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_modes(self) -> int:
        return len(self.dims) - 1

    def __len__(self):
        return len(self.dims)


def annihilation_op(dim: int) -> np.ndarray:
    """Truncated lowering operator with ``M[n-1, n] = sqrt(n)``."""
    if dim < 2:
        raise DimensionError(f"dim must be >= 2, got {dim}")
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def number_op(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def _check_site(site: int, layout: ModeLayout) -> None:
    if not 0 <= site < len(layout.dims):
        raise DimensionError(f"site {site} out of range for layout {layout.dims}")


def embed(local, site: int, layout: ModeLayout, sparse: bool = False):
    """Lift a single-subsystem operator to the full space (identity elsewhere).

    With ``sparse=True`` a CSR matrix is returned; the dense path is the
    reference representation.
    """
    _check_site(site, layout)
    if local.shape != (layout.dims[site], layout.dims[site]):
        raise DimensionError(
            f"operator of shape {local.shape} does not match dim {layout.dims[site]} at site {site}"
        )
    left = int(np.prod(layout.dims[:site], dtype=int))
    right = int(np.prod(layout.dims[site + 1:], dtype=int))
    if sparse:
        out = sp.kron(sp.identity(left, format="csr"), sp.csr_matrix(local), format="csr")
        return sp.kron(out, sp.identity(right, format="csr"), format="csr").astype(complex)
    out = np.kron(np.eye(left), np.asarray(local))
    out = np.kron(out, np.eye(right))
    return out.astype(complex)


def tensor(*ops) -> np.ndarray:
    return reduce(np.kron, ops)


def flat_index(layout: ModeLayout, occupations: Sequence[int]) -> int:
    if len(occupations) != len(layout.dims):
        raise DimensionError(
            f"expected {len(layout.dims)} occupations, got {len(occupations)}"
        )
    for j, (n, d) in enumerate(zip(occupations, layout.dims)):
        if not 0 <= n < d:
            raise DimensionError(f"occupation {n} at site {j} outside [0, {d})")
    return int(np.ravel_multi_index(tuple(occupations), layout.dims))


def basis_state(layout: ModeLayout, occupations: Sequence[int]) -> np.ndarray:
    """Fock basis vector for the given per-subsystem occupations."""
    psi = np.zeros(layout.total_dim, dtype=complex)
    psi[flat_index(layout, occupations)] = 1.0
    return psi


def vacuum(layout: ModeLayout) -> np.ndarray:
    return basis_state(layout, [0] * len(layout.dims))


def excitation_numbers(layout: ModeLayout) -> np.ndarray:
    """Total excitation count of every basis state, in flattened order."""
    total = np.zeros(1, dtype=int)
    for d in layout.dims:
        total = (total[:, None] + np.arange(d)[None, :]).ravel()
    return total


def is_hermitian(op, atol: float = 1e-12) -> bool:
    if sp.issparse(op):
        return abs(op - op.conj().T).max() <= atol if op.nnz else True
    op = np.asarray(op)
    return bool(np.max(np.abs(op - op.conj().T), initial=0.0) <= atol)
