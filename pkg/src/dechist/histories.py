"""Branch states over a time grid and the decoherence functional.

A history x = (x_0, ..., x_n) assigns one macrostate label per grid
time.  Its branch state is Pi_{x_n} U ... Pi_{x_1} U Pi_{x_0} |psi>,
and the decoherence functional collects all pairwise branch overlaps
<psi(y)|psi(x)>.  Histories are encoded as base-3 integers with x_0 as
the least significant digit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import MACROSTATE_LABELS, NUM_MACROSTATES, Coarsening
from .spectral import SpectralDecomposition, apply_projector_batch, evolve_batch

__all__ = [
    "MAX_LENGTH",
    "HistoryGrid",
    "BranchStates",
    "DecoherenceFunctional",
    "encode_history",
    "decode_history",
    "history_string",
    "num_histories",
    "compute_branch_states",
    "compute_df",
    "marginalize",
]

M = NUM_MACROSTATES
MAX_LENGTH = 6

# Default cap on the leaf array (3^L * D complex entries): 2 GiB.
DEFAULT_MEMORY_BUDGET = 2 << 30


@dataclass(frozen=True)
class HistoryGrid:
    """Strictly increasing times t_0 < t_1 < ... < t_n, with n + 1 <= 6."""

    times: tuple[float, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.times) <= MAX_LENGTH:
            raise ValueError(
                f"grid must hold between 1 and {MAX_LENGTH} times, got {len(self.times)}"
            )
        arr = np.asarray(self.times, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid times must be finite")
        if np.any(np.diff(arr) <= 0):
            raise ValueError(f"grid times must be strictly increasing, got {self.times}")

    @classmethod
    def constant(cls, num_steps: int, step: float) -> "HistoryGrid":
        """Equally spaced grid t_k = k * step for k = 0..num_steps."""
        if step <= 0:
            raise ValueError(f"step must be positive, got {step}")
        return cls(times=tuple(k * step for k in range(num_steps + 1)))

    @classmethod
    def random_uniform(
        cls, num_steps: int, lo: float, hi: float, seed: int
    ) -> "HistoryGrid":
        """Grid with i.i.d. uniform spacings from [lo, hi), starting at 0."""
        if not 0 <= lo < hi:
            raise ValueError(f"need 0 <= lo < hi, got ({lo}, {hi})")
        rng = np.random.default_rng(seed)
        gaps = rng.uniform(lo, hi, size=num_steps)
        return cls(times=tuple(np.concatenate([[0.0], np.cumsum(gaps)])))

    @classmethod
    def from_times(cls, times: Sequence[float]) -> "HistoryGrid":
        return cls(times=tuple(float(t) for t in times))

    @property
    def length(self) -> int:
        """Number of times L = n + 1."""
        return len(self.times)

    @property
    def num_steps(self) -> int:
        return len(self.times) - 1


def num_histories(length: int) -> int:
    return M**length


def encode_history(labels: Sequence[int]) -> int:
    """Base-3 packing with the earliest label least significant."""
    h = 0
    for k, x in enumerate(labels):
        if not 0 <= x < M:
            raise ValueError(f"label out of range at position {k}: {x}")
        h += x * M**k
    return h


def decode_history(h: int, length: int) -> tuple[int, ...]:
    if not 0 <= h < M**length:
        raise ValueError(f"history {h} out of range for length {length}")
    return tuple((h // M**k) % M for k in range(length))


def history_string(h: int, length: int) -> str:
    """Comma-joined labels, oldest first, e.g. '0,+,0'."""
    return ",".join(MACROSTATE_LABELS[x] for x in decode_history(h, length))


def _digit_matrix(length: int) -> np.ndarray:
    """(3^L, L) array of base-3 digits for every encoded history."""
    codes = np.arange(M**length)
    return np.stack([(codes // M**k) % M for k in range(length)], axis=1)


@dataclass(frozen=True)
class BranchStates:
    """All 3^L branch leaves for one grid, indexed by encoded history.

    Zero-norm branches are stored as zero rows, never pruned, so the
    leaf array shape is always (3^L, D).
    """

    states: np.ndarray
    grid: HistoryGrid

    @property
    def length(self) -> int:
        return self.grid.length


def compute_branch_states(
    sd: SpectralDecomposition,
    coarsening: Coarsening,
    psi0: np.ndarray,
    grid: HistoryGrid,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> BranchStates:
    """Grow the branch tree level by level.

    Each tree node is evolved once and then split by the three
    projectors, so the work is sum_k 3^k propagations rather than
    L * 3^L.  Summing the leaves over all histories reproduces the
    unitarily evolved state.
    """
    d = sd.dimension
    length = grid.length
    needed = 16 * num_histories(length) * d
    if needed > memory_budget:
        raise MemoryError(
            f"branch tree needs {needed} bytes for 3^{length} x {d} leaves, "
            f"budget is {memory_budget}"
        )
    psi0 = np.asarray(psi0, dtype=np.complex128)
    # Level 0: split the initial state at t_0.
    states = np.concatenate(
        [apply_projector_batch(coarsening, x, psi0[None, :]) for x in range(M)], axis=0
    )
    for k in range(1, length):
        dt = grid.times[k] - grid.times[k - 1]
        evolved = evolve_batch(sd, states, dt)
        # Child with label x at time t_k sits at parent_code + x * 3^k,
        # so the three projected copies stack contiguously.
        states = np.concatenate(
            [apply_projector_batch(coarsening, x, evolved) for x in range(M)], axis=0
        )
    return BranchStates(states=states, grid=grid)


@dataclass(frozen=True)
class DecoherenceFunctional:
    """Hermitian (3^L, 3^L) matrix of branch overlaps <psi(y)|psi(x)>.

    entry(x, y) is exactly zero whenever the final-time labels differ,
    provided the final grid time was kept when marginalizing.
    """

    entries: np.ndarray
    grid: HistoryGrid

    @property
    def length(self) -> int:
        return self.grid.length

    def diagonal(self) -> np.ndarray:
        """Branch weights as a real vector."""
        return np.ascontiguousarray(self.entries.diagonal().real)


def compute_df(branches: BranchStates) -> DecoherenceFunctional:
    """Assemble the decoherence functional from branch leaves.

    Branches whose final labels differ live in orthogonal projector
    ranges, so those blocks are written as exact zeros without doing
    the inner products.
    """
    leaves = branches.states
    n = leaves.shape[0]
    length = branches.length
    block = M ** (length - 1)
    entries = np.zeros((n, n), dtype=np.complex128)
    for c in range(M):
        sl = slice(c * block, (c + 1) * block)
        b = leaves[sl]
        # entry(x, y) = <psi_y | psi_x> = sum_i psi_x[i] conj(psi_y[i]).
        entries[sl, sl] = b @ b.conj().T
    return DecoherenceFunctional(entries=entries, grid=branches.grid)


def _reduction_index(length: int, kept: tuple[int, ...]) -> np.ndarray:
    """Map each full code to its reduced code over the kept positions."""
    digits = _digit_matrix(length)
    ridx = np.zeros(M**length, dtype=np.int64)
    for pos, k in enumerate(kept):
        ridx += digits[:, k] * M**pos
    return ridx


def marginalize(
    df: DecoherenceFunctional, t_subset: Iterable[int]
) -> DecoherenceFunctional:
    """Decoherence functional over a subset of the grid times.

    Bra and ket labels at every dropped time are summed independently.
    Keeping a trailing prefix of times reproduces the functional of the
    shorter grid; dropping interior times is equivalent to never having
    projected there.
    """
    kept = tuple(sorted(set(int(k) for k in t_subset)))
    length = df.length
    if not kept:
        raise ValueError("t_subset must name at least one grid time")
    if kept[0] < 0 or kept[-1] >= length:
        raise ValueError(f"t_subset {kept} out of range for L={length}")
    if len(kept) == length:
        return df
    ridx = _reduction_index(length, kept)
    z = np.zeros((M**length, M ** len(kept)))
    z[np.arange(M**length), ridx] = 1.0
    reduced = z.T @ (df.entries @ z)
    grid = HistoryGrid.from_times([df.grid.times[k] for k in kept])
    return DecoherenceFunctional(entries=reduced, grid=grid)
