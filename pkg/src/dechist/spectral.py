"""Exact spectral time evolution and state preparation.

Each Hamiltonian is diagonalized once; evolution over any interval is a
phase multiplication in the eigenbasis, so no step-size error enters
anywhere downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BlockHamiltonian, Coarsening, NUM_MACROSTATES

__all__ = [
    "SpectralDecomposition",
    "eigendecompose",
    "evolve",
    "evolve_batch",
    "apply_projector",
    "apply_projector_batch",
    "sample_haar_state",
    "select_eigenstate",
]


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (ascending) and eigenvector columns of a Hamiltonian.

    Eigenvectors stay real for real symmetric input; evolution exploits
    that with real-valued BLAS calls.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dimension(self) -> int:
        return self.eigenvalues.shape[0]


def eigendecompose(hamiltonian: BlockHamiltonian) -> SpectralDecomposition:
    """Dense Hermitian eigendecomposition, done once per realization."""
    try:
        evals, evecs = np.linalg.eigh(hamiltonian.matrix)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(
            f"Hermitian eigensolver failed to converge at D={hamiltonian.dimension}"
        ) from exc
    return SpectralDecomposition(eigenvalues=evals, eigenvectors=evecs)


def _rows_times_matrix(rows: np.ndarray, mat: np.ndarray) -> np.ndarray:
    # For a real basis, two real GEMMs beat one complex GEMM; the
    # ascontiguousarray calls matter because .real/.imag are strided
    # views that would otherwise fall off the fast BLAS path.
    if np.iscomplexobj(mat) or not np.iscomplexobj(rows):
        return rows @ mat
    return (
        np.ascontiguousarray(rows.real) @ mat
        + 1j * (np.ascontiguousarray(rows.imag) @ mat)
    )


def evolve_batch(sd: SpectralDecomposition, states: np.ndarray, dt: float) -> np.ndarray:
    """Evolve stacked row states by exp(-i H dt).

    Parameters
    ----------
    states : ndarray, shape (n, D)
        One state per row.
    """
    if dt == 0.0:
        return np.array(states, dtype=np.complex128, copy=True)
    states = np.asarray(states, dtype=np.complex128)
    phases = np.exp(-1j * dt * sd.eigenvalues)
    basis = sd.eigenvectors
    if np.iscomplexobj(basis):
        # rows @ conj(E) without materializing a D x D conjugate copy.
        coeff = np.conj(np.conj(states) @ basis)
    else:
        coeff = _rows_times_matrix(states, basis)
    coeff *= phases
    return _rows_times_matrix(coeff, basis.T)


def evolve(sd: SpectralDecomposition, psi: np.ndarray, dt: float) -> np.ndarray:
    """Evolve a single state by exp(-i H dt); norm is preserved exactly
    up to roundoff."""
    return evolve_batch(sd, psi[None, :], dt)[0]


def apply_projector_batch(
    coarsening: Coarsening, label: int, states: np.ndarray
) -> np.ndarray:
    """Apply the projector of macrostate `label` to stacked row states."""
    if not 0 <= label < NUM_MACROSTATES:
        raise ValueError(f"macrostate label out of range: {label}")
    states = np.asarray(states, dtype=np.complex128)
    if coarsening.is_dense:
        p = coarsening.projectors[label]
        # Rows transform with P^T; P is Hermitian so P^T == conj(P).
        return states @ p.conj()
    out = np.zeros_like(states)
    start, stop = coarsening.ranges[label]
    out[:, start:stop] = states[:, start:stop]
    return out


def apply_projector(coarsening: Coarsening, label: int, psi: np.ndarray) -> np.ndarray:
    return apply_projector_batch(coarsening, label, psi[None, :])[0]


def sample_haar_state(
    coarsening: Coarsening, weights: tuple[float, float, float], state_seed: int
) -> np.ndarray:
    """Draw psi = sum_x sqrt(p_x) |psi_x> with |psi_x> Haar in macrostate x.

    Haar vectors come from normalized i.i.d. standard complex Gaussians.
    Weights must be non-negative and sum to one; a macrostate only
    consumes randomness when its weight is positive.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (NUM_MACROSTATES,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must be three non-negatives summing to 1, got {weights}")
    rng = np.random.default_rng(state_seed)
    psi = np.zeros(coarsening.dimension, dtype=np.complex128)
    for label, p in enumerate(w):
        if p == 0.0:
            continue
        if coarsening.is_dense:
            z = rng.standard_normal(coarsening.dimension) + 1j * rng.standard_normal(
                coarsening.dimension
            )
            z = apply_projector(coarsening, label, z)
        else:
            start, stop = coarsening.ranges[label]
            block = rng.standard_normal(stop - start) + 1j * rng.standard_normal(
                stop - start
            )
            z = np.zeros(coarsening.dimension, dtype=np.complex128)
            z[start:stop] = block
        norm = np.linalg.norm(z)
        if norm == 0.0:
            raise ValueError(f"macrostate {label} has weight {p} but no support")
        psi += np.sqrt(p) * z / norm
    return psi


def select_eigenstate(sd: SpectralDecomposition, state_seed: int) -> tuple[np.ndarray, int]:
    """Pick a uniformly random energy eigenstate; returns (state, index)."""
    rng = np.random.default_rng(state_seed)
    index = int(rng.integers(0, sd.dimension))
    return np.array(sd.eigenvectors[:, index], dtype=np.complex128), index
