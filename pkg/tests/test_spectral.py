"""Spectral evolution against matrix-exponential and stationarity oracles."""

from __future__ import annotations

import numpy as np
import pytest

from dechist.model import (
    BlockHamiltonian,
    Ensemble,
    ModelConfig,
    Perturbation,
    PerturbationKind,
    build_coarsening,
    build_hamiltonian,
    derive_coupling,
)
from dechist.spectral import (
    apply_projector,
    apply_projector_batch,
    eigendecompose,
    evolve,
    evolve_batch,
    sample_haar_state,
    select_eigenstate,
)

from oracles import propagator


def model_parts(v_minus=2, seed=0, **kwargs):
    config = ModelConfig(v_minus=v_minus, hamiltonian_seed=seed, **kwargs)
    ham = build_hamiltonian(config)
    return config, ham, eigendecompose(ham)


def random_state(dim, seed=0):
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return psi / np.linalg.norm(psi)


class TestEigendecompose:
    def test_diagonal_matrix(self):
        ham = BlockHamiltonian(
            matrix=np.diag([3.0, 1.0, 2.0]), block_layout=((0, 1), (1, 2), (2, 3))
        )
        sd = eigendecompose(ham)
        np.testing.assert_allclose(sd.eigenvalues, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(np.abs(sd.eigenvectors), np.eye(3)[:, [1, 2, 0]])

    def test_two_level_flip(self):
        ham = BlockHamiltonian(
            matrix=np.array([[0.0, 1.0], [1.0, 0.0]]), block_layout=((0, 1), (1, 2), (2, 2))
        )
        sd = eigendecompose(ham)
        np.testing.assert_allclose(sd.eigenvalues, [-1.0, 1.0], atol=1e-12)

    @pytest.mark.parametrize("ensemble", [Ensemble.GOE, Ensemble.GUE])
    def test_reconstruction(self, ensemble):
        _, ham, sd = model_parts(v_minus=4, seed=5, ensemble=ensemble)
        rebuilt = (sd.eigenvectors * sd.eigenvalues) @ sd.eigenvectors.conj().T
        scale = np.abs(ham.matrix).max()
        assert np.abs(rebuilt - ham.matrix).max() <= 1e-9 * max(scale, 1.0)
        gram = sd.eigenvectors.conj().T @ sd.eigenvectors
        assert np.abs(gram - np.eye(ham.dimension)).max() <= 1e-10

    def test_eigenvalues_sorted(self):
        _, _, sd = model_parts(v_minus=6, seed=3)
        assert np.all(np.diff(sd.eigenvalues) >= 0)


class TestEvolve:
    def test_zero_time_is_identity(self):
        _, _, sd = model_parts()
        psi = random_state(sd.dimension, 1)
        np.testing.assert_array_equal(evolve(sd, psi, 0.0), psi)

    @pytest.mark.parametrize("ensemble", [Ensemble.GOE, Ensemble.GUE])
    @pytest.mark.parametrize("v_minus", [1, 2, 3, 4])
    def test_matches_matrix_exponential(self, v_minus, ensemble):
        # Independent oracle: scaling-and-squaring expm on D <= 20.
        config, ham, sd = model_parts(v_minus=v_minus, seed=v_minus, ensemble=ensemble)
        tau = derive_coupling(config).tau
        psi = random_state(config.dimension, 7)
        for dt in (0.1, 1.0, tau):
            expected = propagator(ham.matrix, dt) @ psi
            got = evolve(sd, psi, dt)
            assert np.abs(got - expected).max() <= 1e-8

    def test_eigenvector_stationary(self):
        _, _, sd = model_parts(v_minus=3, seed=11)
        psi = sd.eigenvectors[:, 4].astype(complex)
        out = evolve(sd, psi, 2.7)
        assert abs(np.vdot(out, psi)) == pytest.approx(1.0, abs=1e-10)

    def test_norm_preserved_over_many_steps(self):
        config, _, sd = model_parts(v_minus=3, seed=2)
        tau = derive_coupling(config).tau
        psi = random_state(config.dimension, 3)
        for _ in range(20):
            psi = evolve(sd, psi, tau)
        assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-10)

    def test_round_trip(self):
        _, _, sd = model_parts(v_minus=4, seed=6)
        psi = random_state(sd.dimension, 9)
        back = evolve(sd, evolve(sd, psi, 3.3), -3.3)
        assert np.abs(back - psi).max() <= 1e-9

    def test_batch_matches_single(self):
        _, _, sd = model_parts(v_minus=3, seed=8)
        rng = np.random.default_rng(4)
        states = rng.standard_normal((5, sd.dimension)) + 1j * rng.standard_normal(
            (5, sd.dimension)
        )
        batch = evolve_batch(sd, states, 1.7)
        for i in range(5):
            single = evolve(sd, states[i], 1.7)
            assert np.abs(batch[i] - single).max() <= 1e-12


class TestProjectors:
    def test_completeness_exact(self):
        config, _, _ = model_parts()
        coarsening = build_coarsening(config)
        psi = random_state(config.dimension, 5)
        total = sum(apply_projector(coarsening, x, psi) for x in range(3))
        np.testing.assert_array_equal(total, psi)

    def test_idempotence_and_orthogonality(self):
        config, _, _ = model_parts()
        coarsening = build_coarsening(config)
        psi = random_state(config.dimension, 6)
        for x in range(3):
            once = apply_projector(coarsening, x, psi)
            np.testing.assert_array_equal(apply_projector(coarsening, x, once), once)
            for y in range(3):
                if y != x:
                    assert np.all(apply_projector(coarsening, y, once) == 0)

    def test_dense_projector_batch(self):
        config = ModelConfig(v_minus=2, hamiltonian_seed=8)
        coarsening = build_coarsening(
            config, Perturbation(kind=PerturbationKind.NEAREST_NEIGHBOR, delta=0.4)
        )
        rng = np.random.default_rng(2)
        states = rng.standard_normal((4, 10)) + 1j * rng.standard_normal((4, 10))
        total = sum(apply_projector_batch(coarsening, x, states) for x in range(3))
        assert np.abs(total - states).max() <= 1e-10
        for x in range(3):
            once = apply_projector_batch(coarsening, x, states)
            twice = apply_projector_batch(coarsening, x, once)
            assert np.abs(twice - once).max() <= 1e-10

    def test_label_out_of_range(self):
        config, _, _ = model_parts()
        coarsening = build_coarsening(config)
        with pytest.raises(ValueError):
            apply_projector(coarsening, 3, np.zeros(config.dimension, dtype=complex))


class TestInitialStates:
    def test_nonequilibrium_all_in_minus(self):
        config, _, _ = model_parts(v_minus=1)
        coarsening = build_coarsening(config)
        psi = sample_haar_state(coarsening, (1.0, 0.0, 0.0), state_seed=3)
        assert abs(psi[0]) == pytest.approx(1.0, abs=1e-12)
        assert np.all(psi[1:] == 0)

    def test_block_weights_match(self):
        config, _, _ = model_parts(v_minus=20)
        coarsening = build_coarsening(config)
        weights = (0.2, 0.6, 0.2)
        psi = sample_haar_state(coarsening, weights, state_seed=8)
        assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)
        for label, (start, stop) in enumerate(coarsening.ranges):
            block_weight = float(np.sum(np.abs(psi[start:stop]) ** 2))
            assert block_weight == pytest.approx(weights[label], abs=1e-14)

    def test_coordinate_statistics(self):
        # Equilibrium weights make every coordinate's mean |amp|^2 equal
        # 1/D; check within 5 standard errors over 1000 draws at D=100.
        config, _, _ = model_parts(v_minus=20)
        coarsening = build_coarsening(config)
        weights = tuple(v / config.dimension for v in config.volumes)
        draws = np.stack([
            np.abs(sample_haar_state(coarsening, weights, state_seed=s)) ** 2
            for s in range(1000)
        ])
        means = draws.mean(axis=0)
        # var(|a|^2) within a block of size V at weight p is about p^2/V^2.
        for label, (start, stop) in enumerate(coarsening.ranges):
            v = stop - start
            se = (weights[label] / v) / np.sqrt(1000)
            assert np.abs(means[start:stop] - 1 / config.dimension).max() <= 5 * se

    def test_determinism(self):
        config, _, _ = model_parts(v_minus=4)
        coarsening = build_coarsening(config)
        w = (0.2, 0.6, 0.2)
        np.testing.assert_array_equal(
            sample_haar_state(coarsening, w, 5), sample_haar_state(coarsening, w, 5)
        )
        assert np.any(
            sample_haar_state(coarsening, w, 5) != sample_haar_state(coarsening, w, 6)
        )

    def test_dense_coarsening_sampling(self):
        config = ModelConfig(v_minus=2, hamiltonian_seed=8)
        coarsening = build_coarsening(
            config, Perturbation(kind=PerturbationKind.ANTI_DIAGONAL, delta=0.3)
        )
        psi = sample_haar_state(coarsening, (0.2, 0.6, 0.2), state_seed=4)
        assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-10)
        for label, p in enumerate(coarsening.projectors):
            weight = float(np.vdot(psi, p @ psi).real)
            assert weight == pytest.approx((0.2, 0.6, 0.2)[label], abs=1e-10)

    def test_rejects_bad_weights(self):
        config, _, _ = model_parts()
        coarsening = build_coarsening(config)
        with pytest.raises(ValueError):
            sample_haar_state(coarsening, (0.5, 0.5, 0.5), 0)
        with pytest.raises(ValueError):
            sample_haar_state(coarsening, (-0.2, 0.6, 0.6), 0)

    def test_select_eigenstate(self):
        _, _, sd = model_parts(v_minus=1, seed=5)
        psi, index = select_eigenstate(sd, state_seed=12)
        assert 0 <= index < sd.dimension
        assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(psi, sd.eigenvectors[:, index].astype(complex))
        psi2, index2 = select_eigenstate(sd, state_seed=12)
        assert index2 == index
        np.testing.assert_array_equal(psi, psi2)
        # Stationarity: evolution only rotates the global phase.
        out = evolve(sd, psi, 4.2)
        assert abs(np.vdot(out, psi)) == pytest.approx(1.0, abs=1e-10)
