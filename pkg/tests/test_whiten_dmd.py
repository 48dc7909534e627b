"""Whitening and least-squares operator fits against analytic oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rksp.dmd import dmd_fit, randomized_dmd
from rksp.errors import RankTooLarge, SingularCovariance
from rksp.whiten import whiten

from helpers import make_pair, random_diagonalizable


class TestWhiten:
    def test_identity_covariance_scales_by_ridge(self):
        # construct X with exactly zero mean and exactly identity sample covariance
        rng = np.random.default_rng(1)
        d, n = 6, 512
        x = rng.normal(size=(d, n))
        x = x - x.mean(axis=1, keepdims=True)
        cov = (x @ x.T) / (n - 1)
        evals, vecs = np.linalg.eigh(cov)
        x = (vecs * (1.0 / np.sqrt(evals))) @ vecs.T @ x
        eps = 1e-5
        pair = whiten(x, x.copy(), eps)
        expected = x / np.sqrt(1.0 + eps)
        assert np.abs(pair.x_white - expected).max() < 1e-4

    def test_constant_columns_whiten_to_zero(self):
        x = np.ones((4, 10)) * 3.7
        pair = whiten(x, x.copy(), 1e-5)
        assert np.allclose(pair.x_white, 0.0)
        assert np.allclose(pair.whitener, np.eye(4) / np.sqrt(1e-5))

    def test_gaussian_whitened_covariance_near_identity(self):
        rng = np.random.default_rng(7)
        d, n = 8, 4096
        x = rng.normal(size=(d, n)) * 3.0
        pair = whiten(x, x + rng.normal(size=(d, n)), 1e-5)
        xw = pair.x_white
        cov = (xw @ xw.T) / (n - 1)
        assert np.linalg.norm(cov - np.eye(d), 2) < 0.05

    def test_whitener_symmetric_positive_definite(self):
        rng = np.random.default_rng(3)
        pair = whiten(rng.normal(size=(5, 64)), rng.normal(size=(5, 64)), 1e-5)
        assert np.allclose(pair.whitener, pair.whitener.T)
        assert np.linalg.eigvalsh(pair.whitener).min() > 0

    def test_nonpositive_ridge_rejected(self):
        x = np.random.default_rng(0).normal(size=(3, 10))
        with pytest.raises(SingularCovariance):
            whiten(x, x, 0.0)

    def test_nonfinite_input_rejected(self):
        x = np.full((3, 10), np.nan)
        with pytest.raises(SingularCovariance):
            whiten(x, x, 1e-5)

    def test_update_norm_zero_for_identity_transition(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 32))
        pair = whiten(x, x.copy(), 1e-5)
        assert pair.update_norm == 0.0


class TestDmdFit:
    def test_exact_linear_map_recovered(self):
        rng = np.random.default_rng(11)
        d, n = 5, 256
        m = rng.normal(size=(d, d))
        x = rng.normal(size=(d, n))
        op = dmd_fit(make_pair(x, m @ x))
        rel = np.linalg.norm(op.operator - m) / np.linalg.norm(m)
        assert rel < 1e-8

    def test_identity_transition_gives_unit_spectrum(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 128))
        op = dmd_fit(make_pair(x, x.copy()))
        assert np.allclose(np.abs(op.eigenvalues), 1.0, atol=1e-10)

    def test_noisy_diagonal_moduli_within_tolerance(self):
        # frozen oracle: generator spectrum {0.5, 1.0, 1.2}, noise sigma = 1e-3
        rng = np.random.default_rng(42)
        d, n = 3, 512
        m = np.diag([0.5, 1.0, 1.2])
        x = rng.normal(size=(d, n))
        y = m @ x + 1e-3 * rng.normal(size=(d, n))
        op = dmd_fit(make_pair(x, y))
        got = np.sort(np.abs(op.eigenvalues))
        assert np.abs(got - np.array([0.5, 1.0, 1.2])).max() < 1e-2

    def test_eigenvalue_ordering_and_conjugate_pairs(self):
        rot = 0.9 * np.array([[np.cos(1.0), -np.sin(1.0)],
                              [np.sin(1.0), np.cos(1.0)]])
        a = np.zeros((3, 3))
        a[:2, :2] = rot
        a[2, 2] = 0.5
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 128))
        op = dmd_fit(make_pair(x, a @ x))
        mods = np.abs(op.eigenvalues)
        assert np.all(np.diff(mods) <= 1e-12)            # descending modulus
        assert op.eigenvalues[0].imag > 0                # +imaginary member first
        assert np.isclose(op.eigenvalues[1].imag, -op.eigenvalues[0].imag)

    def test_unit_norm_right_eigenvectors(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(6, 256))
        op = dmd_fit(make_pair(x, rng.normal(size=(6, 6)) @ x))
        norms = np.linalg.norm(op.right_vectors, axis=0)
        assert np.abs(norms - 1.0).max() < 1e-12

    def test_eigenpair_residuals_small(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(8, 512))
        op = dmd_fit(make_pair(x, rng.normal(size=(8, 8)) @ x))
        res = np.linalg.norm(op.operator @ op.right_vectors
                             - op.right_vectors * op.eigenvalues)
        assert res <= 1e-8 * np.linalg.norm(op.operator)

    def test_least_squares_optimality_under_perturbation(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(5, 200))
        y = rng.normal(size=(5, 5)) @ x + 0.1 * rng.normal(size=(5, 200))
        pair = make_pair(x, y)
        op = dmd_fit(pair)
        base = np.linalg.norm(y - op.operator @ x)
        for _ in range(10):
            delta = rng.normal(size=(5, 5))
            delta *= 1e-3 / np.linalg.norm(delta)
            perturbed = np.linalg.norm(y - (op.operator + delta) @ x)
            assert perturbed + 1e-12 >= base

    def test_spectral_radius_similarity_invariant(self):
        rng = np.random.default_rng(21)
        a = rng.normal(size=(6, 6))
        q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        rho_a = np.abs(np.linalg.eigvals(a)).max()
        rho_sim = np.abs(np.linalg.eigvals(q @ a @ q.T)).max()
        assert abs(rho_a - rho_sim) < 1e-10

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_whitening_scale_invariance_of_spectra(self, seed):
        # diagonal positive rescaling of raw snapshots must not move eigenvalues
        rng = np.random.default_rng(seed)
        d, n = 5, 400
        m = random_diagonalizable(d, rng.uniform(0.4, 1.1, size=d), rng)
        x = rng.normal(size=(d, n))
        y = m @ x
        scale = np.diag(rng.uniform(0.1, 10.0, size=d))
        ref = dmd_fit(whiten(x, y, 1e-10))
        scaled = dmd_fit(whiten(scale @ x, scale @ y, 1e-10))
        a = np.sort_complex(ref.eigenvalues)
        b = np.sort_complex(scaled.eigenvalues)
        assert np.abs(a - b).max() < 1e-6


class TestRandomizedDmd:
    def test_full_rank_projection_matches_full_fit(self):
        rng = np.random.default_rng(17)
        d, n = 6, 512
        m = random_diagonalizable(d, rng.uniform(0.3, 1.2, size=d), rng)
        pair = make_pair(rng.normal(size=(d, n)), np.empty((d, n)))
        pair.y_white[:] = m @ pair.x_white
        full = dmd_fit(pair)
        rand = randomized_dmd(pair, rank=d, seed=0)
        a = np.sort(np.abs(full.eigenvalues))
        b = np.sort(np.abs(rand.eigenvalues))
        assert np.abs(a - b).max() < 1e-6

    def test_dominant_modes_recovered_at_low_rank(self):
        # operator with 4 dominant moduli {1.2, 1.1, 1.0, 0.9}, rest <= 0.1
        rng = np.random.default_rng(23)
        d, n, r = 64, 2048, 8
        moduli = np.concatenate([[1.2, 1.1, 1.0, 0.9],
                                 rng.uniform(0.01, 0.1, size=d - 4)])
        m = random_diagonalizable(d, moduli, rng, max_cond=1.5)
        x = rng.normal(size=(d, n))
        pair = whiten(x, m @ x, 1e-8)
        op = randomized_dmd(pair, rank=r, seed=1)
        got = np.sort(np.abs(op.eigenvalues))[-4:]
        assert np.abs(got - np.array([0.9, 1.0, 1.1, 1.2])).max() < 5e-2

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(3)
        pair = make_pair(rng.normal(size=(10, 256)), rng.normal(size=(10, 256)))
        a = randomized_dmd(pair, rank=4, seed=9)
        b = randomized_dmd(pair, rank=4, seed=9)
        assert np.array_equal(a.eigenvalues, b.eigenvalues)
        assert np.array_equal(a.operator, b.operator)

    def test_rank_too_large_rejected(self):
        rng = np.random.default_rng(0)
        pair = make_pair(rng.normal(size=(4, 16)), rng.normal(size=(4, 16)))
        with pytest.raises(RankTooLarge):
            randomized_dmd(pair, rank=5, seed=0)
