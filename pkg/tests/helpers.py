"""Shared constructions for the test suite."""

import numpy as np

from rksp.whiten import WhitenedPair


def make_pair(x, y, epsilon=1e-8):
    """Wrap already-whitened data without re-whitening (W = I, zero means)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return WhitenedPair(x, y, np.eye(x.shape[0]), np.zeros(x.shape[0]),
                        np.zeros(x.shape[0]), epsilon,
                        float(np.linalg.norm(y - x)))


def random_diagonalizable(d, moduli, rng, max_cond=3.0):
    """Real matrix whose eigenvalue moduli equal the given multiset exactly.

    Eigenvalues are real with random signs; the eigenbasis is a random
    matrix of condition number max_cond, giving mild non-normality.
    """
    signs = rng.choice([-1.0, 1.0], size=len(moduli))
    core = np.diag(np.asarray(moduli) * signs)
    u, _ = np.linalg.qr(rng.normal(size=(d, d)))
    v, _ = np.linalg.qr(rng.normal(size=(d, d)))
    svals = np.geomspace(1.0, max_cond, d)
    q = (u * svals) @ v.T
    return q @ core @ np.linalg.inv(q)


def random_normal_matrix(d, moduli, rng):
    """Normal real matrix with the given eigenvalue moduli (random signs)."""
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    signs = rng.choice([-1.0, 1.0], size=d)
    return q @ np.diag(np.asarray(moduli) * signs) @ q.T
