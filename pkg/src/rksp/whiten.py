"""Zero-phase (ZCA) whitening of paired snapshot matrices.

Both matrices are centered by their own column means, and the single
X-derived whitener W = (cov(X) + eps*I)^{-1/2} is applied to both, so
the regression downstream operates in one X-normalized coordinate
system. Any invertible linear change of coordinates applied to the raw
snapshots therefore cancels out of the fitted operator's spectrum (up
to the ridge), which is what makes spectra comparable across layers
and models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularCovariance


@dataclass
class WhitenedPair:
    """Whitened snapshot matrices plus the transform that produced them."""

    x_white: np.ndarray        # d x N
    y_white: np.ndarray        # d x N
    whitener: np.ndarray       # d x d, symmetric positive definite
    x_mean: np.ndarray         # d
    y_mean: np.ndarray         # d
    epsilon: float
    update_norm: float         # ||Y_white - X_white||_F

    @property
    def dim(self) -> int:
        return self.x_white.shape[0]

    @property
    def sample_count(self) -> int:
        return self.x_white.shape[1]


def whiten(x: np.ndarray, y: np.ndarray, epsilon: float) -> WhitenedPair:
    """Center and ZCA-whiten a snapshot pair with an X-derived whitener.

    The inverse square root is taken through the symmetric
    eigendecomposition of cov(X) + eps*I with eigenvalues clamped at
    eps, which keeps the transform well defined even for rank-deficient
    snapshot matrices.

    Raises SingularCovariance when eps <= 0 or the input is non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError(f"snapshot shapes differ: {x.shape} vs {y.shape}")
    d, n = x.shape
    if n < 2:
        raise ValueError("whitening needs at least two samples")
    if not (epsilon > 0.0) or not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise SingularCovariance(
            "whitener not computable: ridge must be positive and data finite")

    x_mean = x.mean(axis=1)
    y_mean = y.mean(axis=1)
    xc = x - x_mean[:, None]
    yc = y - y_mean[:, None]

    cov = (xc @ xc.T) / (n - 1) + epsilon * np.eye(d)
    evals, vecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, epsilon)
    whitener = (vecs * (1.0 / np.sqrt(evals))) @ vecs.T
    whitener = 0.5 * (whitener + whitener.T)

    x_white = whitener @ xc
    y_white = whitener @ yc
    update_norm = float(np.linalg.norm(y_white - x_white))
    return WhitenedPair(x_white, y_white, whitener, x_mean, y_mean,
                        float(epsilon), update_norm)
