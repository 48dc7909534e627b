"""Least-squares operator fits on whitened snapshot pairs.

The full fit solves min_A ||Y - A X||_F via the SVD pseudoinverse; the
randomized variant compresses onto a rank-r subspace found by sketching
the implicit operator Y X^+ (Gaussian sketch, two power iterations, QR)
and fits the projected r-by-r operator, whose eigenvalues stand in for
the leading modes of the full fit. Sketching the operator rather than
the snapshots matters here: whitened snapshots are isotropic, so their
own range carries no information about the dominant modes.

Eigenvalues are reported sorted by descending modulus, with ties broken
by descending real part and then descending imaginary part, so complex
conjugate pairs appear with the +imaginary member first. Right
eigenvectors are normalized to unit Euclidean norm, which pins down the
eigenvector condition number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import RankTooLarge
from .whiten import WhitenedPair

PINV_RTOL = 1e-10          # singular values below rtol * sigma_max are dropped
DEFECTIVE_RTOL = 1e-13     # sigma_min(V) below this times sigma_max flags defectiveness
SKETCH_OVERSAMPLE = 8
POWER_ITERATIONS = 2


@dataclass
class DmdOperator:
    """Fitted operator with its spectral decomposition.

    ``operator`` is d x d in full mode and r x r in randomized mode, in
    which case ``basis`` holds the d x r orthonormal range basis used
    for the projection.
    """

    operator: np.ndarray
    eigenvalues: np.ndarray        # complex, sorted
    right_vectors: np.ndarray      # complex, unit-norm columns
    left_vectors: np.ndarray       # complex; u_j^* A = lambda_j u_j^*
    kappa: float                   # eigenvector condition number, inf if defective
    spectral_radius: float
    mode: str                      # "full" | "randomized"
    rank: int | None = None
    basis: np.ndarray | None = None
    defective: bool = False

    @property
    def mode_count(self) -> int:
        return len(self.eigenvalues)


def _sorted_eig(a: np.ndarray):
    """Eigendecomposition with canonical ordering and unit right vectors."""
    w, vl, vr = scipy.linalg.eig(a, left=True, right=True)
    order = np.lexsort((-w.imag, -w.real, -np.abs(w)))
    w = w[order]
    vr = vr[:, order]
    vl = vl[:, order]
    vr = vr / np.linalg.norm(vr, axis=0, keepdims=True)
    svals = np.linalg.svd(vr, compute_uv=False)
    smax, smin = float(svals[0]), float(svals[-1])
    defective = smin < DEFECTIVE_RTOL * smax
    kappa = float("inf") if defective else smax / smin
    return w, vl, vr, kappa, defective


def dmd_fit(pair: WhitenedPair) -> DmdOperator:
    """Fit the full least-squares operator A = Y_white X_white^+."""
    pinv = np.linalg.pinv(pair.x_white, rcond=PINV_RTOL)
    operator = pair.y_white @ pinv
    w, vl, vr, kappa, defective = _sorted_eig(operator)
    return DmdOperator(operator, w, vr, vl, kappa,
                       float(np.abs(w).max()), "full", defective=defective)


def fit_operator_matrix(a: np.ndarray, mode: str = "full",
                        rank: int | None = None,
                        basis: np.ndarray | None = None) -> DmdOperator:
    """Wrap an explicit operator matrix in the spectral container."""
    a = np.asarray(a, dtype=np.float64)
    w, vl, vr, kappa, defective = _sorted_eig(a)
    return DmdOperator(a, w, vr, vl, kappa, float(np.abs(w).max()), mode,
                       rank=rank, basis=basis, defective=defective)


def _operator_range_basis(x: np.ndarray, y: np.ndarray, rank: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Rank-r orthonormal basis aligned with the dominant modes of Y X^+."""
    d, _ = x.shape
    pinv = np.linalg.pinv(x, rcond=PINV_RTOL)

    def apply(block: np.ndarray) -> np.ndarray:
        return y @ (pinv @ block)

    width = min(rank + SKETCH_OVERSAMPLE, d)
    q, _ = np.linalg.qr(apply(rng.standard_normal((d, width))))
    for _ in range(POWER_ITERATIONS):
        q, _ = np.linalg.qr(apply(q))
    # trim the oversampled basis to the r strongest response directions
    u, _, _ = np.linalg.svd(apply(q), full_matrices=False)
    return u[:, :rank]


def randomized_dmd(pair: WhitenedPair, rank: int, seed: int) -> DmdOperator:
    """Fit the r x r operator on a randomized dominant-mode subspace.

    Deterministic for a fixed seed; the sketch, the power iterations and
    the QR factorization all consume only the local generator state.
    """
    d, n = pair.x_white.shape
    if rank > min(d, n):
        raise RankTooLarge(f"rank {rank} exceeds min(d={d}, N={n})")
    if rank < 1:
        raise RankTooLarge("rank must be positive")
    rng = np.random.default_rng(seed)
    basis = _operator_range_basis(pair.x_white, pair.y_white, rank, rng)
    x_proj = basis.T @ pair.x_white
    y_proj = basis.T @ pair.y_white
    operator = y_proj @ np.linalg.pinv(x_proj, rcond=PINV_RTOL)
    w, vl, vr, kappa, defective = _sorted_eig(operator)
    return DmdOperator(operator, w, vr, vl, kappa, float(np.abs(w).max()),
                       "randomized", rank=rank, basis=basis, defective=defective)


def predict(op: DmdOperator, x_white: np.ndarray) -> np.ndarray:
    """Apply the fitted operator in ambient coordinates."""
    if op.mode == "randomized":
        return op.basis @ (op.operator @ (op.basis.T @ x_white))
    return op.operator @ x_white
