"""Spectral diagnostics on fitted layer operators.

Covers the modulus-bin mass partition, the nonlinearity ratio used as a
fit-reliability flag, per-mode residual filtering against spurious
eigenvalues, the Kreiss constant as a transient-growth bound, and
randomized checks of the eigenvalue-perturbation and energy-preservation
inequalities that justify the near-unit mass as an instability score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dmd import DmdOperator, predict
from .errors import DefectiveEigenbasis, EmptySpectrum, PowerOverflow
from .whiten import WhitenedPair

DEGENERATE_UPDATE_RTOL = 1e-6   # update_norm below this times ||X|| flags residual-off data


# --------------------------------------------------------------------------
# spectral mass partition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MassThresholds:
    """Modulus-bin thresholds for the spectral mass partition.

    The near-unit bin is the closed interval [1 - eps_n, 1 + eps_u];
    the expansive bin is strictly above it and the contractive bin
    strictly below 1 - delta_c, with the leftover mid bin between.
    Bins are disjoint provided delta_c >= eps_n.
    """

    eps_u: float = 0.05
    eps_n: float = 0.10
    delta_c: float = 0.20

    def __post_init__(self):
        if min(self.eps_u, self.eps_n, self.delta_c) <= 0:
            raise ValueError("mass thresholds must be positive")
        if self.delta_c < self.eps_n:
            raise ValueError("delta_c must be >= eps_n for disjoint bins")


@dataclass(frozen=True)
class SpectralMasses:
    """Fractions of eigenvalue moduli per bin; counts sum to mode_count."""

    expansive: float        # |lambda| >  1 + eps_u
    near_unit: float        # 1 - eps_n <= |lambda| <= 1 + eps_u
    contractive: float      # |lambda| <  1 - delta_c
    mid: float              # remainder
    mode_count: int
    counts: tuple[int, int, int, int] = field(default=(0, 0, 0, 0))


def spectral_masses(eigenvalues: np.ndarray,
                    thresholds: MassThresholds = MassThresholds()) -> SpectralMasses:
    """Bin eigenvalue moduli into expansive/near-unit/contractive/mid masses.

    Boundary values are resolved toward the near-unit bin: a modulus of
    exactly 1 + eps_u or 1 - eps_n counts as near-unit, while exactly
    1 - delta_c falls in the mid bin because the contractive bin is a
    strict inequality.
    """
    moduli = np.abs(np.asarray(eigenvalues))
    m = moduli.size
    if m == 0:
        raise EmptySpectrum("spectral masses need at least one eigenvalue")
    hi = 1.0 + thresholds.eps_u
    lo = 1.0 - thresholds.eps_n
    floor = 1.0 - thresholds.delta_c
    n_exp = int(np.count_nonzero(moduli > hi))
    n_near = int(np.count_nonzero((moduli >= lo) & (moduli <= hi)))
    n_con = int(np.count_nonzero(moduli < floor))
    n_mid = m - n_exp - n_near - n_con
    return SpectralMasses(n_exp / m, n_near / m, n_con / m, n_mid / m, m,
                          counts=(n_exp, n_near, n_con, n_mid))


# --------------------------------------------------------------------------
# nonlinearity ratio
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NonlinearityResult:
    value: float
    degenerate_update: bool


def nonlinearity_ratio(pair: WhitenedPair, op: DmdOperator,
                       eps_nl: float = 1e-8) -> NonlinearityResult:
    """Linear-fit residual normalized by the update magnitude.

    Near-zero updates (Y ~ X) make the ratio uninformative, so the
    result carries a degenerate_update flag raised when the update norm
    falls below 1e-6 times ||X_white||_F; callers should treat the
    spectrum of such layers as a reliability warning rather than a
    dynamics estimate.
    """
    fit_residual = float(np.linalg.norm(pair.y_white - predict(op, pair.x_white)))
    value = fit_residual / (pair.update_norm + eps_nl)
    x_scale = float(np.linalg.norm(pair.x_white))
    degenerate = pair.update_norm < DEGENERATE_UPDATE_RTOL * x_scale
    return NonlinearityResult(value, degenerate)


# --------------------------------------------------------------------------
# per-mode residual reliability filter
# --------------------------------------------------------------------------

@dataclass
class ModeReliability:
    """Per-eigenvalue consistency residuals and unreliability flags."""

    residuals: np.ndarray
    threshold: float
    flags: np.ndarray          # True = unreliable
    eps_r: float

    @property
    def reliable_fraction(self) -> float:
        return float(np.count_nonzero(~self.flags)) / len(self.flags)


def resdmd_filter(pair: WhitenedPair, op: DmdOperator, tau: float = 0.1,
                  eps_r: float = 1e-8) -> ModeReliability:
    """Flag eigenvalues whose left-eigenvector residual exceeds tau.

    For each eigenvalue with left eigenvector u (u^* A = lambda u^*),
    the residual is ||u^*(Y - lambda X)|| / (||u^* X|| + eps_r) in the
    coordinates the operator was fitted in (projected coordinates for
    randomized mode). Exactly linear data gives residuals ~ 0.
    """
    if op.defective or not np.isfinite(op.left_vectors).all():
        raise DefectiveEigenbasis("left eigenvectors not computable")
    if op.mode == "randomized":
        x = op.basis.T @ pair.x_white
        y = op.basis.T @ pair.y_white
    else:
        x = pair.x_white
        y = pair.y_white
    residuals = np.empty(op.mode_count)
    for j in range(op.mode_count):
        u = op.left_vectors[:, j].conj()
        num = np.linalg.norm(u @ y - op.eigenvalues[j] * (u @ x))
        den = np.linalg.norm(u @ x) + eps_r
        residuals[j] = num / den
    flags = residuals > tau
    return ModeReliability(residuals, float(tau), flags, float(eps_r))


# --------------------------------------------------------------------------
# Kreiss constant
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KreissGrid:
    """Search grid over |z| > 1 for the resolvent-norm supremum."""

    n_radii: int = 64
    n_angles: int = 128
    refine_rounds: int = 3
    min_radius_offset: float = 1e-4
    max_radius: float | None = None    # default: max(1 + 2*rho, 32)

    def describe(self) -> str:
        return (f"log-radii {self.n_radii} x angles {self.n_angles}, "
                f"{self.refine_rounds} refinement rounds")


@dataclass(frozen=True)
class KreissEstimate:
    """Grid maximum of (|z|-1) * ||(zI - A)^{-1}||; a lower bound on the sup."""

    value: float
    argmax_z: complex
    grid_spec: str


def _resolvent_gain(a: np.ndarray, z: complex) -> float:
    m = z * np.eye(a.shape[0]) - a
    smin = np.linalg.svd(m, compute_uv=False)[-1]
    if smin == 0.0:
        return np.inf
    return (abs(z) - 1.0) / smin


def kreiss_constant(a: np.ndarray, grid: KreissGrid = KreissGrid()) -> KreissEstimate:
    """Estimate the Kreiss constant by grid search plus local refinement.

    The returned value is a max over probed points, hence always a lower
    bound on the true supremum. Radii are log-spaced just outside the
    unit circle up to max(1 + 2*rho(A), 32); the tail toward large radii
    matters because for contractions the supremum is approached radially
    at infinity.
    """
    a = np.asarray(a, dtype=np.float64)
    rho = float(np.abs(np.linalg.eigvals(a)).max()) if a.size else 0.0
    r_max = grid.max_radius if grid.max_radius is not None else max(1.0 + 2.0 * rho, 32.0)
    log_lo = np.log(1.0 + grid.min_radius_offset)
    log_hi = np.log(r_max)
    radii = np.exp(np.linspace(log_lo, log_hi, grid.n_radii))
    angles = np.linspace(0.0, 2.0 * np.pi, grid.n_angles, endpoint=False)

    best_val = -np.inf
    best_logr = log_lo
    best_theta = 0.0
    for logr, r in zip(np.log(radii), radii):
        zs = r * np.exp(1j * angles)
        for theta, z in zip(angles, zs):
            val = _resolvent_gain(a, z)
            if val > best_val:
                best_val, best_logr, best_theta = val, logr, theta

    # coordinate descent in (log radius, angle) around the grid argmax
    span_logr = (log_hi - log_lo) / max(grid.n_radii - 1, 1)
    span_theta = 2.0 * np.pi / grid.n_angles
    for _ in range(grid.refine_rounds):
        for offset in np.linspace(-span_logr, span_logr, 9):
            logr = min(max(best_logr + offset, log_lo), log_hi)
            val = _resolvent_gain(a, np.exp(logr) * np.exp(1j * best_theta))
            if val > best_val:
                best_val, best_logr = val, logr
        for offset in np.linspace(-span_theta, span_theta, 9):
            theta = best_theta + offset
            val = _resolvent_gain(a, np.exp(best_logr) * np.exp(1j * theta))
            if val > best_val:
                best_val, best_theta = val, theta
        span_logr /= 4.0
        span_theta /= 4.0

    z_star = np.exp(best_logr) * np.exp(1j * best_theta)
    return KreissEstimate(float(best_val), complex(z_star), grid.describe())


@dataclass(frozen=True)
class KreissInequalityReport:
    kreiss: float
    sup_power_norm: float
    upper: float               # e * d * kreiss
    lower_ok: bool
    upper_ok: bool

    @property
    def holds(self) -> bool:
        return self.lower_ok and self.upper_ok


def check_kreiss_inequality(a: np.ndarray, n_max: int,
                            grid: KreissGrid = KreissGrid()) -> KreissInequalityReport:
    """Verify K <= sup_n ||A^n|| <= e * d * K numerically.

    The power supremum is taken over 0 <= n <= n_max; norms beyond 1e12
    abort with PowerOverflow since the matrix is then clearly not
    power-bounded. Comparisons carry a 5e-2 * sup tolerance to absorb
    the grid underestimate of K.
    """
    a = np.asarray(a, dtype=np.float64)
    d = a.shape[0]
    power = np.eye(d)
    sup_norm = 1.0
    for n in range(1, n_max + 1):
        power = power @ a
        norm = float(np.linalg.norm(power, 2))
        if not np.isfinite(norm) or norm > 1e12:
            raise PowerOverflow(f"||A^{n}|| = {norm:.3g} exceeds overflow guard")
        sup_norm = max(sup_norm, norm)
    kreiss = kreiss_constant(a, grid).value
    tol = 5e-2 * sup_norm
    upper = np.e * d * kreiss
    return KreissInequalityReport(kreiss, sup_norm, upper,
                                  lower_ok=kreiss - tol <= sup_norm,
                                  upper_ok=sup_norm <= upper + tol)


# --------------------------------------------------------------------------
# eigenvalue perturbation bound
# --------------------------------------------------------------------------

def _unit_column_kappa(a: np.ndarray) -> tuple[np.ndarray, float]:
    w, v = np.linalg.eig(a)
    v = v / np.linalg.norm(v, axis=0, keepdims=True)
    svals = np.linalg.svd(v, compute_uv=False)
    if svals[-1] < 1e-13 * svals[0]:
        raise DefectiveEigenbasis("eigenvector matrix numerically singular")
    return w, float(svals[0] / svals[-1])


def bauer_fike_check(a: np.ndarray, perturbation, trials: int = 1,
                     seed: int = 0) -> bool:
    """Check min_k |mu - lambda_k| <= kappa(V) * ||E|| for perturbed spectra.

    ``perturbation`` is either an explicit matrix E (checked once) or a
    float giving the spectral norm of random Gaussian perturbations, in
    which case the bound is verified on ``trials`` independent draws and
    the conjunction returned.
    """
    a = np.asarray(a, dtype=np.float64)
    d = a.shape[0]
    spectrum, kappa = _unit_column_kappa(a)
    rng = np.random.default_rng(seed)

    def one(e: np.ndarray) -> bool:
        e_norm = float(np.linalg.norm(e, 2))
        perturbed = np.linalg.eigvals(a + e)
        dist = np.abs(perturbed[:, None] - spectrum[None, :]).min(axis=1)
        return bool((dist <= kappa * e_norm + 1e-10).all())

    if isinstance(perturbation, np.ndarray):
        return one(np.asarray(perturbation, dtype=np.float64))
    target = float(perturbation)
    for _ in range(trials):
        e = rng.standard_normal((d, d))
        norm = np.linalg.norm(e, 2)
        e = e * (target / norm) if norm > 0 else e * 0.0
        if not one(e):
            return False
    return True


# --------------------------------------------------------------------------
# energy preservation (Monte Carlo)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyReport:
    mc_mean: float
    stderr: float
    frob_over_d: float
    m_near1_lower: float       # lower bound implied by the near-unit mass
    upper: float
    identity_ok: bool          # |mc_mean - ||A||_F^2 / d| <= 5 * stderr
    sandwich_ok: bool | None   # None when rho > 1 + eps_u (bounds not applicable)
    is_normal: bool
    kappa: float


def _sphere_samples(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((d, n))
    return x / np.linalg.norm(x, axis=0, keepdims=True)


def energy_preservation_check(a: np.ndarray, samples: int, seed: int,
                              thresholds: MassThresholds = MassThresholds()) -> EnergyReport:
    """Monte-Carlo check of E||Ax||^2 = ||A||_F^2 / d on the unit sphere.

    For normal operators with spectral radius <= 1 + eps_u the report
    also verifies the mass sandwich
    (1 - eps_n)^2 * M_near <= E||Ax||^2 <= (1 + eps_u)^2, and for merely
    diagonalizable operators the same bounds loosened by kappa(V)^{+-2}.
    Sampling uses normalized Gaussian vectors, which are exactly
    rotation-invariant.
    """
    if samples < 10_000:
        raise ValueError("energy check needs at least 1e4 samples")
    a = np.asarray(a)
    d = a.shape[0]
    rng = np.random.default_rng(seed)
    x = _sphere_samples(d, samples, rng)
    vals = np.sum(np.abs(a @ x) ** 2, axis=0)
    mc_mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(samples))
    frob_over_d = float(np.linalg.norm(a, "fro") ** 2 / d)

    gram_gap = np.linalg.norm(a @ a.conj().T - a.conj().T @ a, "fro")
    is_normal = bool(gram_gap <= 1e-10 * max(np.linalg.norm(a, "fro") ** 2, 1e-300))
    try:
        spectrum, kappa = _unit_column_kappa(a)
    except DefectiveEigenbasis:
        spectrum, kappa = np.linalg.eigvals(a), float("inf")
    masses = spectral_masses(spectrum, thresholds)
    rho = float(np.abs(spectrum).max())

    identity_ok = abs(mc_mean - frob_over_d) <= 5.0 * stderr
    lower = (1.0 - thresholds.eps_n) ** 2 * masses.near_unit
    upper = (1.0 + thresholds.eps_u) ** 2
    if not is_normal:
        lower /= kappa ** 2
        upper *= kappa ** 2
    if rho <= 1.0 + thresholds.eps_u + 1e-12 and np.isfinite(upper):
        slack = 5.0 * stderr
        sandwich_ok = (lower - slack <= mc_mean <= upper + slack)
    else:
        sandwich_ok = None
    return EnergyReport(mc_mean, stderr, frob_over_d, lower, upper,
                        bool(identity_ok), sandwich_ok, is_normal, kappa)


def depth_energy_product(layers: list[np.ndarray], samples: int,
                         seed: int) -> tuple[float, float]:
    """Monte-Carlo depth propagation ratio vs the per-layer energy product.

    Returns (measured, predicted) where measured = E||h_L||^2 / E||h_0||^2
    over unit-sphere initial states pushed through the linear layers, and
    predicted = prod_l (1/d) sum_j |lambda_j^l|^2. The two agree whenever
    every layer input stays isotropic (e.g. scaled-orthogonal layers).
    """
    if samples < 10_000:
        raise ValueError("depth energy check needs at least 1e4 samples")
    d = layers[0].shape[0]
    rng = np.random.default_rng(seed)
    h = _sphere_samples(d, samples, rng)
    for a in layers:
        h = a @ h
    measured = float(np.mean(np.sum(np.abs(h) ** 2, axis=0)))
    predicted = 1.0
    for a in layers:
        predicted *= float(np.sum(np.abs(np.linalg.eigvals(a)) ** 2) / d)
    return measured, predicted
