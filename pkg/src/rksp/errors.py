"""Exception taxonomy for the rksp toolkit.

Validation-style failures (bad files, bad cohorts, bad arguments) and
numerical failures (ill-conditioned spectra, power blow-up) are kept in
separate branches so the CLI can map them to distinct exit codes.
"""

from __future__ import annotations


class RkspError(Exception):
    """Base class for all rksp-specific failures."""


class ValidationError(RkspError):
    """Input violates a documented contract (CLI exit code 2)."""


class NumericalError(RkspError):
    """A numerical procedure cannot produce a trustworthy result (exit code 3)."""


# --- snapshot container ----------------------------------------------------

class MalformedHeader(ValidationError):
    """Container magic bytes or format version do not match."""


class ShapeMismatch(ValidationError):
    """Declared dimensions disagree with the payload."""


class NonFiniteData(ValidationError):
    """A NaN or Inf entry was found in a snapshot matrix."""

    def __init__(self, layer: int, column: int):
        super().__init__(f"non-finite entry at layer {layer}, column {column}")
        self.layer = layer
        self.column = column


class IoFailure(RkspError):
    """Underlying I/O operation failed."""


class NTooLarge(ValidationError):
    """Requested subsample size exceeds the stored sample count."""


class ProfileRequiresLayers(ValidationError):
    """Dataset holds no layer pairs; nothing to profile."""


# --- estimation ------------------------------------------------------------

class SingularCovariance(NumericalError):
    """Whitener not computable: non-positive ridge or non-finite input."""


class RankTooLarge(ValidationError):
    """Requested sketch rank exceeds min(d, N)."""


class DefectiveEigenbasis(NumericalError):
    """Eigenvector matrix is numerically singular; spectra untrustworthy."""


# --- diagnostics -----------------------------------------------------------

class EmptySpectrum(ValidationError):
    """Spectral masses are undefined for an empty eigenvalue set."""


class PowerOverflow(NumericalError):
    """Matrix powers exceeded the overflow guard; not power-bounded."""


# --- evaluation statistics -------------------------------------------------

class SingleClassCohort(ValidationError):
    """AUROC needs at least one positive and one negative trial."""


class ScoreOutOfRange(ValidationError):
    """Calibration requires scores inside [0, 1]."""


class DegenerateMargins(ValidationError):
    """Fisher's exact test needs all row and column margins positive."""


# --- regularizer / synthetic lab -------------------------------------------

class EmptyLayerSample(ValidationError):
    """Objective combination received an empty per-layer loss set."""


class TargetUnreachable(NumericalError):
    """Stack construction missed its spectral target after rescaling."""


class SchemaVersionError(ValidationError):
    """Report JSON carries an unknown schema_version."""
