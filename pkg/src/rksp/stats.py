"""Evaluation statistics for divergence prediction cohorts.

A cohort is a list of (score, diverged, config_tag) trials. AUROC is
computed from midranks, which matches the all-pairs probability with
ties counted 1/2 exactly; confidence intervals come from a stratified
bootstrap that resamples the two classes independently so every
resample keeps both classes. Calibration uses equal-width bins on
[0, 1] with scores interpreted directly as predicted probabilities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateMargins,
    ScoreOutOfRange,
    SingleClassCohort,
    ValidationError,
)

COHORT_CSV_HEADER = ["score", "diverged", "config_tag"]


@dataclass(frozen=True)
class Trial:
    score: float
    diverged: bool
    config_tag: str = ""


@dataclass
class CohortResult:
    """Scored trials with binary divergence labels."""

    trials: list[Trial]

    def __post_init__(self):
        if not self.trials:
            raise ValidationError("cohort must contain at least one trial")
        if not all(math.isfinite(t.score) for t in self.trials):
            raise ValidationError("cohort scores must be finite")

    @property
    def n(self) -> int:
        return len(self.trials)

    def scores(self) -> np.ndarray:
        return np.array([t.score for t in self.trials], dtype=np.float64)

    def labels(self) -> np.ndarray:
        return np.array([t.diverged for t in self.trials], dtype=bool)

    def tags(self) -> list[str]:
        return [t.config_tag for t in self.trials]

    @classmethod
    def from_csv(cls, path) -> "CohortResult":
        trials = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != COHORT_CSV_HEADER:
                raise ValidationError(
                    f"{path}: cohort CSV must start with header "
                    f"{','.join(COHORT_CSV_HEADER)}")
            for row in reader:
                if not row:
                    continue
                if len(row) != 3:
                    raise ValidationError(f"{path}: malformed row {row!r}")
                try:
                    score = float(row[0])
                    label = int(row[1])
                except ValueError as exc:
                    raise ValidationError(f"{path}: malformed row {row!r}") from exc
                if label not in (0, 1):
                    raise ValidationError(f"{path}: diverged must be 0 or 1, got {row[1]}")
                trials.append(Trial(score, bool(label), row[2]))
        return cls(trials)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(COHORT_CSV_HEADER)
            for t in self.trials:
                writer.writerow([format(t.score, ".17g"), int(t.diverged), t.config_tag])


@dataclass(frozen=True)
class ReliabilityBin:
    bin_center: float
    predicted_mean: float
    observed_freq: float
    count: int


@dataclass
class EvalReport:
    auroc: float
    ci_low: float | None
    ci_high: float | None
    ece: float
    reliability_bins: list[ReliabilityBin]
    fisher_p: float | None = None
    n: int = 0

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "n": self.n,
            "auroc": self.auroc,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "ece": self.ece,
            "reliability_bins": [
                {"bin_center": b.bin_center, "predicted_mean": b.predicted_mean,
                 "observed_freq": b.observed_freq, "count": b.count}
                for b in self.reliability_bins
            ],
            "fisher_p": self.fisher_p,
        }


# --------------------------------------------------------------------------
# AUROC
# --------------------------------------------------------------------------

def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the group average (exact halves)."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        # average of ranks i+1 .. j+1 is a multiple of 1/2, exact in binary
        avg = (i + j + 2) / 2.0
        ranks[order[i:j + 1]] = avg
        i = j + 1
    return ranks


def _auroc_arrays(scores: np.ndarray, labels: np.ndarray) -> float:
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassCohort("AUROC needs both diverged and converged trials")
    ranks = _midranks(scores)
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auroc(cohort: CohortResult) -> float:
    """Probability a random diverged trial outscores a random converged one."""
    return _auroc_arrays(cohort.scores(), cohort.labels())


def bootstrap_ci(cohort: CohortResult, resamples: int = 1000,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile 95% bootstrap CI of AUROC, stratified by class."""
    scores, labels = cohort.scores(), cohort.labels()
    pos = scores[labels]
    neg = scores[~labels]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassCohort("bootstrap needs both classes present")
    rng = np.random.default_rng(seed)
    vals = np.empty(resamples)
    merged_labels = np.concatenate([np.ones(len(pos), bool), np.zeros(len(neg), bool)])
    for i in range(resamples):
        sample = np.concatenate([rng.choice(pos, size=len(pos), replace=True),
                                 rng.choice(neg, size=len(neg), replace=True)])
        vals[i] = _auroc_arrays(sample, merged_labels)
    low, high = np.percentile(vals, [2.5, 97.5])
    return float(low), float(high)


# --------------------------------------------------------------------------
# calibration
# --------------------------------------------------------------------------

def ece(cohort: CohortResult, bins: int = 10) -> tuple[float, list[ReliabilityBin]]:
    """Expected calibration error with equal-width bins; empty bins skipped."""
    scores, labels = cohort.scores(), cohort.labels()
    if scores.min() < 0.0 or scores.max() > 1.0:
        raise ScoreOutOfRange("calibration scores must lie in [0, 1]")
    idx = np.minimum((scores * bins).astype(int), bins - 1)
    total = len(scores)
    out: list[ReliabilityBin] = []
    error = 0.0
    for b in range(bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            continue
        predicted = float(scores[mask].mean())
        observed = float(labels[mask].mean())
        error += (count / total) * abs(predicted - observed)
        out.append(ReliabilityBin((b + 0.5) / bins, predicted, observed, count))
    return float(error), out


# --------------------------------------------------------------------------
# Fisher's exact test
# --------------------------------------------------------------------------

def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def fisher_exact(table) -> float:
    """Two-sided Fisher exact p-value by probability-mass ordering.

    Sums the hypergeometric probabilities of all tables (with the same
    margins) whose probability does not exceed the observed table's,
    allowing a relative slack of 1e-12 for ties. Evaluation is in log
    space, so tiny p-values for large counts stay accurate.
    """
    (a, b), (c, d) = table
    if min(a, b, c, d) < 0 or any(int(v) != v for v in (a, b, c, d)):
        raise DegenerateMargins("table entries must be nonnegative integers")
    a, b, c, d = int(a), int(b), int(c), int(d)
    r1, r2 = a + b, c + d
    c1, c2 = a + c, b + d
    if min(r1, r2, c1, c2) == 0:
        raise DegenerateMargins("all margins must be positive")
    n = r1 + r2
    denom = _log_comb(n, r1)

    def log_p(k: int) -> float:
        return _log_comb(c1, k) + _log_comb(c2, r1 - k) - denom

    lp_obs = log_p(a)
    k_min = max(0, r1 - c2)
    k_max = min(r1, c1)
    slack = math.log1p(1e-12)
    terms = [log_p(k) for k in range(k_min, k_max + 1) if log_p(k) <= lp_obs + slack]
    peak = max(terms)
    total = peak + math.log(sum(math.exp(t - peak) for t in terms))
    return float(min(1.0, math.exp(total)))


def fisher_from_cohort(cohort: CohortResult) -> float | None:
    """2x2 divergence table across exactly two config tags, else None."""
    tags = sorted(set(cohort.tags()))
    if len(tags) != 2:
        return None
    table = []
    labels = cohort.labels()
    tag_arr = np.array(cohort.tags())
    for tag in tags:
        mask = tag_arr == tag
        diverged = int(labels[mask].sum())
        table.append([diverged, int(mask.sum()) - diverged])
    try:
        return fisher_exact(table)
    except DegenerateMargins:
        return None


# --------------------------------------------------------------------------
# report assembly
# --------------------------------------------------------------------------

def evaluate_cohort(cohort: CohortResult, resamples: int = 1000, bins: int = 10,
                    seed: int = 0, fisher: bool = True) -> EvalReport:
    score = auroc(cohort)
    if resamples > 0:
        ci_low, ci_high = bootstrap_ci(cohort, resamples, seed)
    else:
        ci_low = ci_high = None
    ece_value, rel_bins = ece(cohort, bins)
    fisher_p = fisher_from_cohort(cohort) if fisher else None
    return EvalReport(score, ci_low, ci_high, ece_value, rel_bins,
                      fisher_p=fisher_p, n=cohort.n)


def write_reliability_csv(bins: list[ReliabilityBin], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "predicted_mean", "observed_freq", "count"])
        for b in bins:
            writer.writerow([format(b.bin_center, ".17g"),
                             format(b.predicted_mean, ".17g"),
                             format(b.observed_freq, ".17g"), b.count])
