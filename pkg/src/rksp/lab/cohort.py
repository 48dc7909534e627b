"""Cohort assembly: profile at init, train, label, and collect statistics."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..kss import KssConfig
from ..stats import CohortResult, Trial
from .stacks import StackSpec, make_stack
from .training import RecallTask, TrialRecord, ToyRecallModel, run_trial, _derive_seed


@dataclass
class CohortPlan:
    """Trial grid: every (spec, lr, seed) triple becomes one trial."""

    specs: list[StackSpec]
    lrs: list[float]
    seeds: list[int]
    steps: int = 400
    kss: KssConfig | None = None
    task: RecallTask = None

    def __post_init__(self):
        if self.task is None:
            self.task = RecallTask()


def run_cohort(plan: CohortPlan) -> tuple[CohortResult, list[TrialRecord]]:
    """Run the full trial grid and emit the (score, label) cohort.

    The score is the init-time risk (mean near-unit mass); the label is
    the divergence flag. Model construction and training are
    deterministic per (spec.seed, trial seed).
    """
    records: list[TrialRecord] = []
    trials: list[Trial] = []
    for spec in plan.specs:
        for lr in plan.lrs:
            for seed in plan.seeds:
                stack_seed = _derive_seed(spec.seed, seed)
                stack = make_stack(replace(spec, seed=stack_seed))
                model = ToyRecallModel.build(stack, plan.task, seed=stack_seed + 1)
                tag = f"{spec.regime}:lr={lr:g}"
                record = run_trial(model, plan.task, lr, plan.steps, plan.kss,
                                   seed=seed, config_tag=tag)
                records.append(record)
                trials.append(Trial(record.risk_score_at_init, record.diverged, tag))
    return CohortResult(trials), records


def divergence_rate(records: list[TrialRecord]) -> float:
    return float(np.mean([r.diverged for r in records]))


def mean_mass_shift(records: list[TrialRecord]) -> float:
    """Mean init-to-final change of the risk score over profileable trials."""
    deltas = [r.risk_score_final - r.risk_score_at_init
              for r in records if r.risk_score_final is not None]
    if not deltas:
        return float("nan")
    return float(np.mean(deltas))
