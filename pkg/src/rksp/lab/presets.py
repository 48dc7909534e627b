"""Calibrated learning-rate bands and the desk-scale experiment presets.

The unstable learning rate of a regime is the smallest rate giving at
least 50% divergence over 8 probe seeds, found by log-bisection. The
constants below were produced by ``calibrate_unstable_lr`` at d=32,
L=6, 400 steps (see scripts/calibrate_lr_band.py) and are frozen so
the acceptance cohorts are reproducible without recalibration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..kss import KssConfig
from .cohort import CohortPlan
from .stacks import StackSpec, make_stack
from .training import RecallTask, ToyRecallModel, run_trial, _derive_seed

# frozen calibration results (d=32, L=6, 400 steps, 8 probe seeds)
NOORM_UNSTABLE_LR = 0.198
PRELN_UNSTABLE_LR = 0.323

# shared cohort band: brackets the unstable regime's threshold while
# staying below the stable regime's
DESK_COHORT_LRS = [0.19, 0.21, 0.23, 0.25]
DESK_COHORT_SEEDS = [0, 1, 2, 3, 4, 5]
DESK_TRIAL_STEPS = 400


def calibrate_unstable_lr(spec: StackSpec, lr_lo: float = 0.02, lr_hi: float = 1.0,
                          probe_seeds: int = 8, steps: int = 400,
                          threshold: float = 0.5, rounds: int = 7,
                          task: RecallTask | None = None) -> float:
    """Smallest lr giving >= threshold divergence fraction over probe seeds.

    Log-space bisection; assumes divergence is (approximately) monotone
    in the learning rate over the bracket, which holds for these stacks.
    """
    task = task or RecallTask()

    def rate(lr: float) -> float:
        diverged = 0
        for seed in range(probe_seeds):
            stack_seed = _derive_seed(spec.seed, seed)
            stack = make_stack(replace(spec, seed=stack_seed))
            model = ToyRecallModel.build(stack, task, seed=stack_seed + 1)
            record = run_trial(model, task, lr, steps, None, seed=seed)
            diverged += record.diverged
        return diverged / probe_seeds

    if rate(lr_lo) >= threshold:
        return lr_lo
    if rate(lr_hi) < threshold:
        raise ValueError(f"no divergence at lr={lr_hi}; widen the bracket")
    import math
    lo, hi = math.log(lr_lo), math.log(lr_hi)
    for _ in range(rounds):
        mid = 0.5 * (lo + hi)
        if rate(math.exp(mid)) >= threshold:
            hi = mid
        else:
            lo = mid
    return float(math.exp(hi))


def desk_prediction_plan(steps: int = DESK_TRIAL_STEPS) -> CohortPlan:
    """48-trial divergence-prediction cohort (24 damped, 24 unnormalized)."""
    return CohortPlan(
        specs=[StackSpec(regime="preln_like", seed=11),
               StackSpec(regime="noorm_like", seed=23)],
        lrs=list(DESK_COHORT_LRS),
        seeds=list(DESK_COHORT_SEEDS),
        steps=steps,
    )


def desk_stabilization_plans(alpha: float = 0.15,
                             steps: int = DESK_TRIAL_STEPS) -> tuple[CohortPlan, CohortPlan]:
    """Baseline vs spectral-shaping arms: 24 unnormalized trials each."""
    spec = StackSpec(regime="noorm_like", seed=23)
    seeds = list(range(12))
    lrs = [0.20, 0.22]     # the calibrated unstable rate and 10% above it
    base = CohortPlan(specs=[spec], lrs=lrs, seeds=seeds, steps=steps, kss=None)
    shaped = CohortPlan(specs=[spec], lrs=lrs, seeds=seeds, steps=steps,
                        kss=KssConfig(alpha=alpha, rank=32, apply_every=10))
    return base, shaped


PRESETS = {
    "table3-desk": desk_stabilization_plans,
    "prediction-desk": desk_prediction_plan,
}
