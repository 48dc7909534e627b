"""Synthetic dynamics lab: controlled stacks, toy training, cohorts."""

from .cohort import CohortPlan, divergence_rate, mean_mass_shift, run_cohort
from .presets import (
    DESK_COHORT_LRS,
    DESK_COHORT_SEEDS,
    NOORM_UNSTABLE_LR,
    PRELN_UNSTABLE_LR,
    calibrate_unstable_lr,
    desk_prediction_plan,
    desk_stabilization_plans,
)
from .stacks import StackSpec, SyntheticStack, make_stack, measured_near_unit_mass
from .training import RecallTask, ToyRecallModel, TrialRecord, run_trial
