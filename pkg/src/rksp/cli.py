"""Command-line interface.

Subcommands: profile, risk, evaluate, kss-eval, simulate, export-format.
All randomness is seeded; rerunning a command with the same inputs and
seed produces byte-identical JSON. Exit codes: 0 success, 2 input or
validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import reportio
from .diagnostics import MassThresholds
from .errors import NumericalError, RkspError, ValidationError
from .kss import KssConfig, kss_gradient, kss_loss
from .profiler import ProfilerConfig, SpectralProfile, profile
from .snapshots import FORMAT_DESCRIPTION, load_csv_dir, load_dataset
from .stats import CohortResult, evaluate_cohort, write_reliability_csv
from .whiten import whiten


# --------------------------------------------------------------------------
# config file parsing (flat key=value lines, '#' comments)
# --------------------------------------------------------------------------

def parse_flat_config(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_PROFILER_KEYS = {
    "epsilon": float, "mode": str, "rank": int, "subsample": int,
    "eps_u": float, "eps_n": float, "delta_c": float,
    "resdmd_enabled": lambda s: s.lower() in ("1", "true", "yes", "on"),
    "resdmd_tau": float, "eps_nl": float, "eps_r": float,
    "kreiss_radii": int, "kreiss_angles": int, "kreiss_refine_rounds": int,
    "seed": int, "aggregate": str,
}


def profiler_config_from_file(path) -> ProfilerConfig:
    raw = parse_flat_config(path)
    config = ProfilerConfig()
    thresholds = {}
    for key, value in raw.items():
        if key not in _PROFILER_KEYS:
            raise ValidationError(f"{path}: unknown config key {key!r}")
        parsed = _PROFILER_KEYS[key](value)
        if key in ("eps_u", "eps_n", "delta_c"):
            thresholds[key] = parsed
        else:
            setattr(config, key, parsed)
    if thresholds:
        base = config.thresholds
        config.thresholds = MassThresholds(
            eps_u=thresholds.get("eps_u", base.eps_u),
            eps_n=thresholds.get("eps_n", base.eps_n),
            delta_c=thresholds.get("delta_c", base.delta_c))
    return config


def _load_snapshots(path: str, fmt: str):
    if fmt == "csv":
        return load_csv_dir(path)
    return load_dataset(path)


def _write_scatter_csv(prof: SpectralProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re", "im", "layer"])
        for lp in prof.layers:
            for ev in lp.eigenvalues:
                writer.writerow([format(float(ev.real), ".17g"),
                                 format(float(ev.imag), ".17g"), lp.layer])


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_profile(args) -> int:
    config = (profiler_config_from_file(args.config) if args.config
              else ProfilerConfig())
    if args.seed is not None:
        config.seed = args.seed
    if args.mode is not None:
        config.mode = args.mode
    if args.rank is not None:
        config.rank = args.rank
    if args.subsample is not None:
        config.subsample = args.subsample
    dataset = _load_snapshots(args.input, args.format)
    prof = profile(dataset, config)
    reportio.write_report(prof.to_report(), args.output)
    if args.scatter_csv:
        _write_scatter_csv(prof, args.scatter_csv)
    print(f"profiled {dataset.layer_count} layers -> {args.output} "
          f"(risk_score={prof.risk_score:.6f})")
    return 0


def cmd_risk(args) -> int:
    if args.profile:
        report = reportio.read_report(args.profile)
        reportio.check_schema_version(report, args.profile)
        risk = report["risk_score"]
    else:
        if not args.input:
            raise ValidationError("risk needs --input or --profile")
        dataset = _load_snapshots(args.input, args.format)
        config = ProfilerConfig()
        if args.seed is not None:
            config.seed = args.seed
        risk = profile(dataset, config).risk_score
    out = {"schema_version": reportio.SCHEMA_VERSION, "risk_score": risk}
    print(reportio.canonical_json(out), end="")
    return 0


def cmd_evaluate(args) -> int:
    cohort = CohortResult.from_csv(args.cohort)
    report = evaluate_cohort(cohort, resamples=args.bootstrap, bins=args.bins,
                             seed=args.seed)
    reportio.write_report(report.to_dict(), args.output)
    reliability_path = args.reliability_csv or str(
        Path(args.output).with_suffix(".reliability.csv"))
    write_reliability_csv(report.reliability_bins, reliability_path)
    if args.profile:
        prof_report = reportio.read_report(args.profile)
        reportio.check_schema_version(prof_report, args.profile)
        scatter_path = args.scatter_csv or str(
            Path(args.output).with_suffix(".eigenvalues.csv"))
        with open(scatter_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["re", "im", "layer"])
            for layer in prof_report["layers"]:
                for ev in layer["eigenvalues"]:
                    writer.writerow([format(ev["re"], ".17g"),
                                     format(ev["im"], ".17g"), layer["layer"]])
    print(f"evaluated {cohort.n} trials -> {args.output} (auroc={report.auroc:.6f})")
    return 0


def cmd_kss_eval(args) -> int:
    dataset = _load_snapshots(args.input, args.format)
    config = KssConfig(alpha=args.alpha, rank=args.rank, gamma=args.gamma,
                       beta=args.beta, temperature=args.temperature)
    layers = []
    losses = []
    for layer in range(dataset.layer_count):
        x, y = dataset.layer_pair(layer)
        pair = whiten(x, y, args.epsilon)
        evaluation = kss_gradient(pair, config, seed=args.seed + layer)
        losses.append(evaluation.loss)
        layers.append({
            "layer": layer,
            "loss": evaluation.loss,
            "unstable_term": evaluation.unstable_term,
            "near_unit_term": evaluation.near_unit_term,
            "m_soft": evaluation.m_soft,
            "grad_norm": float(np.linalg.norm(evaluation.grad_wrt_operator)),
            "used_fd": evaluation.used_fd,
        })
    out = {
        "schema_version": reportio.SCHEMA_VERSION,
        "alpha": args.alpha,
        "rank": args.rank,
        "layers": layers,
        "mean_loss": float(np.mean(losses)),
        "weighted_penalty": float(args.alpha * np.mean(losses)),
    }
    text = reportio.canonical_json(out)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_simulate(args) -> int:
    from .lab.cohort import CohortPlan, divergence_rate, mean_mass_shift, run_cohort
    from .lab.presets import desk_prediction_plan, desk_stabilization_plans
    from .lab.stacks import StackSpec

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.preset == "table3-desk":
        base_plan, kss_plan = desk_stabilization_plans(alpha=args.alpha,
                                                       steps=args.steps)
        arms = [("baseline", base_plan), ("kss", kss_plan)]
    elif args.preset == "prediction-desk":
        arms = [("cohort", desk_prediction_plan(steps=args.steps))]
    elif args.config:
        arms = [("cohort", _plan_from_config(args.config, args.steps))]
    else:
        raise ValidationError("simulate needs --preset or --config")

    summary_arms = []
    all_trials = []
    trial_records = []
    for name, plan in arms:
        if args.seed is not None:
            plan = replace(plan, specs=[replace(s, seed=s.seed + args.seed)
                                        for s in plan.specs])
        cohort, records = run_cohort(plan)
        for trial, record in zip(cohort.trials, records):
            all_trials.append(replace(trial, config_tag=f"{name}:{trial.config_tag}"))
            trial_records.append(_record_dict(name, record))
        summary_arms.append({
            "name": name,
            "trials": len(records),
            "diverged": int(sum(r.diverged for r in records)),
            "divergence_rate": divergence_rate(records),
            "mean_risk_score": float(np.mean([r.risk_score_at_init for r in records])),
            "mean_mass_shift": mean_mass_shift(records),
        })

    CohortResult(all_trials).to_csv(out_dir / "cohort.csv")
    reportio.write_report({"schema_version": reportio.SCHEMA_VERSION,
                           "trials": trial_records}, out_dir / "trials.json")
    summary = {"schema_version": reportio.SCHEMA_VERSION,
               "preset": args.preset or str(args.config), "arms": summary_arms}
    reportio.write_report(summary, out_dir / "summary.json")
    for arm in summary_arms:
        print(f"arm {arm['name']}: {arm['diverged']}/{arm['trials']} diverged "
              f"(mean risk {arm['mean_risk_score']:.3f})")
    return 0


def _record_dict(arm: str, record) -> dict:
    return {
        "arm": arm,
        "config_tag": record.config_tag,
        "diverged": bool(record.diverged),
        "divergence_step": record.divergence_step,
        "final_metric": record.final_metric,
        "risk_score_at_init": record.risk_score_at_init,
        "risk_score_final": record.risk_score_final,
        "kss_applied": record.kss_applied,
        "baseline_features": record.baseline_features,
        "loss_trace": [float(x) for x in record.loss_trace],
        "grad_norm_trace": [float(x) for x in record.grad_norm_trace],
    }


def _plan_from_config(path, steps):
    from .lab.cohort import CohortPlan
    from .lab.stacks import StackSpec
    from .kss import KssConfig as Kss

    raw = parse_flat_config(path)
    regimes = [r.strip() for r in raw.get("regimes", "noorm_like").split(",")]
    specs = [StackSpec(hidden_dim=int(raw.get("d", 32)),
                       layers=int(raw.get("L", 6)), regime=regime,
                       seed=int(raw.get("stack_seed", 0)))
             for regime in regimes]
    lrs = [float(x) for x in raw.get("lrs", "0.2").split(",")]
    seeds = [int(x) for x in raw.get("seeds", "0,1,2,3").split(",")]
    kss = None
    if float(raw.get("kss_alpha", 0.0)) > 0.0:
        kss = Kss(alpha=float(raw["kss_alpha"]),
                  rank=int(raw.get("kss_rank", 32)),
                  apply_every=int(raw.get("kss_apply_every", 10)),
                  gamma=float(raw.get("kss_gamma", 0.4)))
    return CohortPlan(specs=specs, lrs=lrs, seeds=seeds,
                      steps=int(raw.get("steps", steps)), kss=kss)


def cmd_export_format(_args) -> int:
    print(FORMAT_DESCRIPTION)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rksp",
        description="Spectral stability profiling of residual-stream snapshots")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="profile a snapshot container")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["rksp", "csv"], default="rksp")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--output", required=True)
    p.add_argument("--scatter-csv", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=["full", "randomized"], default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--subsample", type=int, default=None)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("risk", help="print the scalar risk score")
    p.add_argument("--input", default=None)
    p.add_argument("--format", choices=["rksp", "csv"], default="rksp")
    p.add_argument("--profile", default=None, help="existing profile JSON")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("evaluate", help="cohort statistics (AUROC, CI, ECE)")
    p.add_argument("--cohort", required=True)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--reliability-csv", default=None)
    p.add_argument("--profile", default=None,
                   help="profile JSON for the eigenvalue scatter CSV")
    p.add_argument("--scatter-csv", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("kss-eval", help="per-layer shaping loss and gradient")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["rksp", "csv"], default="rksp")
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--rank", type=int, default=32)
    p.add_argument("--gamma", type=float, default=0.4)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--temperature", type=float, default=20.0)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_kss_eval)

    p = sub.add_parser("simulate", help="run a desk-scale training cohort")
    p.add_argument("--preset", choices=["table3-desk", "prediction-desk"],
                   default=None)
    p.add_argument("--config", default=None, help="flat key=value cohort config")
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-format", help="print the container layout")
    p.set_defaults(func=cmd_export_format)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except RkspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
