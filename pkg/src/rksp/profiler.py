"""Per-layer spectral profiling pipeline.

For every layer transition: whiten, fit the (optionally randomized)
least-squares operator, filter unreliable modes, and collect the
modulus-bin masses, spectral radius, eigenvector condition number,
nonlinearity ratio and Kreiss constant. Scalar metrics are aggregated
across layers (mean/max/min/std) and the near-unit mass aggregate is
exposed as the divergence risk score.

Layers are independent; profiling parallelizes across them with the
thread count taken from the RKSP_THREADS environment variable. Results
never depend on the thread count: per-layer randomness is derived from
(seed, layer) and aggregation folds in layer order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import (
    KreissGrid,
    MassThresholds,
    ModeReliability,
    SpectralMasses,
    kreiss_constant,
    nonlinearity_ratio,
    resdmd_filter,
    spectral_masses,
)
from .dmd import dmd_fit, randomized_dmd
from .errors import DefectiveEigenbasis, ProfileRequiresLayers
from .reportio import SCHEMA_VERSION
from .snapshots import SnapshotDataset, subsample_columns
from .whiten import whiten

FORCED_RANDOMIZED_RANK = 32   # cap when a layer lacks d+1 effective samples


@dataclass
class ProfilerConfig:
    """Tunable knobs of the profiling pipeline."""

    epsilon: float = 1e-5
    mode: str = "full"                 # "full" | "randomized"
    rank: int = 32
    subsample: int | None = 2048
    thresholds: MassThresholds = field(default_factory=MassThresholds)
    resdmd_enabled: bool = True
    resdmd_tau: float = 0.1
    eps_nl: float = 1e-8
    eps_r: float = 1e-8
    kreiss_radii: int = 32
    kreiss_angles: int = 64
    kreiss_refine_rounds: int = 2
    seed: int = 0
    aggregate: str = "mean"            # "mean" | "max"

    def validate(self):
        if self.epsilon <= 0:
            raise ValueError("whitening ridge must be positive")
        if self.mode not in ("full", "randomized"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.aggregate not in ("mean", "max"):
            raise ValueError(f"unknown aggregate {self.aggregate!r}")
        if self.rank < 1 or self.resdmd_tau <= 0:
            raise ValueError("rank and resdmd_tau must be positive")

    def kreiss_grid(self) -> KreissGrid:
        return KreissGrid(n_radii=self.kreiss_radii, n_angles=self.kreiss_angles,
                          refine_rounds=self.kreiss_refine_rounds)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "mode": self.mode,
            "rank": self.rank,
            "subsample": self.subsample,
            "eps_u": self.thresholds.eps_u,
            "eps_n": self.thresholds.eps_n,
            "delta_c": self.thresholds.delta_c,
            "resdmd_enabled": self.resdmd_enabled,
            "resdmd_tau": self.resdmd_tau,
            "eps_nl": self.eps_nl,
            "eps_r": self.eps_r,
            "kreiss_radii": self.kreiss_radii,
            "kreiss_angles": self.kreiss_angles,
            "kreiss_refine_rounds": self.kreiss_refine_rounds,
            "seed": self.seed,
            "aggregate": self.aggregate,
        }


@dataclass
class LayerSpectralProfile:
    """Diagnostics of one layer transition."""

    layer: int
    masses: SpectralMasses
    rho: float                     # pre-filter spectral radius
    kappa: float                   # inf sentinel when defective
    eta_nl: float
    kreiss: float
    reliability_fraction: float
    degenerate_update: bool
    eigenvalues: np.ndarray        # post-filter set when filtering enabled
    mode: str
    rank: int | None


@dataclass
class SpectralProfile:
    """Per-layer profiles plus cross-layer aggregates and the risk score."""

    layers: list[LayerSpectralProfile]
    aggregates: dict[str, dict[str, float]]
    risk_score: float
    config: ProfilerConfig
    hidden_dim: int
    sample_count: int
    source_tag: str = ""

    def to_report(self) -> dict:
        layers = []
        for lp in self.layers:
            layers.append({
                "layer": lp.layer,
                "masses": {
                    "expansive": lp.masses.expansive,
                    "near_unit": lp.masses.near_unit,
                    "contractive": lp.masses.contractive,
                    "mid": lp.masses.mid,
                },
                "mode_count": lp.masses.mode_count,
                "rho": lp.rho,
                "kappa": lp.kappa,
                "eta_nl": lp.eta_nl,
                "kreiss": lp.kreiss,
                "reliability_fraction": lp.reliability_fraction,
                "degenerate_update": lp.degenerate_update,
                "mode": lp.mode,
                "rank": lp.rank,
                "eigenvalues": [{"re": float(ev.real), "im": float(ev.imag)}
                                for ev in lp.eigenvalues],
            })
        return {
            "schema_version": SCHEMA_VERSION,
            "source": self.source_tag,
            "hidden_dim": self.hidden_dim,
            "sample_count": self.sample_count,
            "layer_count": len(self.layers),
            "config": self.config.to_dict(),
            "layers": layers,
            "aggregates": self.aggregates,
            "risk_score": self.risk_score,
        }


_METRICS = ("near_unit", "expansive", "contractive", "mid", "rho", "kappa",
            "eta_nl", "kreiss", "reliability_fraction")


def _layer_metric(lp: LayerSpectralProfile, name: str) -> float:
    if name in ("near_unit", "expansive", "contractive", "mid"):
        return getattr(lp.masses, name)
    return getattr(lp, name)


def _aggregate(layers: list[LayerSpectralProfile]) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for name in _METRICS:
        vals = np.array([_layer_metric(lp, name) for lp in layers])
        out[name] = {
            "mean": float(vals.mean()),
            "max": float(vals.max()),
            "min": float(vals.min()),
            "std": float(vals.std()),
        }
    return out


def _profile_layer(layer: int, x: np.ndarray, y: np.ndarray,
                   config: ProfilerConfig) -> LayerSpectralProfile:
    pair = whiten(x, y, config.epsilon)
    d, n = pair.x_white.shape

    mode = config.mode
    rank = min(config.rank, d, n)
    if n < d + 1 and mode == "full":
        # too few samples for a well-posed full fit
        mode = "randomized"
        rank = min(FORCED_RANDOMIZED_RANK, max(1, n // 4))
    seed = int(np.random.SeedSequence([config.seed, layer]).generate_state(1)[0])
    if mode == "randomized":
        op = randomized_dmd(pair, rank, seed)
    else:
        op = dmd_fit(pair)

    reliability: ModeReliability | None = None
    if config.resdmd_enabled and not op.defective:
        try:
            reliability = resdmd_filter(pair, op, config.resdmd_tau, config.eps_r)
        except DefectiveEigenbasis:
            reliability = None

    eigenvalues = op.eigenvalues
    reliability_fraction = 0.0
    if reliability is not None:
        reliability_fraction = reliability.reliable_fraction
        kept = op.eigenvalues[~reliability.flags]
        if kept.size:       # an all-flagged spectrum falls back to the full set
            eigenvalues = kept
    elif not config.resdmd_enabled:
        reliability_fraction = 1.0

    masses = spectral_masses(eigenvalues, config.thresholds)
    nl = nonlinearity_ratio(pair, op, config.eps_nl)
    kreiss = kreiss_constant(op.operator, config.kreiss_grid()).value
    return LayerSpectralProfile(
        layer=layer,
        masses=masses,
        rho=op.spectral_radius,
        kappa=op.kappa,
        eta_nl=nl.value,
        kreiss=kreiss,
        reliability_fraction=reliability_fraction,
        degenerate_update=nl.degenerate_update,
        eigenvalues=eigenvalues,
        mode=op.mode,
        rank=op.rank,
    )


def thread_count() -> int:
    raw = os.environ.get("RKSP_THREADS", "")
    if raw.strip():
        return max(1, int(raw))
    return os.cpu_count() or 1


def profile(dataset: SnapshotDataset, config: ProfilerConfig | None = None) -> SpectralProfile:
    """Run the full profiling pipeline over every layer of a dataset."""
    config = config or ProfilerConfig()
    config.validate()
    if dataset.layer_count < 1:
        raise ProfileRequiresLayers("dataset has no layer pairs")
    if config.subsample is not None and config.subsample < dataset.sample_count:
        dataset = subsample_columns(dataset, config.subsample, config.seed)

    jobs = [(layer, *dataset.layer_pair(layer)) for layer in range(dataset.layer_count)]
    workers = min(thread_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            layers = list(pool.map(lambda j: _profile_layer(j[0], j[1], j[2], config), jobs))
    else:
        layers = [_profile_layer(*job, config) for job in jobs]

    aggregates = _aggregate(layers)
    near = aggregates["near_unit"]
    risk = near["mean"] if config.aggregate == "mean" else near["max"]
    return SpectralProfile(layers, aggregates, float(risk), config,
                           dataset.hidden_dim, dataset.sample_count,
                           source_tag=dataset.source_tag)


def risk_score(prof: SpectralProfile, aggregate: str = "mean") -> float:
    """Scalar divergence-risk score: the near-unit mass aggregated over layers."""
    if not prof.layers:
        raise ProfileRequiresLayers("profile has no layers")
    vals = np.array([lp.masses.near_unit for lp in prof.layers])
    return float(vals.mean() if aggregate == "mean" else vals.max())
