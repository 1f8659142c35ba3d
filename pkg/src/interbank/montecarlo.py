"""Reproducible Monte Carlo ensembles and systemic-risk metric aggregation.

Realization k of an ensemble derives its random streams from the entropy
pair (master_seed, k) fed through numpy's SeedSequence hash, so results are
a pure function of the inputs and the master seed, independent of how many
workers execute the realizations or in what order they finish.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .dynamics import RunRecord, ShockPolicy, half_life, run_realization
from .ingest import fingerprint_records
from .ledger import BankRecord, MarketState, Parameters
from .reconstruction import ReconstructionConfig, calibrate_z, sample_network

__all__ = [
    "AggregateReport",
    "EnsembleError",
    "MetricSummary",
    "half_life",
    "realization_seed",
    "run_ensemble",
]

# Entropy tag for the shared network draw in fixed-network mode, outside the
# realization index range.
_NETWORK_TAG = 0x6E6574776F726B

METRICS = ("final_rel_equity", "t_c", "t_half")


class EnsembleError(RuntimeError):
    """A realization failed; the whole ensemble is aborted."""


def realization_seed(master_seed: int, index: int) -> tuple[int, int]:
    """Entropy pair that fully determines realization ``index``."""
    return (int(master_seed), int(index))


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    min: float
    max: float
    count: int

    @classmethod
    def of(cls, values: np.ndarray) -> "MetricSummary":
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return cls(mean=float("nan"), std=float("nan"), min=float("nan"), max=float("nan"), count=0)
        return cls(
            mean=float(values.mean()),
            std=float(values.std()),
            min=float(values.min()),
            max=float(values.max()),
            count=int(values.size),
        )


@dataclass(frozen=True)
class AggregateReport:
    """Ensemble statistics over converged realizations, plus provenance."""

    policy: str
    n_requested: int
    n_converged: int
    master_seed: int
    parameters: dict
    input_fingerprint: str
    metrics: dict[str, MetricSummary]
    non_converged: tuple[int, ...]

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["non_converged"] = list(self.non_converged)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def aggregate(
    runs: list[RunRecord],
    *,
    policy: ShockPolicy,
    params: Parameters,
    master_seed: int,
    fingerprint: str,
) -> AggregateReport:
    converged = [r for r in runs if r.converged]
    metrics = {
        "final_rel_equity": MetricSummary.of([r.final_rel_equity for r in converged]),
        "t_c": MetricSummary.of([r.t_c for r in converged]),
        "t_half": MetricSummary.of([r.t_half for r in converged]),
    }
    non_converged = tuple(i for i, r in enumerate(runs) if not r.converged)
    return AggregateReport(
        policy=policy.label(),
        n_requested=len(runs),
        n_converged=len(converged),
        master_seed=int(master_seed),
        parameters=params.as_dict(),
        input_fingerprint=fingerprint,
        metrics=metrics,
        non_converged=non_converged,
    )


def _run_indexed(
    records: list[BankRecord],
    params: Parameters,
    policy: ShockPolicy,
    master_seed: int,
    index: int,
    network: MarketState | None,
    calibrated_z: float | None,
) -> RunRecord:
    return run_realization(
        records,
        params,
        policy,
        realization_seed(master_seed, index),
        network=network,
        calibrated_z=calibrated_z,
    )


def run_ensemble(
    records: list[BankRecord],
    params: Parameters,
    policy: ShockPolicy,
    n_realizations: int,
    master_seed: int,
    parallelism: int = 1,
) -> tuple[AggregateReport, list[RunRecord]]:
    """Run an ensemble and aggregate the three systemic-risk metrics.

    Results are byte-identical for any parallelism degree.  Non-converged
    realizations are excluded from the metric statistics but counted and
    listed in the report.
    """
    if n_realizations < 1:
        raise ValueError(f"n_realizations must be >= 1, got {n_realizations}")
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")

    fingerprint = fingerprint_records(records)
    scaled = [r.in_units_of(params.phi) for r in records]
    has_market = any(
        r.interbank_assets_total > 0.0 or r.interbank_liabilities_total > 0.0 for r in scaled
    )
    z = calibrate_z(scaled, params.d) if has_market and len(scaled) >= 2 else None
    network = None
    if not params.resample_network:
        config = ReconstructionConfig(
            density=params.d, seed=np.random.SeedSequence([int(master_seed), _NETWORK_TAG])
        )
        network = sample_network(scaled, config, rate=params.r0, z=z)

    runs: list[RunRecord | None] = [None] * n_realizations
    if parallelism == 1:
        for k in range(n_realizations):
            try:
                runs[k] = _run_indexed(records, params, policy, master_seed, k, network, z)
            except Exception as exc:
                raise EnsembleError(f"realization {k} failed: {exc}") from exc
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = {
                pool.submit(_run_indexed, records, params, policy, master_seed, k, network, z): k
                for k in range(n_realizations)
            }
            try:
                for future in concurrent.futures.as_completed(futures):
                    k = futures[future]
                    try:
                        runs[k] = future.result()
                    except Exception as exc:
                        raise EnsembleError(f"realization {k} failed: {exc}") from exc
            finally:
                for future in futures:
                    future.cancel()

    report = aggregate(
        runs, policy=policy, params=params, master_seed=master_seed, fingerprint=fingerprint
    )
    return report, runs
