"""Agent-based stress simulator for the overnight interbank lending market."""

from .dynamics import (
    CascadeOutcome,
    FreezeOutcome,
    RateProcess,
    RunRecord,
    ShockPolicy,
    SimulationError,
    apply_exogenous_shock,
    check_and_resolve_freeze,
    fire_sale_discount,
    half_life,
    post_cascade_releverage,
    propagate_default,
    releverage_and_hoard,
    resolve_freeze,
    run_realization,
)
from .ingest import (
    InputError,
    SyntheticSpec,
    fingerprint_records,
    generate_synthetic,
    load_balance_sheets,
    save_balance_sheets,
)
from .ledger import (
    BankRecord,
    LedgerError,
    MarketState,
    Parameters,
    equity,
    equity_vector,
    remove_bank,
    total_relative_equity,
    verify_equity_identity,
)
from .montecarlo import AggregateReport, EnsembleError, MetricSummary, run_ensemble
from .reconstruction import (
    CalibrationError,
    ReconstructionConfig,
    calibrate_z,
    expected_density,
    sample_network,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateReport",
    "BankRecord",
    "CalibrationError",
    "CascadeOutcome",
    "EnsembleError",
    "FreezeOutcome",
    "InputError",
    "LedgerError",
    "MarketState",
    "MetricSummary",
    "Parameters",
    "RateProcess",
    "ReconstructionConfig",
    "RunRecord",
    "ShockPolicy",
    "SimulationError",
    "SyntheticSpec",
    "apply_exogenous_shock",
    "calibrate_z",
    "check_and_resolve_freeze",
    "equity",
    "equity_vector",
    "expected_density",
    "fingerprint_records",
    "fire_sale_discount",
    "generate_synthetic",
    "half_life",
    "load_balance_sheets",
    "post_cascade_releverage",
    "propagate_default",
    "releverage_and_hoard",
    "remove_bank",
    "resolve_freeze",
    "run_ensemble",
    "run_realization",
    "sample_network",
    "save_balance_sheets",
    "total_relative_equity",
    "verify_equity_identity",
]
