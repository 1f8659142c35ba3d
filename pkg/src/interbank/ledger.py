"""Balance-sheet data model and elementary ledger operations.

The market is a directed weighted graph of overnight loans: ``exposures[i, j]``
is the current value bank ``i`` lends to bank ``j``, so the same entry is an
asset of ``i`` and a liability of ``j``.  A bank's equity is

    external_assets - external_liabilities + (loans out) - (loans in)

where the matrix already stores revaluation-inclusive values: the global
rate revaluation multiplies every entry by the ratio of the new rate to the
old one, so no rate factor appears in the identity itself.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


class LedgerError(RuntimeError):
    """Raised when the incrementally tracked equities diverge from the ledger."""


@dataclass(frozen=True)
class Parameters:
    """Scalar model constants plus run-policy knobs.

    The first nine fields are the calibrated model constants; the remainder
    control numerical guards and the run loop.
    """

    d: float = 0.1            # target density of the reconstructed network
    lambda_: float = 1.0      # loss given default
    rho: float = 1.0          # lost-funding fraction to be replaced
    phi: float = 1e8          # size of the exogenous shock (currency)
    r0: float = 1.0           # initial interest rate
    alpha: float = 1e-3       # interest-rate drift factor
    sigma: float = 1e-3       # std of the rate noise
    delta: float = 1e-2       # prefactor of the post-cascade rate jump
    eps_c: float = 0.37       # critical residual-equity ratio (market freeze)

    gamma_cap: float = 1e3    # cap on the fire-sale discount when Q >= C
    rate_floor: float = 1e-6  # the rate may never reach zero
    max_iterations: int = 200_000      # safety valve for the run loop
    ledger_check_interval: int = 64    # rounds between full equity-identity checks
    resample_network: bool = True      # one network per realization vs one per run

    def __post_init__(self) -> None:
        if not 0.0 < self.d <= 1.0:
            raise ValueError(f"density d must be in (0, 1], got {self.d}")
        # eps_c = 1.0 is the degenerate always-freeze configuration; keep it legal.
        if not 0.0 < self.eps_c <= 1.0:
            raise ValueError(f"eps_c must be in (0, 1], got {self.eps_c}")
        if self.r0 <= 0.0:
            raise ValueError(f"r0 must be positive, got {self.r0}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.sigma < 0.0 or self.delta < 0.0:
            raise ValueError("sigma and delta must be non-negative")
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lambda_}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.phi <= 0.0:
            raise ValueError(f"phi must be positive, got {self.phi}")
        if self.gamma_cap <= 0.0 or self.rate_floor <= 0.0:
            raise ValueError("gamma_cap and rate_floor must be positive")
        if self.max_iterations < 1 or self.ledger_check_interval < 1:
            raise ValueError("iteration knobs must be >= 1")

    def replace(self, **changes) -> "Parameters":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lambda_")
        return out


@dataclass(frozen=True)
class BankRecord:
    """One bank's aggregate balance-sheet inputs.

    Interbank positions enter only through their marginals: total lending
    (``interbank_assets_total``) and total borrowing
    (``interbank_liabilities_total``).  Bilateral detail is reconstructed
    separately.
    """

    id: str
    external_assets: float
    external_liabilities: float
    interbank_assets_total: float
    interbank_liabilities_total: float

    _CURRENCY_FIELDS = (
        "external_assets",
        "external_liabilities",
        "interbank_assets_total",
        "interbank_liabilities_total",
    )

    def validate(self) -> None:
        for name in self._CURRENCY_FIELDS:
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"bank {self.id!r}: {name} must be finite and >= 0, got {value}")

    def equity(self, rate: float = 1.0) -> float:
        """Book equity with interbank marginals valued at the given rate."""
        return (
            self.external_assets
            - self.external_liabilities
            + rate * (self.interbank_assets_total - self.interbank_liabilities_total)
        )

    def total_assets(self, rate: float = 1.0) -> float:
        return self.external_assets + rate * self.interbank_assets_total

    def scaled(self, factor: float) -> "BankRecord":
        """Return a copy with every currency field multiplied by ``factor``."""
        return BankRecord(
            id=self.id,
            external_assets=self.external_assets * factor,
            external_liabilities=self.external_liabilities * factor,
            interbank_assets_total=self.interbank_assets_total * factor,
            interbank_liabilities_total=self.interbank_liabilities_total * factor,
        )

    def in_units_of(self, unit: float) -> "BankRecord":
        """Return a copy with every currency field divided by ``unit``.

        True division, not multiplication by a reciprocal: quantities that
        are an exact common multiple across two unit choices must normalize
        to identical floats for the dynamics to be exactly scale-covariant.
        """
        return BankRecord(
            id=self.id,
            external_assets=self.external_assets / unit,
            external_liabilities=self.external_liabilities / unit,
            interbank_assets_total=self.interbank_assets_total / unit,
            interbank_liabilities_total=self.interbank_liabilities_total / unit,
        )


class MarketState:
    """The live ledger: exposures, external books, alive flags and the rate.

    The exposure matrix is stored as a base matrix plus a global scale factor
    so that the rate revaluation (which multiplies every entry by the same
    ratio) is O(1).  All accessors and mutators speak current values; the
    split is invisible from outside.

    Dead banks are zeroed, never deleted, so indices stay stable for the
    whole run.
    """

    __slots__ = (
        "_m",
        "_scale",
        "_row",
        "_col",
        "_tot",
        "external_assets",
        "external_liabilities",
        "alive",
        "rate",
        "step",
        "initial_total_equity",
    )

    def __init__(
        self,
        exposures: np.ndarray,
        external_assets: np.ndarray,
        external_liabilities: np.ndarray,
        rate: float,
        *,
        copy: bool = True,
    ) -> None:
        m = np.array(exposures, dtype=float, copy=copy)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"exposures must be square, got shape {m.shape}")
        if np.any(np.diag(m) != 0.0):
            raise ValueError("exposure matrix must have a zero diagonal")
        if np.any(m < 0.0) or not np.all(np.isfinite(m)):
            raise ValueError("exposures must be finite and non-negative")
        if rate <= 0.0:
            raise ValueError(f"rate must be positive, got {rate}")
        n = m.shape[0]
        self._m = m
        self._scale = 1.0
        self._row = m.sum(axis=1)
        self._col = m.sum(axis=0)
        self._tot = float(m.sum())
        self.external_assets = np.array(external_assets, dtype=float, copy=True)
        self.external_liabilities = np.array(external_liabilities, dtype=float, copy=True)
        if self.external_assets.shape != (n,) or self.external_liabilities.shape != (n,):
            raise ValueError("external vectors must match the matrix dimension")
        self.alive = np.ones(n, dtype=bool)
        self.rate = float(rate)
        self.step = 0
        total = float(np.sum(self.external_assets - self.external_liabilities + self._row - self._col))
        if total <= 0.0:
            raise ValueError(f"initial total equity must be positive, got {total}")
        self.initial_total_equity = total

    # -- read access ---------------------------------------------------

    @property
    def n(self) -> int:
        return self._m.shape[0]

    def exposure(self, i: int, j: int) -> float:
        return self._scale * self._m[i, j]

    def exposure_matrix(self) -> np.ndarray:
        """Materialize the current-value exposure matrix (a copy)."""
        return self._scale * self._m

    # Cached sums accumulate rounding dust as entries are written off; a
    # book that is empty up to cancellation reads as exactly empty.

    def row_sum(self, i: int) -> float:
        return max(self._scale * self._row[i], 0.0)

    def col_sum(self, i: int) -> float:
        return max(self._scale * self._col[i], 0.0)

    def row_sums(self) -> np.ndarray:
        return np.maximum(self._scale * self._row, 0.0)

    def col_sums(self) -> np.ndarray:
        return np.maximum(self._scale * self._col, 0.0)

    def net_interbank(self) -> np.ndarray:
        """Per-bank net interbank position (loans out minus loans in)."""
        return self._scale * (self._row - self._col)

    def total_exposure(self) -> float:
        """Total current value of the interbank market."""
        return max(self._scale * self._tot, 0.0)

    def out_degrees(self) -> np.ndarray:
        return (self._m > 0.0).sum(axis=1)

    def in_degrees(self) -> np.ndarray:
        return (self._m > 0.0).sum(axis=0)

    # -- mutation ------------------------------------------------------

    def set_exposure(self, i: int, j: int, value: float) -> None:
        if i == j and value != 0.0:
            raise ValueError("diagonal exposures must stay zero")
        if value < 0.0:
            raise ValueError("exposures must be non-negative")
        base = value / self._scale
        delta = base - self._m[i, j]
        self._m[i, j] = base
        self._row[i] += delta
        self._col[j] += delta
        self._tot += delta

    def scale_row(self, i: int, factor: float) -> None:
        """Multiply every loan of bank ``i`` by ``factor`` in [0, 1]."""
        if not 0.0 <= factor <= 1.0:
            raise ValueError(f"row factor must be in [0, 1], got {factor}")
        removed = self._m[i] * (1.0 - factor)
        self._m[i] *= factor
        self._col -= removed
        shrunk = float(removed.sum())
        self._row[i] -= shrunk
        self._tot -= shrunk

    def revalue(self, ratio: float) -> None:
        """Apply the global rate revaluation to every exposure."""
        if ratio <= 0.0:
            raise ValueError(f"revaluation ratio must be positive, got {ratio}")
        self._scale *= ratio

    def zero_bank(self, i: int) -> None:
        """Zero row, column and external books of bank ``i``."""
        gone = float(self._row[i] + self._col[i] - 2.0 * self._m[i, i])
        self._col -= self._m[i]
        self._row -= self._m[:, i]
        self._m[i, :] = 0.0
        self._m[:, i] = 0.0
        self._row[i] = 0.0
        self._col[i] = 0.0
        self._tot -= gone
        self.external_assets[i] = 0.0
        self.external_liabilities[i] = 0.0

    def zero_all_exposures(self) -> None:
        """Wipe the whole interbank market (terminal liquidation)."""
        self._m[:] = 0.0
        self._row[:] = 0.0
        self._col[:] = 0.0
        self._tot = 0.0

    def refresh_cached_sums(self) -> None:
        """Recompute row/column/total caches from the matrix."""
        self._row = self._m.sum(axis=1)
        self._col = self._m.sum(axis=0)
        self._tot = float(self._m.sum())

    def copy(self) -> "MarketState":
        dup = MarketState.__new__(MarketState)
        dup._m = self._m.copy()
        dup._scale = self._scale
        dup._row = self._row.copy()
        dup._col = self._col.copy()
        dup._tot = self._tot
        dup.external_assets = self.external_assets.copy()
        dup.external_liabilities = self.external_liabilities.copy()
        dup.alive = self.alive.copy()
        dup.rate = self.rate
        dup.step = self.step
        dup.initial_total_equity = self.initial_total_equity
        return dup


def equity(state: MarketState, bank: int) -> float:
    """Recompute one bank's equity from the ledger.  Dead banks are 0."""
    if not state.alive[bank]:
        return 0.0
    m = state._m
    return float(
        state.external_assets[bank]
        - state.external_liabilities[bank]
        + state._scale * (m[bank, :].sum() - m[:, bank].sum())
    )


def equity_vector(state: MarketState) -> np.ndarray:
    """Recompute all equities from the ledger (dead banks exactly 0)."""
    m = state._m
    out = (
        state.external_assets
        - state.external_liabilities
        + state._scale * (m.sum(axis=1) - m.sum(axis=0))
    )
    out[~state.alive] = 0.0
    return out


def total_relative_equity(state: MarketState) -> float:
    """Total equity of the surviving banks relative to its initial value."""
    e = equity_vector(state)
    return float(e[state.alive].sum()) / state.initial_total_equity


def remove_bank(state: MarketState, bank: int) -> MarketState:
    """Remove a bank from the system: clear its flag and zero its books.

    Removal itself transfers no equity; any losses to counterparties must be
    booked before calling this.  Removing an already-dead bank is a no-op.
    """
    if not state.alive[bank]:
        return state
    state.alive[bank] = False
    state.zero_bank(bank)
    return state


def verify_equity_identity(
    state: MarketState, tracked: np.ndarray, rtol: float = 1e-9
) -> None:
    """Check the incrementally tracked equities against the ledger.

    Divergence beyond ``rtol`` (relative to total initial equity) means the
    dynamics and the books disagree, which is a hard internal error.
    """
    ledger = equity_vector(state)
    scale = max(state.initial_total_equity, float(np.abs(ledger).max(initial=0.0)))
    err = np.abs(tracked - ledger).max(initial=0.0)
    if err > rtol * scale:
        worst = int(np.abs(tracked - ledger).argmax())
        raise LedgerError(
            f"tracked equity diverged from ledger at bank {worst}: "
            f"tracked={tracked[worst]!r} ledger={ledger[worst]!r} "
            f"(abs err {err:.3e}, tolerance {rtol * scale:.3e})"
        )
