"""Load aggregate balance sheets from delimited files and generate synthetic ones.

File format: UTF-8 text with header
``id,external_assets,external_liabilities,interbank_assets,interbank_liabilities``,
one row per bank, decimal point, no thousands separators.  Floats are written
with ``repr`` so a save/load round trip is bit-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ledger import BankRecord

logger = logging.getLogger(__name__)

HEADER = ["id", "external_assets", "external_liabilities", "interbank_assets", "interbank_liabilities"]

# Loaded marginals may disagree slightly (aggregates from different report
# sections); beyond this relative mismatch the market cannot be treated as
# closed and both sides are rescaled to their geometric mean.
MARGINAL_MISMATCH_TOLERANCE = 1e-3

# Smallest total balance sheet produced by the synthetic generator, in the
# same currency unit as the shock size phi (defaults assume dollars).
SYNTHETIC_MIN_ASSETS = 5e9

# No bank may lend or borrow more than the rest of the market can absorb
# (loans to oneself are not a thing), or no bilateral matrix can carry the
# marginals.  Cap one bank's share of the interbank market below that bound
# so reconstruction always has slack.
FEASIBILITY_CAP = 0.8


class InputError(ValueError):
    """Malformed or economically invalid balance-sheet input."""


def _parse_currency(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise InputError(f"row {row}, column {column!r}: cannot parse {raw!r} as a number") from None
    if not np.isfinite(value):
        raise InputError(f"row {row}, column {column!r}: value must be finite, got {raw!r}")
    if value < 0.0:
        raise InputError(f"row {row}, column {column!r}: value must be >= 0, got {raw!r}")
    return value


def load_balance_sheets(path: str | Path, *, rate: float = 1.0) -> list[BankRecord]:
    """Read and validate a balance-sheet file.

    Every bank must be solvent at the given initial rate (interbank marginals
    taken at face value).  Marginal totals that disagree by more than 0.1%
    are symmetrically rescaled to close the market, with a logged warning.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if [h.strip() for h in header] != HEADER:
            raise InputError(f"{path}: bad header {header!r}, expected {HEADER!r}")
        records: list[BankRecord] = []
        seen: set[str] = set()
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise InputError(f"row {row_no}: expected 5 fields, got {len(row)}")
            bank_id = row[0].strip()
            if not bank_id:
                raise InputError(f"row {row_no}: empty bank id")
            if bank_id in seen:
                raise InputError(f"row {row_no}: duplicate bank id {bank_id!r}")
            seen.add(bank_id)
            values = [_parse_currency(raw, row_no, col) for raw, col in zip(row[1:], HEADER[1:])]
            records.append(BankRecord(bank_id, *values))
    if len(records) < 2:
        raise InputError(f"{path}: need at least 2 banks, got {len(records)}")
    records = _close_market(records)
    validate_solvency(records, rate=rate)
    return records


def save_balance_sheets(records: list[BankRecord], path: str | Path) -> None:
    path = Path(path)
    path.write_text(serialize_records(records), encoding="utf-8")


def serialize_records(records: list[BankRecord]) -> str:
    """Canonical full-precision text form (also used for fingerprinting)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for rec in records:
        writer.writerow(
            [
                rec.id,
                repr(rec.external_assets),
                repr(rec.external_liabilities),
                repr(rec.interbank_assets_total),
                repr(rec.interbank_liabilities_total),
            ]
        )
    return buf.getvalue()


def fingerprint_records(records: list[BankRecord]) -> str:
    digest = hashlib.sha256(serialize_records(records).encode("utf-8")).hexdigest()
    return f"sha256:{digest}"


def validate_solvency(records: list[BankRecord], *, rate: float = 1.0) -> None:
    for rec in records:
        rec.validate()
        if rec.equity(rate) <= 0.0:
            raise InputError(
                f"bank {rec.id!r} is insolvent at the initial rate: equity {rec.equity(rate)!r}"
            )


def _close_market(records: list[BankRecord]) -> list[BankRecord]:
    """Rescale interbank marginals symmetrically when they fail to balance."""
    assets = sum(r.interbank_assets_total for r in records)
    liabs = sum(r.interbank_liabilities_total for r in records)
    if assets == 0.0 and liabs == 0.0:
        return records
    if assets == 0.0 or liabs == 0.0:
        raise InputError("interbank marginals are one-sided: market cannot be closed")
    mismatch = abs(assets - liabs) / max(assets, liabs)
    if mismatch <= MARGINAL_MISMATCH_TOLERANCE:
        return records
    target = np.sqrt(assets * liabs)
    fa, fl = target / assets, target / liabs
    logger.warning(
        "interbank marginals mismatch by %.3f%%; rescaling assets by %.6f and liabilities by %.6f",
        100.0 * mismatch,
        fa,
        fl,
    )
    return [
        BankRecord(
            id=r.id,
            external_assets=r.external_assets,
            external_liabilities=r.external_liabilities,
            interbank_assets_total=r.interbank_assets_total * fa,
            interbank_liabilities_total=r.interbank_liabilities_total * fl,
        )
        for r in records
    ]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic bank population.

    Total assets follow a Pareto law with the given tail exponent, a fixed
    share of assets sits in the interbank market, and each bank's target
    leverage (assets over equity) is drawn uniformly from the band.
    """

    n_banks: int = 183
    asset_tail_exponent: float = 2.0
    interbank_share: float = 0.15
    leverage_range: tuple[float, float] = (5.0, 25.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_banks < 2:
            raise InputError(f"need at least 2 banks, got {self.n_banks}")
        if self.asset_tail_exponent <= 0.0:
            raise InputError("asset_tail_exponent must be positive")
        if not 0.0 < self.interbank_share < 1.0:
            raise InputError("interbank_share must be in (0, 1)")
        lo, hi = self.leverage_range
        if lo <= 1.0 or hi < lo:
            raise InputError(f"leverage_range must satisfy 1 < min <= max, got {self.leverage_range}")


def generate_synthetic(spec: SyntheticSpec) -> list[BankRecord]:
    """Generate a solvent, closed-market synthetic population.

    Deterministic for a given seed.  Interbank asset and liability marginals
    are forced to balance exactly (to the float) by a proportional rescaling
    of the liability side.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_banks
    # Classical Pareto with minimum SYNTHETIC_MIN_ASSETS.
    assets = SYNTHETIC_MIN_ASSETS * (1.0 + rng.pareto(spec.asset_tail_exponent, n))
    leverage = rng.uniform(spec.leverage_range[0], spec.leverage_range[1], n)
    equity = assets / leverage
    liabilities = assets - equity

    ib_assets = spec.interbank_share * assets
    ib_liabs = spec.interbank_share * liabilities
    scale = ib_assets.sum() / ib_liabs.sum()
    if scale * spec.interbank_share >= 1.0:
        raise InputError(
            "infeasible spec: interbank share and leverage band leave no room for external liabilities"
        )
    ib_liabs = ib_liabs * scale

    if n == 2:
        # A two-bank closed market forces mirrored marginals.
        ib_liabs = ib_assets[::-1].copy()
    else:
        for _ in range(200):
            total = ib_assets.sum()
            load = ib_assets + ib_liabs
            hogs = load > FEASIBILITY_CAP * total
            if not hogs.any():
                break
            shrink = (FEASIBILITY_CAP * total) / load
            ib_assets[hogs] *= shrink[hogs]
            ib_liabs[hogs] *= shrink[hogs]
            ib_liabs *= ib_assets.sum() / ib_liabs.sum()
        else:
            raise InputError("infeasible spec: could not fit the largest bank into the market")
    # np.sum is pairwise, so one correction may leave a last-ulp residue; iterate.
    for _ in range(10):
        residue = ib_assets.sum() - ib_liabs.sum()
        if residue == 0.0:
            break
        ib_liabs[-1] += residue
    external_assets = assets - ib_assets
    external_liabilities = liabilities - ib_liabs
    if np.any(external_liabilities < 0.0) or np.any(ib_liabs < 0.0):
        raise InputError("infeasible spec: derived external liabilities are negative")

    width = len(str(n - 1))
    records = [
        BankRecord(
            id=f"bank{idx:0{width}d}",
            external_assets=float(external_assets[idx]),
            external_liabilities=float(external_liabilities[idx]),
            interbank_assets_total=float(ib_assets[idx]),
            interbank_liabilities_total=float(ib_liabs[idx]),
        )
        for idx in range(n)
    ]
    validate_solvency(records)
    return records
