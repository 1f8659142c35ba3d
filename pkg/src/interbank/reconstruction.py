"""Sample bilateral exposure matrices consistent with aggregate marginals.

Topology comes from a fitness model: a directed link i -> j exists with
probability ``p_ij = z * x_i * y_j / (1 + z * x_i * y_j)`` where the lender
fitness ``x_i`` is bank i's total interbank assets and the borrower fitness
``y_j`` is bank j's total interbank liabilities.  The scalar ``z`` is
calibrated by bisection so the expected link density hits the target.

Weights follow a degree-corrected gravity rule (a realized link i -> j gets
``x_i * y_j / (W * p_ij)`` with ``W`` the total lending volume), after which
an iterative proportional fitting pass aligns realized row and column sums
to the marginals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ledger import BankRecord, MarketState

logger = logging.getLogger(__name__)

IPF_MAX_ITERS = 100
IPF_REPAIR_ITERS = 20_000   # marginals near the feasibility boundary converge slowly
IPF_FINAL_ITERS = 100_000   # last-resort fit on a saturated support
IPF_TOLERANCE = 1e-6
MARGINAL_TOLERANCE = 1e-2   # realized row/col sums must sit this close to targets
MAX_RESAMPLE_PASSES = 1000  # retries for banks left isolated by the draw


class CalibrationError(RuntimeError):
    """Target density unreachable or sampled support cannot carry the marginals."""


@dataclass(frozen=True)
class ReconstructionConfig:
    density: float
    seed: int | np.random.SeedSequence | None = None
    max_calibration_iters: int = 200
    density_tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must be in (0, 1], got {self.density}")
        if self.density_tolerance <= 0.0:
            raise ValueError("density_tolerance must be positive")


def _fitnesses(records: list[BankRecord]) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([r.interbank_assets_total for r in records], dtype=float)
    y = np.array([r.interbank_liabilities_total for r in records], dtype=float)
    return x, y


def _link_probabilities(z: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Off-diagonal connection probabilities for a given z (z = inf saturates)."""
    prod = np.outer(x, y)
    if math.isinf(z):
        p = (prod > 0.0).astype(float)
    else:
        zxy = z * prod
        p = zxy / (1.0 + zxy)
    np.fill_diagonal(p, 0.0)
    return p


def expected_density(z: float, x: np.ndarray, y: np.ndarray) -> float:
    """Mean off-diagonal link probability under the fitness model."""
    n = len(x)
    if n < 2:
        return 0.0
    return float(_link_probabilities(z, x, y).sum()) / (n * (n - 1))


def calibrate_z(
    records: list[BankRecord],
    density: float,
    *,
    tolerance: float = 1e-9,
    max_iters: int = 200,
) -> float:
    """Find z > 0 whose expected density matches the target.

    Returns ``inf`` when the target equals the density of the admissible
    support (the z -> inf limit, e.g. a forced complete graph at d = 1).
    """
    x, y = _fitnesses(records)
    n = len(x)
    if n < 2:
        raise CalibrationError("need at least 2 banks to calibrate")
    prod = np.outer(x, y)
    np.fill_diagonal(prod, 0.0)
    support = float((prod > 0.0).sum()) / (n * (n - 1))
    if support == 0.0:
        raise CalibrationError("no pair of banks has a positive fitness product")
    if density > support:
        raise CalibrationError(
            f"target density {density} exceeds attainable maximum {support:.6f}"
        )
    if density >= support * (1.0 - 1e-12):
        return math.inf

    # Bisection on a normalized z keeps the bracket search unit-free.
    xn, yn = x / x.sum(), y / y.sum()
    lo, hi = 0.0, 1.0
    for _ in range(200):
        if expected_density(hi, xn, yn) >= density:
            break
        lo, hi = hi, hi * 8.0
    else:
        raise CalibrationError(f"could not bracket target density {density}")
    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        if expected_density(mid, xn, yn) < density:
            lo = mid
        else:
            hi = mid
        if abs(expected_density(hi, xn, yn) - density) <= tolerance:
            break
    z_norm = hi
    return z_norm / (x.sum() * y.sum())


def sample_network(
    records: list[BankRecord],
    config: ReconstructionConfig,
    *,
    rate: float = 1.0,
    z: float | None = None,
) -> MarketState:
    """Draw one exposure matrix and wrap it in a fresh MarketState.

    Deterministic given (records, config.seed).  Exposures are stored at
    current value, i.e. face weights times the initial rate.
    """
    x, y = _fitnesses(records)
    n = len(records)
    external_assets = np.array([r.external_assets for r in records])
    external_liabilities = np.array([r.external_liabilities for r in records])

    if n < 2 or (x.sum() == 0.0 and y.sum() == 0.0):
        # Degenerate but valid closed market with no interbank positions.
        return MarketState(
            np.zeros((n, n)), external_assets, external_liabilities, rate, copy=False
        )

    if z is None:
        z = calibrate_z(
            records,
            config.density,
            tolerance=config.density_tolerance,
            max_iters=config.max_calibration_iters,
        )
    p = _link_probabilities(z, x, y)
    rng = np.random.default_rng(config.seed)
    adjacency = rng.random((n, n)) < p
    _fix_isolated(adjacency, p, x, y, rng)

    w_total = x.sum()
    weights = np.zeros((n, n))
    mask = adjacency & (p > 0.0)
    weights[mask] = np.outer(x, y)[mask] / (w_total * p[mask])
    weights = _proportional_fit(weights, x, y)
    weights = _augment_until_feasible(weights, x, y)
    _assign_forced_singletons(weights, x)
    _check_marginals(weights, x, y)
    if rate != 1.0:
        weights = weights * rate
    return MarketState(weights, external_assets, external_liabilities, rate, copy=False)


def _fix_isolated(
    adjacency: np.ndarray, p: np.ndarray, x: np.ndarray, y: np.ndarray, rng: np.random.Generator
) -> None:
    """Redraw rows/columns of banks with positive marginals but no links.

    Redrawing a column can orphan a row again, so alternate until stable.
    """
    n = adjacency.shape[0]
    for _ in range(MAX_RESAMPLE_PASSES):
        stable = True
        for i in range(n):
            if x[i] > 0.0 and not adjacency[i].any():
                stable = False
                if not (p[i] > 0.0).any():
                    raise CalibrationError(f"bank {i} has lending marginal but no admissible borrower")
                for _ in range(MAX_RESAMPLE_PASSES):
                    adjacency[i] = rng.random(n) < p[i]
                    if adjacency[i].any():
                        break
                else:
                    raise CalibrationError(f"could not draw any borrower for bank {i}")
        for j in range(n):
            if y[j] > 0.0 and not adjacency[:, j].any():
                stable = False
                if not (p[:, j] > 0.0).any():
                    raise CalibrationError(f"bank {j} has borrowing marginal but no admissible lender")
                for _ in range(MAX_RESAMPLE_PASSES):
                    adjacency[:, j] = rng.random(n) < p[:, j]
                    if adjacency[:, j].any():
                        break
                else:
                    raise CalibrationError(f"could not draw any lender for bank {j}")
        if stable:
            return
    raise CalibrationError("isolated-bank repair did not stabilize")


def _proportional_fit(
    weights: np.ndarray, x: np.ndarray, y: np.ndarray, max_iters: int = IPF_MAX_ITERS
) -> np.ndarray:
    """Alternately rescale rows and columns toward the target marginals."""
    m = weights
    for _ in range(max_iters):
        rows = m.sum(axis=1)
        r_fac = np.where(rows > 0.0, np.divide(x, rows, out=np.ones_like(x), where=rows > 0.0), 1.0)
        m = m * r_fac[:, None]
        cols = m.sum(axis=0)
        c_fac = np.where(cols > 0.0, np.divide(y, cols, out=np.ones_like(y), where=cols > 0.0), 1.0)
        m = m * c_fac[None, :]
        drift = max(np.abs(r_fac - 1.0).max(initial=0.0), np.abs(c_fac - 1.0).max(initial=0.0))
        if drift < IPF_TOLERANCE:
            break
    return m


def _worst_misfit(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    rows, cols = weights.sum(axis=1), weights.sum(axis=0)
    pos_x, pos_y = x > 0.0, y > 0.0
    worst = 0.0
    if pos_x.any():
        worst = float((np.abs(rows[pos_x] - x[pos_x]) / x[pos_x]).max())
    if pos_y.any():
        worst = max(worst, float((np.abs(cols[pos_y] - y[pos_y]) / y[pos_y]).max()))
    return worst


def _fit_until_stall(
    weights: np.ndarray, x: np.ndarray, y: np.ndarray, budget: int
) -> tuple[np.ndarray, bool]:
    """Run proportional-fitting sweeps until the marginals land well inside
    the delivery tolerance, the misfit stops improving (an infeasible
    support cycles at a fixpoint), or the budget runs out.

    Returns the fitted matrix and whether it met the tolerance.
    """
    window = 50
    last = _worst_misfit(weights, x, y)
    if last <= 0.25 * MARGINAL_TOLERANCE:
        return weights, True
    for _ in range(max(1, budget // window)):
        weights = _proportional_fit(weights, x, y, max_iters=window)
        worst = _worst_misfit(weights, x, y)
        if worst <= 0.25 * MARGINAL_TOLERANCE:
            return weights, True
        if worst > 0.999 * last:
            return weights, False  # stalled: fixpoint of an infeasible support
        last = worst
    return weights, _worst_misfit(weights, x, y) <= MARGINAL_TOLERANCE


def _marginal_misfits(
    weights: np.ndarray, x: np.ndarray, y: np.ndarray, slack: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Indices of banks whose row/column sums miss their target by > tolerance."""
    tol = slack * MARGINAL_TOLERANCE
    rows, cols = weights.sum(axis=1), weights.sum(axis=0)
    bad_rows = np.flatnonzero((x > 0.0) & (np.abs(rows - x) > tol * x))
    bad_cols = np.flatnonzero((y > 0.0) & (np.abs(cols - y) > tol * y))
    return bad_rows, bad_cols


def _augment_until_feasible(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Add links until proportional fitting can carry the marginals.

    A sparse draw may leave no feasible weighting.  A bank whose row falls
    short of its marginal needs another borrower; a bank whose row
    overshoots is the bottleneck supplier of its borrowers, so those columns
    need an alternative lender.  Each repair round adds one admissible link
    per misfit bank (largest fitness product first) and refits.  Support
    grows monotonically toward the complete graph, which is feasible for any
    closed market whose banks respect the counterparty-capacity bound, so
    the loop terminates; on dense targets it never triggers.
    """
    n = weights.shape[0]
    prod = np.outer(x, y)
    np.fill_diagonal(prod, 0.0)
    seed_weight = prod / max(x.sum(), 1.0)

    def add_supplier(j: int) -> int:
        candidates = np.where((weights[:, j] == 0.0) & (prod[:, j] > 0.0), prod[:, j], -np.inf)
        i = int(candidates.argmax())
        if candidates[i] > 0.0:
            weights[i, j] = seed_weight[i, j]
            return 1
        return 0

    def add_borrower(i: int) -> int:
        candidates = np.where((weights[i] == 0.0) & (prod[i] > 0.0), prod[i], -np.inf)
        j = int(candidates.argmax())
        if candidates[j] > 0.0:
            weights[i, j] = seed_weight[i, j]
            return 1
        return 0

    bad_rows, bad_cols = _marginal_misfits(weights, x, y)
    if bad_rows.size == 0 and bad_cols.size == 0:
        return weights
    # The support may be feasible but slow to converge; try patience first.
    weights, fitted = _fit_until_stall(weights, x, y, IPF_REPAIR_ITERS)
    if fitted:
        return weights
    logger.debug("sampled support infeasible; adding links to carry the marginals")
    for _ in range(3 * n + 20):
        bad_rows, bad_cols = _marginal_misfits(weights, x, y)
        if bad_rows.size == 0 and bad_cols.size == 0:
            return weights
        added = 0
        rows, cols = weights.sum(axis=1), weights.sum(axis=0)
        for i in bad_rows:
            if rows[i] < x[i]:
                added += add_borrower(i)
            else:
                # Relieve the heaviest column this bank is forced to fill.
                for j in np.argsort(-weights[i], kind="stable"):
                    if weights[i, j] <= 0.0:
                        break
                    if add_supplier(int(j)):
                        added += 1
                        break
        for j in bad_cols:
            if cols[j] < y[j]:
                added += add_supplier(int(j))
            else:
                for i in np.argsort(-weights[:, j], kind="stable"):
                    if weights[i, j] <= 0.0:
                        break
                    if add_borrower(int(i)):
                        added += 1
                        break
        if added == 0:
            # Support saturated: it is feasible unless a bank breaks the
            # counterparty-capacity bound, so spend one long unconditional
            # fit, then let the final check decide.
            weights = _proportional_fit(weights, x, y, max_iters=IPF_FINAL_ITERS)
            break
        weights, fitted = _fit_until_stall(weights, x, y, IPF_REPAIR_ITERS)
        if fitted:
            return weights
    return weights


def _assign_forced_singletons(weights: np.ndarray, x: np.ndarray) -> None:
    """Pin entries that are alone in both their row and their column.

    Such an entry must carry the whole row marginal, and in a closed market
    the matching column marginal equals it; direct assignment makes the
    forced two-bank complete graph exact to the float.
    """
    support = weights > 0.0
    row_counts = support.sum(axis=1)
    col_counts = support.sum(axis=0)
    for i in np.flatnonzero((row_counts == 1) & (x > 0.0)):
        j = int(support[i].argmax())
        if col_counts[j] == 1:
            weights[i, j] = x[i]


def _check_marginals(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> None:
    rows, cols = weights.sum(axis=1), weights.sum(axis=0)
    for name, realized, target in (("row", rows, x), ("column", cols, y)):
        positive = target > 0.0
        rel = np.abs(realized[positive] - target[positive]) / target[positive]
        if rel.size and rel.max() > MARGINAL_TOLERANCE:
            worst = int(np.argmax(rel))
            raise CalibrationError(
                f"{name} marginal off by {rel.max():.2%} (worst bank index {worst}); "
                "sampled support too sparse for the requested marginals"
            )


def dump_matrix(state: MarketState, path: str | Path) -> None:
    """Write the current exposure matrix as dense delimited text.

    First line is the dimension N, then N comma-separated rows in row-major
    order, full precision.
    """
    m = state.exposure_matrix()
    lines = [str(m.shape[0])]
    lines.extend(",".join(repr(float(v)) for v in row) for row in m)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_matrix(path: str | Path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    n = int(text[0])
    if len(text) != n + 1:
        raise ValueError(f"matrix dump declares {n} rows but has {len(text) - 1}")
    return np.array([[float(v) for v in line.split(",")] for line in text[1:]], dtype=float)
