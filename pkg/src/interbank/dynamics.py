"""The simulation engine: shock rounds, cascades, releveraging, market freeze.

One iteration of the outer loop is: pick a target, hit its external assets
with the exogenous shock, let it realign to its pre-shock leverage (selling
external assets and hoarding interbank liquidity), then step the interest
rate and revalue every exposure.  Any insolvency triggers a default cascade
(credit write-offs plus fire sales at a discount set by linear price
impact), followed by a rate jump and a releveraging round of the survivors.
The run ends when total equity falls below the critical fraction of its
initial value and the market freezes.

All randomness comes from named per-realization substreams (network draw,
rate noise, shock targeting, releveraging order), so a run is a pure
function of its inputs and seed.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .ledger import (
    BankRecord,
    MarketState,
    Parameters,
    equity,
    equity_vector,
    remove_bank,
    verify_equity_identity,
)
from .reconstruction import ReconstructionConfig, sample_network

logger = logging.getLogger(__name__)

FIXED_SELECTORS = ("A_max", "A_min", "B_max", "B_min", "K_max", "K_min")


class SimulationError(RuntimeError):
    """A realization cannot proceed (e.g. the fixed shock target is dead)."""


@dataclass(frozen=True)
class ShockPolicy:
    """Chooses which alive bank receives the exogenous shock each round.

    ``fixed_target`` re-resolves its selector over the alive banks every
    round: A ranks by total assets, B by leverage (assets over equity), K by
    the number of bilateral contracts (in- plus out-degree).  An explicit
    integer index is also accepted but fails the run if that bank dies.
    """

    mode: str = "random_each_step"
    selector: str | int = "A_max"

    def __post_init__(self) -> None:
        if self.mode not in ("fixed_target", "random_each_step"):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.mode == "fixed_target":
            if isinstance(self.selector, str) and self.selector not in FIXED_SELECTORS:
                raise ValueError(f"unknown selector {self.selector!r}")
            if isinstance(self.selector, (int, np.integer)) and self.selector < 0:
                raise ValueError("explicit target index must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "ShockPolicy":
        t = text.strip()
        if t == "random":
            return cls(mode="random_each_step")
        if t in FIXED_SELECTORS:
            return cls(mode="fixed_target", selector=t)
        if t.startswith("index:"):
            return cls(mode="fixed_target", selector=int(t.split(":", 1)[1]))
        raise ValueError(
            f"cannot parse policy {text!r}; expected 'random', one of {FIXED_SELECTORS} or 'index:K'"
        )

    def label(self) -> str:
        if self.mode == "random_each_step":
            return "random"
        if isinstance(self.selector, str):
            return self.selector
        return f"index{self.selector}"

    def select(self, state: MarketState, equities: np.ndarray, rng: np.random.Generator) -> int:
        alive = state.alive
        if not alive.any():
            raise SimulationError("no alive banks left to shock")
        if self.mode == "random_each_step":
            candidates = np.flatnonzero(alive)
            return int(candidates[rng.integers(candidates.size)])
        if isinstance(self.selector, (int, np.integer)):
            target = int(self.selector)
            if target >= state.n or not alive[target]:
                raise SimulationError(f"fixed shock target {target} is not an alive bank")
            return target
        kind, extreme = self.selector.split("_")
        if kind == "A":
            metric = state.external_assets + state.row_sums()
        elif kind == "B":
            assets = state.external_assets + state.row_sums()
            metric = np.divide(assets, equities, out=np.zeros_like(assets), where=equities > 0.0)
        else:  # K
            metric = (state.out_degrees() + state.in_degrees()).astype(float)
        if extreme == "max":
            return int(np.where(alive, metric, -np.inf).argmax())
        return int(np.where(alive, metric, np.inf).argmin())


@dataclass
class RateProcess:
    """Interest-rate dynamics: geometric drift plus Gaussian noise.

    ``step_jump`` adds a source term that grows logarithmically in the
    cascade loss relative to the shock size; when the loss does not exceed
    the shock size the source term is floored at zero so a cascade can never
    push the rate below the ordinary drift.  The rate is floored so it stays
    strictly positive under any noise draw.
    """

    rate: float
    alpha: float
    sigma: float
    delta: float
    rng: np.random.Generator
    floor: float = 1e-6

    def step_small(self) -> float:
        eps = float(self.rng.normal(0.0, self.sigma))
        new = (1.0 + self.alpha) * self.rate + eps
        if new < self.floor:
            logger.debug("rate floored at %g (draw gave %g)", self.floor, new)
            new = self.floor
        self.rate = new
        return new

    def step_jump(self, delta_e: float, phi: float) -> float:
        magnitude = abs(delta_e) / phi
        if magnitude > 1.0:
            source = self.alpha * self.delta * math.log(magnitude) / math.log1p(self.alpha)
        else:
            source = 0.0
        eps = float(self.rng.normal(0.0, self.sigma))
        new = (1.0 + self.alpha) * self.rate + source + eps
        if new < self.floor:
            logger.debug("rate floored at %g (draw gave %g)", self.floor, new)
            new = self.floor
        self.rate = new
        return new


def fire_sale_discount(liquidated: float, market_value: float, cap: float = 1e3) -> float:
    """Depricing factor for selling ``liquidated`` out of a market worth
    ``market_value`` under linear price impact.

    Vanishes with the liquidated amount, reaches 1 when half the market is
    sold, and is capped once the whole market (or more) must go: the linear
    model diverges there, which we read as total value destruction.
    """
    if liquidated <= 0.0 or market_value <= 0.0:
        return 0.0
    if liquidated >= market_value:
        logger.debug(
            "fire-sale volume %g >= market value %g: discount capped at %g",
            liquidated,
            market_value,
            cap,
        )
        return cap
    return min(1.0 / (market_value / liquidated - 1.0), cap)


def apply_exogenous_shock(
    state: MarketState, target: int, phi: float, equities: np.ndarray | None = None
) -> float:
    """Destroy up to ``phi`` of the target's external assets.

    Returns the amount actually applied (clamped to the available external
    assets).  A passed-in tracked equity vector is updated in place.
    """
    if phi < 0.0:
        raise ValueError(f"shock size must be >= 0, got {phi}")
    if not state.alive[target]:
        raise ValueError(f"shock target {target} is dead")
    available = state.external_assets[target]
    applied = phi if phi <= available else available
    if applied < phi:
        logger.debug(
            "shock on bank %d clamped from %g to available external assets %g",
            target,
            phi,
            available,
        )
    state.external_assets[target] = available - applied
    if equities is not None:
        equities[target] -= applied
    return applied


def releverage_and_hoard(
    state: MarketState, bank: int, loss: float, leverage: float | None = None
) -> float:
    """Realign a bank to its pre-loss leverage after an equity loss.

    Assets worth ``loss * (leverage - 1)`` are sold, split between external
    assets and interbank loans by their pre-loss balance-sheet shares.  Sale
    proceeds pay down external funding; the interbank part is not rolled
    over (liquidity hoarding), and each borrower replaces the withdrawn
    funding with an external liability of equal value.  Every step here is
    equity-neutral; the cost of hoarding materializes at the next
    revaluation, when withdrawn loans no longer appreciate.

    When ``leverage`` is omitted it is reconstructed by adding the loss back
    to the external book, which is exact for an external-asset shock.
    Returns the total book value sold.
    """
    if loss < 0.0:
        raise ValueError(f"loss must be >= 0, got {loss}")
    if not state.alive[bank]:
        raise ValueError(f"bank {bank} is dead")
    if loss == 0.0:
        return 0.0
    row_now = state.row_sum(bank)
    ext_pre = state.external_assets[bank] + loss
    assets_pre = ext_pre + row_now
    if leverage is None:
        equity_pre = equity(state, bank) + loss
        if equity_pre <= 0.0:
            raise ValueError(f"bank {bank} had non-positive pre-loss equity {equity_pre}")
        leverage = assets_pre / equity_pre
    sale = loss * (leverage - 1.0)
    if sale <= 0.0:
        return 0.0

    share_external = ext_pre / assets_pre
    share_interbank = row_now / assets_pre
    ext_target = sale * share_external
    ext_sold = ext_target
    if ext_sold > state.external_assets[bank]:
        ext_sold = state.external_assets[bank]
        logger.debug(
            "bank %d external sale clamped to %g (needed %g)", bank, ext_sold, ext_target
        )
    state.external_assets[bank] -= ext_sold

    withdrawn_total = 0.0
    if row_now > 0.0 and share_interbank > 0.0:
        ib_target = sale * share_interbank
        withdrawn_total = ib_target
        if withdrawn_total > row_now:
            withdrawn_total = row_now
            logger.debug(
                "bank %d hoarding clamped to full interbank book %g (needed %g)",
                bank,
                row_now,
                ib_target,
            )
        fraction = withdrawn_total / row_now
        withdrawn = state.exposure_matrix()[bank] * fraction
        state.scale_row(bank, 1.0 - fraction)
        # Borrowers substitute the withdrawn funding with external liabilities.
        state.external_liabilities += withdrawn

    # Proceeds pay down the bank's own external funding; if the funding book
    # is smaller than the proceeds, the remainder is held as external assets.
    proceeds = ext_sold + withdrawn_total
    funding = state.external_liabilities[bank]
    if proceeds <= funding:
        state.external_liabilities[bank] = funding - proceeds
    else:
        state.external_liabilities[bank] = 0.0
        state.external_assets[bank] += proceeds - funding
        logger.debug("bank %d sale proceeds %g exceed external funding %g", bank, proceeds, funding)
    return proceeds


@dataclass
class CascadeOutcome:
    """What a default cascade did: who fell, total equity change, discounts."""

    defaulted: list[int] = field(default_factory=list)
    delta_E: float = 0.0
    gamma_series: list[float] = field(default_factory=list)


def propagate_default(
    state: MarketState,
    defaulted: int | list[int],
    params: Parameters,
    equities: np.ndarray | None = None,
) -> CascadeOutcome:
    """Process a default cascade starting from the given insolvent bank(s).

    Defaulters are handled FIFO.  For each defaulter u, every surviving
    counterparty j books a credit loss ``lambda * A[j, u]`` (its claim on u
    written off, net of recovery) and a funding loss ``gamma * rho * A[u, j]``
    (fire-selling external assets at the current discount to replace the
    funding u withdrew).  The discount gamma is recomputed per defaulter
    from the volume to be liquidated and the market value at that moment.
    Counterparties made insolvent join the queue; each defaulter is removed
    only after its losses are booked.
    """
    if equities is None:
        equities = equity_vector(state)
    initial = [defaulted] if isinstance(defaulted, (int, np.integer)) else list(defaulted)
    queue: deque[int] = deque()
    enqueued: set[int] = set()
    for u in initial:
        u = int(u)
        if not state.alive[u]:
            raise ValueError(f"bank {u} is already dead")
        if equities[u] > 0.0:
            raise ValueError(f"bank {u} is solvent (equity {equities[u]!r}), cannot default")
        queue.append(u)
        enqueued.add(u)

    outcome = CascadeOutcome()
    lam, rho = params.lambda_, params.rho
    while queue:
        u = queue.popleft()
        if not state.alive[u]:
            continue
        to_liquidate = rho * state.row_sum(u)
        gamma = fire_sale_discount(to_liquidate, state.total_exposure(), params.gamma_cap)
        outcome.gamma_series.append(gamma)
        ext = state.external_assets
        liab = state.external_liabilities
        for j in range(state.n):
            if j == u or not state.alive[j]:
                continue
            change = 0.0
            claim = state.exposure(j, u)
            if claim > 0.0:
                state.set_exposure(j, u, 0.0)
                if lam < 1.0:
                    ext[j] += (1.0 - lam) * claim
                change -= lam * claim
            funding = state.exposure(u, j)
            if funding > 0.0:
                state.set_exposure(u, j, 0.0)
                replaced = (1.0 - rho) * funding
                sale = (1.0 + gamma) * rho * funding
                if sale <= ext[j]:
                    ext[j] -= sale
                    liab[j] += replaced
                    change += funding - sale - replaced
                else:
                    # Not enough external assets: sell everything, the cash
                    # shortfall stays on the book as external debt.
                    held = ext[j]
                    cash = held / (1.0 + gamma)
                    unfunded = rho * funding - cash
                    change += funding - held - replaced - unfunded
                    liab[j] += replaced + unfunded
                    ext[j] = 0.0
                    logger.debug(
                        "bank %d fire sale clamped: needed book value %g, had %g", j, sale, held
                    )
            if change != 0.0:
                equities[j] += change
                outcome.delta_E += change
        remove_bank(state, u)
        equities[u] = 0.0
        outcome.defaulted.append(u)
        for j in range(state.n):
            if state.alive[j] and equities[j] <= 0.0 and j not in enqueued:
                queue.append(j)
                enqueued.add(j)
    return outcome


def post_cascade_releverage(
    state: MarketState,
    pre_equities: np.ndarray,
    pre_assets: np.ndarray,
    params: Parameters,
    rate_process: RateProcess,
    order_rng: np.random.Generator,
    delta_e: float,
    equities: np.ndarray | None = None,
) -> None:
    """Endogenous-shock round after a cascade closes.

    Each survivor that lost equity realigns to its pre-cascade leverage, in
    uniformly random order, with the cascade loss playing the role of the
    shock.  The rate then jumps (driven by the total cascade loss) and the
    market revalues; as in the exogenous round, assets hoarded here do not
    appreciate.  Any default this triggers is the caller's to propagate.
    """
    if equities is None:
        equities = equity_vector(state)
    losses = pre_equities - equities
    candidates = np.flatnonzero(state.alive & (losses > 0.0))
    if candidates.size:
        for s in candidates[order_rng.permutation(candidates.size)]:
            s = int(s)
            if pre_equities[s] <= 0.0:
                continue
            releverage_and_hoard(
                state, s, float(losses[s]), leverage=float(pre_assets[s] / pre_equities[s])
            )
    old = state.rate
    new = rate_process.step_jump(delta_e, params.phi)
    _revalue(state, new / old, equities)
    state.rate = new


def _revalue(state: MarketState, ratio: float, equities: np.ndarray) -> None:
    equities += (ratio - 1.0) * state.net_interbank()
    state.revalue(ratio)


@dataclass
class FreezeOutcome:
    """Terminal liquidation: residual debts, the freeze discount, final books."""

    chi: np.ndarray
    gamma_c: float
    final_equities: np.ndarray
    degenerate: bool = False


def resolve_freeze(
    state: MarketState,
    params: Parameters,
    gamma_tc: float,
    equities: np.ndarray | None = None,
) -> FreezeOutcome:
    """Liquidate the interbank market unconditionally.

    All positions net out; a bank whose liquidation proceeds cannot cover
    its interbank debt (chi > 0) fire-sells external assets at the freeze
    discount, which rescales the latest cascade discount by the initial
    total equity over the current wealth of potential buyers (their equity
    net of what they themselves must fire-sell).  Banks wiped out by the
    sale are removed with equity floored at zero.
    """
    if equities is None:
        equities = equity_vector(state)
    alive = state.alive
    chi_raw = state.col_sums() - state.row_sums()
    chi = np.where(alive, np.maximum(chi_raw, 0.0), 0.0)
    buyer_wealth = float((equities[alive] - chi[alive]).sum())
    if buyer_wealth > 0.0:
        gamma_c = gamma_tc * (state.initial_total_equity / buyer_wealth)
        degenerate = False
        loss = gamma_c * chi
    else:
        gamma_c = params.gamma_cap
        degenerate = True
        loss = np.minimum(np.maximum(equities, 0.0), (1.0 + params.gamma_cap) * chi)
        logger.debug("degenerate freeze: non-positive buyer wealth, applying wipe-out depricing")
    final = np.where(alive, equities - loss, 0.0)
    wiped = alive & (chi > 0.0) & (final <= 0.0)
    final = np.maximum(final, 0.0)

    state.zero_all_exposures()
    ext, liab = state.external_assets, state.external_liabilities
    settled = np.where(
        alive, ext + np.maximum(-chi_raw, 0.0) - (1.0 + gamma_c) * chi, 0.0
    )
    ext[:] = np.maximum(settled, final)  # clamp corners keep the books consistent
    liab[:] = ext - final
    for w in np.flatnonzero(wiped):
        state.alive[w] = False
        ext[w] = 0.0
        liab[w] = 0.0
    equities[:] = final
    return FreezeOutcome(chi=chi, gamma_c=float(gamma_c), final_equities=final.copy(), degenerate=degenerate)


def check_and_resolve_freeze(
    state: MarketState,
    params: Parameters,
    last_gamma: float | None = None,
    equities: np.ndarray | None = None,
) -> FreezeOutcome | None:
    """Freeze the market iff total relative equity is strictly below eps_c.

    The freeze discount builds on the most recent cascade's depricing
    factor; if no cascade has occurred yet, the factor is computed as if the
    whole residual interbank market had to be liquidated at once.
    """
    if equities is None:
        equities = equity_vector(state)
    rel = float(equities[state.alive].sum()) / state.initial_total_equity
    if rel >= params.eps_c:
        return None
    if last_gamma is None:
        market = state.total_exposure()
        last_gamma = fire_sale_discount(params.rho * market, market, params.gamma_cap)
    return resolve_freeze(state, params, last_gamma, equities)


def half_life(rel_equity: "np.ndarray | list[float]") -> int:
    """First iteration at which total relative equity is at most one half.

    Falls back to the last recorded iteration when the series never reaches
    one half before the run ends.
    """
    series = np.asarray(rel_equity, dtype=float)
    if series.size == 0:
        raise ValueError("empty relative-equity series")
    below = np.flatnonzero(series <= 0.5)
    return int(below[0]) if below.size else int(series.size - 1)


@dataclass
class RunRecord:
    """One realization: per-iteration series plus terminal metrics."""

    seed: tuple[int, ...]
    n_banks: int
    t_c: int
    t_half: int
    t_half_reached: bool
    final_rel_equity: float
    converged: bool
    default_order: list[int]
    rate: np.ndarray
    rel_equity: np.ndarray
    defaulted_frac: np.ndarray
    gamma: np.ndarray

    def series_rows(self):
        """Yield (t, rate, rel_equity, defaulted_frac, gamma) tuples."""
        for t in range(len(self.rate)):
            yield (
                t,
                float(self.rate[t]),
                float(self.rel_equity[t]),
                float(self.defaulted_frac[t]),
                float(self.gamma[t]),
            )


def run_realization(
    records: list[BankRecord],
    params: Parameters,
    policy: ShockPolicy,
    seed: "int | tuple[int, ...] | list[int]",
    *,
    network: MarketState | None = None,
    calibrated_z: float | None = None,
) -> RunRecord:
    """Run one realization to the market freeze (or the iteration cap).

    All currency quantities are normalized by the shock size phi on entry,
    which makes every decision in the run depend only on currency ratios:
    rescaling all inputs and phi by a common factor reproduces the run
    exactly.  A pre-sampled ``network`` (already phi-normalized, as built by
    the ensemble layer) skips the per-realization reconstruction.
    """
    seed_tuple = (seed,) if isinstance(seed, (int, np.integer)) else tuple(int(s) for s in seed)
    root = np.random.SeedSequence(list(seed_tuple))
    net_ss, rate_ss, shock_ss, order_ss = root.spawn(4)

    scaled = [r.in_units_of(params.phi) for r in records]
    p = params.replace(phi=1.0)
    if network is not None:
        if network.n != len(records):
            raise ValueError("pre-sampled network does not match the record count")
        state = network.copy()
    else:
        config = ReconstructionConfig(density=p.d, seed=net_ss)
        state = sample_network(scaled, config, rate=p.r0, z=calibrated_z)

    rate_process = RateProcess(
        rate=state.rate,
        alpha=p.alpha,
        sigma=p.sigma,
        delta=p.delta,
        rng=np.random.default_rng(rate_ss),
        floor=p.rate_floor,
    )
    shock_rng = np.random.default_rng(shock_ss)
    order_rng = np.random.default_rng(order_ss)

    equities = equity_vector(state)
    e0 = state.initial_total_equity
    rate_series = [state.rate]
    rel_series = [1.0]
    frac_series = [0.0]
    gamma_series = [0.0]
    default_order: list[int] = []
    last_gamma: float | None = None
    freeze: FreezeOutcome | None = None
    n = state.n
    t = 0

    for t in range(1, p.max_iterations + 1):
        state.step = t
        target = policy.select(state, equities, shock_rng)
        applied = apply_exogenous_shock(state, target, p.phi, equities)
        freeze = check_and_resolve_freeze(state, p, last_gamma, equities)
        if freeze is None:
            if equities[target] > 0.0 and applied > 0.0:
                releverage_and_hoard(state, target, applied)
            old = state.rate
            new = rate_process.step_small()
            _revalue(state, new / old, equities)
            state.rate = new
            freeze = check_and_resolve_freeze(state, p, last_gamma, equities)
        while freeze is None:
            insolvent = np.flatnonzero(state.alive & (equities <= 0.0))
            if insolvent.size == 0:
                break
            pre_equities = equities.copy()
            pre_assets = state.external_assets + state.row_sums()
            cascade = propagate_default(state, list(insolvent), p, equities)
            default_order.extend(cascade.defaulted)
            if cascade.gamma_series:
                last_gamma = cascade.gamma_series[-1]
            freeze = check_and_resolve_freeze(state, p, last_gamma, equities)
            if freeze is None:
                post_cascade_releverage(
                    state, pre_equities, pre_assets, p, rate_process, order_rng,
                    cascade.delta_E, equities,
                )
                freeze = check_and_resolve_freeze(state, p, last_gamma, equities)

        rate_series.append(state.rate)
        frac_series.append(1.0 - float(state.alive.sum()) / n)
        if freeze is not None:
            rel_series.append(float(freeze.final_equities.sum()) / e0)
            gamma_series.append(freeze.gamma_c)
            break
        rel_series.append(float(equities[state.alive].sum()) / e0)
        gamma_series.append(last_gamma if last_gamma is not None else 0.0)
        if t % p.ledger_check_interval == 0:
            verify_equity_identity(state, equities)

    converged = freeze is not None
    if not converged:
        logger.warning("realization %s hit the iteration cap of %d", seed_tuple, p.max_iterations)
    rel = np.array(rel_series)
    t_half = half_life(rel)
    return RunRecord(
        seed=seed_tuple,
        n_banks=n,
        t_c=t,
        t_half=t_half,
        t_half_reached=bool(rel[t_half] <= 0.5),
        final_rel_equity=float(rel[-1]),
        converged=converged,
        default_order=default_order,
        rate=np.array(rate_series),
        rel_equity=rel,
        defaulted_frac=np.array(frac_series),
        gamma=np.array(gamma_series),
    )
