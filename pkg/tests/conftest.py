"""Shared fixtures and independent oracles for the test suite.

The oracles here recompute expected outcomes from first principles (plain
array arithmetic on the pre-round books) and must stay independent of the
engine's code paths.
"""

from __future__ import annotations

import numpy as np
import pytest

from interbank import MarketState


def make_state(matrix, ext_assets, ext_liabs, rate=1.0) -> MarketState:
    return MarketState(
        np.asarray(matrix, dtype=float),
        np.asarray(ext_assets, dtype=float),
        np.asarray(ext_liabs, dtype=float),
        rate=rate,
    )


def one_round_oracle(ext_assets, ext_liabs, matrix, rate, alpha, eps, target, phi):
    """Closed-form equities after one full exogenous-shock round.

    The shocked bank loses phi, realigns to its pre-shock leverage splitting
    sales by balance-sheet shares, its borrowers substitute the withdrawn
    funding externally, and everyone revalues at the stepped rate.  Distinct
    closed forms apply to the target, the target's borrowers, and bystanders.
    """
    m = np.asarray(matrix, dtype=float)
    ext_assets = np.asarray(ext_assets, dtype=float)
    ext_liabs = np.asarray(ext_liabs, dtype=float)
    row = m.sum(axis=1)
    col = m.sum(axis=0)
    equity0 = ext_assets - ext_liabs + row - col
    assets0 = ext_assets + row
    lev = assets0[target] / equity0[target]
    factor = alpha + eps / rate
    net = row - col
    sale_interbank = phi * (lev - 1.0) * (row[target] / assets0[target])

    out = equity0 + factor * net
    borrowers = m[target] > 0.0
    out[borrowers] = equity0[borrowers] + factor * (
        net[borrowers] + phi * (lev - 1.0) * m[target][borrowers] / assets0[target]
    )
    out[target] = equity0[target] - phi + factor * (net[target] - sale_interbank)
    return out


def random_instance(rng: np.random.Generator, n: int | None = None):
    """A random small solvent market plus a feasible shock for oracle tests.

    Sized so the shock neither defaults the target nor triggers any clamp:
    the closed forms assume the realignment can be executed in full.
    """
    while True:
        size = int(n if n is not None else rng.integers(2, 7))
        m = rng.uniform(0.0, 3.0, (size, size))
        m[rng.random((size, size)) > 0.7] = 0.0
        np.fill_diagonal(m, 0.0)
        ext_assets = rng.uniform(5.0, 20.0, size)
        ext_liabs = rng.uniform(0.0, 5.0, size)
        row, col = m.sum(axis=1), m.sum(axis=0)
        equity0 = ext_assets - ext_liabs + row - col
        if np.any(equity0 <= 0.5):
            continue
        target = int(rng.integers(size))
        assets0 = ext_assets[target] + row[target]
        lev = assets0 / equity0[target]
        # keep the target solvent and its external sales within its book
        share_ext = ext_assets[target] / assets0
        bound = min(
            0.8 * equity0[target],
            0.9 * ext_assets[target] / (1.0 + max(lev - 1.0, 0.0) * share_ext),
        )
        if bound <= 1e-3:
            continue
        phi = float(rng.uniform(0.1, 1.0) * bound)
        return m, ext_assets, ext_liabs, target, phi


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
