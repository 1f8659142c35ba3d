"""Ledger data model: the equity identity and elementary mutations."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interbank import (
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
from conftest import make_state


class TestParameters:
    def test_defaults_match_calibration_table(self):
        p = Parameters()
        assert p.d == 0.1
        assert p.lambda_ == 1.0
        assert p.rho == 1.0
        assert p.phi == 1e8
        assert p.r0 == 1.0
        assert p.alpha == 1e-3
        assert p.sigma == 1e-3
        assert p.delta == 1e-2
        assert p.eps_c == 0.37

    @pytest.mark.parametrize(
        "bad",
        [
            {"d": 0.0},
            {"d": 1.5},
            {"eps_c": 0.0},
            {"eps_c": 1.2},
            {"r0": 0.0},
            {"r0": -1.0},
            {"alpha": 0.0},
            {"sigma": -1e-3},
            {"lambda_": 1.5},
            {"rho": -0.1},
            {"phi": 0.0},
        ],
    )
    def test_rejects_out_of_range(self, bad):
        with pytest.raises(ValueError):
            Parameters(**bad)

    def test_degenerate_freeze_threshold_allowed(self):
        assert Parameters(eps_c=1.0).eps_c == 1.0

    def test_as_dict_uses_symbol_names(self):
        d = Parameters().as_dict()
        assert d["lambda"] == 1.0
        assert "lambda_" not in d


class TestEquity:
    def test_direct_substitution(self):
        # one bank with known books: 10 - 4 + 3 - 2
        m = [[0.0, 3.0], [2.0, 0.0]]
        state = make_state(m, [10.0, 5.0], [4.0, 1.0])
        assert equity(state, 0) == 7.0

    def test_isolated_bank_nets_to_zero(self):
        state = make_state(np.zeros((2, 2)), [5.0, 3.0], [5.0, 1.0])
        assert equity(state, 0) == 0.0

    def test_three_bank_revalued_ledger(self):
        # entries are current values after a revaluation to r = 1.2; the
        # expected equities below are recomputed spreadsheet-style
        r = 1.2
        face = np.array([[0.0, 4.0, 0.0], [2.0, 0.0, 1.0], [0.0, 3.0, 0.0]])
        state = make_state(face * r, [10.0, 8.0, 12.0], [2.0, 3.0, 1.0], rate=r)
        expected = [
            10.0 - 2.0 + 1.2 * (4.0 - 2.0),
            8.0 - 3.0 + 1.2 * (3.0 - 7.0),
            12.0 - 1.0 + 1.2 * (3.0 - 1.0),
        ]
        got = [equity(state, i) for i in range(3)]
        assert got == pytest.approx(expected, rel=1e-12)

    def test_dead_bank_equity_is_zero(self):
        state = make_state([[0.0, 3.0], [2.0, 0.0]], [10.0, 5.0], [4.0, 1.0])
        remove_bank(state, 0)
        assert equity(state, 0) == 0.0


class TestTotalRelativeEquity:
    def test_initial_state_is_one(self):
        state = make_state([[0.0, 3.0], [2.0, 0.0]], [10.0, 5.0], [4.0, 1.0])
        assert total_relative_equity(state) == 1.0

    def test_all_defaulted_is_zero(self):
        state = make_state([[0.0, 3.0], [2.0, 0.0]], [10.0, 5.0], [4.0, 1.0])
        remove_bank(state, 0)
        remove_bank(state, 1)
        assert total_relative_equity(state) == 0.0


class TestRemoveBank:
    def test_clears_counterparty_sums(self):
        # bank 1's only counterparty is bank 0
        state = make_state([[0.0, 3.0], [2.0, 0.0]], [10.0, 5.0], [4.0, 1.0])
        remove_bank(state, 0)
        assert state.row_sum(1) == 0.0
        assert state.col_sum(1) == 0.0

    def test_isolated_removal_leaves_survivors(self):
        state = make_state(np.zeros((3, 3)), [5.0, 6.0, 7.0], [1.0, 1.0, 1.0])
        before = [equity(state, i) for i in (1, 2)]
        remove_bank(state, 0)
        assert [equity(state, i) for i in (1, 2)] == before

    def test_hub_removal_books_no_losses_by_itself(self):
        # 4-bank star: removal alone transfers no equity; cascade losses are
        # booked by the cascade module before removal
        m = np.zeros((4, 4))
        m[0, 1:] = [4.0, 5.0, 6.0]
        m[1:, 0] = [3.0, 2.0, 1.0]
        state = make_state(m, [1.0, 50.0, 50.0, 50.0], [0.0, 0.0, 0.0, 0.0])
        spokes_before = equity_vector(state)[1:].copy()
        remove_bank(state, 0)
        spokes_after = equity_vector(state)[1:] + np.array([3.0 - 4.0, 2.0 - 5.0, 1.0 - 6.0])
        # after zeroing, each spoke's equity changed exactly by its net
        # position against the hub; no other transfer happened
        assert spokes_after == pytest.approx(spokes_before, rel=1e-15)

    def test_double_removal_is_noop(self):
        state = make_state([[0.0, 3.0], [2.0, 0.0]], [10.0, 5.0], [4.0, 1.0])
        remove_bank(state, 0)
        snapshot = state.exposure_matrix()
        remove_bank(state, 0)
        assert np.array_equal(state.exposure_matrix(), snapshot)


class TestRevaluation:
    def test_matched_book_equity_invariant_exactly(self):
        m = np.array([[0.0, 5.0, 1.0], [5.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        state = make_state(m, [10.0, 9.0, 8.0], [2.0, 1.0, 3.0])
        before = equity(state, 0)
        state.revalue(1.07)
        assert equity(state, 0) == before

    def test_net_lender_gains_on_rate_rise(self):
        state = make_state([[0.0, 3.0], [1.0, 0.0]], [10.0, 9.0], [2.0, 1.0])
        before = equity(state, 0)
        state.revalue(1.1)
        assert equity(state, 0) > before


class TestStateInvariants:
    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValueError):
            make_state([[1.0, 0.0], [0.0, 0.0]], [5.0, 5.0], [1.0, 1.0])

    def test_rejects_negative_exposure(self):
        with pytest.raises(ValueError):
            make_state([[0.0, -1.0], [0.0, 0.0]], [5.0, 5.0], [1.0, 1.0])

    def test_rejects_nonpositive_initial_equity(self):
        with pytest.raises(ValueError):
            make_state(np.zeros((2, 2)), [1.0, 1.0], [2.0, 2.0])

    def test_copy_is_independent(self):
        state = make_state([[0.0, 3.0], [2.0, 0.0]], [10.0, 5.0], [4.0, 1.0])
        dup = state.copy()
        dup.set_exposure(0, 1, 0.0)
        dup.external_assets[0] = 0.0
        assert state.exposure(0, 1) == 3.0
        assert state.external_assets[0] == 10.0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_random_mutations_preserve_ledger_invariants(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        m = rng.uniform(0.0, 4.0, (n, n))
        np.fill_diagonal(m, 0.0)
        state = make_state(m, rng.uniform(10.0, 20.0, n), rng.uniform(0.0, 3.0, n))
        for _ in range(20):
            op = rng.integers(4)
            i, j = rng.integers(n), rng.integers(n)
            if op == 0 and i != j:
                state.set_exposure(i, j, float(rng.uniform(0.0, 4.0)))
            elif op == 1:
                state.scale_row(i, float(rng.uniform(0.0, 1.0)))
            elif op == 2:
                state.revalue(float(rng.uniform(0.9, 1.1)))
            elif op == 3 and state.alive.sum() > 1:
                remove_bank(state, i)
        current = state.exposure_matrix()
        assert np.all(np.diag(current) == 0.0)
        assert np.all(current >= 0.0)
        # cached sums agree with fresh ones
        assert state.row_sums() == pytest.approx(current.sum(axis=1), rel=1e-9, abs=1e-9)
        assert state.col_sums() == pytest.approx(current.sum(axis=0), rel=1e-9, abs=1e-9)
        assert state.total_exposure() == pytest.approx(current.sum(), rel=1e-9, abs=1e-9)


class TestIdentityCheck:
    def test_passes_on_consistent_books(self):
        state = make_state([[0.0, 3.0], [2.0, 0.0]], [10.0, 5.0], [4.0, 1.0])
        verify_equity_identity(state, equity_vector(state))

    def test_raises_on_divergence(self):
        state = make_state([[0.0, 3.0], [2.0, 0.0]], [10.0, 5.0], [4.0, 1.0])
        tracked = equity_vector(state)
        tracked[1] += 0.5
        with pytest.raises(LedgerError, match="bank 1"):
            verify_equity_identity(state, tracked)


class TestBankRecord:
    def test_equity_uses_rate_on_marginals(self):
        rec = BankRecord("b", 10.0, 4.0, 3.0, 2.0)
        assert rec.equity(1.0) == 7.0
        assert rec.equity(2.0) == 8.0

    def test_validate_rejects_negative(self):
        with pytest.raises(ValueError, match="external_assets"):
            BankRecord("b", -1.0, 0.0, 0.0, 0.0).validate()

    def test_scaled_multiplies_currency_fields(self):
        rec = BankRecord("b", 10.0, 4.0, 3.0, 2.0).scaled(2.0)
        assert (rec.external_assets, rec.external_liabilities) == (20.0, 8.0)
        assert (rec.interbank_assets_total, rec.interbank_liabilities_total) == (6.0, 4.0)
