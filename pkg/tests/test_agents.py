"""Masks, masked policies, and strategy routing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artery.agents import (
    MASK_LOGIT,
    PolicyBank,
    StrategyAssignment,
    feasible_phases,
    masked_policy,
    select_action,
)
from artery.model import Movement, PhaseTable, default_phase_table
from artery.plan import SignalPlan


def plan_with(strategy="MFC", cycle=100.0, epoch=0.0, **kw):
    return SignalPlan(
        strategy=strategy,
        cycle=cycle,
        epoch=epoch,
        idents=("i1",),
        splits=np.array([[0.5]]),
        offsets=np.array([[0.25]]),
        **kw,
    )


class TestMaskedPolicy:
    def test_two_live_entries_closed_form(self):
        probs = masked_policy([1.0, 2.0, 3.0], [1, 0, 1])
        e1, e3 = np.exp(1.0), np.exp(3.0)
        assert probs[0] == pytest.approx(e1 / (e1 + e3), abs=1e-12)
        assert probs[1] == 0.0
        assert probs[2] == pytest.approx(e3 / (e1 + e3), abs=1e-12)

    def test_open_mask_is_plain_softmax(self):
        z = np.array([0.3, -1.2, 2.0, 0.0])
        probs = masked_policy(z, np.ones(4))
        ref = np.exp(z - z.max())
        assert probs == pytest.approx(ref / ref.sum(), abs=1e-12)

    def test_single_live_entry_takes_everything(self):
        probs = masked_policy([5.0, -2.0, 0.1], [0, 0, 1])
        assert probs[2] == 1.0
        assert probs[0] == 0.0 and probs[1] == 0.0

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            masked_policy([1.0, 2.0], [0, 0])

    @given(
        z=st.lists(
            st.floats(min_value=-100.0, max_value=100.0), min_size=2, max_size=8
        ),
        bits=st.integers(min_value=1, max_value=255),
    )
    @settings(max_examples=200, deadline=None)
    def test_masked_entries_zero_and_sum_one(self, z, bits):
        mask = np.array([(bits >> k) & 1 for k in range(len(z))], dtype=float)
        if not mask.any():
            mask[0] = 1.0
        probs = masked_policy(z, mask)
        assert np.all(probs[mask == 0.0] == 0.0)
        assert abs(probs.sum() - 1.0) <= 1e-12
        assert np.all(probs >= 0.0)

    @given(
        z=st.lists(
            st.floats(min_value=-50.0, max_value=50.0), min_size=3, max_size=8
        ),
        shift=st.floats(min_value=-100.0, max_value=100.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_shift_invariance(self, z, shift):
        z = np.array(z)
        mask = np.ones(len(z))
        mask[0] = 0.0
        assert masked_policy(z + shift, mask) == pytest.approx(
            masked_policy(z, mask), abs=1e-12
        )

    def test_unmasking_preserves_live_ratios(self):
        z = np.array([0.5, 1.5, -0.7, 2.2])
        narrow = masked_policy(z, [1, 1, 0, 0])
        wide = masked_policy(z, [1, 1, 0, 1])
        assert narrow[0] / narrow[1] == pytest.approx(wide[0] / wide[1], rel=1e-12)


class TestSelectAction:
    def test_argmax_takes_the_heavy_entry(self):
        action, logp, probs = select_action([1.0, 2.0, 3.0], [1, 0, 1], mode="argmax")
        assert action == 2
        assert logp == pytest.approx(np.log(probs[2]))

    def test_masked_entry_never_sampled(self):
        rng = np.random.default_rng(0)
        _, _, probs = select_action(
            [1.0, 2.0, 3.0], [1, 0, 1], mode="sample", rng=rng
        )
        draws = rng.choice(3, size=100_000, p=probs)
        assert not np.any(draws == 1)
        for _ in range(500):
            action, _, _ = select_action(
                [1.0, 2.0, 3.0], [1, 0, 1], mode="sample", rng=rng
            )
            assert action != 1

    def test_sampling_without_rng_rejected(self):
        with pytest.raises(ValueError):
            select_action([1.0, 2.0], [1, 1], mode="sample")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            select_action([1.0, 2.0], [1, 1], mode="greedy")


class TestFeasiblePhases:
    def test_unrestricted_without_coordination(self):
        mask = feasible_phases(0, 12.0, StrategyAssignment("PAC"))
        assert mask == pytest.approx(np.ones(8))

    def test_inbound_window_restricts_to_through_pair(self):
        assignment = StrategyAssignment("MFC", plan_with())
        # splits 0.5 centered at 0.25 of a 100 s cycle: green spans [0, 50)
        inside = feasible_phases(0, 10.0, assignment)
        outside = feasible_phases(0, 60.0, assignment)
        assert inside == pytest.approx([1, 1, 0, 0, 0, 0, 0, 0])
        assert outside == pytest.approx(np.ones(8))

    def test_band_overlap_narrows_to_two_way_through(self):
        plan = plan_with(
            strategy="GWC",
            band_in=np.array([[0.1, 0.2]]),
            band_out=np.array([[0.1, 0.2]]),
        )
        assignment = StrategyAssignment("GWC", plan)
        both = feasible_phases(0, 10.0, assignment)     # rel 0.1: in both bands
        assert both == pytest.approx([1, 0, 0, 0, 0, 0, 0, 0])

    def test_single_band_allows_matching_left(self):
        plan = plan_with(
            strategy="GWC",
            band_in=np.array([[0.1, 0.2]]),
            band_out=np.array([[0.6, 0.2]]),
        )
        assignment = StrategyAssignment("GWC", plan)
        assert feasible_phases(0, 10.0, assignment) == pytest.approx(
            [1, 1, 0, 0, 0, 0, 0, 0]
        )
        assert feasible_phases(0, 60.0, assignment) == pytest.approx(
            [1, 0, 1, 0, 0, 0, 0, 0]
        )
        assert feasible_phases(0, 40.0, assignment) == pytest.approx(np.ones(8))

    def test_zero_width_band_never_matches(self):
        plan = plan_with(
            strategy="GWC",
            band_in=np.array([[0.1, 0.0]]),
            band_out=np.array([[0.1, 0.0]]),
        )
        assignment = StrategyAssignment("GWC", plan)
        assert feasible_phases(0, 10.0, assignment) == pytest.approx(np.ones(8))

    def test_before_plan_epoch_everything_is_open(self):
        assignment = StrategyAssignment("MFC", plan_with(epoch=500.0))
        assert feasible_phases(0, 100.0, assignment) == pytest.approx(np.ones(8))

    def test_inconsistent_custom_phase_blocked(self):
        table = default_phase_table()
        phases = list(table.phases)
        phases[6] = frozenset({Movement.IN_T, Movement.CROSS_IN_T})
        dirty = PhaseTable(phases=tuple(phases))
        mask = feasible_phases(0, 0.0, StrategyAssignment("PAC"), table=dirty)
        assert mask[6] == 0.0
        assert mask.sum() == 7.0

    def test_mask_never_empty_across_plan_times(self):
        plan = plan_with(
            strategy="GWC",
            band_in=np.array([[0.3, 0.4]]),
            band_out=np.array([[0.8, 0.3]]),
        )
        for strategy, p in (("PAC", None), ("MFC", plan_with()), ("GWC", plan)):
            assignment = StrategyAssignment(strategy, p)
            for t in np.linspace(0.0, 300.0, 601):
                assert feasible_phases(0, float(t), assignment).any()


class TestAssignment:
    def test_plan_presence_enforced(self):
        with pytest.raises(ValueError):
            StrategyAssignment("PAC", plan_with())
        with pytest.raises(ValueError):
            StrategyAssignment("MFC")
        with pytest.raises(ValueError):
            StrategyAssignment("webster")


class TestPolicyBank:
    def test_routes_to_matching_parameters(self):
        def favoring(idx):
            def f(obs):
                z = np.zeros(8)
                z[idx] = 5.0
                return z
            return f

        bank = PolicyBank({"PAC": favoring(7), "MFC": favoring(1), "GWC": favoring(2)})
        obs = np.zeros((4, 8))
        a_pac, _, _ = bank.act(StrategyAssignment("PAC"), 0, 0.0, obs, mode="argmax")
        assert a_pac == 7
        mfc = StrategyAssignment("MFC", plan_with())
        a_mfc, _, _ = bank.act(mfc, 0, 10.0, obs, mode="argmax")
        assert a_mfc == 1
        gwc = StrategyAssignment(
            "GWC",
            plan_with(
                strategy="GWC",
                band_in=np.array([[0.6, 0.2]]),
                band_out=np.array([[0.1, 0.2]]),
            ),
        )
        a_gwc, _, _ = bank.act(gwc, 0, 10.0, obs, mode="argmax")
        assert a_gwc == 2  # outbound band active: {p1, p3}, stub favors p3

    def test_missing_strategy_rejected(self):
        with pytest.raises(ValueError):
            PolicyBank({"PAC": lambda obs: np.zeros(8)})
