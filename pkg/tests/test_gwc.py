"""Progression-band optimization against brute-force offset search."""

import numpy as np
import pytest

from artery.gwc import (
    GwcInputs,
    bandwidth_for_offsets,
    bandwidth_grid_search,
    build_gwc_milp,
    gwc_plan,
    solve_gwc,
    webster_splits,
)
from artery.gwc import _config_values, _direction_values, _link_travel
from artery.milp import enumerate_oracle, solve_milp
from artery.model import DemandSegment, Movement

from conftest import flat_segment, make_corridor


def random_inputs(rng, n, pin_cycle=True, spread=0.0):
    cycle = float(rng.uniform(60.0, 110.0))
    per = {
        i: dict(free_flow_tt=float(rng.uniform(12.0, 80.0))) for i in range(n)
    }
    corridor = make_corridor(
        n=n,
        cycle_min=cycle,
        cycle_max=cycle + spread if not pin_cycle else cycle,
        per=per,
    )
    g_in = tuple(float(rng.uniform(0.3, 0.7)) for _ in range(n))
    g_out = tuple(float(rng.uniform(0.3, 0.7)) for _ in range(n))
    return GwcInputs(corridor, g_in, g_out)


def raw_relative_offsets(sol, travel):
    """Both directions' pre-wrap relative offsets, recomputed from scratch."""
    n = len(sol.green_in)
    fwd = np.zeros(n)
    bwd = np.zeros(n)
    for j in range(1, n):
        fwd[j] = (
            (sol.green_in[j] - sol.green_in[j - 1]) / 2.0
            + sol.w_in[j - 1]
            - sol.w_in[j]
            + travel[j - 1] * sol.z
        )
        bwd[j] = (
            (sol.green_out[j - 1] - sol.green_out[j]) / 2.0
            + sol.w_out[j]
            - sol.w_out[j - 1]
            + travel[j - 1] * sol.z
        )
    return fwd, bwd


class TestSolver:
    def test_identical_pair_gets_full_windows(self):
        # One cycle of travel between two equal windows: both bands fill them.
        corridor = make_corridor(n=2, cycle_min=60, cycle_max=60, free_flow_tt=60.0)
        sol = solve_gwc(GwcInputs(corridor, (0.5, 0.5), (0.5, 0.5)))
        assert not sol.fallback
        assert sol.objective == pytest.approx(1.0, abs=1e-9)
        assert sol.band_in[0] == pytest.approx(0.5, abs=1e-9)
        assert sol.band_out[0] == pytest.approx(0.5, abs=1e-9)
        assert sol.w_in == pytest.approx([0.25, 0.25], abs=1e-9)
        assert sol.w_out == pytest.approx([0.25, 0.25], abs=1e-9)
        assert sol.offset_rel[1] == pytest.approx(0.0, abs=1e-9)
        assert sol.cycle == pytest.approx(60.0)

    def test_matches_exhaustive_binary_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            inputs = random_inputs(rng, 2, pin_cycle=False, spread=30.0)
            problem, _ = build_gwc_milp(inputs)
            fast = solve_milp(problem)
            slow = enumerate_oracle(problem)
            assert fast.status == slow.status
            assert fast.objective == pytest.approx(slow.objective, abs=1e-9)

    def test_fallback_when_windows_too_narrow(self):
        # Narrow windows and a half-cycle round trip leave no integer wrap.
        corridor = make_corridor(n=2, cycle_min=60, cycle_max=60, free_flow_tt=15.0)
        sol = solve_gwc(GwcInputs(corridor, (0.1, 0.1), (0.1, 0.1)))
        assert sol.fallback
        assert sol.objective == 0.0
        assert np.all(sol.band_in == 0.0) and np.all(sol.band_out == 0.0)
        assert sol.w_in == pytest.approx([0.05, 0.05])
        assert np.all(sol.offset_abs == 0.0)

    def test_free_splits_match_widest_fixed_windows(self):
        rng = np.random.default_rng(3)
        cycle = 80.0
        per = {i: dict(free_flow_tt=float(rng.uniform(20, 60)), green_max=0.6)
               for i in range(2)}
        corridor = make_corridor(n=2, cycle_min=cycle, cycle_max=cycle, per=per)
        free = solve_gwc(GwcInputs(corridor, (0.5, 0.5), (0.5, 0.5), free_splits=True))
        pinned = solve_gwc(GwcInputs(corridor, (0.6, 0.6), (0.6, 0.6)))
        assert free.objective == pytest.approx(pinned.objective, abs=1e-9)

    def test_single_intersection_is_trivial(self):
        corridor = make_corridor(n=1, cycle_min=60, cycle_max=90)
        sol = solve_gwc(GwcInputs(corridor, (0.4,), (0.4,)))
        assert not sol.fallback
        assert sol.objective == 0.0
        assert sol.band_in.shape == (0,)
        assert sol.offset_abs == pytest.approx([0.0])

    def test_rejects_malformed_greens(self):
        corridor = make_corridor(n=2)
        with pytest.raises(ValueError):
            build_gwc_milp(GwcInputs(corridor, (0.5,), (0.5, 0.5)))
        with pytest.raises(ValueError):
            build_gwc_milp(GwcInputs(corridor, (0.5, 1.2), (0.5, 0.5)))


class TestWrapInvariant:
    def test_directional_offsets_cancel_to_wrap_count(self):
        rng = np.random.default_rng(19)
        for _ in range(6):
            inputs = random_inputs(rng, 3, pin_cycle=False, spread=35.0)
            sol = solve_gwc(inputs)
            assert not sol.fallback
            travel = _link_travel(inputs.corridor)
            fwd, bwd = raw_relative_offsets(sol, travel)
            for j in range(1, 3):
                total = fwd[j] + bwd[j] + sol.wrap[j - 1]
                assert total == pytest.approx(0.0, abs=1e-7)


class TestOffsetEvaluator:
    def test_candidate_maximum_matches_dense_anchor_scan(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            n = int(rng.integers(2, 5))
            c = rng.uniform(0.0, 1.0, size=n)
            h = rng.uniform(0.15, 0.35, size=n)
            exact = _direction_values(c[:, None], h)[0]

            a = np.linspace(0.0, 1.0, 20001)
            dist = np.abs(((a[:, None] - c[None, :] + 0.5) % 1.0) - 0.5)
            rho = h[None, :] - dist
            ok = (rho >= -1e-12).all(axis=1)
            vals = 2.0 * np.clip(
                np.minimum(rho[:, :-1], rho[:, 1:]), 0.0, None
            ).sum(axis=1)
            vals[~ok] = -np.inf
            scan = vals.max()

            if not np.isfinite(scan):
                continue
            assert exact >= scan - 1e-9
            assert exact <= scan + 2.0 * (n - 1) * 5e-5 + 1e-9

    def test_value_survives_rigid_shift(self):
        rng = np.random.default_rng(29)
        corridor = make_corridor(n=3, cycle_min=80, cycle_max=80)
        g = np.full(3, 0.45)
        offsets = rng.uniform(0.0, 1.0, size=3)
        base = bandwidth_for_offsets(corridor, g, g, offsets, 1.0 / 80.0)
        for shift in (0.17, 0.5, 0.93):
            moved = bandwidth_for_offsets(
                corridor, g, g, (offsets + shift) % 1.0, 1.0 / 80.0
            )
            assert moved == pytest.approx(base, abs=1e-9)

    def test_evaluator_agrees_with_solver_at_its_own_offsets(self):
        rng = np.random.default_rng(31)
        for _ in range(6):
            inputs = random_inputs(rng, int(rng.integers(2, 4)), pin_cycle=True)
            sol = solve_gwc(inputs)
            assert not sol.fallback
            value = bandwidth_for_offsets(
                inputs.corridor,
                sol.green_in,
                sol.green_out,
                sol.offset_abs,
                sol.z,
            )
            assert value is not None
            assert value == pytest.approx(sol.objective, abs=1e-7)

    def test_narrow_windows_make_every_offset_invalid(self):
        corridor = make_corridor(n=2, cycle_min=60, cycle_max=60, free_flow_tt=15.0)
        g = np.full(2, 0.1)
        z = 1.0 / 60.0
        assert bandwidth_for_offsets(corridor, g, g, [0.0, 0.3], z) is None
        value, offsets = bandwidth_grid_search(corridor, g, g, z, step=0.01)
        assert value == 0.0
        assert np.all(offsets == 0.0)


class TestGridSearch:
    def test_grid_never_beats_solver(self):
        rng = np.random.default_rng(37)
        for _ in range(4):
            inputs = random_inputs(rng, 2, pin_cycle=True)
            sol = solve_gwc(inputs)
            value, _ = bandwidth_grid_search(
                inputs.corridor,
                inputs.green_in,
                inputs.green_out,
                sol.z,
                step=0.002,
            )
            assert value <= sol.objective + 1e-6
            assert sol.objective - value <= 0.02

    def test_three_signal_grid_reaches_solver_value(self):
        rng = np.random.default_rng(41)
        inputs = random_inputs(rng, 3, pin_cycle=True)
        sol = solve_gwc(inputs)
        value, _ = bandwidth_grid_search(
            inputs.corridor,
            inputs.green_in,
            inputs.green_out,
            sol.z,
            step=0.01,
        )
        assert value <= sol.objective + 1e-6
        assert sol.objective - value <= 0.08

    def test_rejects_wide_corridors(self):
        corridor = make_corridor(n=4)
        with pytest.raises(ValueError):
            bandwidth_grid_search(
                corridor, np.full(4, 0.5), np.full(4, 0.5), 1.0 / 60.0
            )


class TestPlanPackaging:
    def test_band_windows_and_splits(self):
        corridor = make_corridor(n=2, cycle_min=60, cycle_max=60, free_flow_tt=60.0)
        sol = solve_gwc(GwcInputs(corridor, (0.5, 0.5), (0.4, 0.4)))
        plan = gwc_plan(sol, corridor, epoch=120.0)
        assert plan.strategy == "GWC"
        assert plan.epoch == 120.0
        assert plan.cycle == pytest.approx(60.0)
        assert plan.idents == ("i1", "i2")
        assert plan.splits[:, 0] == pytest.approx(np.maximum(sol.green_in, sol.green_out))
        assert plan.offsets[:, 0] == pytest.approx(sol.offset_abs)
        expected_in = (sol.offset_abs + sol.w_in - sol.green_in / 2.0) % 1.0
        assert plan.band_in[:, 0] == pytest.approx(expected_in)
        assert plan.band_in[:, 1] == pytest.approx(sol.band_in[[0, 0]])
        assert not plan.fallback

    def test_interior_width_takes_wider_adjacent_band(self):
        rng = np.random.default_rng(43)
        inputs = random_inputs(rng, 3, pin_cycle=True)
        sol = solve_gwc(inputs)
        plan = gwc_plan(sol, inputs.corridor)
        assert plan.band_in[1, 1] == pytest.approx(max(sol.band_in))
        assert plan.band_out[0, 1] == pytest.approx(sol.band_out[0])
        assert plan.band_out[2, 1] == pytest.approx(sol.band_out[1])

    def test_fallback_flag_travels_with_plan(self):
        corridor = make_corridor(n=2, cycle_min=60, cycle_max=60, free_flow_tt=15.0)
        sol = solve_gwc(GwcInputs(corridor, (0.1, 0.1), (0.1, 0.1)))
        plan = gwc_plan(sol, corridor)
        assert plan.fallback


class TestWebsterSplits:
    def test_critical_ratio_share(self):
        corridor = make_corridor(n=1)
        base = flat_segment(1, entry_in=0.2, entry_out=0.1, branch=0.05)
        direct = [list(r) for r in base.direct]
        direct[0][Movement.CROSS_IN_T] = 0.15
        direct[0][Movement.CROSS_OUT_T] = 0.10
        segment = DemandSegment(
            start=base.start,
            end=base.end,
            level=base.level,
            entry_in=base.entry_in,
            entry_out=base.entry_out,
            branch=base.branch,
            direct=tuple(tuple(r) for r in direct),
        )
        g_in, g_out = webster_splits(corridor, segment)
        # corridor ratio 0.25 vs cross ratio 0.30
        assert g_in[0] == pytest.approx(0.25 / 0.55)
        assert g_out == g_in

    def test_share_is_clipped_to_green_bounds(self):
        corridor = make_corridor(n=1, green_max=0.4)
        segment = flat_segment(1, entry_in=0.9, entry_out=0.9, cross=0.01)
        g_in, _ = webster_splits(corridor, segment)
        assert g_in[0] == pytest.approx(0.4)

    def test_no_demand_splits_evenly(self):
        corridor = make_corridor(n=2)
        segment = flat_segment(2, entry_in=0.0, entry_out=0.0, cross=0.0, left=0.0)
        g_in, g_out = webster_splits(corridor, segment)
        assert g_in == (0.5, 0.5)
        assert g_out == (0.5, 0.5)
