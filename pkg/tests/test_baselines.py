import numpy as np
import pytest
from conftest import flat_demand, make_corridor

from artery.agents import StrategyAssignment
from artery.baselines import (
    ROTATION,
    BackpressureController,
    FixedPlanController,
    PolicyController,
    backpressure_phase,
    movement_pressure,
    run_episode,
)
from artery.model import Movement, PhaseTable, default_phase_table
from artery.net import fresh_params
from artery.plan import SignalPlan
from artery.sim import Simulator


def pressure_scores(queues, i, corridor, table=None):
    table = table or default_phase_table()
    return [
        sum(movement_pressure(queues, i, m, corridor) for m in phase)
        for phase in table.phases
    ]


class TestPressure:
    def test_hand_computed_two_intersection_table(self):
        corridor = make_corridor(2)      # sat_flow 0.5 everywhere
        queues = np.zeros((2, 8))
        queues[0, Movement.IN_T] = 10.0
        queues[0, Movement.OUT_T] = 1.0
        queues[1, Movement.IN_T] = 2.0
        queues[1, Movement.CROSS_IN_T] = 5.0

        # first stop line: inbound pressure nets off the downstream queue
        expected_0 = [4.5, 4.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]
        assert pressure_scores(queues, 0, corridor) == pytest.approx(expected_0)
        assert backpressure_phase(queues, 0, corridor) == 0

        # second: inbound exits freely, outbound nets off the queue at the
        # first stop line, cross queue dominates
        expected_1 = [0.5, 1.0, -0.5, 0.0, 2.5, 2.5, 0.0, 0.0]
        assert pressure_scores(queues, 1, corridor) == pytest.approx(expected_1)
        assert backpressure_phase(queues, 1, corridor) == 4

    def test_all_zero_queues_take_first_phase(self):
        corridor = make_corridor(2)
        assert backpressure_phase(np.zeros((2, 8)), 0, corridor) == 0
        assert backpressure_phase(np.zeros((2, 8)), 1, corridor) == 0

    def test_single_loaded_movement_wins(self):
        corridor = make_corridor(2)
        queues = np.zeros((2, 8))
        queues[0, Movement.IN_T] = 10.0
        scores = pressure_scores(queues, 0, corridor)
        assert max(scores) == pytest.approx(10.0 * 0.5)
        winner = backpressure_phase(queues, 0, corridor)
        assert Movement.IN_T in default_phase_table().phases[winner]

    def test_crowded_downstream_discourages_release(self):
        corridor = make_corridor(2)
        queues = np.zeros((2, 8))
        queues[0, Movement.IN_T] = 1.0
        queues[1, Movement.IN_T] = 9.0   # worse than holding
        queues[0, Movement.OUT_T] = 3.0
        assert movement_pressure(queues, 0, Movement.IN_T, corridor) == -4.0
        assert backpressure_phase(queues, 0, corridor) == 2

    def test_equal_pressure_prefers_earlier_phase(self):
        corridor = make_corridor(1)
        table = PhaseTable(phases=(
            frozenset({Movement.IN_T, Movement.IN_L}),
            frozenset({Movement.OUT_T, Movement.OUT_L}),
        ))
        queues = np.zeros((1, 8))
        queues[0, [Movement.IN_T, Movement.OUT_T]] = 2.0
        queues[0, [Movement.IN_L, Movement.OUT_L]] = 1.0
        assert pressure_scores(queues, 0, corridor, table) == [1.5, 1.5]
        assert backpressure_phase(queues, 0, corridor, table) == 0


class TestBackpressureController:
    def test_matches_per_intersection_rule(self):
        corridor = make_corridor(2)
        sim = Simulator(corridor, flat_demand(2), None)
        sim.reset(3)
        sim.seed_queue(0, Movement.IN_T, 6)
        sim.seed_queue(1, Movement.CROSS_OUT_T, 4)
        control = BackpressureController(corridor)
        actions = control(sim)
        queues = sim.queue_lengths()
        expected = [backpressure_phase(queues, i, corridor) for i in range(2)]
        assert list(actions) == expected

    def test_episode_runs_clean(self):
        corridor = make_corridor(2)
        metrics, sim = run_episode(
            corridor, flat_demand(2, entry_in=0.1, entry_out=0.1),
            BackpressureController(corridor), seed=5,
            episode=300.0, warmup=60.0,
        )
        assert sim.clock == pytest.approx(300.0)
        assert metrics.thru >= 0


class TestFixedPlanController:
    def plan(self, epoch=0.0):
        return SignalPlan(
            strategy="fixed", cycle=100.0, epoch=epoch, idents=("a",),
            splits=np.array([[0.4]]), offsets=np.array([[0.2]]),
        )

    def test_window_serves_through(self):
        control = FixedPlanController(self.plan())
        assert control._phase(0, 10.0) == 0      # inside [0, 40)
        assert control._phase(0, 139.0) == 0     # wraps each cycle

    def test_rotation_covers_rest_of_cycle(self):
        control = FixedPlanController(self.plan())
        assert control._phase(0, 45.0) == ROTATION[0]
        assert control._phase(0, 65.0) == ROTATION[1]
        assert control._phase(0, 95.0) == ROTATION[2]

    def test_before_epoch_defaults_to_through(self):
        control = FixedPlanController(self.plan(epoch=50.0))
        assert control._phase(0, 10.0) == 0

    def test_episode_smoke(self):
        corridor = make_corridor(1)
        plan = self.plan()
        metrics, _ = run_episode(
            corridor, flat_demand(1, entry_in=0.05, entry_out=0.05),
            FixedPlanController(plan), seed=2, episode=300.0, warmup=0.0,
        )
        assert metrics.thru >= 0


class TestRunEpisode:
    def test_policy_controller_deterministic(self):
        corridor = make_corridor(2)
        params = fresh_params("PAC", 32, 8, (8, 8), np.random.default_rng(0))
        control = PolicyController(
            params, StrategyAssignment("PAC"), corridor
        )
        runs = [
            run_episode(corridor, flat_demand(2, entry_in=0.08),
                        control, seed=11, episode=240.0, warmup=60.0)[0]
            for _ in range(2)
        ]
        assert runs[0] == runs[1]

    def test_seed_changes_outcome(self):
        corridor = make_corridor(2)
        control = BackpressureController(corridor)
        a, _ = run_episode(corridor, flat_demand(2, entry_in=0.15),
                           control, seed=1, episode=240.0, warmup=0.0)
        b, _ = run_episode(corridor, flat_demand(2, entry_in=0.15),
                           control, seed=2, episode=240.0, warmup=0.0)
        assert a != b
