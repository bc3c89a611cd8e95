"""Arterial corridor signal coordination toolkit.

Modules
-------
model
    Corridor, intersection, phase and demand data types plus validation.
milp
    Self-contained LP/MILP solver (bounded simplex, branch and bound).
mfc
    Max-flow coordination: cycle, green-split and offset optimization.
gwc
    Green-wave coordination: two-way bandwidth maximization.
plan
    Signal plans: per-cycle splits, offsets, coordination windows, file IO.
sim
    Mesoscopic corridor simulator and episode metrics.
agents
    Signal agents: phase masks, masked policies, action selection.
net, ppo
    Minimal neural nets with exact gradients and the PPO trainer.
envs
    Training environments (corridor control plus small synthetic tasks).
coordinator
    Strategy-level option policy and its training loop.
baselines
    Backpressure control and fixed-plan followers.
scenario, cli
    Scenario files and the command-line interface.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    CorridorSpec,
    DemandProfile,
    DemandSegment,
    IntersectionSpec,
    Movement,
    PhaseTable,
    default_phase_table,
    validate,
)
