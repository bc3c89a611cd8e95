"""Signal plans: cycle, per-cycle splits and offsets, coordination windows.

A plan stores one green split and one absolute offset per intersection for
each cycle in its horizon; cycles past the horizon repeat the last stored
cycle. Offsets are center-of-green times as cycle fractions relative to the
plan epoch, normalized to [0, 1). Green-wave plans additionally carry the
progression band (center, width) per intersection and direction, which is
what the coordination masks key on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

__all__ = [
    "SignalPlan",
    "absolute_offsets",
    "save_plan",
    "load_plan",
]

PLAN_FORMAT = "signal-plan-v1"


def absolute_offsets(relative: np.ndarray) -> np.ndarray:
    """Chain link-relative offsets into absolute ones, first row as reference.

    relative[i, k] is the offset of intersection i against i-1 at cycle k;
    row 0 is ignored. The result is the cumulative sum mod 1.
    """
    rel = np.asarray(relative, dtype=float)
    # Row 0 is the zero reference regardless of its input content.
    if rel.ndim == 2:
        chained = np.vstack([np.zeros((1, rel.shape[1])), rel[1:]])
    else:
        chained = np.concatenate([[0.0], rel[1:]])
    return np.mod(np.cumsum(chained, axis=0), 1.0)


@dataclass(frozen=True, eq=False)
class SignalPlan:
    """Coordinated signal settings for a corridor."""

    strategy: str               # "MFC", "GWC" or "fixed"
    cycle: float                # seconds
    epoch: float                # absolute time the plan takes effect
    idents: tuple[str, ...]
    splits: np.ndarray          # (n, horizon) coordinated green fractions
    offsets: np.ndarray         # (n, horizon) absolute offsets mod 1
    band_in: np.ndarray | None = None   # (n, 2) center, width per intersection
    band_out: np.ndarray | None = None
    fallback: bool = False      # set on the zero-bandwidth fallback plan

    def __post_init__(self):
        object.__setattr__(self, "idents", tuple(self.idents))
        object.__setattr__(
            self, "splits", np.atleast_2d(np.asarray(self.splits, dtype=float))
        )
        object.__setattr__(
            self, "offsets", np.atleast_2d(np.asarray(self.offsets, dtype=float))
        )
        for name in ("band_in", "band_out"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(
                    self, name, np.atleast_2d(np.asarray(value, dtype=float))
                )

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignalPlan):
            return NotImplemented

        def arr_eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.array_equal(a, b))

        return (
            self.strategy == other.strategy
            and self.cycle == other.cycle
            and self.epoch == other.epoch
            and self.idents == other.idents
            and self.fallback == other.fallback
            and arr_eq(self.splits, other.splits)
            and arr_eq(self.offsets, other.offsets)
            and arr_eq(self.band_in, other.band_in)
            and arr_eq(self.band_out, other.band_out)
        )

    @property
    def n_intersections(self) -> int:
        return self.splits.shape[0]

    @property
    def horizon(self) -> int:
        return self.splits.shape[1]

    def stored_cycle(self, k: int) -> int:
        """Column index backing cycle k (1-based); the pattern repeats."""
        if k < 1:
            raise ValueError(f"cycle index must be >= 1, got {k}")
        return min(k, self.horizon) - 1

    def cycle_at(self, t: float) -> int:
        """1-based cycle number containing absolute time t; 0 before epoch."""
        if t < self.epoch:
            return 0
        return int(np.floor((t - self.epoch) / self.cycle)) + 1

    def window_segments(self, i: int, k: int) -> list[tuple[float, float]]:
        """Coordinated-green interval(s) of cycle k, absolute seconds.

        The window is centered on the offset and wraps at cycle edges, so it
        may come back as two segments (sorted by start time).
        """
        kk = self.stored_cycle(k)
        g = float(self.splits[i, kk])
        if g <= 0.0:
            return []
        phi = float(self.offsets[i, kk])
        cs = self.epoch + (k - 1) * self.cycle
        start_rel = (phi - g / 2.0) % 1.0
        if start_rel + g <= 1.0 + 1e-12:
            return [(cs + start_rel * self.cycle, cs + (start_rel + g) * self.cycle)]
        return [
            (cs, cs + (start_rel + g - 1.0) * self.cycle),
            (cs + start_rel * self.cycle, cs + self.cycle),
        ]

    def _circular_inside(self, t: float, center: float, width: float) -> bool:
        if t < self.epoch or width <= 0.0:
            return False
        rel = ((t - self.epoch) / self.cycle) % 1.0
        d = (rel - center) % 1.0
        half = width / 2.0
        return d < half or d >= 1.0 - half

    def in_coordination(self, i: int, t: float) -> bool:
        """True while t falls inside intersection i's coordinated green."""
        if t < self.epoch:
            return False
        k = self.cycle_at(t)
        kk = self.stored_cycle(k)
        return self._circular_inside(
            t, float(self.offsets[i, kk]), float(self.splits[i, kk])
        )

    def in_band(self, i: int, t: float, direction: str) -> bool:
        """True while t falls inside the progression band at intersection i."""
        band = self.band_in if direction == "in" else self.band_out
        if band is None:
            return False
        return self._circular_inside(t, float(band[i, 0]), float(band[i, 1]))


def _plan_dict(plan: SignalPlan) -> dict:
    def arr(a):
        return None if a is None else [[float(v) for v in row] for row in a]

    return {
        "format": PLAN_FORMAT,
        "strategy": plan.strategy,
        "cycle": float(plan.cycle),
        "epoch": float(plan.epoch),
        "fallback": bool(plan.fallback),
        "idents": list(plan.idents),
        "splits": arr(plan.splits),
        "offsets": arr(plan.offsets),
        "band_in": arr(plan.band_in),
        "band_out": arr(plan.band_out),
    }


def save_plan(plan: SignalPlan, path: str | Path) -> None:
    """Write the plan as structured text; floats round-trip exactly."""
    payload = yaml.safe_dump(_plan_dict(plan), sort_keys=False)
    Path(path).write_text(payload)


def load_plan(path: str | Path) -> SignalPlan:
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict) or raw.get("format") != PLAN_FORMAT:
        raise ValueError(f"{path}: not a {PLAN_FORMAT} file")

    def arr(key):
        value = raw.get(key)
        return None if value is None else np.array(value, dtype=float)

    return SignalPlan(
        strategy=raw["strategy"],
        cycle=float(raw["cycle"]),
        epoch=float(raw["epoch"]),
        idents=tuple(raw["idents"]),
        splits=arr("splits"),
        offsets=arr("offsets"),
        band_in=arr("band_in"),
        band_out=arr("band_out"),
        fallback=bool(raw.get("fallback", False)),
    )
