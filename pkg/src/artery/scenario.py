"""Scenario files: corridor geometry, demand levels, and run options.

One structured text file describes everything a run needs: the corridor,
named demand levels, an optional hour-by-hour schedule, simulator
settings, and strategy parameters.  Parsing is strict: any key the
schema does not know is an error, at every nesting level, so typos fail
fast instead of silently running defaults.
"""

from __future__ import annotations

from dataclasses import MISSING, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .coordinator import HlcRewardWeights
from .model import (
    MOVEMENTS,
    CorridorSpec,
    DemandProfile,
    DemandSegment,
    IntersectionSpec,
    Movement,
)
from .ppo import PpoConfig

FORMAT = "scenario-v1"

INTERSECTION_KEYS = {f.name for f in fields(IntersectionSpec)}
INTERSECTION_REQUIRED = {
    f.name for f in fields(IntersectionSpec)
    if f.default is MISSING and f.default_factory is MISSING
}
LEVEL_KEYS = {"entry_in", "entry_out", "branch", "cross", "left", "direct"}
PPO_KEYS = {f.name for f in fields(PpoConfig)}


def _take(mapping, allowed, where: str) -> dict:
    if not isinstance(mapping, dict):
        raise ValueError(f"{where}: expected a mapping")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ValueError(f"{where}: unknown key {unknown[0]!r}")
    return mapping


def _require(mapping, keys, where: str) -> None:
    missing = sorted(set(keys) - set(mapping))
    if missing:
        raise ValueError(f"{where}: missing key {missing[0]!r}")


def _is_scalar(value) -> bool:
    return not isinstance(value, (list, tuple))


def validate_corridor(corridor: CorridorSpec) -> list[str]:
    out = []
    if not corridor.cycle_max >= corridor.cycle_min > 0:
        out.append("cycle bounds must satisfy 0 < min <= max")
    idents = [s.ident for s in corridor.intersections]
    if len(set(idents)) != len(idents):
        out.append("intersection idents must be unique")
    return out


@dataclass(frozen=True)
class Scenario:
    name: str
    corridor: CorridorSpec
    levels: dict
    schedule: tuple | None
    seed: int = 0
    episode: float = 3600.0
    warmup: float = 600.0
    kappa: float = 0.2
    plan_horizon: int = 3
    weights: HlcRewardWeights = field(
        default_factory=lambda: HlcRewardWeights.group(2)
    )
    ppo_overrides: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.corridor.intersections)

    def segment(self, level: str, start: float, end: float) -> DemandSegment:
        if level not in self.levels:
            raise ValueError(f"unknown demand level {level!r}")
        rates = self.levels[level]
        n = self.n
        branch = rates["branch"]
        if _is_scalar(branch):
            branch = (float(branch),) * n
        if rates.get("direct") is not None:
            direct = tuple(tuple(float(v) for v in row)
                           for row in rates["direct"])
        else:
            row = [0.0] * len(MOVEMENTS)
            row[int(Movement.IN_L)] = rates["left"]
            row[int(Movement.OUT_L)] = rates["left"]
            row[int(Movement.CROSS_IN_T)] = rates["cross"]
            row[int(Movement.CROSS_OUT_T)] = rates["cross"]
            row[int(Movement.CROSS_IN_L)] = rates["left"]
            row[int(Movement.CROSS_OUT_L)] = rates["left"]
            direct = tuple(tuple(row) for _ in range(n))
        return DemandSegment(
            start=start, end=end, level=level,
            entry_in=float(rates["entry_in"]),
            entry_out=float(rates["entry_out"]),
            branch=tuple(float(b) for b in branch),
            direct=direct,
        )

    def level_profile(self, level: str, seed: int | None = None) -> DemandProfile:
        return DemandProfile(
            segments=(self.segment(level, 0.0, self.episode),),
            seed=self.seed if seed is None else seed,
        )

    def schedule_profile(self, seed: int | None = None) -> DemandProfile:
        if self.schedule is None:
            raise ValueError(f"scenario {self.name!r} has no demand schedule")
        segments = tuple(
            self.segment(level, start, end)
            for start, end, level in self.schedule
        )
        return DemandProfile(
            segments=segments, seed=self.seed if seed is None else seed
        )

    @property
    def schedule_end(self) -> float:
        if self.schedule is None:
            raise ValueError(f"scenario {self.name!r} has no demand schedule")
        return self.schedule[-1][1]

    def ppo_config(self) -> PpoConfig:
        return replace(PpoConfig(), **self.ppo_overrides)

    def problems(self) -> list[str]:
        out = list(validate_corridor(self.corridor))
        for level in self.levels:
            seg = self.segment(level, 0.0, 1.0)
            out.extend(seg.problems(self.n))
        return out


def _parse_intersection(raw: dict, defaults: dict, where: str) -> IntersectionSpec:
    merged = dict(defaults)
    merged.update(_take(raw, INTERSECTION_KEYS, where))
    _require(merged, INTERSECTION_REQUIRED, where)
    return IntersectionSpec(**merged)


def _parse_level(raw: dict, n: int, where: str) -> dict:
    data = _take(raw, LEVEL_KEYS, where)
    _require(data, {"entry_in", "entry_out"}, where)
    if "direct" in data and ("cross" in data or "left" in data):
        raise ValueError(f"{where}: give either direct rates or cross/left "
                         f"shorthand, not both")
    out = {
        "entry_in": float(data["entry_in"]),
        "entry_out": float(data["entry_out"]),
        "branch": data.get("branch", 0.0),
        "cross": float(data.get("cross", 0.0)),
        "left": float(data.get("left", 0.0)),
        "direct": data.get("direct"),
    }
    branch = out["branch"]
    if not _is_scalar(branch) and len(branch) != n:
        raise ValueError(f"{where}: branch list must have {n} entries")
    direct = out["direct"]
    if direct is not None:
        if len(direct) != n or any(len(r) != len(MOVEMENTS) for r in direct):
            raise ValueError(f"{where}: direct must be {n} rows of "
                             f"{len(MOVEMENTS)} rates")
    return out


def _parse_schedule(raw, levels, where: str) -> tuple:
    if not isinstance(raw, list) or not raw:
        raise ValueError(f"{where}: expected a non-empty list")
    windows = []
    for idx, entry in enumerate(raw):
        spot = f"{where}[{idx}]"
        data = _take(entry, {"start", "end", "level"}, spot)
        _require(data, {"start", "end", "level"}, spot)
        start, end = float(data["start"]), float(data["end"])
        level = str(data["level"])
        if level not in levels:
            raise ValueError(f"{spot}: unknown demand level {level!r}")
        if not end > start:
            raise ValueError(f"{spot}: window [{start}, {end}) is empty")
        if windows and abs(windows[-1][1] - start) > 1e-9:
            raise ValueError(f"{spot}: schedule windows must be contiguous")
        windows.append((start, end, level))
    return tuple(windows)


def parse_scenario(data: dict) -> Scenario:
    top = _take(data, {
        "format", "name", "corridor", "demand", "sim", "options",
    }, "scenario")
    if top.get("format", FORMAT) != FORMAT:
        raise ValueError(f"unsupported scenario format {top.get('format')!r}")
    _require(top, {"name", "corridor", "demand"}, "scenario")

    cor = _take(top["corridor"], {
        "cycle_min", "cycle_max", "entry_inflow", "defaults", "intersections",
    }, "corridor")
    _require(cor, {"cycle_min", "cycle_max", "intersections"}, "corridor")
    defaults = _take(
        cor.get("defaults", {}), INTERSECTION_KEYS - {"ident"},
        "corridor.defaults",
    )
    rows = cor["intersections"]
    if not isinstance(rows, list) or not rows:
        raise ValueError("corridor.intersections: expected a non-empty list")
    specs = tuple(
        _parse_intersection(row, defaults, f"corridor.intersections[{i}]")
        for i, row in enumerate(rows)
    )
    corridor = CorridorSpec(
        intersections=specs,
        cycle_min=float(cor["cycle_min"]),
        cycle_max=float(cor["cycle_max"]),
        entry_inflow=float(cor.get("entry_inflow", 0.0)),
    )

    dem = _take(top["demand"], {"levels", "schedule", "seed"}, "demand")
    _require(dem, {"levels"}, "demand")
    if not isinstance(dem["levels"], dict) or not dem["levels"]:
        raise ValueError("demand.levels: expected a non-empty mapping")
    levels = {
        str(name): _parse_level(raw, len(specs), f"demand.levels.{name}")
        for name, raw in dem["levels"].items()
    }
    schedule = None
    if dem.get("schedule") is not None:
        schedule = _parse_schedule(dem["schedule"], levels, "demand.schedule")

    sim = _take(top.get("sim", {}), {"episode", "warmup", "kappa"}, "sim")
    opts = _take(top.get("options", {}), {
        "hlc_weights", "ppo", "plan_horizon",
    }, "options")
    weights = opts.get("hlc_weights", 2)
    if isinstance(weights, int):
        weights = HlcRewardWeights.group(weights)
    else:
        if len(weights) != 3:
            raise ValueError("options.hlc_weights: need a group number or "
                             "three multipliers")
        weights = HlcRewardWeights(*[float(v) for v in weights])
    ppo_overrides = dict(_take(opts.get("ppo", {}), PPO_KEYS, "options.ppo"))
    if "lr_schedule" in ppo_overrides:
        ppo_overrides["lr_schedule"] = tuple(
            (float(a), float(b)) for a, b in ppo_overrides["lr_schedule"]
        )
    if "hidden" in ppo_overrides:
        ppo_overrides["hidden"] = tuple(
            int(v) for v in ppo_overrides["hidden"]
        )

    scenario = Scenario(
        name=str(top["name"]),
        corridor=corridor,
        levels=levels,
        schedule=schedule,
        seed=int(dem.get("seed", 0)),
        episode=float(sim.get("episode", 3600.0)),
        warmup=float(sim.get("warmup", 600.0)),
        kappa=float(sim.get("kappa", 0.2)),
        plan_horizon=int(opts.get("plan_horizon", 3)),
        weights=weights,
        ppo_overrides=ppo_overrides,
    )
    problems = scenario.problems()
    if problems:
        raise ValueError("scenario: " + problems[0])
    return scenario


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: not a scenario file")
    return parse_scenario(data)


def scenario_dict(scenario: Scenario) -> dict:
    levels = {}
    for name, rates in scenario.levels.items():
        entry = {
            "entry_in": rates["entry_in"],
            "entry_out": rates["entry_out"],
            "branch": rates["branch"],
        }
        if rates.get("direct") is not None:
            entry["direct"] = [list(r) for r in rates["direct"]]
        else:
            entry["cross"] = rates["cross"]
            entry["left"] = rates["left"]
        levels[name] = entry
    data = {
        "format": FORMAT,
        "name": scenario.name,
        "corridor": {
            "cycle_min": scenario.corridor.cycle_min,
            "cycle_max": scenario.corridor.cycle_max,
            "entry_inflow": scenario.corridor.entry_inflow,
            "intersections": [
                {f.name: getattr(spec, f.name)
                 for f in fields(IntersectionSpec)}
                for spec in scenario.corridor.intersections
            ],
        },
        "demand": {"levels": levels, "seed": scenario.seed},
        "sim": {
            "episode": scenario.episode,
            "warmup": scenario.warmup,
            "kappa": scenario.kappa,
        },
        "options": {
            "hlc_weights": [
                scenario.weights.alpha_queue,
                scenario.weights.alpha_stop,
                scenario.weights.alpha_speed,
            ],
            "plan_horizon": scenario.plan_horizon,
            "ppo": {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in scenario.ppo_overrides.items()
            },
        },
    }
    if scenario.schedule is not None:
        data["demand"]["schedule"] = [
            {"start": s, "end": e, "level": lv}
            for s, e, lv in scenario.schedule
        ]
    return data


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_dict(scenario), fh, sort_keys=False)


# -- shipped examples ------------------------------------------------------

DAY_PATTERN = (
    "low", "low", "med", "high", "high", "med", "low", "low",
    "med", "high", "high", "med", "low", "low", "low", "low",
)


def example_scenario(n: int = 6, name: str = "arterial-six") -> Scenario:
    """Six-intersection corridor with three demand levels and a 16 h day."""
    specs = tuple(
        IntersectionSpec(
            ident=f"i{k + 1}", link_length=500.0, lanes=2,
            free_flow_tt=36.0, turn_ratio=0.85, sat_flow=0.5,
            stop_headway=7.0, green_min=0.1, green_max=0.9,
            branch_min=0.0, branch_max=0.1,
        )
        for k in range(n)
    )
    corridor = CorridorSpec(
        intersections=specs, cycle_min=60.0, cycle_max=120.0,
    )
    levels = {
        "low": {"entry_in": 0.10, "entry_out": 0.10, "branch": 0.01,
                "cross": 0.04, "left": 0.01, "direct": None},
        "med": {"entry_in": 0.20, "entry_out": 0.20, "branch": 0.02,
                "cross": 0.06, "left": 0.02, "direct": None},
        "high": {"entry_in": 0.32, "entry_out": 0.32, "branch": 0.02,
                 "cross": 0.08, "left": 0.03, "direct": None},
    }
    warmup = 1200.0
    schedule = [(0.0, warmup, DAY_PATTERN[0])]
    for k, level in enumerate(DAY_PATTERN):
        start = warmup + k * 3600.0
        schedule.append((start, start + 3600.0, level))
    return Scenario(
        name=name, corridor=corridor, levels=levels,
        schedule=tuple(schedule),
    )
