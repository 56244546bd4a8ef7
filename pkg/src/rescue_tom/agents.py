"""Faux-human rescuer agents.

The agents combine three behavioral biases seen in pilot players: subgoals
chosen soft-optimally (Boltzmann), plans expressed as room sequences rather
than low-level moves, and greedy frontier search mixed with zone-level
planning.  On top of that sits a triage policy, selective or opportunistic,
optionally flipping once during the mission.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .trajectory import STRATEGIES, Event, Observation, Trajectory, sighting_starts
from .world import (
    MISSION_DURATION, TICK, AreaGraph, Victim, World, area_of, initial_state,
    load_world, polyline_length, route_waypoints, shortest_path, step_world, travel_distance,
    zone_anchor, zone_decomposition,
)

PLANNERS = ("frontier_greedy", "zone_planner", "mixed")


@dataclass(frozen=True)
class TriagePolicy:
    kind: str = "selective"
    switch_time: float | None = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown triage policy {self.kind!r}")
        if self.switch_time is not None and not 0 < self.switch_time < MISSION_DURATION:
            raise ValueError("switch_time must lie inside the mission")

    def kind_at(self, t: float) -> str:
        if self.switch_time is not None and t >= self.switch_time:
            return STRATEGIES[1 - STRATEGIES.index(self.kind)]
        return self.kind


@dataclass(frozen=True)
class AgentConfig:
    triage: TriagePolicy = field(default_factory=TriagePolicy)
    temperature: float = 1.0
    planner: str = "mixed"
    seed: int = 0
    speed: float = 4.3  # m/s, Minecraft walking pace
    fov_angle_deg: float = 90.0
    fov_range: float = 10.0
    green_triage_s: float = 7.5
    yellow_triage_s: float = 15.0
    green_points: float = 10.0
    yellow_points: float = 30.0
    hazard_penalty: float = 2.0
    scan_ticks: int = 8
    max_sweeps: int = 0
    frontier_utility: str = "hops"
    mission_duration: float = MISSION_DURATION

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not self.speed > 0:
            raise ValueError("speed must be positive")
        if self.planner not in PLANNERS:
            raise ValueError(f"unknown planner {self.planner!r}")

    def summary(self) -> dict:
        d = asdict(self)
        d["triage"] = {"kind": self.triage.kind, "switch_time": self.triage.switch_time}
        return d


# ---------------------------------------------------------------- choice models

def boltzmann_probs(utilities: Sequence[float], temperature: float) -> np.ndarray:
    u = np.asarray(utilities, dtype=np.float64)
    if u.size == 0:
        raise ValueError("utilities must be non-empty")
    if not np.all(np.isfinite(u)):
        raise ValueError("utilities must be finite")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    z = (u - u.max()) / temperature
    p = np.exp(z)
    return p / p.sum()


def boltzmann_sample(utilities: Sequence[float], temperature: float,
                     rng: np.random.Generator) -> int:
    """Draw an index with probability proportional to exp(u_i / T)."""
    p = boltzmann_probs(utilities, temperature)
    c = np.cumsum(p)
    i = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(i, len(p) - 1)


def frontier_candidates(graph: AreaGraph, visited, current: int) -> list[int]:
    """Unvisited areas next to the visited set, nearest (hops) first."""
    if not visited:
        cands = set(graph.neighbors(current))
    else:
        cands = {b for a in visited for b in graph.neighbors(a)}
    cands = [c for c in cands
             if c not in visited and c != current and graph.hops(current, c) >= 0]
    return sorted(cands, key=lambda c: (graph.hops(current, c), c))


def _is_room(graph: AreaGraph, a: int) -> bool:
    return graph.areas[a].kind != "corridor"


def _zone_rooms(graph, zones, zone_of, config, visited, current, position):
    z = zones[zone_of[current]]
    rooms = [a for a in z if _is_room(graph, a) and a not in visited and a != current
             and graph.hops(current, a) >= 0]

    def key(a):
        hazard = config.hazard_penalty if a in graph.hazards else 0.0
        d = 0.0
        if position is not None:
            path = shortest_path(graph, current, a)
            d = polyline_length(route_waypoints(graph, path, position, graph.areas[a].centroid))
        return (graph.hops(current, a) + hazard, d, a)

    return sorted(rooms, key=key)


def plan_room_sequence(graph: AreaGraph, config: AgentConfig, visited, current: int,
                       rng: np.random.Generator,
                       position: Sequence[float] | None = None) -> list[int]:
    """Next room-level subgoals for the configured planner.

    zone_planner: the current zone's unvisited rooms nearest-first, then the
    anchor corridor of the nearest zone that still has unvisited areas.
    frontier_greedy: one Boltzmann draw over the frontier with utility
    -hops (minus a penalty for burning areas).
    mixed: zone rooms while the zone has any, frontier otherwise.
    """
    zones = zone_decomposition(graph)
    zone_of = {a: i for i, z in enumerate(zones) for a in z}

    def frontier():
        cands = frontier_candidates(graph, visited, current)
        if not cands:
            return []
        if config.frontier_utility == "distance" and position is not None:
            cost = [travel_distance(graph, position, current, c) / 10.0 for c in cands]
        else:
            cost = [graph.hops(current, c) for c in cands]
        u = [-d - (config.hazard_penalty if c in graph.hazards else 0.0)
             for c, d in zip(cands, cost)]
        return [cands[boltzmann_sample(u, config.temperature, rng)]]

    if config.planner == "frontier_greedy":
        return frontier()

    rooms = _zone_rooms(graph, zones, zone_of, config, visited, current, position)
    if config.planner == "mixed":
        return rooms if rooms else frontier()

    plan = list(rooms)
    last = plan[-1] if plan else current
    here = zone_of[current]
    open_zones = [i for i, z in enumerate(zones)
                  if i != here and any(a not in visited for a in z)
                  and graph.hops(last, zone_anchor(graph, z)) >= 0]
    if open_zones:
        best = min(open_zones, key=lambda i: (graph.hops(last, zone_anchor(graph, zones[i])), i))
        plan.append(zone_anchor(graph, zones[best]))
    return plan


def live_untriaged_yellows(victims: Sequence[Victim], clock: float) -> bool:
    return any(v.severity == "yellow" and v.state == "untriaged"
               and (v.expiry_time is None or v.expiry_time > clock) for v in victims)


def decide_triage(victim: Victim, policy_kind: str, clock: float,
                  victims: Sequence[Victim]) -> bool:
    """Whether a rescuer following ``policy_kind`` triages ``victim`` now."""
    if victim.state != "untriaged":
        return False
    if victim.expiry_time is not None and victim.expiry_time <= clock:
        return False
    if policy_kind == "opportunistic":
        return True
    return victim.severity == "yellow" or not live_untriaged_yellows(victims, clock)


# ---------------------------------------------------------------- simulation

def _angle_wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


class _Walker:
    def __init__(self, points):
        self.points = [tuple(p) for p in points]
        self.i = 1

    @property
    def done(self) -> bool:
        return self.i >= len(self.points)

    def advance(self, pos, dist):
        """Move up to ``dist`` meters; returns (new position, heading or None)."""
        heading = None
        x, y = pos
        while dist > 1e-12 and not self.done:
            tx, ty = self.points[self.i]
            dx, dy = tx - x, ty - y
            d = math.hypot(dx, dy)
            if d > 1e-12:
                heading = math.atan2(dy, dx)
            if d <= dist:
                x, y = tx, ty
                dist -= d
                self.i += 1
            else:
                x, y = x + dx / d * dist, y + dy / d * dist
                dist = 0.0
        return (x, y), heading


def _victim_roster(victims: Sequence[Victim]) -> list[dict]:
    return [{"id": v.id, "pos": list(v.position), "severity": v.severity,
             "expiry_s": v.expiry_time} for v in victims]


def generate_trajectory(world: World, config: AgentConfig) -> Trajectory:
    """Simulate one mission at 5 Hz and return the labelled trajectory."""
    g = world.graph
    rng = np.random.default_rng(config.seed)
    state = initial_state(g, world.victims, config.mission_duration)
    vindex = {v.id: i for i, v in enumerate(state.victims)}
    by_area: dict[int, list[int]] = {}
    for v in world.victims:
        by_area.setdefault(area_of(g, v.position), []).append(v.id)
    half_fov = math.radians(config.fov_angle_deg) / 2.0

    pos = g.areas[g.start].centroid
    heading = math.pi / 2
    area = area_of(g, pos)
    visited = {area}
    known: set[int] = set()
    last_seen: dict[int, float] = {}
    sweeps = 0

    mode, walker, timer, target_victim, target_area = "idle", None, 0, None, None
    obs: list[Observation] = []
    labels: list[str] = []
    events: list[Event] = [Event(0.0, "AreaEnter", area)]
    n_max = int(round(config.mission_duration / TICK))

    def victim(vid):
        return state.victims[vindex[vid]]

    for k in range(n_max + 1):
        t = round(k * TICK, 1)
        if k > 0:
            state = step_world(state, TICK)
            if mode in ("move", "approach") and walker is not None:
                pos, h = walker.advance(pos, config.speed * TICK)
                if h is not None:
                    heading = h
            new_area = area_of(g, pos)
            if new_area != area:
                events.append(Event(t, "AreaExit", area))
                events.append(Event(t, "AreaEnter", new_area))
                area = new_area
                visited.add(area)

        fov = set()
        for vid in by_area.get(area, ()):
            vx, vy = victim(vid).position
            dx, dy = vx - pos[0], vy - pos[1]
            d = math.hypot(dx, dy)
            if d <= config.fov_range and (
                    d < 1e-9 or abs(_angle_wrap(math.atan2(dy, dx) - heading)) <= half_fov):
                fov.add(vid)
        for vid in sighting_starts(last_seen, t, fov):
            events.append(Event(t, "VictimSeen", vid))
        known |= fov
        policy_kind = config.triage.kind_at(t)
        obs.append(Observation(t, pos, area, frozenset(fov)))
        labels.append(policy_kind)

        # ---- decide what to do during the next tick
        if mode == "triage":
            v = victim(target_victim)
            if v.state == "expired":
                mode = "idle"
            else:
                timer -= 1
                if timer <= 0:
                    events.append(Event(t, "TriageComplete", target_victim))
                    pts = config.yellow_points if v.severity == "yellow" else config.green_points
                    victims = list(state.victims)
                    victims[vindex[target_victim]] = replace(v, state="triaged")
                    state = replace(state, victims=tuple(victims), score=state.score + pts)
                    # look around again: a triage may have cut a room scan short
                    mode, timer = ("scan", config.scan_ticks) if _is_room(g, area) else ("idle", 0)
        if mode != "triage":
            here = [victim(vid) for vid in by_area.get(area, ())
                    if vid in known and decide_triage(victim(vid), policy_kind, t, state.victims)]
            if here:
                v = min(here, key=lambda v: (math.dist(pos, v.position), v.id))
                if math.dist(pos, v.position) < 1e-9:
                    events.append(Event(t, "TriageStart", v.id))
                    dur = config.yellow_triage_s if v.severity == "yellow" else config.green_triage_s
                    mode, timer, target_victim = "triage", int(math.ceil(dur / TICK - 1e-9)), v.id
                elif mode != "approach" or target_victim != v.id:
                    mode, target_victim = "approach", v.id
                    walker = _Walker([pos, v.position])
            elif mode == "approach":
                mode = "idle"

        if mode == "move" and walker.done:
            if _is_room(g, target_area) and area == target_area:
                mode, timer = "scan", config.scan_ticks
            else:
                mode = "idle"
        if mode == "scan":
            if timer <= 0:
                mode = "idle"
            else:
                heading = _angle_wrap(heading + 2 * math.pi / config.scan_ticks)
                timer -= 1

        if mode == "idle":
            if all(v.state != "untriaged" for v in state.victims):
                break
            pending = [vid for vid in known if vid not in by_area.get(area, ())
                       and decide_triage(victim(vid), policy_kind, t, state.victims)]
            dest = None
            if pending:
                vareas = {area_of(g, victim(vid).position) for vid in pending}
                reachable = [a for a in vareas if g.hops(area, a) >= 0]
                if reachable:
                    dest = min(reachable, key=lambda a: (g.hops(area, a), a))
            if dest is None:
                # only the plan head is executed; replanning after every
                # subgoal makes "nearest" relative to where the rescuer is
                plan = plan_room_sequence(g, config, visited, area, rng, pos)
                if not plan and sweeps < config.max_sweeps:
                    sweeps += 1
                    visited = {area}
                    plan = plan_room_sequence(g, config, visited, area, rng, pos)
                if plan:
                    dest = plan[0]
            if dest is None:
                break
            target_area = dest
            path = shortest_path(g, area, dest)
            pts = route_waypoints(g, path, pos, g.areas[dest].centroid)
            if not _is_room(g, dest) and len(path) > 1:
                pts = pts[:-1]  # corridors are transit goals: stop just inside
            mode, walker = "move", _Walker(pts)

    meta = {
        "map_id": g.map_id,
        "perturbation_set": world.perturbation_set,
        "seed": int(config.seed),
        "config": config.summary(),
        "victims": _victim_roster(world.victims),
        "mission_duration": config.mission_duration,
        "source": "faux",
        "score": state.score,
    }
    return Trajectory(meta, obs, events, labels)


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True)
class DatasetConfig:
    count: int = 100
    seed: int = 0
    policy_mix: dict = field(default_factory=lambda: {
        "selective": 0.375, "opportunistic": 0.375, "switching": 0.25})
    switch_range: tuple[float, float] = (120.0, 600.0)
    temperature_range: tuple[float, float] = (0.5, 2.0)
    planner_mix: dict = field(default_factory=lambda: {
        "frontier_greedy": 1.0, "zone_planner": 1.0, "mixed": 1.0})
    map: str | None = None
    perturbation_set: str = "random"
    speed: float = 4.3

    @classmethod
    def from_doc(cls, doc: dict) -> "DatasetConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown dataset config keys: {sorted(extra)}")
        d = dict(doc)
        for k in ("switch_range", "temperature_range"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
        cfg = cls(**d)
        if cfg.count < 1:
            raise ValueError("count must be at least 1")
        return cfg

    def to_doc(self) -> dict:
        d = asdict(self)
        d["switch_range"] = list(self.switch_range)
        d["temperature_range"] = list(self.temperature_range)
        return d


def _pick(rng: np.random.Generator, weights: dict) -> str:
    keys = list(weights)
    w = np.array([float(weights[k]) for k in keys])
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError(f"bad mixture weights {weights}")
    return keys[int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))]


def sample_config(spec: DatasetConfig, seed: int, perturbation_sets: Sequence[str]) -> tuple[AgentConfig, str]:
    """Draw one agent configuration (and perturbation set) for ``seed``."""
    rng = np.random.default_rng([seed, 0x5EED])
    kind = _pick(rng, spec.policy_mix)
    switch = None
    if kind == "switching":
        kind = STRATEGIES[int(rng.random() < 0.5)]
        switch = float(np.round(rng.uniform(*spec.switch_range), 1))
    elif kind not in STRATEGIES:
        raise ValueError(f"unknown policy mix entry {kind!r}")
    temperature = float(rng.uniform(*spec.temperature_range))
    planner = _pick(rng, spec.planner_mix)
    if spec.perturbation_set == "random":
        pset = perturbation_sets[int(rng.integers(len(perturbation_sets)))]
    else:
        pset = spec.perturbation_set
    cfg = AgentConfig(triage=TriagePolicy(kind, switch), temperature=temperature,
                      planner=planner, seed=seed, speed=spec.speed)
    return cfg, pset


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    config: DatasetConfig

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def summary(self) -> dict:
        starts = Counter(t.labels[0] for t in self.trajectories)
        steps = Counter(l for t in self.trajectories for l in t.labels)
        switching = sum(1 for t in self.trajectories if len(set(t.labels)) > 1)
        return {"count": len(self.trajectories), "start_labels": dict(sorted(starts.items())),
                "step_labels": dict(sorted(steps.items())), "switching": switching}


def generate_dataset(spec: DatasetConfig, world: World | None = None) -> Dataset:
    """Trajectories for seeds ``spec.seed .. spec.seed + count - 1``."""
    if spec.count < 1:
        raise ValueError("count must be at least 1")
    base = world if world is not None else load_world(spec.map)
    names = sorted(base.perturbation_sets)
    worlds = {}
    out = []
    for s in range(spec.seed, spec.seed + spec.count):
        cfg, pset = sample_config(spec, s, names)
        if pset not in worlds:
            worlds[pset] = base.perturbed(pset) if pset != base.perturbation_set else base
        out.append(generate_trajectory(worlds[pset], cfg))
    return Dataset(out, spec)
