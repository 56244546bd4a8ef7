"""Building geometry, area connectivity graph, victims and the mission clock.

The building is a set of axis-aligned rectangles ("area segments") with an
explicit connectivity graph on top.  All types here are frozen; operations
return new objects.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

MISSION_DURATION = 900.0
TICK = 0.2

AREA_KINDS = ("room", "corridor", "elevator", "bathroom", "stairwell")
ZONE_ANCHOR_KINDS = ("corridor",)


class MapError(ValueError):
    """Raised for invalid map documents, perturbations and geometry queries."""


@dataclass(frozen=True)
class AreaSegment:
    id: int
    name: str
    kind: str
    bounds: tuple[float, float, float, float]  # x0, y0, x1, y1

    @property
    def centroid(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bounds
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    def contains(self, p: Sequence[float]) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    def contains_strictly(self, p: Sequence[float]) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 < p[0] < x1 and y0 < p[1] < y1


def _edge(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class AreaGraph:
    areas: tuple[AreaSegment, ...]
    edges: frozenset[tuple[int, int]]
    hazards: frozenset[int] = frozenset()
    start: int = 0
    map_id: str = "custom"
    _adj: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _hops: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.areas)
        adj: list[list[int]] = [[] for _ in range(n)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        object.__setattr__(self, "_adj", tuple(tuple(sorted(x)) for x in adj))
        hops = np.full((n, n), -1, dtype=np.int64)
        for s in range(n):
            hops[s] = _bfs(self._adj, s)
        hops.setflags(write=False)
        object.__setattr__(self, "_hops", hops)

    def __len__(self) -> int:
        return len(self.areas)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._adj[i]

    def degree(self, i: int) -> int:
        return len(self._adj[i])

    def hops(self, a: int, b: int) -> int:
        """Hop count between two areas, -1 when unreachable."""
        return int(self._hops[a, b])

    @property
    def hop_matrix(self) -> np.ndarray:
        return self._hops

    def is_connected(self) -> bool:
        return bool((self._hops[0] >= 0).all()) if len(self.areas) else True

    def id_of(self, name: str) -> int:
        for a in self.areas:
            if a.name == name:
                return a.id
        raise KeyError(name)

    def has_edge(self, a: int, b: int) -> bool:
        return _edge(a, b) in self.edges


def _bfs(adj: Sequence[Sequence[int]], src: int) -> list[int]:
    dist = [-1] * len(adj)
    dist[src] = 0
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


@dataclass(frozen=True)
class Perturbation:
    kind: str  # blockage | opening | fire
    target: tuple[int, int] | int

    @classmethod
    def from_doc(cls, d: dict) -> "Perturbation":
        kind = d["kind"]
        if kind == "fire":
            return cls(kind, int(d["target"]))
        a, b = d["target"]
        return cls(kind, _edge(int(a), int(b)))


@dataclass(frozen=True)
class Victim:
    id: int
    position: tuple[float, float]
    severity: str  # green | yellow
    state: str = "untriaged"  # untriaged | triaged | expired
    expiry_time: float | None = None

    @property
    def alive(self) -> bool:
        return self.state != "expired"


@dataclass(frozen=True)
class WorldState:
    clock: float
    victims: tuple[Victim, ...]
    rescuer_position: tuple[float, float]
    score: float = 0.0
    mission_duration: float = MISSION_DURATION


@dataclass(frozen=True)
class World:
    """A loaded map: base graph, victims and the named perturbation sets."""

    graph: AreaGraph
    victims: tuple[Victim, ...]
    perturbation_sets: dict = field(default_factory=dict, compare=False)
    perturbation_set: str = "none"
    base_graph: AreaGraph | None = field(default=None, compare=False, repr=False)

    def perturbed(self, name: str) -> "World":
        """The same map with perturbation set ``name`` applied to the unperturbed graph."""
        if name not in self.perturbation_sets:
            raise MapError(f"unknown perturbation set {name!r}")
        base = self.base_graph if self.base_graph is not None else self.graph
        g = apply_perturbations(base, self.perturbation_sets[name], self.victims)
        return replace(self, graph=g, perturbation_set=name, base_graph=base)


# ---------------------------------------------------------------- loading

MAP_SCHEMA = {
    "type": "object",
    "required": ["areas", "edges", "victims"],
    "properties": {
        "id": {"type": "string"},
        "start": {"type": "integer", "minimum": 0},
        "areas": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "name", "kind", "rect"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "name": {"type": "string", "minLength": 1},
                    "kind": {"enum": list(AREA_KINDS)},
                    "rect": {"type": "array", "items": {"type": "number"},
                             "minItems": 4, "maxItems": 4},
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer"},
                      "minItems": 2, "maxItems": 2},
        },
        "victims": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "pos", "severity"],
                "properties": {
                    "id": {"type": "integer"},
                    "pos": {"type": "array", "items": {"type": "number"},
                            "minItems": 2, "maxItems": 2},
                    "severity": {"enum": ["green", "yellow"]},
                    "expiry_s": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "perturbations": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["kind", "target"],
                    "properties": {"kind": {"enum": ["blockage", "opening", "fire"]}},
                },
            },
        },
    },
}

DEFAULT_YELLOW_EXPIRY = 420.0


def default_map_path() -> Path:
    return Path(str(resources.files("rescue_tom") / "data" / "default_map.json"))


def _read_doc(spec) -> dict:
    if isinstance(spec, dict):
        return spec
    with open(spec, encoding="utf-8") as fh:
        return json.load(fh)


def _rects_overlap(r: Sequence[float], s: Sequence[float]) -> bool:
    return min(r[2], s[2]) > max(r[0], s[0]) and min(r[3], s[3]) > max(r[1], s[1])


def shared_wall(r: Sequence[float], s: Sequence[float]):
    """Common boundary segment of two touching rectangles, or None.

    Only segments of positive length count; rectangles meeting at a corner
    are not adjacent.
    """
    if r[2] == s[0] or s[2] == r[0]:
        x = r[2] if r[2] == s[0] else r[0]
        lo, hi = max(r[1], s[1]), min(r[3], s[3])
        if hi > lo:
            return (x, lo), (x, hi)
    if r[3] == s[1] or s[3] == r[1]:
        y = r[3] if r[3] == s[1] else r[1]
        lo, hi = max(r[0], s[0]), min(r[2], s[2])
        if hi > lo:
            return (lo, y), (hi, y)
    return None


def load_map(spec) -> tuple[AreaGraph, tuple[Victim, ...]]:
    """Parse and validate a map-spec document (dict or path)."""
    doc = _read_doc(spec)
    try:
        jsonschema.validate(doc, MAP_SCHEMA)
    except jsonschema.ValidationError as e:
        raise MapError(f"schema violation: {e.message}") from None

    raw = sorted(doc["areas"], key=lambda a: a["id"])
    ids = [a["id"] for a in raw]
    if ids != list(range(len(raw))):
        raise MapError("area ids must be unique and contiguous from 0")
    names = [a["name"] for a in raw]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise MapError(f"duplicate area name {dup!r}")
    areas = []
    for a in raw:
        x0, y0, x1, y1 = (float(v) for v in a["rect"])
        if not (x1 > x0 and y1 > y0):
            raise MapError(f"degenerate rectangle for {a['name']!r}")
        areas.append(AreaSegment(a["id"], a["name"], a["kind"], (x0, y0, x1, y1)))
    for i, a in enumerate(areas):
        for b in areas[i + 1:]:
            if _rects_overlap(a.bounds, b.bounds):
                raise MapError(f"areas {a.name!r} and {b.name!r} overlap")

    n = len(areas)
    edges = set()
    for a, b in doc["edges"]:
        if not (0 <= a < n and 0 <= b < n):
            raise MapError(f"edge ({a}, {b}) references an unknown area")
        if a == b:
            raise MapError(f"self edge on area {a}")
        if shared_wall(areas[a].bounds, areas[b].bounds) is None:
            raise MapError(f"edge ({a}, {b}) joins areas without a shared wall")
        edges.add(_edge(a, b))

    start = int(doc.get("start", 0))
    if start >= n:
        raise MapError("start area out of range")
    graph = AreaGraph(tuple(areas), frozenset(edges), frozenset(), start, doc.get("id", "custom"))

    victims = []
    seen_ids = set()
    for v in doc["victims"]:
        if v["id"] in seen_ids:
            raise MapError(f"duplicate victim id {v['id']}")
        seen_ids.add(v["id"])
        pos = (float(v["pos"][0]), float(v["pos"][1]))
        inside = [a.id for a in areas if a.contains_strictly(pos)]
        if len(inside) != 1:
            raise MapError(f"victim {v['id']} at {pos} is not inside exactly one area")
        expiry = None
        if v["severity"] == "yellow":
            expiry = float(v.get("expiry_s", DEFAULT_YELLOW_EXPIRY))
        victims.append(Victim(int(v["id"]), pos, v["severity"], "untriaged", expiry))

    if not graph.is_connected():
        raise MapError("area graph is disconnected")
    return graph, tuple(victims)


def load_world(spec=None, perturbation_set: str = "none") -> World:
    """Load a map document (default: the shipped map) and apply a perturbation set."""
    doc = _read_doc(spec if spec is not None else default_map_path())
    graph, victims = load_map(doc)
    sets = {"none": ()}
    for name, items in doc.get("perturbations", {}).items():
        sets[name] = tuple(Perturbation.from_doc(p) for p in items)
    world = World(graph, victims, sets, "none", graph)
    return world.perturbed(perturbation_set) if perturbation_set != "none" else world


# ---------------------------------------------------------------- perturbations

def apply_perturbations(graph: AreaGraph, ps: Iterable[Perturbation],
                        victims: Sequence[Victim] | None = None) -> AreaGraph:
    """Apply perturbations in order and return a new graph.

    With ``victims`` given, the result must keep every victim-bearing area
    reachable from the start area; otherwise the whole graph must stay
    connected.
    """
    edges = set(graph.edges)
    hazards = set(graph.hazards)
    n = len(graph.areas)
    for p in ps:
        if p.kind == "fire":
            if not 0 <= p.target < n:
                raise MapError(f"fire on unknown area {p.target}")
            hazards.add(p.target)
            continue
        a, b = p.target
        if not (0 <= a < n and 0 <= b < n) or a == b:
            raise MapError(f"bad perturbation target {p.target}")
        e = _edge(a, b)
        if p.kind == "blockage":
            if e not in edges:
                raise MapError(f"blockage on missing edge {e}")
            edges.remove(e)
        elif p.kind == "opening":
            if e in edges:
                raise MapError(f"opening on existing edge {e}")
            if shared_wall(graph.areas[a].bounds, graph.areas[b].bounds) is None:
                raise MapError(f"opening between non-adjacent areas {e}")
            edges.add(e)
        else:
            raise MapError(f"unknown perturbation kind {p.kind!r}")

    out = AreaGraph(graph.areas, frozenset(edges), frozenset(hazards), graph.start, graph.map_id)
    if victims is None:
        if not out.is_connected():
            raise MapError("perturbations disconnect the graph")
    else:
        for v in victims:
            a = area_of(out, v.position)
            if out.hops(out.start, a) < 0:
                raise MapError(f"perturbations cut off victim-bearing area {a}")
    return out


# ---------------------------------------------------------------- queries

def area_of(graph: AreaGraph, position: Sequence[float]) -> int:
    """Id of the area containing ``position``; shared walls go to the lowest id."""
    x, y = position[0], position[1]
    for a in graph.areas:
        x0, y0, x1, y1 = a.bounds
        if x0 <= x <= x1 and y0 <= y <= y1:
            return a.id
    raise MapError(f"position {tuple(position)} is outside every area")


def shortest_path(graph: AreaGraph, src: int, dst: int) -> list[int]:
    """Minimum-hop path, lexicographically smallest among ties."""
    n = len(graph.areas)
    if not (0 <= src < n and 0 <= dst < n):
        raise MapError(f"unknown area id in ({src}, {dst})")
    d = graph.hops(src, dst)
    if d < 0:
        raise MapError(f"area {dst} unreachable from {src}")
    path = [src]
    u = src
    while u != dst:
        u = next(v for v in graph.neighbors(u) if graph.hops(v, dst) == graph.hops(u, dst) - 1)
        path.append(u)
    return path


def zone_decomposition(graph: AreaGraph) -> list[list[int]]:
    """Corridor-anchored zones.

    Every corridor anchors one zone.  Other areas join the anchor nearest in
    hops (lowest anchor id on ties).  Areas that reach no anchor form
    singleton zones.  Zones come back sorted by their smallest member.
    """
    anchors = [a.id for a in graph.areas if a.kind in ZONE_ANCHOR_KINDS]
    zones: dict[int, list[int]] = {c: [c] for c in anchors}
    singles = []
    for a in graph.areas:
        if a.id in zones:
            continue
        best, best_d = None, None
        for c in anchors:
            d = graph.hops(a.id, c)
            if d >= 0 and (best_d is None or d < best_d):
                best, best_d = c, d
        if best is None:
            singles.append([a.id])
        else:
            zones[best].append(a.id)
    out = [sorted(z) for z in zones.values()] + singles
    return sorted(out, key=lambda z: z[0])


def zone_index(graph: AreaGraph) -> dict[int, int]:
    """Map area id -> index into :func:`zone_decomposition`."""
    return {a: i for i, z in enumerate(zone_decomposition(graph)) for a in z}


def zone_anchor(graph: AreaGraph, zone: Sequence[int]) -> int:
    for a in zone:
        if graph.areas[a].kind in ZONE_ANCHOR_KINDS:
            return a
    return zone[0]


def door_point(graph: AreaGraph, a: int, b: int) -> tuple[float, float]:
    """Midpoint of the wall shared by two areas."""
    w = shared_wall(graph.areas[a].bounds, graph.areas[b].bounds)
    if w is None:
        raise MapError(f"areas {a} and {b} share no wall")
    (x0, y0), (x1, y1) = w
    return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


def _inset(rect, p, margin):
    x0, y0, x1, y1 = rect
    mx = min(margin, (x1 - x0) / 2.0)
    my = min(margin, (y1 - y0) / 2.0)
    return (min(max(p[0], x0 + mx), x1 - mx), min(max(p[1], y0 + my), y1 - my))


def route_waypoints(graph: AreaGraph, path: Sequence[int], start: Sequence[float],
                    goal: Sequence[float], margin: float = 0.5) -> list[tuple[float, float]]:
    """Waypoints from ``start`` to ``goal`` along an area path.

    Each door is crossed between two points inset ``margin`` into the areas on
    either side, so straight segments never graze a third area's wall.
    """
    pts = [tuple(start)]
    for a, b in zip(path, path[1:]):
        d = door_point(graph, a, b)
        pts.append(_inset(graph.areas[a].bounds, d, margin))
        pts.append(_inset(graph.areas[b].bounds, d, margin))
    pts.append(tuple(goal))
    return pts


def polyline_length(pts: Sequence[Sequence[float]]) -> float:
    return sum(math.dist(p, q) for p, q in zip(pts, pts[1:]))


def travel_distance(graph: AreaGraph, position: Sequence[float], src: int, dst: int) -> float:
    """Walking distance in meters from ``position`` (in ``src``) to the centroid of ``dst``."""
    path = shortest_path(graph, src, dst)
    return polyline_length(route_waypoints(graph, path, position, graph.areas[dst].centroid))


# ---------------------------------------------------------------- clock

def initial_state(graph: AreaGraph, victims: Sequence[Victim],
                  mission_duration: float = MISSION_DURATION) -> WorldState:
    return WorldState(0.0, tuple(victims), graph.areas[graph.start].centroid, 0.0, mission_duration)


def step_world(state: WorldState, dt: float) -> WorldState:
    """Advance the clock and expire yellow victims whose deadline has passed."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    clock = min(state.clock + dt, state.mission_duration)
    victims = state.victims
    if any(v.state == "untriaged" and v.expiry_time is not None and v.expiry_time <= clock
           for v in victims):
        victims = tuple(
            replace(v, state="expired")
            if v.state == "untriaged" and v.expiry_time is not None and v.expiry_time <= clock
            else v
            for v in victims
        )
    return replace(state, clock=clock, victims=victims)
