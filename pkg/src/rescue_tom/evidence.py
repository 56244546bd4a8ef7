"""Evidence accumulation: sequential belief updates from a library of detectors.

A belief is a plain 1-D numpy array on the probability simplex.  Detectors
scan a trajectory and emit time-stamped :class:`Evidence`; each evidence kind
has an update function mapping a belief to a new belief.  The predicted
condition at any time is the argmax of the belief after all evidence seen so
far.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .trajectory import STRATEGIES, Trajectory, area_transitions, to_triage_sequence
from .world import AreaGraph, door_point

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class ConditionSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("condition labels must be unique")

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)


TRIAGE_CONDITIONS = ConditionSet(STRATEGIES)


def init_belief(d: int) -> np.ndarray:
    """Uniform prior over ``d`` conditions."""
    if d < 2:
        raise ValueError("a belief needs at least two conditions")
    return np.full(d, 1.0 / d)


def apply_update(b: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    """Multiplicative update b_i * w_i, renormalized to unit sum."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != b.shape:
        raise ValueError("weights and belief differ in size")
    if not (np.all(np.isfinite(w)) and np.all(w > 0)):
        raise ValueError("weights must be positive and finite")
    m = b * w
    s = m.sum()
    if not s > 0:
        raise ValueError("belief has no mass left")
    return m / s


def mix_uniform(b: np.ndarray, rate: float) -> np.ndarray:
    """Blend a belief toward uniform; models a standing chance of strategy change."""
    return (1.0 - rate) * b + rate / len(b)


def predict(b: np.ndarray, conds: ConditionSet) -> str:
    """Label of the most likely condition (lowest index wins ties)."""
    if len(b) != len(conds):
        raise ValueError("belief and condition set differ in size")
    return conds.labels[int(np.argmax(b))]


@dataclass(frozen=True)
class Evidence:
    id: str
    t: float
    payload: dict = field(default_factory=dict, compare=False)


@dataclass
class EvidenceRule:
    detect: Callable[[Trajectory], list[Evidence]]
    update: Callable[[np.ndarray, Evidence], np.ndarray]


class EvidenceLibrary(dict):
    """Mapping detector name -> :class:`EvidenceRule`."""

    def detect_all(self, traj: Trajectory) -> list[Evidence]:
        out = []
        for name, rule in self.items():
            out.extend(rule.detect(traj))
        out.sort(key=lambda e: (e.t, e.id))
        return out

    def apply(self, b: np.ndarray, ev: Evidence) -> np.ndarray:
        nb = self[ev.id].update(b, ev)
        if abs(nb.sum() - 1.0) > SIMPLEX_TOL or nb.min() < 0:
            raise ValueError(f"update {ev.id!r} left the simplex")
        return nb


def run_algorithm(library: EvidenceLibrary, traj: Trajectory, conds: ConditionSet,
                  query_times: Sequence[float]):
    """Generic evidence-accumulation loop.

    Returns (evidence list, beliefs at each query time, predictions).  The
    belief is held constant between evidence events; evidence stamped at a
    query time counts toward that query.
    """
    evs = library.detect_all(traj)
    b = init_belief(len(conds))
    beliefs, preds = [], []
    j = 0
    for t in query_times:
        while j < len(evs) and evs[j].t <= t + 1e-9:
            b = library.apply(b, evs[j])
            j += 1
        beliefs.append(b.copy())
        preds.append(predict(b, conds))
    return evs, np.array(beliefs).reshape(len(query_times), len(conds)), preds


# ---------------------------------------------------------------- triage strategy

@dataclass(frozen=True)
class TriageEvidenceParams:
    ignore_green_weight: float = 3.0
    green_on_sight_weight: float = 3.0
    grace_s: float = 4.0
    forgetting: float = 0.5


class _VictimTimeline:
    """Observer-side bookkeeping of victim states reconstructed from a log."""

    def __init__(self, traj: Trajectory):
        self.roster = traj.victim_roster()
        self.completed = {}
        for e in traj.events:
            if e.kind == "TriageComplete" and e.subject not in self.completed:
                self.completed[e.subject] = e.t

    def severity(self, v: int) -> str:
        return self.roster.get(v, {}).get("severity", "green")

    def untriaged_at(self, v: int, t: float) -> bool:
        done = self.completed.get(v)
        return done is None or done > t

    def live_yellows_at(self, t: float) -> bool:
        for v, info in self.roster.items():
            if info.get("severity") != "yellow" or not self.untriaged_at(v, t):
                continue
            exp = info.get("expiry_s")
            if exp is None or exp > t:
                return True
        return False


def detect_ignored_green(traj: Trajectory, grace_s: float = 4.0) -> list[Evidence]:
    """A green victim seen while live yellows remain and left alone.

    Fires once the rescuer has neither started triage within ``grace_s`` of
    the sighting nor before leaving the area it was seen from.
    """
    tl = _VictimTimeline(traj)
    events = traj.events
    end = traj.observations[-1].t
    out = []
    for i, e in enumerate(events):
        if e.kind != "VictimSeen" or tl.severity(e.subject) != "green":
            continue
        if not tl.untriaged_at(e.subject, e.t) or not tl.live_yellows_at(e.t):
            continue
        area = traj.observations[traj.index_at(e.t)].area
        exit_t = next((f.t for f in events[i + 1:] if f.kind == "AreaExit" and f.subject == area), None)
        if exit_t is None:
            continue
        deadline = max(e.t + grace_s, exit_t)
        if deadline > end + 1e-9:
            continue
        started = any(f.kind == "TriageStart" and f.subject == e.subject and e.t <= f.t <= deadline
                      for f in events[i + 1:])
        if not started:
            out.append(Evidence("ignore_green", deadline, {"victim": e.subject, "seen": e.t}))
    return out


def detect_green_on_sight(traj: Trajectory) -> list[Evidence]:
    """A green victim triaged in the same area visit it was seen, while live yellows remain."""
    tl = _VictimTimeline(traj)
    out = []
    seen_in_visit: set[int] = set()
    for e in traj.events:
        if e.kind == "AreaEnter":
            seen_in_visit = set()
        elif e.kind == "VictimSeen":
            seen_in_visit.add(e.subject)
        elif e.kind == "TriageStart" and e.subject in seen_in_visit:
            if tl.severity(e.subject) == "green" and tl.live_yellows_at(e.t):
                out.append(Evidence("green_on_sight", e.t, {"victim": e.subject}))
    return out


def triage_library(params: TriageEvidenceParams = TriageEvidenceParams(),
                   conds: ConditionSet = TRIAGE_CONDITIONS) -> EvidenceLibrary:
    sel, opp = conds.index("selective"), conds.index("opportunistic")

    def weights(i, w):
        v = np.ones(len(conds))
        v[i] = w
        return v

    w_sel = weights(sel, params.ignore_green_weight)
    w_opp = weights(opp, params.green_on_sight_weight)
    return EvidenceLibrary(
        ignore_green=EvidenceRule(
            lambda tr: detect_ignored_green(tr, params.grace_s),
            lambda b, ev: apply_update(mix_uniform(b, params.forgetting), w_sel)),
        green_on_sight=EvidenceRule(
            detect_green_on_sight,
            lambda b, ev: apply_update(mix_uniform(b, params.forgetting), w_opp)),
    )


@dataclass
class TriagePrediction:
    times: np.ndarray
    predictions: list[str]
    beliefs: np.ndarray
    evidence: list[Evidence]
    labels: tuple[str, ...] | None = None

    def belief_at(self, t: float) -> np.ndarray:
        """Belief held at time ``t`` (uniform before the first query time)."""
        i = bisect.bisect_right(self.times.tolist(), t + 1e-9) - 1
        if i < 0:
            return init_belief(self.beliefs.shape[1] if self.beliefs.size else 2)
        return self.beliefs[i]


def run_triage_predictor(traj: Trajectory,
                         params: TriageEvidenceParams = TriageEvidenceParams(),
                         query_times: Sequence[float] | None = None) -> TriagePrediction:
    """Predicted triage strategy at every qualifying event of ``traj``.

    Qualifying events are the elements of :func:`to_triage_sequence` unless
    ``query_times`` is given.
    """
    seq = to_triage_sequence(traj)
    times = seq.t if query_times is None else np.asarray(query_times, dtype=np.float64)
    evs, beliefs, preds = run_algorithm(triage_library(params), traj, TRIAGE_CONDITIONS, times)
    return TriagePrediction(times, preds, beliefs, evs, seq.labels if query_times is None else None)


# ---------------------------------------------------------------- next location

@dataclass(frozen=True)
class LocationEvidenceParams:
    alpha: float = 1.0
    length_scale: float = 2.0
    revisit_factor: float = 0.25
    distance: str = "hops"  # hops | euclidean | door
    meters_per_hop: float = 10.0


def _distance(graph: AreaGraph, pos, cur: int, a: int, params: LocationEvidenceParams) -> float:
    if params.distance == "hops":
        return float(graph.hops(cur, a))
    if params.distance == "euclidean":
        return math.dist(pos, graph.areas[a].centroid) / params.meters_per_hop
    if params.distance == "door":
        return math.dist(pos, door_point(graph, cur, a)) / params.meters_per_hop
    raise ValueError(f"unknown distance metric {params.distance!r}")


def location_scores(graph: AreaGraph, cur: int, pos, visited, params: LocationEvidenceParams) -> np.ndarray:
    """Unnormalized next-area likelihoods; non-neighbors score zero."""
    s = np.zeros(len(graph.areas))
    for a in graph.neighbors(cur):
        s[a] = (graph.degree(a) ** params.alpha
                * math.exp(-_distance(graph, pos, cur, a, params) / params.length_scale)
                * params.revisit_factor ** (1 if a in visited else 0))
    return s


@dataclass
class LocationPrediction:
    current: list[int]
    predicted: list[int | None]   # None when the current area has no neighbors
    actual: list[int]
    times: list[float]
    beliefs: list[np.ndarray]

    @property
    def correct(self) -> list[bool]:
        return [p is not None and p == a for p, a in zip(self.predicted, self.actual)]


def run_location_predictor(traj: Trajectory, graph: AreaGraph,
                           params: LocationEvidenceParams = LocationEvidenceParams()) -> LocationPrediction:
    """Predict the next distinct area at every area transition."""
    meta_map = traj.meta.get("map_id")
    if meta_map is not None and meta_map != graph.map_id:
        raise ValueError(f"trajectory map {meta_map!r} does not match graph {graph.map_id!r}")
    visited = {traj.observations[0].area}
    out = LocationPrediction([], [], [], [], [])
    for cur, nxt, t, entry_pos in area_transitions(traj):
        visited.add(cur)
        s = location_scores(graph, cur, entry_pos, visited, params)
        if s.sum() > 0:
            b = s / s.sum()
            pred = int(np.argmax(b))
        else:
            b, pred = np.full(len(s), 1.0 / len(s)), None
        out.current.append(cur)
        out.predicted.append(pred)
        out.actual.append(nxt)
        out.times.append(t)
        out.beliefs.append(b)
    return out


# ---------------------------------------------------------------- configuration document

def load_evidence_config(doc) -> tuple[TriageEvidenceParams, LocationEvidenceParams]:
    """Parse ``{"triage": {...}, "location": {...}}`` (dict, JSON text or path)."""
    if isinstance(doc, str) and not doc.lstrip().startswith("{"):
        with open(doc, encoding="utf-8") as fh:
            doc = json.load(fh)
    elif isinstance(doc, str):
        doc = json.loads(doc)
    tri = TriageEvidenceParams(**doc.get("triage", {}))
    loc = LocationEvidenceParams(**doc.get("location", {}))
    return tri, loc


def evidence_config_doc(tri: TriageEvidenceParams, loc: LocationEvidenceParams) -> dict:
    return {"triage": asdict(tri), "location": asdict(loc)}
