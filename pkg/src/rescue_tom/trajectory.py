"""Trajectory records, log (de)serialization and model-input views.

A trajectory is a 5 Hz observation stream plus a time-ordered event log and,
for synthetic data, one ground-truth triage-strategy label per observation.
The log format is line-delimited JSON; see ``docs/trajectory_log.md``.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .world import TICK, AreaGraph

EVENT_KINDS = ("AreaExit", "AreaEnter", "VictimSeen", "TriageStart", "TriageComplete")
VICTIM_EVENTS = ("VictimSeen", "TriageStart", "TriageComplete")
STRATEGIES = ("selective", "opportunistic")
LOG_VERSION = 1
SIGHTING_GAP = 2.0
_EPS = 1e-6


class TrajectoryError(ValueError):
    """Malformed trajectory log or record."""


@dataclass(frozen=True)
class Observation:
    t: float
    position: tuple[float, float]
    area: int
    fov_victims: frozenset[int] = frozenset()


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    subject: int  # victim id for victim events, area id for area events


@dataclass
class Trajectory:
    meta: dict
    observations: list[Observation]
    events: list[Event]
    labels: list[str] | None = None

    def __post_init__(self):
        if not self.observations:
            raise TrajectoryError("trajectory has no observations")
        if self.labels is not None and len(self.labels) != len(self.observations):
            raise TrajectoryError("label sequence length differs from observations")

    @property
    def t0(self) -> float:
        return self.observations[0].t

    @property
    def duration(self) -> float:
        return self.observations[-1].t - self.observations[0].t

    def index_at(self, t: float) -> int:
        """Observation index for a timestamp on the 5 Hz grid."""
        k = int(round((t - self.t0) / TICK))
        return min(max(k, 0), len(self.observations) - 1)

    def label_at(self, t: float) -> str | None:
        return None if self.labels is None else self.labels[self.index_at(t)]

    def victim_roster(self) -> dict[int, dict]:
        return {int(v["id"]): v for v in self.meta.get("victims", [])}


# ---------------------------------------------------------------- serialization

def _obs_record(o: Observation, label: str | None) -> dict:
    rec = {"rec": "obs", "t": o.t, "x": o.position[0], "y": o.position[1],
           "area": o.area, "fov": sorted(o.fov_victims)}
    if label is not None:
        rec["label"] = label
    return rec


def _event_record(e: Event) -> dict:
    key = "victim" if e.kind in VICTIM_EVENTS else "area"
    return {"rec": "event", "t": e.t, "kind": e.kind, key: e.subject}


def serialize(traj: Trajectory) -> str:
    """Render a trajectory as a line-delimited JSON log."""
    enc = json.JSONEncoder(separators=(",", ":"), sort_keys=True, ensure_ascii=False)
    head = {"rec": "meta", "version": LOG_VERSION, "meta": traj.meta,
            "n_obs": len(traj.observations), "n_events": len(traj.events),
            "labelled": traj.labels is not None}
    lines = [enc.encode(head)]
    labels = traj.labels
    for i, o in enumerate(traj.observations):
        lines.append(enc.encode(_obs_record(o, None if labels is None else labels[i])))
    for e in traj.events:
        lines.append(enc.encode(_event_record(e)))
    return "\n".join(lines) + "\n"


def deserialize(text: str) -> Trajectory:
    """Parse a log produced by :func:`serialize`; rejects structural violations."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise TrajectoryError("empty document")
    try:
        recs = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as e:
        raise TrajectoryError(f"malformed line: {e}") from None
    head = recs[0]
    if not isinstance(head, dict) or head.get("rec") != "meta":
        raise TrajectoryError("first record must be the meta record")
    if head.get("version") != LOG_VERSION:
        raise TrajectoryError(f"unsupported log version {head.get('version')!r}")
    labelled = bool(head.get("labelled", False))

    obs, labels, events = [], [], []
    for n, r in enumerate(recs[1:], start=2):
        if not isinstance(r, dict):
            raise TrajectoryError(f"line {n}: record is not an object")
        kind = r.get("rec")
        try:
            if kind == "obs":
                if events:
                    raise TrajectoryError(f"line {n}: observation after events")
                t = float(r["t"])
                if obs and abs(t - obs[-1].t - TICK) > _EPS:
                    if t < obs[-1].t:
                        raise TrajectoryError(f"line {n}: timestamp regression")
                    raise TrajectoryError(f"line {n}: observation spacing is not {TICK} s")
                obs.append(Observation(t, (float(r["x"]), float(r["y"])), int(r["area"]),
                                       frozenset(int(v) for v in r["fov"])))
                if labelled:
                    if r.get("label") not in STRATEGIES:
                        raise TrajectoryError(f"line {n}: missing or unknown label")
                    labels.append(r["label"])
            elif kind == "event":
                ek = r["kind"]
                if ek not in EVENT_KINDS:
                    raise TrajectoryError(f"line {n}: unknown event kind {ek!r}")
                t = float(r["t"])
                if events and t < events[-1].t:
                    raise TrajectoryError(f"line {n}: timestamp regression")
                subject = int(r["victim"] if ek in VICTIM_EVENTS else r["area"])
                events.append(Event(t, ek, subject))
            else:
                raise TrajectoryError(f"line {n}: unknown record type {kind!r}")
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, TrajectoryError):
                raise
            raise TrajectoryError(f"line {n}: malformed record ({e})") from None

    if not obs:
        raise TrajectoryError("trajectory has no observations")
    if len(obs) != head.get("n_obs", len(obs)) or len(events) != head.get("n_events", len(events)):
        raise TrajectoryError("record counts disagree with the meta record")
    lo, hi = obs[0].t - _EPS, obs[-1].t + _EPS
    if any(not lo <= e.t <= hi for e in events):
        raise TrajectoryError("event timestamp outside the observation range")
    _check_triage_order(events)
    return Trajectory(head.get("meta", {}), obs, events, labels if labelled else None)


def _check_triage_order(events: Sequence[Event]) -> None:
    started = set()
    for e in events:
        if e.kind == "TriageStart":
            started.add(e.subject)
        elif e.kind == "TriageComplete" and e.subject not in started:
            raise TrajectoryError(f"TriageComplete for victim {e.subject} without TriageStart")


def trajectory_hash(traj: Trajectory) -> str:
    return hashlib.sha256(serialize(traj).encode("utf-8")).hexdigest()


def save(traj: Trajectory, path) -> None:
    from .io import atomic_write_text
    atomic_write_text(path, serialize(traj))


def load(path) -> Trajectory:
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh.read())


# ---------------------------------------------------------------- sightings

def sighting_starts(prev_last_seen: dict[int, float], t: float, visible: Iterable[int]) -> list[int]:
    """Victims in ``visible`` that open a new sighting episode at time ``t``.

    Updates ``prev_last_seen`` in place.  An episode restarts when a victim was
    out of view for more than ``SIGHTING_GAP`` seconds.
    """
    new = []
    for v in sorted(visible):
        last = prev_last_seen.get(v)
        if last is None or t - last > SIGHTING_GAP + _EPS:
            new.append(v)
        prev_last_seen[v] = t
    return new


# ---------------------------------------------------------------- decision points

@dataclass(frozen=True)
class DecisionPoint:
    t: float
    kind: str  # triage | navigation | general
    trigger: Event
    subject: int | None = None  # victim for triage, candidate room for navigation


def _graph_for(traj: Trajectory, graph: AreaGraph | None) -> AreaGraph:
    if graph is not None:
        return graph
    from .world import load_world
    if traj.meta.get("map_id", "default") != "default":
        raise TrajectoryError("non-default map: pass the graph explicitly")
    return load_world(None, traj.meta.get("perturbation_set", "none")).graph


def extract_decision_points(traj: Trajectory, graph: AreaGraph | None = None) -> list[DecisionPoint]:
    """Decision points by trigger type.

    triage: first sighting of each victim-sighting episode.
    navigation: entering a corridor with an adjacent room not yet entered, one
        point per such room.
    general: each triage completion and each exit from a non-corridor area.
    """
    g = _graph_for(traj, graph)
    last_seen: dict[int, float] = {}
    episode_open: set[int] = set()
    for o in traj.observations:
        for v in sighting_starts(last_seen, o.t, o.fov_victims):
            episode_open.add((round(o.t / TICK), v))

    points = []
    entered: set[int] = {traj.observations[0].area}
    claimed: set[tuple[int, int]] = set()
    for e in traj.events:
        if e.kind == "VictimSeen":
            key = (round(e.t / TICK), e.subject)
            # logs without FOV data still count each sighting event
            if key in episode_open or not any(o.fov_victims for o in traj.observations):
                if key not in claimed:
                    claimed.add(key)
                    points.append(DecisionPoint(e.t, "triage", e, e.subject))
        elif e.kind == "AreaEnter":
            entered.add(e.subject)
            if g.areas[e.subject].kind == "corridor":
                for r in g.neighbors(e.subject):
                    if g.areas[r].kind != "corridor" and r not in entered:
                        points.append(DecisionPoint(e.t, "navigation", e, r))
        elif e.kind == "TriageComplete":
            points.append(DecisionPoint(e.t, "general", e, e.subject))
        elif e.kind == "AreaExit" and g.areas[e.subject].kind != "corridor":
            points.append(DecisionPoint(e.t, "general", e, e.subject))
    points.sort(key=lambda p: p.t)
    return points


def sample_decision_points(points: Sequence[DecisionPoint], k: int, seed: int) -> list[DecisionPoint]:
    """Up to ``k`` points of each kind, uniformly without replacement, time-ordered."""
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = random.Random(seed)
    out = []
    for kind in ("triage", "navigation", "general"):
        idx = [i for i, p in enumerate(points) if p.kind == kind]
        out.extend(idx if len(idx) <= k else rng.sample(idx, k))
    return [points[i] for i in sorted(out)]


# ---------------------------------------------------------------- model inputs

@dataclass(frozen=True)
class TriageSequence:
    """Event-driven, irregularly spaced input for the triage-strategy task."""

    t: np.ndarray         # (n,) seconds
    xy: np.ndarray        # (n, 2) rescuer position at the event
    severity: np.ndarray  # (n,) 1 yellow, 0 green
    kinds: tuple[str, ...]
    victims: tuple[int, ...]
    labels: tuple[str, ...] | None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def empty(self) -> bool:
        return len(self.t) == 0

    def label_ids(self) -> np.ndarray:
        if self.labels is None:
            raise TrajectoryError("sequence is unlabelled")
        return np.array([STRATEGIES.index(s) for s in self.labels], dtype=np.int64)


def to_triage_sequence(traj: Trajectory) -> TriageSequence:
    """One element per VictimSeen and per TriageComplete event."""
    roster = traj.victim_roster()
    ts, xy, sev, kinds, vics, labels = [], [], [], [], [], []
    for e in traj.events:
        if e.kind not in ("VictimSeen", "TriageComplete"):
            continue
        o = traj.observations[traj.index_at(e.t)]
        ts.append(e.t)
        xy.append(o.position)
        sev.append(1 if roster.get(e.subject, {}).get("severity") == "yellow" else 0)
        kinds.append(e.kind)
        vics.append(e.subject)
        if traj.labels is not None:
            labels.append(traj.label_at(e.t))
    return TriageSequence(
        np.asarray(ts, dtype=np.float64),
        np.asarray(xy, dtype=np.float64).reshape(-1, 2),
        np.asarray(sev, dtype=np.int64),
        tuple(kinds), tuple(vics),
        tuple(labels) if traj.labels is not None else None,
    )


def to_area_sequence(traj: Trajectory) -> list[int]:
    """Run-length compressed area stream in visit order."""
    out: list[int] = []
    for o in traj.observations:
        if not out or out[-1] != o.area:
            out.append(o.area)
    return out


def area_transitions(traj: Trajectory) -> list[tuple[int, int, float, tuple[float, float]]]:
    """(from, to, t, position at entry into ``from``) for each distinct-area transition."""
    out = []
    cur = traj.observations[0].area
    entry_pos = traj.observations[0].position
    for o in traj.observations[1:]:
        if o.area != cur:
            out.append((cur, o.area, o.t, entry_pos))
            cur, entry_pos = o.area, o.position
    return out
