"""Accuracy protocol and comparison tables.

Triage accuracy is measured at every element of the triage sequence (each
VictimSeen and TriageComplete) against the strategy label active at that
moment.  Location accuracy is measured at every distinct-area transition.
A predictor is a plain callable:

* triage: ``traj -> sequence of strategy names``, one per triage element;
* location: ``(traj, graph) -> sequence of area ids (None = abstain)``, one
  per area transition.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from collections import Counter
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Callable, Sequence

import numpy as np

from .evidence import (LocationEvidenceParams, TriageEvidenceParams, run_location_predictor,
                       run_triage_predictor, triage_library)
from .trajectory import STRATEGIES, Trajectory, area_transitions, to_area_sequence, to_triage_sequence
from .world import AreaGraph, World

TASKS = ("triage", "location")

TriagePredictor = Callable[[Trajectory], Sequence[str]]
LocationPredictor = Callable[[Trajectory, AreaGraph], Sequence]


class EvalError(ValueError):
    pass


@dataclass
class TaskScore:
    """Correct and total counts, overall and per trajectory.

    ``correct`` may be fractional for closed-form baselines that report an
    expected hit count.
    """
    correct: float = 0.0
    total: int = 0
    per_trajectory: list[tuple[float, int]] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else float("nan")

    def add(self, correct: float, total: int) -> None:
        self.correct += correct
        self.total += total
        self.per_trajectory.append((correct, total))


@dataclass
class EvalReport:
    scores: dict[str, dict[str, TaskScore]] = field(default_factory=dict)
    fingerprints: dict[str, str] = field(default_factory=dict)

    def set(self, method: str, task: str, score: TaskScore) -> None:
        self.scores.setdefault(method, {})[task] = score

    def accuracy(self, method: str, task: str) -> float:
        return self.scores[method][task].accuracy

    def methods(self) -> list[str]:
        return list(self.scores)

    def tasks(self) -> list[str]:
        seen: list[str] = []
        for per in self.scores.values():
            for t in per:
                if t not in seen:
                    seen.append(t)
        return sorted(seen, key=lambda t: (TASKS.index(t) if t in TASKS else len(TASKS), t))

    def merge(self, other: "EvalReport") -> "EvalReport":
        for m, per in other.scores.items():
            for t, s in per.items():
                self.set(m, t, s)
        self.fingerprints.update(other.fingerprints)
        return self

    def to_doc(self) -> dict:
        return {
            "fingerprints": dict(sorted(self.fingerprints.items())),
            "results": [
                {"method": m, "task": t, "accuracy": s.accuracy, "correct": s.correct,
                 "total": s.total}
                for m, per in self.scores.items() for t, s in per.items()
            ],
        }


# ---------------------------------------------------------------- fingerprints

def fingerprint(obj) -> str:
    """Short stable hash of a JSON-able object or dataclass."""
    if is_dataclass(obj):
        obj = asdict(obj)
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dataset_fingerprint(dataset: Sequence[Trajectory]) -> str:
    from .trajectory import trajectory_hash
    h = hashlib.sha256()
    for tr in dataset:
        h.update(trajectory_hash(tr).encode())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------- triage

def first_evidence_time(traj: Trajectory, params: TriageEvidenceParams = TriageEvidenceParams()) -> float | None:
    """Time of the first discriminative triage evidence, or None."""
    evs = triage_library(params).detect_all(traj)
    return evs[0].t if evs else None


def evaluate_triage(predictor: TriagePredictor, dataset: Sequence[Trajectory],
                    after_first_evidence: bool = False,
                    params: TriageEvidenceParams = TriageEvidenceParams()) -> TaskScore:
    """Score ``predictor`` at every triage element of every trajectory.

    With ``after_first_evidence`` only elements at or after the trajectory's
    first discriminative evidence count; trajectories without evidence then
    contribute nothing.
    """
    score = TaskScore()
    for traj in dataset:
        if traj.labels is None:
            raise EvalError("triage evaluation needs labelled trajectories")
        seq = to_triage_sequence(traj)
        preds = list(predictor(traj)) if not seq.empty else []
        if len(preds) != len(seq):
            raise EvalError(f"predictor returned {len(preds)} values for {len(seq)} elements")
        keep = np.ones(len(seq), dtype=bool)
        if after_first_evidence:
            t0 = first_evidence_time(traj, params)
            keep = np.zeros(len(seq), dtype=bool) if t0 is None else seq.t >= t0 - 1e-9
        hits = sum(1 for k in np.flatnonzero(keep) if preds[k] == seq.labels[k])
        score.add(hits, int(keep.sum()))
    return score


def evidence_triage_predictor(params: TriageEvidenceParams = TriageEvidenceParams()) -> TriagePredictor:
    return lambda traj: run_triage_predictor(traj, params).predictions


def neural_triage_predictor(model) -> TriagePredictor:
    def predict(traj):
        seq = to_triage_sequence(traj)
        return [] if seq.empty else [STRATEGIES[i] for i in model.predict(seq)]
    return predict


def constant_triage_predictor(label: str = "selective") -> TriagePredictor:
    if label not in STRATEGIES:
        raise ValueError(f"unknown strategy {label!r}")
    return lambda traj: [label] * len(to_triage_sequence(traj))


def random_triage_predictor(seed: int = 0) -> TriagePredictor:
    """Fair coin per element, seeded by ``seed`` and the trajectory's own seed."""
    def predict(traj):
        rng = np.random.default_rng([seed, int(traj.meta.get("seed", 0)) & 0xFFFFFFFF])
        return [STRATEGIES[i] for i in rng.integers(0, 2, size=len(to_triage_sequence(traj)))]
    return predict


# ---------------------------------------------------------------- location

def resolve_graph(graph, traj: Trajectory) -> AreaGraph:
    """The graph a trajectory was generated on.

    ``graph`` may be an :class:`AreaGraph` (used as is) or a :class:`World`
    (perturbed to the trajectory's recorded perturbation set).
    """
    if isinstance(graph, World):
        g = graph.perturbed(traj.meta.get("perturbation_set", "none")).graph
    else:
        g = graph
    mid = traj.meta.get("map_id")
    if mid is not None and mid != g.map_id:
        raise EvalError(f"trajectory map {mid!r} does not match graph {g.map_id!r}")
    return g


def evaluate_location(predictor: LocationPredictor, dataset: Sequence[Trajectory], graph) -> TaskScore:
    score = TaskScore()
    for traj in dataset:
        g = resolve_graph(graph, traj)
        trans = area_transitions(traj)
        preds = list(predictor(traj, g))
        if len(preds) != len(trans):
            raise EvalError(f"predictor returned {len(preds)} values for {len(trans)} transitions")
        hits = sum(1 for p, (_, nxt, _, _) in zip(preds, trans) if p is not None and p == nxt)
        score.add(hits, len(trans))
    return score


def uniform_neighbor_score(dataset: Sequence[Trajectory], graph) -> TaskScore:
    """Expected accuracy of guessing uniformly among the current area's neighbors."""
    score = TaskScore()
    for traj in dataset:
        g = resolve_graph(graph, traj)
        trans = area_transitions(traj)
        expected = sum(1.0 / g.degree(cur) for cur, nxt, _, _ in trans
                       if g.degree(cur) and g.has_edge(cur, nxt))
        score.add(expected, len(trans))
    return score


def evidence_location_predictor(params: LocationEvidenceParams = LocationEvidenceParams()) -> LocationPredictor:
    return lambda traj, g: run_location_predictor(traj, g, params).predicted


def uniform_neighbor_predictor(seed: int = 0) -> LocationPredictor:
    """Sampled version of the uniform-over-neighbors baseline."""
    def predict(traj, g):
        rng = np.random.default_rng([seed, int(traj.meta.get("seed", 0)) & 0xFFFFFFFF])
        out = []
        for cur, _, _, _ in area_transitions(traj):
            nb = sorted(g.neighbors(cur))
            out.append(int(nb[rng.integers(len(nb))]) if nb else None)
        return out
    return predict


def majority_area(train_sequences: Sequence[Sequence[int]]) -> int:
    """Most frequent next-area target in training sequences (lowest id on ties)."""
    c = Counter(a for s in train_sequences for a in list(s)[1:])
    if not c:
        raise EvalError("no transitions to count")
    best = max(c.values())
    return min(a for a, n in c.items() if n == best)


def constant_location_predictor(area: int) -> LocationPredictor:
    return lambda traj, g: [area] * len(area_transitions(traj))


def transformer_location_predictor(model) -> LocationPredictor:
    def predict(traj, g):
        seq = to_area_sequence(traj)
        return [model.predict_next(seq[:k + 1]) for k in range(len(seq) - 1)]
    return predict


# ---------------------------------------------------------------- tables

def format_percent(acc: float) -> str:
    return "-" if acc != acc else f"{100.0 * acc:.2f}%"


def _as_report(reports) -> EvalReport:
    if isinstance(reports, EvalReport):
        return reports
    reports = list(reports)
    if not reports:
        raise EvalError("no reports to tabulate")
    out = EvalReport()
    for r in reports:
        out.merge(r)
    return out


def comparison_table(reports, fmt: str = "text") -> str:
    """Methods as rows, tasks as columns, accuracies as percentages.

    ``fmt`` is ``"text"`` (fixed-width) or ``"csv"``.
    """
    rep = _as_report(reports)
    tasks = rep.tasks()
    rows = []
    for m in rep.methods():
        rows.append([m] + [format_percent(rep.scores[m][t].accuracy) if t in rep.scores[m] else "-"
                           for t in tasks])
    header = ["method"] + tasks
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown table format {fmt!r}")
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]

    def line(cells):
        return "  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i])
                         for i, c in enumerate(cells)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"
