"""Shared fixtures and tiny synthetic maps."""
from __future__ import annotations

import functools

import numpy as np
import pytest

from rescue_tom.agents import DatasetConfig, generate_dataset
from rescue_tom.trajectory import EVENT_KINDS, STRATEGIES, Event, Observation, Trajectory
from rescue_tom.world import load_world


def strip_map(kinds, edges=None, victims=()):
    """Areas laid out left to right as 10x10 squares; default edges form a line."""
    n = len(kinds)
    areas = [{"id": i, "name": f"A{i}", "kind": k, "rect": [10 * i, 0, 10 * (i + 1), 10]}
             for i, k in enumerate(kinds)]
    if edges is None:
        edges = [[i, i + 1] for i in range(n - 1)]
    return {"id": "strip", "areas": areas, "edges": [list(e) for e in edges],
            "victims": list(victims)}


def star_map(n_rooms=4):
    """Corridor 0 along the bottom with rooms stacked on top of it."""
    areas = [{"id": 0, "name": "Hall", "kind": "corridor", "rect": [0, 0, 10 * n_rooms, 4]}]
    for i in range(n_rooms):
        areas.append({"id": i + 1, "name": f"R{i + 1}", "kind": "room",
                      "rect": [10 * i, 4, 10 * (i + 1), 14]})
    edges = [[0, i + 1] for i in range(n_rooms)]
    return {"id": "star", "areas": areas, "edges": edges, "victims": []}


@pytest.fixture(scope="session")
def world():
    return load_world()


@functools.lru_cache(maxsize=None)
def cached_dataset(count, seed, mix=None):
    doc = {"count": count, "seed": seed}
    if mix is not None:
        doc["policy_mix"] = dict(mix)
    return generate_dataset(DatasetConfig.from_doc(doc)).trajectories


@pytest.fixture(scope="session")
def small_dataset():
    """24 default-mix trajectories shared by many tests."""
    return cached_dataset(24, 100)


def random_trajectory(rng: np.random.Generator, max_obs: int = 60) -> Trajectory:
    """Structurally valid log with random content (positions, events, labels)."""
    n = int(rng.integers(1, max_obs + 1))
    t0 = round(0.2 * int(rng.integers(0, 50)), 1)
    obs = [Observation(round(t0 + 0.2 * k, 1), (float(rng.normal() * 30), float(rng.normal() * 30)),
                       int(rng.integers(0, 26)), frozenset(int(v) for v in rng.choice(20, rng.integers(0, 3))))
           for k in range(n)]
    times = np.sort(rng.uniform(obs[0].t, obs[-1].t, int(rng.integers(0, 12))))
    events, started = [], set()
    for t in times:
        kind = EVENT_KINDS[int(rng.integers(len(EVENT_KINDS)))]
        subject = int(rng.integers(0, 20))
        if kind == "TriageComplete" and subject not in started:
            kind = "TriageStart"
        if kind == "TriageStart":
            started.add(subject)
        events.append(Event(float(t), kind, subject))
    labels = None
    if rng.random() < 0.8:
        switch = int(rng.integers(0, n + 1))
        first = STRATEGIES[int(rng.integers(2))]
        labels = [first if k < switch else STRATEGIES[1 - STRATEGIES.index(first)] for k in range(n)]
    meta = {"map_id": "default", "perturbation_set": "none", "seed": int(rng.integers(1 << 31)),
            "note": "random \u00e9\u4e16"}
    return Trajectory(meta, obs, events, labels)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
