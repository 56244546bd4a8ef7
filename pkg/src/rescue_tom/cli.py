"""Command-line entry point: gen-data, train, evaluate, predict, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
Settings resolve as command-line flag > ``--config`` file > built-in default,
and the effective settings are written into every manifest or report.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agents import DatasetConfig, generate_dataset
from .eval import (EvalReport, comparison_table, dataset_fingerprint,
                   evaluate_location, evaluate_triage, evidence_location_predictor,
                   evidence_triage_predictor, fingerprint, neural_triage_predictor,
                   random_triage_predictor, transformer_location_predictor, uniform_neighbor_score)
from .evidence import (LocationEvidenceParams, TriageEvidenceParams, evidence_config_doc,
                       load_evidence_config, run_location_predictor,
                       run_triage_predictor)
from .io import atomic_write_text
from .neural import (RNN_VARIANTS, AreaTransformer, NonFiniteGradient, TrainConfig, TriageRNN,
                     TrainingDiverged, load_checkpoint, make_transformer, make_triage_model,
                     save_checkpoint, train)
from .trajectory import (STRATEGIES, Trajectory, TrajectoryError, area_transitions,
                         extract_decision_points, load, save, to_area_sequence, to_triage_sequence,
                         trajectory_hash)
from .world import MapError, load_world

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
MANIFEST = "manifest.json"
MODELS = RNN_VARIANTS + ("transformer",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return doc


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- datasets on disk

def load_dataset(path) -> list[Trajectory]:
    """Trajectories from a gen-data directory (manifest order) or one log file."""
    path = Path(path)
    if path.is_file():
        return [load(path)]
    manifest = path / MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(f"{path}: no {MANIFEST} (not a dataset directory)")
    doc = _read_json(manifest)
    return [load(path / e["file"]) for e in doc["entries"]]


# ---------------------------------------------------------------- gen-data

def cmd_gen_data(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.count is not None:
        doc["count"] = args.count
    if args.map is not None:
        doc["map"] = str(Path(args.map).resolve())
    if args.perturbations is not None:
        doc["perturbation_set"] = args.perturbations
    spec = DatasetConfig.from_doc(doc)
    world = load_world(spec.map)
    if spec.perturbation_set not in ("random",) and spec.perturbation_set not in world.perturbation_sets:
        raise ValueError(f"unknown perturbation set {spec.perturbation_set!r}; "
                         f"available: {sorted(world.perturbation_sets)}")
    ds = generate_dataset(spec, world)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    width = len(str(spec.seed + spec.count - 1))
    for tr in ds:
        seed = int(tr.meta["seed"])
        name = f"traj_{seed:0{width}d}.jsonl"
        save(tr, out / name)
        entries.append({"file": name, "seed": seed, "sha256": trajectory_hash(tr),
                        "perturbation_set": tr.meta["perturbation_set"],
                        "start_label": tr.labels[0], "switching": len(set(tr.labels)) > 1,
                        "n_obs": len(tr.observations), "n_events": len(tr.events)})
    manifest = {"tool_version": __version__, "seed": spec.seed, "config": spec.to_doc(),
                "summary": ds.summary(), "entries": entries}
    atomic_write_text(out / MANIFEST, _dump(manifest))
    s = manifest["summary"]
    print(f"wrote {len(entries)} trajectories to {out} (seed {spec.seed}); "
          f"start labels {s['start_labels']}, switching {s['switching']}")
    return EXIT_OK


# ---------------------------------------------------------------- train

def _train_config(args) -> TrainConfig:
    doc = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.epochs is not None:
        doc["epochs"] = args.epochs
    return TrainConfig.from_doc(doc)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    data = load_dataset(args.dataset)
    if args.model == "transformer":
        graph = load_world(args.map).graph
        model = make_transformer(cfg, n_areas=len(graph.areas))
        examples = [to_area_sequence(tr) for tr in data]
    else:
        if any(tr.labels is None for tr in data):
            raise ValueError("triage training needs labelled trajectories")
        model = make_triage_model(args.model, cfg)
        examples = [to_triage_sequence(tr) for tr in data]
    result = train(model, examples, cfg, log=print)
    out = Path(args.out)
    extra = {"dataset": str(Path(args.dataset).resolve()), "dataset_fingerprint": dataset_fingerprint(data),
             "losses": result.losses, "tool_version": __version__}
    save_checkpoint(out, model, cfg, extra)
    loss_log = out.with_name(out.name + ".loss.txt")
    atomic_write_text(loss_log, "".join(f"{i + 1}\t{v:.10g}\n" for i, v in enumerate(result.losses)))
    print(f"checkpoint {out} (seed {cfg.seed}); loss log {loss_log}")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def _checkpoints(paths) -> dict[str, object]:
    """Loaded models keyed by variant name or ``transformer``."""
    out = {}
    for p in paths or []:
        model, _, _ = load_checkpoint(p)
        key = model.variant if isinstance(model, TriageRNN) else "transformer"
        out[key] = model
    return out


def _parse_methods(text: str) -> list[str]:
    methods = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        if tok == "neural":
            methods += [f"neural:{m}" for m in MODELS]
        elif tok in ("evidence", "baseline") or (tok.startswith("neural:") and tok[7:] in MODELS):
            methods.append(tok)
        else:
            raise UsageError(f"unknown method {tok!r}; use evidence, baseline, neural or neural:<{'|'.join(MODELS)}>")
    return list(dict.fromkeys(methods))


def cmd_evaluate(args) -> int:
    methods = _parse_methods(args.methods)
    tri, loc = load_evidence_config(args.config) if args.config else (TriageEvidenceParams(), LocationEvidenceParams())
    data = load_dataset(args.dataset)
    world = load_world(args.map)
    models = _checkpoints(args.checkpoint)
    # a bare "neural" means "whichever checkpoints were given"
    explicit = {t.strip() for t in args.methods.split(",") if t.strip().startswith("neural:")}
    report = EvalReport()
    report.fingerprints["dataset"] = dataset_fingerprint(data)
    labelled = all(tr.labels is not None for tr in data)
    for m in methods:
        if m == "evidence":
            if labelled:
                report.set(m, "triage", evaluate_triage(evidence_triage_predictor(tri), data,
                                                        args.after_first_evidence, tri))
            report.set(m, "location", evaluate_location(evidence_location_predictor(loc), data, world))
            report.fingerprints["evidence"] = fingerprint(evidence_config_doc(tri, loc))
        elif m == "baseline":
            if labelled:
                report.set(m, "triage", evaluate_triage(random_triage_predictor(args.seed or 0), data,
                                                        args.after_first_evidence, tri))
            report.set(m, "location", uniform_neighbor_score(data, world))
        else:
            name = m.split(":", 1)[1]
            model = models.get(name)
            if model is None:
                if m in explicit:
                    raise FileNotFoundError(f"method {m} needs a --checkpoint for {name}")
                continue
            if name == "transformer":
                report.set(m, "location", evaluate_location(transformer_location_predictor(model), data, world))
            elif labelled:
                report.set(m, "triage", evaluate_triage(neural_triage_predictor(model), data,
                                                        args.after_first_evidence, tri))
            report.fingerprints[m] = fingerprint(model.spec())
    if not report.scores:
        raise ValueError("nothing to evaluate: no method produced a score")
    table = comparison_table(report)
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        atomic_write_text(out, comparison_table(report, "csv"))
        doc = report.to_doc()
        doc.update({"tool_version": __version__, "seed": args.seed, "methods": methods,
                    "after_first_evidence": args.after_first_evidence,
                    "evidence_config": evidence_config_doc(tri, loc),
                    "dataset": str(Path(args.dataset).resolve()),
                    "checkpoints": [str(Path(p).resolve()) for p in args.checkpoint or []]})
        atomic_write_text(out.with_suffix(".json"), _dump(doc))
    return EXIT_OK


# ---------------------------------------------------------------- predict

def _triage_records(traj, points, method, model, tri):
    times = [p.t for p in points]
    if method == "evidence":
        pred = run_triage_predictor(traj, tri, query_times=times)
        probs = pred.beliefs
    else:
        seq = to_triage_sequence(traj)
        elem = model.predict_proba(seq) if not seq.empty else np.zeros((0, 2))
        probs = np.full((len(times), 2), 0.5)
        for i, t in enumerate(times):
            k = int(np.searchsorted(seq.t, t + 1e-9, side="right")) - 1
            if k >= 0:
                probs[i] = elem[k]
    for p, b in zip(points, probs):
        yield {"t": p.t, "task": "triage", "kind": p.kind,
               "predicted": STRATEGIES[int(np.argmax(b))],
               "probabilities": {s: float(v) for s, v in zip(STRATEGIES, b)}}


def _location_records(traj, graph, method, model, loc):
    trans = area_transitions(traj)
    if method == "evidence":
        lp = run_location_predictor(traj, graph, loc)
        dists, preds = lp.beliefs, lp.predicted
    else:
        seq = to_area_sequence(traj)
        dists, preds = [], []
        for k in range(len(trans)):
            logits = model.next_area_logits(seq[:k + 1])
            e = np.exp(logits - logits.max())
            dists.append(e / e.sum())
            preds.append(int(np.argmax(logits)))
    for (cur, nxt, t, _), b, pr in zip(trans, dists, preds):
        yield {"t": t, "task": "location", "current": cur, "predicted": pr,
               "probabilities": [float(v) for v in b]}


def cmd_predict(args) -> int:
    tri, loc = load_evidence_config(args.config) if args.config else (TriageEvidenceParams(), LocationEvidenceParams())
    traj = load(args.trajectory)
    world = load_world(args.map)
    graph = world.perturbed(traj.meta.get("perturbation_set", "none")).graph
    model = None
    if args.method == "neural":
        if not args.checkpoint:
            raise UsageError("--method neural needs --checkpoint")
        model, _, _ = load_checkpoint(args.checkpoint[0])
        want = AreaTransformer if args.task == "location" else TriageRNN
        if not isinstance(model, want):
            raise ValueError(f"checkpoint holds a {type(model).__name__}, {args.task} needs {want.__name__}")
    if args.task == "triage":
        recs = _triage_records(traj, extract_decision_points(traj, graph), args.method, model, tri)
    else:
        recs = _location_records(traj, graph, args.method, model, loc)
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in recs)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- inspect

def cmd_inspect(args) -> int:
    traj = load(args.trajectory)
    world = load_world(args.map)
    graph = world.perturbed(traj.meta.get("perturbation_set", "none")).graph
    m = traj.meta
    lines = [f"map {m.get('map_id')}  perturbations {m.get('perturbation_set')}  seed {m.get('seed')}",
             f"observations {len(traj.observations)}  duration {traj.duration:.1f} s  "
             f"events {len(traj.events)}  score {m.get('score')}"]
    if "config" in m:
        lines.append("config " + json.dumps(m["config"], sort_keys=True))
    if traj.labels is not None:
        lines.append(f"labels start {traj.labels[0]}  end {traj.labels[-1]}")
    lines.append("")
    lines.append("events:")
    for e in traj.events:
        what = graph.areas[e.subject].name if e.kind.startswith("Area") else f"victim {e.subject}"
        lines.append(f"  {e.t:8.1f}  {e.kind:<15} {what}")
    pts = extract_decision_points(traj, graph)
    lines.append("")
    lines.append(f"decision points ({len(pts)}):")
    for p in pts:
        subj = "" if p.subject is None else f" subject {p.subject}"
        lines.append(f"  {p.t:8.1f}  {p.kind:<10} {p.trigger.kind}{subj}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rescue-tom", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a faux-human trajectory dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--map", help="map-spec JSON (default: shipped map)")
    g.add_argument("--perturbations", help="perturbation set name, or 'random'")
    g.add_argument("--seed", type=int, help="base seed")
    g.add_argument("--count", type=int, help="number of trajectories")
    g.add_argument("--config", help="dataset config JSON")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a neural model on a dataset")
    t.add_argument("dataset", help="gen-data directory")
    t.add_argument("--model", required=True, choices=MODELS)
    t.add_argument("--out", required=True, help="checkpoint path (.npz)")
    t.add_argument("--config", help="train config JSON")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--map", help="map-spec JSON (sets the transformer vocabulary)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="compare methods on a dataset")
    e.add_argument("dataset", help="gen-data directory")
    e.add_argument("--methods", default="evidence,neural,baseline",
                   help="comma list of evidence, baseline, neural, neural:<variant>")
    e.add_argument("--checkpoint", action="append", help="checkpoint file (repeatable)")
    e.add_argument("--config", help="evidence config JSON")
    e.add_argument("--map", help="map-spec JSON")
    e.add_argument("--seed", type=int, default=0, help="seed for the random baseline")
    e.add_argument("--out", help="report CSV path (a .json twin is written alongside)")
    e.add_argument("--after-first-evidence", action="store_true",
                   help="score triage only from each trajectory's first evidence onward")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("predict", help="per-decision-step predictions for one trajectory")
    r.add_argument("trajectory", help="trajectory log file")
    r.add_argument("--method", choices=("evidence", "neural"), default="evidence")
    r.add_argument("--task", choices=("triage", "location"), default="triage")
    r.add_argument("--checkpoint", action="append")
    r.add_argument("--config", help="evidence config JSON")
    r.add_argument("--map", help="map-spec JSON")
    r.add_argument("--out", help="write JSON lines here instead of standard output")
    r.set_defaults(func=cmd_predict)

    i = sub.add_parser("inspect", help="print a trajectory's events and decision points")
    i.add_argument("trajectory")
    i.add_argument("--map", help="map-spec JSON")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rescue-tom: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NonFiniteGradient, FloatingPointError) as exc:
        print(f"rescue-tom: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError, KeyError, MapError, TrajectoryError) as exc:
        print(f"rescue-tom: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
