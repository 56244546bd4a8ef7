"""Follow the triage belief of one switching rescuer.

A selective agent switches to opportunistic triage at 90 s.  The script
prints every piece of evidence the detectors find and the belief after it,
then the prediction at each triage event next to the true label.

    python demos/belief_trace.py [seed]
"""
import sys

from rescue_tom.agents import AgentConfig, TriagePolicy, generate_trajectory
from rescue_tom.evidence import run_triage_predictor
from rescue_tom.world import load_world


def main(seed: int = 3) -> None:
    world = load_world()
    cfg = AgentConfig(triage=TriagePolicy("selective", 90.0), seed=seed, planner="mixed")
    traj = generate_trajectory(world, cfg)
    pred = run_triage_predictor(traj)

    print(f"seed {seed}: {len(traj.observations)} ticks, {len(pred.evidence)} pieces of evidence")
    print("\nevidence (time, detector):")
    for ev in pred.evidence:
        print(f"  {ev.t:7.1f} s  {ev.id}")

    print("\ntriage events (time, belief selective/opportunistic, predicted, true):")
    for t, b, p, lab in zip(pred.times, pred.beliefs, pred.predictions, pred.labels):
        mark = "" if p == lab else "   <- miss"
        print(f"  {t:7.1f} s  {b[0]:.3f}/{b[1]:.3f}  {p:<13} {lab}{mark}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
