"""Monte Carlo check of a saved plan: relative mean and covariance errors over time.

    python3 scripts/error_profile.py runs/p5.npz --paths 1000 --out errors.png
"""
import argparse
import json

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from statlin_plan.core import ControlTrajectory
from statlin_plan.propagate import BeliefTrajectory
from statlin_plan.descent import ScenarioConfig, simulation_model
from statlin_plan.sde import monte_carlo, relative_errors


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run")
    ap.add_argument("--paths", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="errors.png")
    args = ap.parse_args()

    run = np.load(args.run)
    problem = json.loads(str(run["summary"]))["problem"]
    cfg = ScenarioConfig()
    traj = BeliefTrajectory(run["times"], run["means"], run["covs"])
    ctrl = ControlTrajectory(run["times"], run["W"])
    model = simulation_model(cfg.rocket(), problem)
    stats = monte_carlo(model, cfg.initial_belief(), ctrl, None, args.paths, args.seed)
    em, eP = relative_errors(stats.restrict(traj.times), traj)
    print(f"max mean rel err {em.max():.3e}, max cov rel err {eP.max():.3e}")

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(traj.times, em, label="mean")
    ax.semilogy(traj.times, np.maximum(eP, 1e-16), label="covariance")
    ax.set(xlabel="t [s]", ylabel="relative error", title=problem)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
