"""Solve one landing scenario and save the plan to an .npz file.

    python3 scripts/solve_landing.py problem6 --nodes 150 --time-limit 540 --out runs/p6.npz
"""
import argparse
import json
import logging

import numpy as np

from statlin_plan.descent import BUILDERS, ScenarioConfig
from statlin_plan.ocp import SolverOptions, solve, transcribe


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("problem", choices=sorted(BUILDERS))
    ap.add_argument("--nodes", type=int, default=150)
    ap.add_argument("--time-limit", type=float, default=None)
    ap.add_argument("--cost-units", choices=("scaled", "physical"), default="scaled")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(relativeCreated)8.0f ms %(message)s")

    cfg = ScenarioConfig(cost_units=args.cost_units)
    nlp = transcribe(BUILDERS[args.problem](cfg), args.nodes, fd="central")
    rep = solve(nlp, SolverOptions(time_limit=args.time_limit))
    traj = nlp.belief_trajectory(rep.decision)
    std = np.sqrt(np.diag(traj.covs[-1]))[:4]
    summary = {"problem": args.problem, "converged": rep.converged, "message": rep.message,
               "t_f": rep.t_f, "kkt": rep.kkt, "max_violation": rep.max_violation,
               "final_std": std.tolist(), "final_std_norm": float(np.linalg.norm(std)),
               "wall_time": rep.wall_time, "objective": rep.breakdown}
    print(json.dumps(summary, indent=2))
    out = args.out or f"{args.problem}_{args.nodes}.npz"
    np.savez(out, decision=rep.decision, W=rep.W, times=traj.times, means=traj.means,
             covs=traj.covs, summary=json.dumps(summary))


if __name__ == "__main__":
    main()
