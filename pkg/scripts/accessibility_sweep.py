"""Lifted-rank sweep over random states for the open-loop and feedback descent models."""
import argparse

import numpy as np

from statlin_plan.descent import (STATE_SCALE, ScenarioConfig, feedback_model, feedback_scale,
                                  plain_model)
from statlin_plan.lie import latin_hypercube, lifted_rank

OPEN_LOOP_CONTROLS = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (2 ** -0.5, 2 ** -0.5)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=20)
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    params = ScenarioConfig().rocket()
    rng = np.random.default_rng(args.seed)
    X = np.column_stack([rng.uniform(-5000, 5000, (args.points, 2)),
                         rng.uniform(-300, 300, (args.points, 2)),
                         rng.uniform(5000, 40000, args.points)])
    nus = latin_hypercube(10, 30, seed=args.seed) * feedback_scale()
    open_model, fb_model = plain_model(params), feedback_model(params)
    print(f"{'point':>5} {'open-loop':>10} {'feedback':>9}   (of 20)")
    for i, x in enumerate(X):
        a = lifted_rank(open_model, x, OPEN_LOOP_CONTROLS, args.depth, state_scale=STATE_SCALE)
        b = lifted_rank(fb_model, x, nus, 2, state_scale=STATE_SCALE)
        print(f"{i:5d} {a.lifted_dim:10d} {b.lifted_dim:9d}")


if __name__ == "__main__":
    main()
