"""Plot saved landing plans: mean path with 3-sigma position ellipses and thrust profile.

    python3 scripts/plot_landing.py runs/p4.npz runs/p6.npz --out landing.png
"""
import argparse
import json

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from statlin_plan.descent import feedback_norm_channel


def ellipse(mean, cov, k=3.0, n=60):
    lam, vec = np.linalg.eigh(cov)
    t = np.linspace(0, 2 * np.pi, n)
    circ = np.stack([np.cos(t), np.sin(t)])
    return mean[:, None] + vec @ (k * np.sqrt(np.maximum(lam, 0))[:, None] * circ)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", nargs="+")
    ap.add_argument("--out", default="landing.png")
    ap.add_argument("--every", type=int, default=10, help="ellipse stride in nodes")
    args = ap.parse_args()

    fig, (ax_path, ax_u) = plt.subplots(1, 2, figsize=(11, 4.5))
    for path in args.runs:
        run = np.load(path)
        label = json.loads(str(run["summary"]))["problem"]
        m, P, t, W = run["means"], run["covs"], run["times"], run["W"]
        line, = ax_path.plot(m[:, 0], m[:, 1], label=label)
        for j in range(0, len(t), args.every):
            e = ellipse(m[j, :2], P[j, :2, :2])
            ax_path.plot(e[0], e[1], color=line.get_color(), lw=0.6, alpha=0.6)
        # nominal thrust fraction at the node means
        u = W[:, 0] if W.shape[1] == 2 else feedback_norm_channel(W, m[:-1, :4])
        ax_u.step(t[:-1], u, where="post", color=line.get_color(), label=label)
    ax_path.set(xlabel="x [m]", ylabel="y [m]", aspect="equal")
    ax_u.set(xlabel="t [s]", ylabel="thrust fraction")
    ax_path.legend()
    ax_u.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
