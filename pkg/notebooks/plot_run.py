"""Plot the CSVs written by ``pishape tune``.

    pishape tune --config lti3 --out runs/lti3
    python notebooks/plot_run.py runs/lti3 [component]

Needs matplotlib (``pip install -e .[plot]``); the package itself does not.
Saves ``history.png`` and ``rollouts.png`` next to the CSVs.
"""
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def load(path):
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    return names, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def main(root, component=1):
    d = Path(root) / "tuning"
    _, hist = load(d / "history.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(hist[:, 0], hist[:, 1], "o-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("L")
    fig.tight_layout()
    fig.savefig(d / "history.png", dpi=120)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label in ("nominal", "shaped"):
        names, tr = load(d / f"rollout_{label}.csv")
        ax.plot(tr[:, 0], tr[:, 1 + component], label=label)
    ax.set_xlabel("t")
    ax.set_ylabel(names[1 + component])
    ax.legend()
    fig.tight_layout()
    fig.savefig(d / "rollouts.png", dpi=120)
    print("wrote", d / "history.png", "and", d / "rollouts.png")


if __name__ == "__main__":
    main(sys.argv[1], int(sys.argv[2]) if len(sys.argv) > 2 else 1)
