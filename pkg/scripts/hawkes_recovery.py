"""Simulate threads from known base rates (no excitation) and refit them.

Prints the relative error of each fitted mu per repetition.
"""
import argparse

import numpy as np

from stance_threads import hawkes
from stance_threads.hawkes import HawkesParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--threads", type=int, default=200)
    ap.add_argument("--horizon", type=float, default=200.0)
    ap.add_argument("--mu", type=float, nargs=4, default=[0.02, 0.01, 0.015, 0.05])
    ap.add_argument("--tolerance", type=float, default=0.25)
    args = ap.parse_args()

    mu = np.array(args.mu)
    truth = HawkesParams(mu, np.zeros((4, 4)), np.full((4, 5), 0.2))
    hits = 0
    for rep in range(args.reps):
        hist = hawkes.simulate(truth, args.threads, args.horizon, seed=rep)
        fitted = hawkes.fit_grad(hist, hawkes.fit_approx(hist))
        rel = np.abs(fitted.mu - mu) / mu
        hits += bool(np.all(rel <= args.tolerance))
        print(f"rep {rep:2d}  events={hist.n_events:5d}  rel err " + " ".join(f"{r:.3f}" for r in rel))
    print(f"{hits}/{args.reps} repetitions within {args.tolerance:.0%} on every component")


if __name__ == "__main__":
    main()
