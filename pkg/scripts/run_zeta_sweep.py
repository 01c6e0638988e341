#!/usr/bin/env python3
"""Sensitivity sweep over the sequence-loss weight zeta.

Trains one small model per zeta value on a shared dataset and writes a CSV
of final losses plus an evaluation summary per run. Point `drdt3 plot` at
the CSV to get a curve.
"""

import argparse
import csv
import sys

sys.path.insert(0, "src")

from drdt3.config import TrainConfig
from drdt3.envs import generate_dataset
from drdt3.training import evaluate_bundle, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--zetas", type=float, nargs="+",
                    default=[0.0, 0.1, 0.2, 0.5, 1.0, 2.0])
    ap.add_argument("--env", default="stitchchain")
    ap.add_argument("--tier", default="stitch")
    ap.add_argument("--n-traj", type=int, default=20)
    ap.add_argument("--embed-dim", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--updates", type=int, default=100)
    ap.add_argument("--episodes", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="zeta_sweep.csv")
    args = ap.parse_args()

    store = generate_dataset(args.env, args.tier, args.n_traj, seed=args.seed)
    rows = []
    for zeta in args.zetas:
        cfg = TrainConfig(
            embed_dim=args.embed_dim, epochs=args.epochs,
            updates_per_epoch=args.updates, batch_size=32,
            max_episode_len=max(64, store.max_length()),
            eval_episodes=0, seed=args.seed, zeta=zeta,
        ).validate()
        bundle, log = train(cfg, store, eval_each_epoch=False)
        mean_ret, succ, norm = evaluate_bundle(
            bundle, episodes=args.episodes, seed=args.seed
        )
        last = log.updates[-1]
        rows.append((zeta, last[1], last[2], last[3], mean_ret, succ, norm))
        print(f"zeta {zeta:4.1f}  l_diff {last[1]:.4f}  l_dt3 {last[2]:.4f}  "
              f"return {mean_ret:.3f}  success {succ:.2f}")

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["zeta", "l_diff", "l_dt3", "l_total",
                    "mean_return", "success_rate", "norm_score"])
        w.writerows(rows)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
