#!/usr/bin/env python3
"""Learning-rate and batch-size sensitivity: train at several settings and
tabulate final errors plus the oscillation of the value-residual trace."""

import argparse

from mfgan.cli import oscillation_metric
from mfgan.trainer import TrainConfig, train


def run(seed, iters, **kw):
    cfg = TrainConfig(outer_iters=iters, log_stride=10, seed=seed,
                      eval_points=64, grid_n=256, **kw)
    rep = train(cfg)
    final = rep.final()
    osc = oscillation_metric([r.loss_hjb for r in rep.records])
    return final.rel_err_u, final.rel_err_m, osc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=3000)
    ap.add_argument("--seeds", type=int, nargs="*", default=[0, 1, 2])
    args = ap.parse_args()

    print("generator rate sweep")
    print(f"{'rate':>8} {'seed':>4} {'rel_u':>10} {'rel_m':>10} {'osc':>10}")
    for rate in (5e-4, 1e-3, 1e-2, 5e-2):
        for seed in args.seeds:
            eu, em, osc = run(seed, args.iters, lr_g=rate)
            print(f"{rate:>8g} {seed:>4} {eu:>10.3e} {em:>10.3e} {osc:>10.3e}")

    print("\nbatch size sweep (elevated rate so oscillation is visible)")
    print(f"{'batch':>8} {'seed':>4} {'rel_u':>10} {'rel_m':>10} {'osc':>10}")
    for b in (32, 64, 128, 256):
        for seed in args.seeds:
            eu, em, osc = run(seed, args.iters, lr_g=5e-3,
                              batch_g=b, batch_d=b)
            print(f"{b:>8} {seed:>4} {eu:>10.3e} {em:>10.3e} {osc:>10.3e}")


if __name__ == "__main__":
    main()
