#!/usr/bin/env python3
"""Train the 1D ergodic problem with the known closed form and print how
close the networks get to it."""

import argparse

import numpy as np

from mfgan.trainer import TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--stride", type=int, default=500)
    args = ap.parse_args()

    cfg = TrainConfig(outer_iters=args.iters, log_stride=args.stride,
                      seed=args.seed)

    def progress(rec):
        print(f"iter {rec.iteration:6d}  hjb {rec.loss_hjb:.3e}  "
              f"fp {rec.loss_fp:.3e}  rel_u {rec.rel_err_u:.3e}  "
              f"rel_m {rec.rel_err_m:.3e}  hbar {rec.hbar:+.4f}")

    rep = train(cfg, progress=progress)
    final = rep.final()
    print(f"\nfinal rel-l2: u {final.rel_err_u:.3e}, m {final.rel_err_m:.3e}")
    print(f"ergodic constant {rep.hbar:.6f} "
          f"(closed form {np.log(2.2795853023360673):.6f} per dimension)")


if __name__ == "__main__":
    main()
