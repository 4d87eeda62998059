"""Validation RMSE as a function of the L1 weight lambda on the coarse desk dictionary."""

import argparse

from ganmrf.bloch import default_sequence, simulate_dictionary
from ganmrf.core import COARSE, expand_grid, normalize_atoms, scale_for_training, split_dataset
from ganmrf.gan import DEFAULT_LAMBDA_GRID, TrainConfig, validate_lambda


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()

    seq = default_sequence(a.frames, 0)
    d = simulate_dictionary(expand_grid(COARSE), seq)
    sp = split_dataset(d, (0.6, 0.2, 0.2), a.seed)
    train_set, _ = scale_for_training(normalize_atoms(d.subset(sp.train_idx)))
    val = normalize_atoms(d.subset(sp.val_idx))
    cfg = TrainConfig(iterations=a.iterations, seed=a.seed)
    rows, best, _ = validate_lambda(train_set, val, DEFAULT_LAMBDA_GRID, cfg, seq)
    print("lambda,train_rmse,val_rmse")
    for lam, tr, va in rows:
        print(f"{lam:g},{tr:.5f},{va:.5f}{'  <- selected' if lam == best else ''}")


if __name__ == "__main__":
    main()
