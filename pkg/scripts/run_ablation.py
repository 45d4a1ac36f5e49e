#!/usr/bin/env python3
"""Train the four component-ablation rows on a small phantom set and print a
summary table.  Each row disables one ingredient of the full model (spatial
attention, slice recurrence, or the adversarial objective)."""

import argparse
import os

import numpy as np

from dawgan.phantom import generate_phantom_volume
from dawgan.training import (
    ablation_configs,
    config_from_flat,
    read_config_file,
    train,
)

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(HERE, "toy_train.cfg"))
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--out", default=os.path.join(HERE, "..", "runs", "ablation"))
    ap.add_argument("--n-volumes", type=int, default=12)
    args = ap.parse_args()

    base = config_from_flat(read_config_file(args.config))
    base.max_generator_steps = args.steps
    base.checkpoint_interval = 0
    volumes = {i: generate_phantom_volume(8, 64, seed=i) for i in range(args.n_volumes)}

    print(f"{'row':<20} {'imse(last 50)':>14} {'critic active':>14}")
    for cfg in ablation_configs(base):
        run_dir = os.path.join(args.out, cfg.run_name.replace("+", "_"))
        _ckpt, rows = train(cfg, volumes, out_dir=run_dir)
        tail = float(np.mean([r["imse"] for r in rows[-50:]]))
        adversarial = any(r["critic_loss"] != 0.0 for r in rows)
        print(f"{cfg.run_name:<20} {tail:>14.5f} {str(adversarial):>14}")
    print(f"per-row logs and checkpoints under {os.path.normpath(args.out)}")


if __name__ == "__main__":
    main()
