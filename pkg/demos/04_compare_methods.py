"""A short end-to-end run: train briefly, then compare against the baseline.

This uses a small budget so it finishes in minutes; expect noisy numbers.

Run:  python3 demos/04_compare_methods.py [--epochs N]
"""
import argparse

from collage_rl.env import EnvConfig
from collage_rl.synthetic import random_image_set
from collage_rl.training import TrainConfig, evaluate, train

parser = argparse.ArgumentParser()
parser.add_argument("--epochs", type=int, default=2)
args = parser.parse_args()

sizes = [6, 8, 4, 10, 3]
train_sets = [random_image_set(n, 500 + k) for k, n in enumerate(sizes)]
eval_sets = [random_image_set(n, 100 + k) for k, n in enumerate(sizes)]
cfg = EnvConfig(init="quick_init", canvas_long_side=96)

tc = TrainConfig(max_epoch=args.epochs, episodes_per_epoch=8, batch_size=8, sign_reward_epochs=0, lr=3e-3)
params, _ = train(tc, train_sets, cfg,
                  progress=lambda r: print(f"epoch {r['epoch']}: return {r['mean_return']:.3f}"))

table = evaluate(params, eval_sets, cfg, ["baseline", "agent", "agent_no_attention", "agent_no_autocrop"])
print(f"{'method':>20} {'proposals':>10} {'aesthetic':>10}")
for row in table["rows"]:
    print(f"{row['method']:>20} {row['proposals_all']:10.2f} {row['aesthetic_all']:10.2f}")
