"""Compare the two starting layouts and watch AutoCrop trim them.

Run:  python3 demos/02_baseline_and_autocrop.py [--out DIR]
"""
import argparse
from pathlib import Path

from collage_rl.env import CollageEnv, EnvConfig, quick_init_baseline
from collage_rl.geometry import rasterize, strip_pack
from collage_rl.imageio import save_png
from collage_rl.synthetic import random_image_set

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="demo_out")
args = parser.parse_args()
out = Path(args.out)
out.mkdir(exist_ok=True)

images = random_image_set(7, seed=11)
cfg = EnvConfig(target_aspect="16:9", canvas_long_side=192)
env = CollageEnv(images, cfg)

starts = {
    "strip": strip_pack(images, cfg.canvas()),
    "quick_init": quick_init_baseline(images, cfg, seed=0),
}
for name, state in starts.items():
    ev = env.evaluate(state)
    cropped, score = env.autocrop(state)
    after = env.evaluate(cropped)
    print(f"{name:>10}: aesthetic {ev.aesthetic_score:6.2f} blank {ev.blank_fraction:.3f}"
          f"  ->  after AutoCrop {after.aesthetic_score:6.2f} blank {after.blank_fraction:.3f}"
          f" (s = {score:.2f})")
    save_png(rasterize(state, images).pixels, out / f"{name}.png")
    save_png(rasterize(cropped, images).pixels, out / f"{name}_cropped.png")
print(f"images in {out}/")
