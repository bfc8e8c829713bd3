"""Pack a few synthetic photos onto a canvas and look at how the scorer sees it.

Run:  python3 demos/01_score_a_collage.py [--out DIR]
"""
import argparse
from pathlib import Path

from collage_rl import aesthetics
from collage_rl.env import EnvConfig, collage_score, evaluate_collage
from collage_rl.geometry import blank_area, rasterize, strip_pack
from collage_rl.imageio import save_png
from collage_rl.synthetic import random_image_set

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="demo_out")
args = parser.parse_args()
out = Path(args.out)
out.mkdir(exist_ok=True)

images = random_image_set(5, seed=3)
cfg = EnvConfig(target_aspect="4:3", canvas_long_side=256)
state = strip_pack(images, cfg.canvas())
print(f"canvas {state.canvas.width_px}x{state.canvas.height_px}, {state.n_images} images")
for p in state.placements:
    print(f"  image {p.image_id}: center ({p.center_x:.0f}, {p.center_y:.0f}) "
          f"size {p.width_px:.0f}x{p.height_px:.0f} layer {p.layer}")

buffers = rasterize(state, images)
save_png(buffers.pixels, out / "strip_pack.png")
print(f"blank fraction {blank_area(buffers).fraction:.3f}")

# The metric only listens to big windows: everything at or below eta of the canvas is gated out.
proposals = aesthetics.score_proposals(aesthetics.passing_proposals(buffers, cfg.scorer), buffers)
print(f"{len(proposals)} windows pass the area gate (eta = {cfg.scorer.eta})")
for p in proposals[:4]:
    print(f"  window {tuple(p.rect)} score {p.score:.2f}")

ev = evaluate_collage(state, images, cfg)
print(f"aesthetic score {ev.aesthetic_score:.2f}, good windows s_a = {ev.proposal_count}, "
      f"reward-side score s = {collage_score(ev, cfg):.2f}")
print(f"wrote {out / 'strip_pack.png'}")
