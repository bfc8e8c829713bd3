import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from collage_rl.geometry import Canvas, CollageState, ImagePlacement

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("default")

# Far outside any canvas; used to pad single-image scenes to the 2-image minimum.
OFFSCREEN = -10_000.0


def square_canvas(side: int) -> Canvas:
    return Canvas(side, side, Fraction(1))


def scene(canvas: Canvas, *placements: ImagePlacement, phase=None) -> CollageState:
    """State from explicit placements, padded with an invisible extra image if needed."""
    ps = list(placements)
    if len(ps) < 2:
        ps.append(ImagePlacement(len(ps), OFFSCREEN, OFFSCREEN, 0.0, len(ps), 1.0, 1.0))
    kw = {} if phase is None else {"phase": phase}
    return CollageState(canvas, tuple(ps), tuple(range(len(ps))), **kw)


def solid(h, w, color=(200, 30, 30)):
    return np.broadcast_to(np.array(color, dtype=np.uint8), (h, w, 3)).copy()


def oracle_occupancy(state: CollageState) -> np.ndarray:
    """Pixel-by-pixel point-in-rotated-rectangle test, in plain Python floats."""
    h, w = state.canvas.height_px, state.canvas.width_px
    occ = np.zeros((h, w), dtype=bool)
    for p in state.placements:
        t = math.radians(p.angle_deg)
        c, s = math.cos(t), math.sin(t)
        hw, hh = p.width_px / 2.0, p.height_px / 2.0
        for y in range(h):
            dy = y + 0.5 - p.center_y
            for x in range(w):
                dx = x + 0.5 - p.center_x
                u = c * dx + s * dy
                v = -s * dx + c * dy
                if -hw <= u < hw and -hh <= v < hh:
                    occ[y, x] = True
    return occ


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
