"""Canvas, image placements, rasterization and the geometric layout edits.

All state objects are frozen dataclasses; every edit returns a new state.
Pixel coordinates use x to the right and y downwards.  A pixel ``(row, col)``
is covered by an image when its center ``(col + 0.5, row + 0.5)`` lies in the
half-open rotated rectangle of that image.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyContentError, InvalidActionError, InvalidInputError, PhaseError

MIN_CANVAS_PX = 64
MAX_ANGLE_DEG = 45.0
MIN_VISIBLE_FRACTION = 0.25
BACKGROUND = (255, 255, 255)
BLANK = -1

# Table of detail options, indexed by the agent's head outputs.
DX_OPTIONS = (-15, -5, 0, 5)
DY_OPTIONS = (-15, -5, 0, 5)
LAYER_OPTIONS = ("top", "bottom", "none")
ANGLE_OPTIONS = (-0.5, 0.0, 0.5)


class Phase(enum.Enum):
    LAYOUT = "layout"
    DETAIL = "detail"


def parse_aspect(text: str | Fraction | tuple[int, int]) -> Fraction:
    """Parse ``"W:H"`` (or a tuple / Fraction) into a positive Fraction."""
    if isinstance(text, Fraction):
        if text <= 0:
            raise InvalidInputError(f"aspect ratio must be positive, got {text}")
        return text
    if isinstance(text, tuple):
        w, h = text
    else:
        parts = str(text).strip().split(":")
        if len(parts) != 2:
            raise InvalidInputError(f"aspect ratio must look like W:H, got {text!r}")
        try:
            w, h = int(parts[0]), int(parts[1])
        except ValueError:
            raise InvalidInputError(f"aspect ratio must be two integers, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise InvalidInputError(f"aspect ratio terms must be positive, got {w}:{h}")
    return Fraction(w, h)


@dataclass(frozen=True)
class Canvas:
    width_px: int
    height_px: int
    aspect_ratio: Fraction

    def __post_init__(self):
        if self.width_px < MIN_CANVAS_PX or self.height_px < MIN_CANVAS_PX:
            raise InvalidInputError(
                f"canvas must be at least {MIN_CANVAS_PX}px per side, got "
                f"{self.width_px}x{self.height_px}"
            )
        if abs(self.width_px - float(self.aspect_ratio) * self.height_px) > 1.0:
            raise InvalidInputError(
                f"canvas {self.width_px}x{self.height_px} does not match aspect {self.aspect_ratio}"
            )

    @classmethod
    def from_aspect(cls, aspect, long_side: int = 128) -> "Canvas":
        """Canvas whose longer side is ``long_side`` (grown if the short side would be < 64)."""
        ar = parse_aspect(aspect)
        r = float(ar)
        if r >= 1.0:
            w = long_side
            h = round(w / r)
            if h < MIN_CANVAS_PX:
                h = MIN_CANVAS_PX
                w = round(h * r)
        else:
            h = long_side
            w = round(h * r)
            if w < MIN_CANVAS_PX:
                w = MIN_CANVAS_PX
                h = round(w / r)
        return cls(int(w), int(h), ar)

    @property
    def area(self) -> int:
        return self.width_px * self.height_px

    @property
    def shape(self) -> tuple[int, int]:
        return self.height_px, self.width_px


@dataclass(frozen=True)
class ImagePlacement:
    """One image on the canvas.

    ``width_px``/``height_px`` are the rendered size on the canvas; the source
    raster is resampled to it at rasterization time.
    """

    image_id: int
    center_x: float
    center_y: float
    angle_deg: float
    layer: int
    width_px: float
    height_px: float

    def corners(self) -> np.ndarray:
        """The four rectangle corners as a (4, 2) array of (x, y)."""
        hw, hh = self.width_px / 2.0, self.height_px / 2.0
        local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
        t = math.radians(self.angle_deg)
        c, s = math.cos(t), math.sin(t)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.center_x, self.center_y])

    @property
    def area(self) -> float:
        return self.width_px * self.height_px


@dataclass(frozen=True)
class CollageState:
    canvas: Canvas
    placements: tuple[ImagePlacement, ...]
    order: tuple[int, ...]
    step_index: int = 0
    phase: Phase = Phase.LAYOUT
    layout_steps: int = field(default=0)

    def __post_init__(self):
        n = len(self.placements)
        if n < 2:
            raise InvalidInputError("a collage needs at least two images")
        if tuple(p.image_id for p in self.placements) != tuple(range(n)):
            raise InvalidInputError("placements must be indexed by image_id 0..N-1")
        if sorted(self.order) != list(range(n)):
            raise InvalidInputError(f"order {self.order} is not a permutation of 0..{n - 1}")
        if sorted(p.layer for p in self.placements) != list(range(n)):
            raise InvalidInputError("layers must be a permutation of 0..N-1")

    @property
    def n_images(self) -> int:
        return len(self.placements)


class Rect(NamedTuple):
    """Axis-aligned rectangle ``(x, y, width, height)``."""

    x: float
    y: float
    width: float
    height: float

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.width / 2.0, self.y + self.height / 2.0


@dataclass(frozen=True, eq=False)
class RasterBuffers:
    occupancy: np.ndarray  # (H, W) bool
    top_index: np.ndarray  # (H, W) int, BLANK where uncovered
    pixels: np.ndarray  # (H, W, 3) uint8


def _as_rgb(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] < 3:
        raise InvalidInputError(f"image must be HxWx3, got shape {arr.shape}")
    return np.ascontiguousarray(arr[:, :, :3], dtype=np.uint8)


def _cover(placement: ImagePlacement, height: int, width: int):
    """Pixel window and coverage mask of one placement.

    Returns ``(y0, x0, mask, u, v)`` where ``u, v`` are the local rectangle
    coordinates of every pixel center in the window, or None when the
    rectangle misses the canvas.
    """
    t = math.radians(placement.angle_deg)
    c, s = math.cos(t), math.sin(t)
    hw, hh = placement.width_px / 2.0, placement.height_px / 2.0
    ex = abs(c) * hw + abs(s) * hh
    ey = abs(s) * hw + abs(c) * hh
    cx, cy = placement.center_x, placement.center_y
    x0 = max(0, int(math.floor(cx - ex)))
    x1 = min(width, int(math.ceil(cx + ex)) + 1)
    y0 = max(0, int(math.floor(cy - ey)))
    y1 = min(height, int(math.ceil(cy + ey)) + 1)
    if x0 >= x1 or y0 >= y1:
        return None
    dx = np.arange(x0, x1) + 0.5 - cx
    dy = np.arange(y0, y1) + 0.5 - cy
    u = c * dx[None, :] + s * dy[:, None]
    v = -s * dx[None, :] + c * dy[:, None]
    mask = (u >= -hw) & (u < hw) & (v >= -hh) & (v < hh)
    return y0, x0, mask, u, v


def rasterize(state: CollageState, images: Sequence, background=BACKGROUND) -> RasterBuffers:
    """Render the collage; higher layers paint over lower ones."""
    h, w = state.canvas.shape
    occupancy = np.zeros((h, w), dtype=bool)
    top = np.full((h, w), BLANK, dtype=np.int64)
    pixels = np.empty((h, w, 3), dtype=np.uint8)
    pixels[...] = np.asarray(background, dtype=np.uint8)
    for p in sorted(state.placements, key=lambda q: q.layer):
        if not 0 <= p.image_id < len(images):
            raise InvalidInputError(f"image_id {p.image_id} out of range for {len(images)} images")
        hit = _cover(p, h, w)
        if hit is None:
            continue
        y0, x0, mask, u, v = hit
        if not mask.any():
            continue
        src = _as_rgb(images[p.image_id])
        sh, sw = src.shape[:2]
        col = ((u / p.width_px + 0.5) * sw).astype(np.int64)
        row = ((v / p.height_px + 0.5) * sh).astype(np.int64)
        np.clip(col, 0, sw - 1, out=col)
        np.clip(row, 0, sh - 1, out=row)
        mh, mw = mask.shape
        win = (slice(y0, y0 + mh), slice(x0, x0 + mw))
        occupancy[win] |= mask
        np.copyto(top[win], p.image_id, where=mask)
        np.copyto(pixels[win], src[row, col], where=mask[:, :, None])
    return RasterBuffers(occupancy, top, pixels)


def coverage_mask(state: CollageState) -> np.ndarray:
    """Occupancy alone; identical to ``rasterize(...).occupancy`` but cheaper."""
    h, w = state.canvas.shape
    occupancy = np.zeros((h, w), dtype=bool)
    for p in state.placements:
        hit = _cover(p, h, w)
        if hit is not None:
            y0, x0, mask, _, _ = hit
            occupancy[y0:y0 + mask.shape[0], x0:x0 + mask.shape[1]] |= mask
    return occupancy


class BlankArea(NamedTuple):
    pixels: int
    fraction: float


def blank_area(buffers: RasterBuffers) -> BlankArea:
    occ = buffers.occupancy
    blank = int(occ.size - np.count_nonzero(occ))
    return BlankArea(blank, blank / occ.size)


def content_bbox(buffers: RasterBuffers) -> Rect:
    """Tightest integer rectangle around the covered pixels."""
    occ = buffers.occupancy
    rows = np.flatnonzero(occ.any(axis=1))
    cols = np.flatnonzero(occ.any(axis=0))
    if rows.size == 0:
        raise EmptyContentError("collage has no covered pixels")
    return Rect(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def visible_fraction(placement: ImagePlacement, canvas: Canvas) -> float:
    """Fraction of the image rectangle's area lying on the canvas."""
    poly = placement.corners()
    for axis, lo, hi in ((0, 0.0, canvas.width_px), (1, 0.0, canvas.height_px)):
        poly = _clip_halfplane(poly, axis, lo, keep_greater=True)
        poly = _clip_halfplane(poly, axis, hi, keep_greater=False)
        if len(poly) < 3:
            return 0.0
    x, y = poly[:, 0], poly[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return float(area / placement.area)


def _clip_halfplane(poly: np.ndarray, axis: int, bound: float, keep_greater: bool) -> np.ndarray:
    # Sutherland-Hodgman against one axis-aligned boundary.
    out = []
    n = len(poly)
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        ina = a[axis] >= bound if keep_greater else a[axis] <= bound
        inb = b[axis] >= bound if keep_greater else b[axis] <= bound
        if ina:
            out.append(a)
        if ina != inb:
            t = (bound - a[axis]) / (b[axis] - a[axis])
            out.append(a + t * (b - a))
    return np.array(out) if out else np.zeros((0, 2))


def clamp_to_canvas(placement: ImagePlacement, canvas: Canvas) -> ImagePlacement:
    """Move the center so at least a quarter of the image stays on canvas."""
    cx = min(max(placement.center_x, 0.0), float(canvas.width_px))
    cy = min(max(placement.center_y, 0.0), float(canvas.height_px))
    p = replace(placement, center_x=cx, center_y=cy)
    if visible_fraction(p, canvas) >= MIN_VISIBLE_FRACTION:
        return p
    # Bisect along the segment towards the canvas center (always feasible there
    # unless the image dwarfs the canvas, in which case the center is used).
    mx, my = canvas.width_px / 2.0, canvas.height_px / 2.0
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = (lo + hi) / 2.0
        q = replace(p, center_x=cx + mid * (mx - cx), center_y=cy + mid * (my - cy))
        if visible_fraction(q, canvas) >= MIN_VISIBLE_FRACTION:
            hi = mid
        else:
            lo = mid
    return replace(p, center_x=cx + hi * (mx - cx), center_y=cy + hi * (my - cy))


def move_layer(layers: Sequence[int], index: int, op: str) -> list[int]:
    """Send ``index`` to the top or bottom; others keep their relative order."""
    if op == "none":
        return list(layers)
    rest = sorted((l, k) for k, l in enumerate(layers) if k != index)
    stack = [k for _, k in rest]
    if op == "top":
        stack.append(index)
    elif op == "bottom":
        stack.insert(0, index)
    else:
        raise InvalidActionError(f"unknown layer op {op!r}")
    out = [0] * len(layers)
    for rank, k in enumerate(stack):
        out[k] = rank
    return out


def apply_detail_action(
    state: CollageState,
    image_id: int,
    dx: float = 0,
    dy: float = 0,
    layer_op: str = "none",
    dtheta: float = 0.0,
) -> CollageState:
    if state.phase is not Phase.DETAIL:
        raise PhaseError("detail actions are only legal in the detail phase")
    if not 0 <= image_id < state.n_images:
        raise InvalidActionError(f"image_id {image_id} out of range")
    placements = list(state.placements)
    if dx or dy or dtheta:
        p = placements[image_id]
        angle = min(max(p.angle_deg + dtheta, -MAX_ANGLE_DEG), MAX_ANGLE_DEG)
        p = replace(p, center_x=p.center_x + dx, center_y=p.center_y + dy, angle_deg=angle)
        placements[image_id] = clamp_to_canvas(p, state.canvas)
    if layer_op != "none":
        layers = move_layer([p.layer for p in placements], image_id, layer_op)
        placements = [replace(p, layer=l) for p, l in zip(placements, layers)]
    return replace(state, placements=tuple(placements), step_index=state.step_index + 1)


def apply_switch(state: CollageState, pair: tuple[int, int], images: Sequence) -> CollageState:
    """Exchange two entries of ``order`` and re-run the strip-packing initializer."""
    if state.phase is not Phase.LAYOUT:
        raise PhaseError("switch actions are only legal in the layout phase")
    i, j = pair
    n = state.n_images
    if i == j:
        raise InvalidActionError("switch needs two distinct positions")
    if not (0 <= i < n and 0 <= j < n):
        raise InvalidActionError(f"switch pair {pair} out of range")
    order = list(state.order)
    order[i], order[j] = order[j], order[i]
    fresh = strip_pack(images, state.canvas, order)
    return replace(
        fresh,
        step_index=state.step_index + 1,
        phase=state.phase,
        layout_steps=state.layout_steps + 1,
    )


def swap_slots(state: CollageState, pair: tuple[int, int]) -> CollageState:
    """Switch for free-form layouts: the two images trade centers and layers.

    ``pair`` indexes ``order``; each image keeps its own size and tilt.
    """
    if state.phase is not Phase.LAYOUT:
        raise PhaseError("switch actions are only legal in the layout phase")
    i, j = pair
    n = state.n_images
    if i == j or not (0 <= i < n and 0 <= j < n):
        raise InvalidActionError(f"invalid switch pair {pair}")
    order = list(state.order)
    a, b = order[i], order[j]
    order[i], order[j] = b, a
    pa, pb = state.placements[a], state.placements[b]
    placements = list(state.placements)
    placements[a] = clamp_to_canvas(
        replace(pa, center_x=pb.center_x, center_y=pb.center_y, layer=pb.layer), state.canvas)
    placements[b] = clamp_to_canvas(
        replace(pb, center_x=pa.center_x, center_y=pa.center_y, layer=pa.layer), state.canvas)
    return replace(state, placements=tuple(placements), order=tuple(order),
                   step_index=state.step_index + 1, layout_steps=state.layout_steps + 1)


def _partition(widths: Sequence[float], k: int) -> list[list[int]]:
    """Split indices into ``k`` contiguous rows with balanced total width.

    Minimizes the sum of squared deviations of row widths from the mean.
    """
    n = len(widths)
    prefix = np.concatenate([[0.0], np.cumsum(widths)])
    target = prefix[-1] / k
    inf = float("inf")
    cost = [[inf] * (n + 1) for _ in range(k + 1)]
    back = [[0] * (n + 1) for _ in range(k + 1)]
    cost[0][0] = 0.0
    for r in range(1, k + 1):
        for end in range(r, n - (k - r) + 1):
            for start in range(r - 1, end):
                c = cost[r - 1][start]
                if c == inf:
                    continue
                c += (prefix[end] - prefix[start] - target) ** 2
                if c < cost[r][end]:
                    cost[r][end] = c
                    back[r][end] = start
    rows, end = [], n
    for r in range(k, 0, -1):
        start = back[r][end]
        rows.append(list(range(start, end)))
        end = start
    return rows[::-1]


def strip_pack(images: Sequence, canvas: Canvas, order: Sequence[int] | None = None) -> CollageState:
    """Equal-height rows of images, stacked to best fill the canvas, no overlap.

    Every row is scaled to the canvas width; the row count is the one whose
    stacked height best matches the canvas, and the whole block is shrunk
    uniformly if it is too tall.  Rows and images are centered.
    """
    n = len(images)
    if n < 2:
        raise InvalidInputError("a collage needs at least two images")
    order = list(range(n)) if order is None else list(order)
    if sorted(order) != list(range(n)):
        raise InvalidInputError(f"order {order} is not a permutation of 0..{n - 1}")
    shapes = [np.asarray(images[k]).shape[:2] for k in order]
    aspects = [w / h for h, w in shapes]
    W, H = float(canvas.width_px), float(canvas.height_px)

    best = None
    for k in range(1, n + 1):
        rows = _partition(aspects, k)
        heights = [W / sum(aspects[i] for i in row) for row in rows]
        total = sum(heights)
        coverage = min(total / H, H / total)
        if best is None or coverage > best[0] + 1e-12:
            best = (coverage, rows, heights, total)
    _, rows, heights, total = best
    shrink = min(1.0, H / total)
    y = (H - total * shrink) / 2.0
    slots: dict[int, ImagePlacement] = {}
    for row, rh in zip(rows, heights):
        rh *= shrink
        row_w = sum(aspects[i] for i in row) * rh
        x = (W - row_w) / 2.0
        for i in row:
            iw = aspects[i] * rh
            img = order[i]
            slots[img] = ImagePlacement(img, x + iw / 2.0, y + rh / 2.0, 0.0, 0, iw, rh)
            x += iw
        y += rh
    # Later positions in the order sit on higher layers.
    placements = tuple(
        replace(slots[img], layer=order.index(img)) for img in range(n)
    )
    return CollageState(canvas, placements, tuple(order))


def crop_state(state: CollageState, rect: Rect) -> CollageState:
    """The view ``rect`` of the collage, rescaled to fill the same canvas."""
    sx = state.canvas.width_px / rect.width
    sy = state.canvas.height_px / rect.height
    k = math.sqrt(sx * sy)
    placements = tuple(
        replace(
            p,
            center_x=(p.center_x - rect.x) * sx,
            center_y=(p.center_y - rect.y) * sy,
            width_px=p.width_px * k,
            height_px=p.height_px * k,
        )
        for p in state.placements
    )
    return replace(state, placements=placements)


def scale_state(state: CollageState, canvas: Canvas) -> CollageState:
    """Re-express the collage on a differently sized canvas of the same aspect."""
    sx = canvas.width_px / state.canvas.width_px
    sy = canvas.height_px / state.canvas.height_px
    k = math.sqrt(sx * sy)
    placements = tuple(
        replace(p, center_x=p.center_x * sx, center_y=p.center_y * sy,
                width_px=p.width_px * k, height_px=p.height_px * k)
        for p in state.placements
    )
    return replace(state, canvas=canvas, placements=placements)
