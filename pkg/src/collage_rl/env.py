"""Sequential collage-editing environment.

An episode starts from a strip-packed layout.  The first ``layout_budget``
steps form the layout phase (swap two images in the input order, or
terminate the phase early); the remaining steps up to ``max_step`` are detail
edits on single images.  After every step the collage can be re-framed by
AutoCrop, which keeps the best-scoring view at the target aspect ratio.

The collage score is

    s(C) = lambda_a * s_a(C) - lambda_b * s_b(C)

with ``s_a`` the number of gate-passing proposals scoring at least ``tau``
and ``s_b`` the blank area in percent.  The step reward is the score change
minus ``step_penalty * (t + 1)``.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from . import aesthetics
from .aesthetics import CollageFeature, ScorerConfig
from .errors import ConfigError, InvalidActionError, InvalidInputError, PhaseError
from .geometry import (
    ANGLE_OPTIONS,
    DX_OPTIONS,
    DY_OPTIONS,
    LAYER_OPTIONS,
    Canvas,
    CollageState,
    ImagePlacement,
    Phase,
    Rect,
    _cover,
    apply_detail_action,
    apply_switch,
    content_bbox,
    coverage_mask,
    crop_state,
    parse_aspect,
    rasterize,
    strip_pack,
    swap_slots,
    visible_fraction,
)

MIN_IMAGES, MAX_IMAGES = 2, 15


@dataclass(frozen=True)
class Switch:
    i: int
    j: int


@dataclass(frozen=True)
class Terminate:
    pass


@dataclass(frozen=True)
class Detail:
    image_id: int
    dx_idx: int = 2
    dy_idx: int = 2
    layer_idx: int = 2
    angle_idx: int = 1

    def __post_init__(self):
        for name, value, n in (
            ("dx_idx", self.dx_idx, len(DX_OPTIONS)),
            ("dy_idx", self.dy_idx, len(DY_OPTIONS)),
            ("layer_idx", self.layer_idx, len(LAYER_OPTIONS)),
            ("angle_idx", self.angle_idx, len(ANGLE_OPTIONS)),
        ):
            if not 0 <= value < n:
                raise InvalidActionError(f"{name}={value} outside 0..{n - 1}")


Action = Union[Switch, Terminate, Detail]


def action_to_dict(action: Action) -> dict:
    if isinstance(action, Switch):
        return {"type": "switch", "i": action.i, "j": action.j}
    if isinstance(action, Terminate):
        return {"type": "terminate"}
    return {
        "type": "detail",
        "image_id": action.image_id,
        "dx": DX_OPTIONS[action.dx_idx],
        "dy": DY_OPTIONS[action.dy_idx],
        "layer": LAYER_OPTIONS[action.layer_idx],
        "dtheta": ANGLE_OPTIONS[action.angle_idx],
    }


def switch_pairs(n: int) -> list[tuple[int, int]]:
    """Unordered position pairs in lexicographic order."""
    return list(itertools.combinations(range(n), 2))


@dataclass(frozen=True)
class EnvConfig:
    max_step: int = 12
    layout_budget: int = 6
    lambda_a: float = 1.0
    lambda_b: float = 0.01
    step_penalty: float = 0.01
    target_aspect: Fraction = Fraction(1, 1)
    canvas_long_side: int = 128
    autocrop: bool = True
    crop_scales: tuple[float, ...] = (0.8, 0.9, 1.0)
    crop_offsets: int = 5
    attention: bool = True
    shuffle_order: bool = False
    init: str = "strip"  # or "quick_init"
    scorer: ScorerConfig = field(default_factory=ScorerConfig)

    def __post_init__(self):
        object.__setattr__(self, "target_aspect", parse_aspect(self.target_aspect))
        object.__setattr__(self, "crop_scales", tuple(float(s) for s in self.crop_scales))
        if not 0 < self.layout_budget < self.max_step:
            raise ConfigError(
                f"need 0 < layout_budget < max_step, got {self.layout_budget}, {self.max_step}"
            )
        if self.lambda_a < 0 or self.lambda_b < 0:
            raise ConfigError("lambda weights must be non-negative")
        if self.init not in ("strip", "quick_init"):
            raise ConfigError(f"init must be 'strip' or 'quick_init', got {self.init!r}")
        if self.crop_offsets < 1 or not self.crop_scales:
            raise ConfigError("AutoCrop needs at least one scale and one offset")
        if any(not 0 < s <= 1 for s in self.crop_scales):
            raise ConfigError(f"crop scales must lie in (0, 1], got {self.crop_scales}")

    def canvas(self) -> Canvas:
        return Canvas.from_aspect(self.target_aspect, self.canvas_long_side)


class Evaluation(NamedTuple):
    aesthetic_score: float
    proposal_count: int
    blank_fraction: float
    feature: CollageFeature


class StepOutcome(NamedTuple):
    state: CollageState
    reward: float
    score: float
    score_delta: float


@dataclass(frozen=True, eq=False)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


def collage_score(ev: Evaluation, cfg: EnvConfig) -> float:
    """lambda_a * proposal count - lambda_b * blank percentage."""
    return cfg.lambda_a * ev.proposal_count - cfg.lambda_b * 100.0 * ev.blank_fraction


def evaluate_collage(state: CollageState, images: Sequence, cfg: EnvConfig = EnvConfig(),
                     scorer=None, attention: bool | None = None) -> Evaluation:
    """Render, propose, score and fuse; pure."""
    buffers = rasterize(state, images)
    att = cfg.attention if attention is None else attention
    feat = aesthetics.evaluate_buffers(buffers, cfg.scorer, scorer, attention=att)
    return Evaluation(feat.aesthetic_score, feat.proposal_count, feat.blank_fraction, feat)


def crop_candidates(state: CollageState, images: Sequence, cfg: EnvConfig) -> list[Rect]:
    """Views at the canvas aspect ratio; the full canvas always comes first.

    For each scale, ``crop_offsets`` positions per axis are spread over the
    range that keeps the view inside the canvas and anchored on the content
    bounding box.
    """
    W, H = float(state.canvas.width_px), float(state.canvas.height_px)
    full = Rect(0.0, 0.0, W, H)
    buffers = rasterize(state, images)
    if not buffers.occupancy.any():
        return [full]
    box = content_bbox(buffers)
    out = [full]
    seen = {(0.0, 0.0, W, H)}

    def axis_positions(lo_c, extent_c, size, limit):
        hi = limit - size
        lo_p = min(max(lo_c, 0.0), hi)
        hi_p = min(max(lo_c + extent_c - size, 0.0), hi)
        if hi_p < lo_p:
            mid = min(max(lo_c + extent_c / 2.0 - size / 2.0, 0.0), hi)
            return [mid]
        return list(np.linspace(lo_p, hi_p, cfg.crop_offsets))

    for s in cfg.crop_scales:
        w, h = s * W, s * H
        for y in axis_positions(box.y, box.height, h, H):
            for x in axis_positions(box.x, box.width, w, W):
                key = (round(float(x), 9), round(float(y), 9), round(w, 9), round(h, 9))
                if key in seen:
                    continue
                seen.add(key)
                out.append(Rect(float(x), float(y), w, h))
    return out


def _crop_key(score: float, rect: Rect):
    # argmax score, then larger area, then top-most, then left-most
    return (-score, -rect.area, rect.y, rect.x)


class CollageEnv:
    """Environment bound to one image set.

    ``score_fn`` optionally replaces the collage score ``s(C)`` (it receives
    the state); observations still come from the aesthetic features.
    """

    def __init__(self, images: Sequence, cfg: EnvConfig = EnvConfig(), scorer=None,
                 score_fn: Callable[[CollageState], float] | None = None, cache_size: int = 512):
        if not MIN_IMAGES <= len(images) <= MAX_IMAGES:
            raise InvalidInputError(
                f"need {MIN_IMAGES}..{MAX_IMAGES} images, got {len(images)}"
            )
        self.images = [np.ascontiguousarray(np.asarray(im)[:, :, :3], dtype=np.uint8) for im in images]
        self.cfg = cfg
        self.scorer = scorer or aesthetics.make_scorer(cfg.scorer)
        self.score_fn = score_fn
        self.canvas = cfg.canvas()
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self.initial_feature: np.ndarray | None = None
        self._init_cache: dict[int, CollageState] = {}

    @property
    def n_images(self) -> int:
        return len(self.images)

    def evaluate(self, state: CollageState) -> Evaluation:
        key = (state.canvas, state.placements)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        ev = evaluate_collage(state, self.images, self.cfg, self.scorer)
        self._cache[key] = ev
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return ev

    def score(self, state: CollageState) -> float:
        if self.score_fn is not None:
            return float(self.score_fn(state))
        return collage_score(self.evaluate(state), self.cfg)

    def observation(self, state: CollageState) -> np.ndarray:
        current = self.evaluate(state).feature.fused_feature
        initial = self.initial_feature if self.initial_feature is not None else current
        return np.concatenate([current, initial])

    @property
    def observation_dim(self) -> int:
        return 2 * self.cfg.scorer.feature_dim

    def reset(self, seed: int | None = 0) -> tuple[CollageState, np.ndarray]:
        if self.cfg.init == "quick_init":
            key = seed or 0
            if key not in self._init_cache:
                self._init_cache[key] = quick_init_baseline(self.images, self.cfg, seed=key,
                                                            scorer=self.scorer)
            state = self._init_cache[key]
        else:
            order = list(range(self.n_images))
            if self.cfg.shuffle_order:
                order = [int(k) for k in np.random.default_rng(seed).permutation(self.n_images)]
            state = strip_pack(self.images, self.canvas, order)
        self.initial_feature = None
        self.initial_feature = self.evaluate(state).feature.fused_feature.copy()
        return state, self.observation(state)

    def autocrop(self, state: CollageState) -> tuple[CollageState, float]:
        """Best view over the candidate grid (ties: larger, then top-left-most).

        With the built-in score, a candidate can gain at most ``lambda_a`` per
        gate-passing proposal, so views are visited by that upper bound and
        the search stops once no remaining view can reach the best score.
        """
        views = []
        for rect in crop_candidates(state, self.images, self.cfg):
            full = (rect.x == 0 and rect.y == 0 and rect.width == self.canvas.width_px
                    and rect.height == self.canvas.height_px)
            views.append((rect, state if full else crop_state(state, rect)))
        if self.score_fn is None:
            cap = self.cfg.lambda_a * len(aesthetics.passing_proposals(self.canvas, self.cfg.scorer))
            bounds = []
            for rect, cand in views:
                blank = 1.0 - np.count_nonzero(coverage_mask(cand)) / self.canvas.area
                bounds.append(cap - self.cfg.lambda_b * 100.0 * blank)
            ranked = sorted(range(len(views)), key=lambda k: -bounds[k])
        else:
            bounds = None
            ranked = range(len(views))
        best = None
        for k in ranked:
            rect, cand = views[k]
            if bounds is not None and best is not None and bounds[k] < best[2]:
                break
            s = self.score(cand)
            key = _crop_key(s, rect)
            if best is None or key < best[0]:
                best = (key, cand, s)
        return best[1], best[2]

    def is_done(self, state: CollageState) -> bool:
        return state.step_index >= self.cfg.max_step

    def transition(self, state: CollageState, action: Action) -> StepOutcome:
        """Apply one action (plus AutoCrop) and price it.

        No observation is built, which keeps exhaustive searches cheap.
        """
        cfg = self.cfg
        if self.is_done(state):
            raise InvalidActionError("episode is already finished")
        t = state.step_index
        before = self.score(state)
        if isinstance(action, (Switch, Terminate)):
            if state.phase is not Phase.LAYOUT:
                raise PhaseError(f"{type(action).__name__} is only legal in the layout phase")
            if isinstance(action, Switch):
                if cfg.init == "quick_init":
                    new = swap_slots(state, (action.i, action.j))
                else:
                    new = apply_switch(state, (action.i, action.j), self.images)
                if new.layout_steps >= cfg.layout_budget:
                    new = replace(new, phase=Phase.DETAIL)
            else:
                new = replace(state, step_index=t + 1, phase=Phase.DETAIL,
                              layout_steps=state.layout_steps + 1)
        elif isinstance(action, Detail):
            new = apply_detail_action(
                state,
                action.image_id,
                DX_OPTIONS[action.dx_idx],
                DY_OPTIONS[action.dy_idx],
                LAYER_OPTIONS[action.layer_idx],
                ANGLE_OPTIONS[action.angle_idx],
            )
        else:
            raise InvalidActionError(f"unknown action {action!r}")
        if cfg.autocrop:
            new, after = self.autocrop(new)
        else:
            after = self.score(new)
        delta = after - before
        return StepOutcome(new, delta - cfg.step_penalty * (t + 1), after, delta)

    def step(self, state: CollageState, action: Action) -> tuple[CollageState, StepResult]:
        new, reward, after, delta = self.transition(state, action)
        ev = self.evaluate(new)
        info = {
            "score": after,
            "score_delta": delta,
            "s_a": ev.proposal_count,
            "s_b": ev.blank_fraction,
            "aesthetic_score": ev.aesthetic_score,
            "phase": new.phase.value,
            "step_index": new.step_index,
        }
        return new, StepResult(self.observation(new), reward, self.is_done(new), info)


def autocrop(state: CollageState, images: Sequence, cfg: EnvConfig = EnvConfig(),
             scorer=None) -> tuple[CollageState, float]:
    return CollageEnv(images, cfg, scorer).autocrop(state)


def trace_record(step: int, action: Action, result: StepResult) -> dict:
    return {
        "step": step,
        "action": action_to_dict(action),
        "reward": float(result.reward),
        "s_a": int(result.info["s_a"]),
        "s_b": float(result.info["s_b"]),
        "score": float(result.info["score"]),
        "aesthetic_score": float(result.info["aesthetic_score"]),
        "phase": result.info["phase"],
        "done": bool(result.done),
    }


def write_trace(records: Sequence[dict], path) -> None:
    """One JSON object per line."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _image_size_for(image, target_area: float, canvas: Canvas) -> tuple[float, float]:
    h, w = np.asarray(image).shape[:2]
    ar = w / h
    width = math.sqrt(target_area * ar)
    height = width / ar
    shrink = min(1.0, canvas.width_px / width, canvas.height_px / height)
    return width * shrink, height * shrink


def _overlap_ok(p: ImagePlacement, poly, others: dict, max_overlap: float) -> float:
    """Worst pairwise overlap (fraction of the smaller image) against ``others``."""
    worst = 0.0
    for q, qpoly in others.values():
        worst = max(worst, poly.intersection(qpoly).area / min(p.area, q.area))
    return worst


def quick_init_baseline(images: Sequence, cfg: EnvConfig = EnvConfig(), seed: int = 0,
                        scorer=None, fill: float = 1.3, max_overlap: float = 0.3,
                        grid: int = 17, max_angle: float = 2.0) -> CollageState:
    """Greedy salience-proxy layout used as the comparison baseline.

    Images are ranked by the patch score of their own content and sized so
    their areas sum to ``fill`` canvases.  In rank order, each image takes the
    grid position leaving the least blank canvas while overlapping every
    placed image by at most ``max_overlap`` of the smaller area (ties go
    top-left).  The best image then trades places with whichever image sits
    nearest the canvas center and goes on the top layer.  The seed only
    draws the small per-image tilt.
    """
    from shapely.geometry import Polygon

    n = len(images)
    if not MIN_IMAGES <= n <= MAX_IMAGES:
        raise InvalidInputError(f"need {MIN_IMAGES}..{MAX_IMAGES} images, got {n}")
    canvas = cfg.canvas()
    scorer = scorer or aesthetics.make_scorer(cfg.scorer)
    scores = [aesthetics.score_patch(np.asarray(im)[:, :, :3], None, scorer)[0] for im in images]
    ranking = sorted(range(n), key=lambda k: (-scores[k], k))
    rng = np.random.default_rng(seed)
    angles = rng.uniform(-max_angle, max_angle, size=n)
    W, H = canvas.width_px, canvas.height_px
    mx, my = W / 2.0, H / 2.0
    target_area = fill * W * H / n

    occupancy = np.zeros((H, W), dtype=bool)
    placed: dict[int, tuple[ImagePlacement, Polygon]] = {}
    xs = np.linspace(0.0, W, grid)
    ys = np.linspace(0.0, H, grid)
    for rank, img in enumerate(ranking):
        w, h = _image_size_for(images[img], target_area, canvas)
        base = ImagePlacement(img, mx, my, float(angles[img]), n - 1 - rank, w, h)
        best = None
        for cy in ys:
            for cx in xs:
                p = replace(base, center_x=float(cx), center_y=float(cy))
                if visible_fraction(p, canvas) < 0.25:
                    continue
                worst = _overlap_ok(p, Polygon(p.corners()), placed, max_overlap)
                hit = _cover(p, H, W)
                gained = 0
                if hit is not None:
                    y0, x0, mask, _, _ = hit
                    win = occupancy[y0:y0 + mask.shape[0], x0:x0 + mask.shape[1]]
                    gained = int(np.count_nonzero(mask & ~win))
                ok = worst <= max_overlap
                # feasible first, then least blank, then least overlap, then top-left
                key = (not ok, -gained if ok else worst, worst, cy, cx)
                if best is None or key < best[0]:
                    best = (key, p)
        choice = best[1]
        placed[img] = (choice, Polygon(choice.corners()))
        hit = _cover(choice, H, W)
        if hit is not None:
            y0, x0, mask, _, _ = hit
            occupancy[y0:y0 + mask.shape[0], x0:x0 + mask.shape[1]] |= mask

    lead = ranking[0]
    dist = {k: math.hypot(p.center_x - mx, p.center_y - my) for k, (p, _) in placed.items()}
    nearest = min(dist, key=lambda k: (dist[k], k))
    if nearest != lead:
        a, b = placed[lead][0], placed[nearest][0]
        a2 = replace(a, center_x=b.center_x, center_y=b.center_y)
        b2 = replace(b, center_x=a.center_x, center_y=a.center_y)
        placed[lead] = (a2, Polygon(a2.corners()))
        placed[nearest] = (b2, Polygon(b2.corners()))
    placements = tuple(placed[k][0] for k in range(n))
    return CollageState(canvas, placements, tuple(ranking))
