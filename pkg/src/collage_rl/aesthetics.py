"""Multi-patch aesthetic scoring of a rendered collage.

A collage is described by a bag of sliding-window patch proposals.  Each
proposal is scored by a pluggable patch scorer returning ``(score, feature)``.
Proposals covering more than ``eta`` of the canvas pass the fusion gate; their
features are pooled with center-weighted attention

    l_i     = |y_i / H - 0.5| + |x_i / W - 0.5|
    alpha_i = (area_i / canvas_area) * (1 - l_i)

and the aesthetic metric is ``sum(area fraction * score)`` over the passing set.
"""
from __future__ import annotations

import importlib
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ConfigError, InvalidInputError
from .geometry import Canvas, RasterBuffers, Rect

SCORE_MIN, SCORE_MAX = 0.0, 10.0
FOCUS_CENTER = (0.5, 0.5)


class PatchScorer(Protocol):
    feature_dim: int

    def __call__(self, pixels: np.ndarray, blank: np.ndarray) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True)
class ScorerConfig:
    eta: float = 0.60
    scales: tuple[float, ...] = (0.4, 0.6, 0.8, 1.0)
    aspect_ratios: tuple[Fraction, ...] = (
        Fraction(1, 1), Fraction(4, 3), Fraction(3, 4), Fraction(16, 9),
    )
    stride_fraction: float = 0.125
    tau: float = 5.0
    feature_dim: int = 32
    scorer: str = "heuristic"
    external_scorer: str = ""

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta}")
        if not self.scales or not self.aspect_ratios:
            raise ConfigError("need at least one scale and one aspect ratio")
        if any(s <= 0 or s > 1 for s in self.scales):
            raise ConfigError(f"scales must lie in (0, 1], got {self.scales}")
        if self.stride_fraction <= 0:
            raise ConfigError("stride_fraction must be positive")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(
            self, "aspect_ratios", tuple(Fraction(a) for a in self.aspect_ratios)
        )


@dataclass(frozen=True, eq=False)
class PatchProposal:
    rect: Rect
    area_px: int
    center: tuple[float, float]
    score: float | None = None
    feature: np.ndarray | None = None

    def area_fraction(self, canvas_area: float) -> float:
        return self.area_px / canvas_area


@dataclass(frozen=True, eq=False)
class CollageFeature:
    fused_feature: np.ndarray
    attention_weights: np.ndarray
    proposal_count: int
    aesthetic_score: float
    blank_fraction: float = 0.0


def _shape_of(target) -> tuple[int, int]:
    if isinstance(target, RasterBuffers):
        return target.occupancy.shape
    if isinstance(target, Canvas):
        return target.shape
    h, w = target
    return int(h), int(w)


@lru_cache(maxsize=64)
def _window_grid(height: int, width: int, cfg: ScorerConfig) -> tuple[Rect, ...]:
    sx = max(1, int(round(cfg.stride_fraction * width)))
    sy = max(1, int(round(cfg.stride_fraction * height)))
    canvas_ar = width / height
    seen = set()
    for ar in cfg.aspect_ratios:
        r = float(ar)
        fit_w, fit_h = (width, width / r) if r >= canvas_ar else (height * r, height)
        for s in cfg.scales:
            w = min(width, max(1, int(round(s * fit_w))))
            h = min(height, max(1, int(round(s * fit_h))))
            for y in range(0, height - h + 1, sy):
                for x in range(0, width - w + 1, sx):
                    seen.add(Rect(x, y, w, h))
    return tuple(sorted(seen, key=lambda r: (r.width * r.height, r.y, r.x, r.width)))


def generate_proposals(target, cfg: ScorerConfig = ScorerConfig()) -> list[PatchProposal]:
    """Sliding windows over every (scale, aspect ratio); unscored, deduplicated.

    ``target`` may be raster buffers, a Canvas, or a ``(height, width)`` pair.
    """
    h, w = _shape_of(target)
    rects = _window_grid(h, w, cfg)
    if not rects:
        raise ConfigError("scorer configuration produces no proposals")
    return [PatchProposal(r, r.width * r.height, r.center) for r in rects]


class HeuristicScorer:
    """Hand-built stand-in for a learned patch aesthetic model.

    The score is ten times the mean of four terms in [0, 1]: luminance
    contrast, color-channel entropy and edge density (all measured on the
    covered pixels only) and the covered fraction of the patch.  The 32-d
    feature is a 4x4 luminance grid, 4-bin per-channel histograms and the
    four terms.  Patches are point-sampled down to at most ``work_size``
    pixels per side before any statistic is taken.
    """

    feature_dim = 32

    def __init__(self, work_size: int = 32, edge_threshold: float = 40.0,
                 contrast_scale: float = 128.0, bins: int = 32):
        self.work_size = work_size
        self.edge_threshold = edge_threshold
        self.contrast_scale = contrast_scale
        self.bins = bins

    def __call__(self, pixels: np.ndarray, blank: np.ndarray) -> tuple[float, np.ndarray]:
        h, w = pixels.shape[:2]
        scores, feats = self.score_many(pixels, blank, [Rect(0, 0, w, h)])
        return float(scores[0]), feats[0]

    def _samples(self, start: int, length: int) -> np.ndarray:
        n = min(length, self.work_size)
        return start + ((np.arange(n) + 0.5) * length / n).astype(np.int64)

    @lru_cache(maxsize=256)
    def _index_groups(self, rects: tuple[Rect, ...]):
        # rects sampled to the same working shape are scored as one batch
        groups: dict[tuple[int, int], list[int]] = {}
        samples = []
        for k, r in enumerate(rects):
            rows = self._samples(int(r.y), int(r.height))
            cols = self._samples(int(r.x), int(r.width))
            samples.append((rows, cols))
            groups.setdefault((rows.size, cols.size), []).append(k)
        return [
            (idx,
             np.stack([samples[k][0] for k in idx])[:, :, None],
             np.stack([samples[k][1] for k in idx])[:, None, :])
            for idx in groups.values()
        ]

    def score_many(self, pixels: np.ndarray, blank: np.ndarray,
                   rects: Sequence[Rect]) -> tuple[np.ndarray, np.ndarray]:
        """Score every rect of one raster; returns ``(scores (P,), features (P, 32))``."""
        pixels = np.asarray(pixels)
        covered = ~np.asarray(blank, dtype=bool)
        scores = np.empty(len(rects))
        feats = np.empty((len(rects), self.feature_dim))
        weights = np.array([0.299, 0.587, 0.114])
        for idx, R, C in self._index_groups(tuple(Rect(*r) for r in rects)):
            px = pixels[R, C]
            q = px.astype(np.int64)
            s, f = self._batch(
                px @ weights,
                np.minimum(q * self.bins // 256, self.bins - 1),
                q // 64,
                covered[R, C],
            )
            scores[idx] = s
            feats[idx] = f
        return scores, feats

    def _batch(self, L, Q, Q4, cov):
        P, hs, ws = L.shape
        n = cov.sum(axis=(1, 2))
        safe = np.maximum(n, 1)
        nonblank = n / (hs * ws)
        mean = (L * cov).sum(axis=(1, 2)) / safe
        var = (((L - mean[:, None, None]) ** 2) * cov).sum(axis=(1, 2)) / safe
        contrast = np.minimum(1.0, np.sqrt(var) / self.contrast_scale)

        offs = (np.arange(P) * self.bins)[:, None, None]
        ent = np.zeros(P)
        for c in range(3):
            idx = (Q[..., c] + offs)[cov]
            counts = np.bincount(idx, minlength=P * self.bins).reshape(P, self.bins)
            p = counts / safe[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                ent -= np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
        entropy = ent / (3.0 * math.log(self.bins))

        hits = np.zeros(P)
        pairs = np.zeros(P)
        for g, valid in (
            (np.abs(np.diff(L, axis=2)), cov[:, :, 1:] & cov[:, :, :-1]),
            (np.abs(np.diff(L, axis=1)), cov[:, 1:, :] & cov[:, :-1, :]),
        ):
            pairs += valid.sum(axis=(1, 2))
            hits += (valid & (g > self.edge_threshold)).sum(axis=(1, 2))
        edges = np.where(pairs > 0, hits / np.maximum(pairs, 1), 0.0)

        empty = n == 0
        terms = np.stack([contrast, entropy, edges, nonblank], axis=1)
        terms[empty] = 0.0
        scores = SCORE_MIN + (SCORE_MAX - SCORE_MIN) * terms.mean(axis=1)

        if hs % 4 == 0 and ws % 4 == 0:
            grid = L.reshape(P, 4, hs // 4, 4, ws // 4).mean(axis=(2, 4)).reshape(P, 16) / 255.0
        else:
            grid = np.zeros((P, 16))
            for a, rr in enumerate(np.array_split(np.arange(hs), 4)):
                for b, cc in enumerate(np.array_split(np.arange(ws), 4)):
                    if rr.size and cc.size:
                        grid[:, 4 * a + b] = L[:, rr][:, :, cc].mean(axis=(1, 2)) / 255.0
        offs4 = (np.arange(P) * 4)[:, None, None]
        hist = [np.bincount((Q4[..., c] + offs4).ravel(), minlength=4 * P).reshape(P, 4) / (hs * ws)
                for c in range(3)]
        feats = np.concatenate([grid] + hist + [terms], axis=1)
        return scores, feats


def load_external_scorer(path: str) -> PatchScorer:
    """Import ``"package.module:attr"``; a class is instantiated without args."""
    mod_name, _, attr = path.partition(":")
    if not mod_name or not attr:
        raise ConfigError(f"external scorer must be 'module:attr', got {path!r}")
    obj = getattr(importlib.import_module(mod_name), attr)
    if isinstance(obj, type):
        obj = obj()
    if not hasattr(obj, "feature_dim"):
        raise ConfigError(f"external scorer {path} must expose feature_dim")
    return obj


def make_scorer(cfg: ScorerConfig = ScorerConfig()) -> PatchScorer:
    if cfg.scorer == "heuristic":
        scorer = HeuristicScorer()
    elif cfg.scorer == "external":
        scorer = load_external_scorer(cfg.external_scorer)
    else:
        raise ConfigError(f"unknown scorer {cfg.scorer!r}; expected heuristic or external")
    if scorer.feature_dim != cfg.feature_dim:
        raise ConfigError(
            f"scorer feature_dim {scorer.feature_dim} != configured {cfg.feature_dim}"
        )
    return scorer


def score_patch(pixels: np.ndarray, blank: np.ndarray | None = None,
                scorer: PatchScorer | None = None) -> tuple[float, np.ndarray]:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] == 0 or pixels.shape[1] == 0:
        raise InvalidInputError(f"patch must be a non-empty HxWx3 array, got {pixels.shape}")
    if blank is None:
        blank = np.zeros(pixels.shape[:2], dtype=bool)
    scorer = scorer or _DEFAULT_SCORER
    score, feature = scorer(pixels, blank)
    if not (math.isfinite(score) and SCORE_MIN <= score <= SCORE_MAX):
        raise InvalidInputError(f"scorer returned out-of-range score {score}")
    return float(score), np.asarray(feature, dtype=np.float64)


_DEFAULT_SCORER = HeuristicScorer()


def score_proposals(proposals: Sequence[PatchProposal], buffers: RasterBuffers,
                    scorer: PatchScorer | None = None) -> list[PatchProposal]:
    blank = ~buffers.occupancy
    if not proposals:
        return []
    scorer = scorer or _DEFAULT_SCORER
    if hasattr(scorer, "score_many"):
        scores, feats = scorer.score_many(buffers.pixels, blank, [p.rect for p in proposals])
        return [replace(p, score=float(s), feature=f) for p, s, f in zip(proposals, scores, feats)]
    out = []
    for p in proposals:
        x, y, w, h = (int(v) for v in p.rect)
        s, f = score_patch(buffers.pixels[y:y + h, x:x + w], blank[y:y + h, x:x + w], scorer)
        out.append(replace(p, score=s, feature=f))
    return out


def _shape_scalars(canvas) -> tuple[float, float]:
    h, w = _shape_of(canvas)
    return float(h), float(w)


def attention_weights(proposals: Sequence[PatchProposal], canvas, attention: bool = True) -> np.ndarray:
    """Center-rule weights; with ``attention=False`` the plain area fractions."""
    h, w = _shape_scalars(canvas)
    area = h * w
    weights = np.empty(len(proposals))
    for k, p in enumerate(proposals):
        frac = p.area_px / area
        if attention:
            cx, cy = p.center
            l = abs(cy / h - FOCUS_CENTER[0]) + abs(cx / w - FOCUS_CENTER[1])
            weights[k] = frac * (1.0 - l)
        else:
            weights[k] = frac
    return weights


def gate(proposals: Sequence[PatchProposal], canvas, eta: float) -> np.ndarray:
    """Boolean mask of proposals whose area fraction exceeds ``eta``."""
    h, w = _shape_scalars(canvas)
    return np.array([p.area_px / (h * w) > eta for p in proposals], dtype=bool)


def fuse(proposals: Sequence[PatchProposal], canvas, cfg: ScorerConfig = ScorerConfig(),
         attention: bool = True, blank_fraction: float = 0.0) -> CollageFeature:
    """Gate, weight and pool scored proposals into one fixed-size feature."""
    if any(p.score is None for p in proposals):
        raise InvalidInputError("fuse needs scored proposals")
    alpha = attention_weights(proposals, canvas, attention)
    passing = gate(proposals, canvas, cfg.eta)
    fused = np.zeros(cfg.feature_dim)
    norm = 0.0
    count = 0
    for p, a, ok in zip(proposals, alpha, passing):
        if not ok:
            continue
        fused += a * p.feature
        norm += a
        if p.score >= cfg.tau:
            count += 1
    if norm > 0:
        fused /= norm
    return CollageFeature(
        fused_feature=fused,
        attention_weights=alpha,
        proposal_count=count,
        aesthetic_score=aesthetic_metric(proposals, canvas, cfg),
        blank_fraction=blank_fraction,
    )


def aesthetic_metric(proposals: Sequence[PatchProposal], canvas,
                     cfg: ScorerConfig = ScorerConfig()) -> float:
    h, w = _shape_scalars(canvas)
    area = h * w
    total = 0.0
    for p in proposals:
        frac = p.area_px / area
        if frac > cfg.eta:
            total += frac * p.score
    return total


@lru_cache(maxsize=64)
def _passing_proposals(height: int, width: int, cfg: ScorerConfig) -> tuple[PatchProposal, ...]:
    proposals = generate_proposals((height, width), cfg)
    keep = gate(proposals, (height, width), cfg.eta)
    return tuple(p for p, ok in zip(proposals, keep) if ok)


def passing_proposals(target, cfg: ScorerConfig = ScorerConfig()) -> tuple[PatchProposal, ...]:
    """The unscored proposals that pass the area gate."""
    h, w = _shape_of(target)
    return _passing_proposals(h, w, cfg)


def evaluate_buffers(buffers: RasterBuffers, cfg: ScorerConfig = ScorerConfig(),
                     scorer: PatchScorer | None = None, attention: bool = True) -> CollageFeature:
    """Proposals -> scores -> fused feature / metric for one rendered collage.

    Only proposals that pass the area gate are scored: the others contribute
    nothing to the feature, the count or the metric.
    """
    h, w = buffers.occupancy.shape
    passing = _passing_proposals(h, w, cfg)
    scored = score_proposals(passing, buffers, scorer)
    blank = 1.0 - np.count_nonzero(buffers.occupancy) / buffers.occupancy.size
    return fuse(scored, (h, w), cfg, attention=attention, blank_fraction=blank)
