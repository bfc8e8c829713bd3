"""Procedural "photos" for tests, demos and desk-scale training.

Each generator returns an HxWx3 uint8 array.  The mix covers flat, smooth,
striped, checkered, blobby and noisy content so that the heuristic scorer
sees a spread of scores.
"""
from __future__ import annotations

import numpy as np

KINDS = ("flat", "gradient", "stripes", "checker", "blobs", "noise")


def _colors(rng, k):
    return rng.integers(0, 256, size=(k, 3)).astype(np.float64)


def make_image(kind: str, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    if kind == "flat":
        img = np.broadcast_to(_colors(rng, 1)[0], (height, width, 3)).copy()
    elif kind == "gradient":
        a, b = _colors(rng, 2)
        t = rng.uniform(0, np.pi)
        s = (np.cos(t) * xx / width + np.sin(t) * yy / height)
        s = (s - s.min()) / max(np.ptp(s), 1e-9)
        img = a + s[..., None] * (b - a)
    elif kind == "stripes":
        a, b = _colors(rng, 2)
        period = rng.uniform(4, 16)
        t = rng.uniform(0, np.pi)
        s = (np.sin(2 * np.pi * (np.cos(t) * xx + np.sin(t) * yy) / period) > 0)
        img = np.where(s[..., None], a, b)
    elif kind == "checker":
        a, b = _colors(rng, 2)
        cell = int(rng.integers(4, 12))
        s = ((yy // cell + xx // cell) % 2).astype(bool)
        img = np.where(s[..., None], a, b)
    elif kind == "blobs":
        img = np.broadcast_to(_colors(rng, 1)[0], (height, width, 3)).copy()
        for c in _colors(rng, int(rng.integers(3, 7))):
            cy, cx = rng.uniform(0, height), rng.uniform(0, width)
            r = rng.uniform(0.1, 0.35) * min(height, width)
            m = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            img[m] = c
    elif kind == "noise":
        base = _colors(rng, 1)[0]
        img = base + rng.normal(0, 60, size=(height, width, 3))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return np.clip(img, 0, 255).astype(np.uint8)


def random_image(rng: np.random.Generator, size_range=(48, 96), kind: str | None = None) -> np.ndarray:
    kind = kind or KINDS[int(rng.integers(len(KINDS)))]
    h = int(rng.integers(*size_range))
    ar = rng.choice([1.0, 4 / 3, 3 / 4, 3 / 2, 2 / 3, 16 / 9])
    w = max(8, int(round(h * ar)))
    return make_image(kind, h, w, rng)


def random_image_set(n: int, seed: int, size_range=(48, 96)) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [random_image(rng, size_range) for _ in range(n)]


def square_set(n: int, seed: int, side: int = 64, kind: str | None = None) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [make_image(kind or KINDS[int(rng.integers(len(KINDS)))], side, side, rng) for _ in range(n)]
