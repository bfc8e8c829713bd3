"""Image-set ingestion and PNG export."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_image_set(directory, min_images: int = 2, max_images: int = 15) -> list[np.ndarray]:
    """Load every PNG/JPEG in ``directory``; sorted filenames give the input order."""
    paths = list_images(directory)
    if not min_images <= len(paths) <= max_images:
        raise InvalidInputError(
            f"{directory} holds {len(paths)} images; need {min_images}..{max_images}"
        )
    return [load_image(p) for p in paths]


def load_dataset(root) -> dict[str, list[np.ndarray]]:
    """One image set per subdirectory of ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    sets = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        sets[sub.name] = load_image_set(sub)
    if not sets:
        raise InvalidInputError(f"{root} contains no image-set subdirectories")
    return sets


def save_png(pixels: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def save_image_set(images, directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, img in enumerate(images):
        p = d / f"img_{k:02d}.png"
        save_png(img, p)
        paths.append(p)
    return paths
