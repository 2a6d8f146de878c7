"""Procedural stand-ins for face crops and geometric ground truth.

Nothing here resembles a real face; the point is a deterministic image per
``image_ref`` whose live/spoof cues are learnable by a tiny network, so the
full pipeline can be exercised without the real image corpus.
"""

from __future__ import annotations

import zlib

import numpy as np

from aenet_fas.datamodel import AnnotatedSample, Illumination

MAP_SIZE = 14

_ILLUM_GAIN = {
    Illumination.NO_ILLUMINATION: 1.0,
    Illumination.NORMAL: 1.0,
    Illumination.STRONG: 1.35,
    Illumination.BACK: 0.8,
    Illumination.DARK: 0.4,
}


def _seed(image_ref: str) -> int:
    return zlib.crc32(image_ref.encode("utf-8"))


def _face_center(sample: AnnotatedSample) -> tuple[float, float]:
    # face_box offsets nudge the blob; values stay inside the unit square
    x, y, w, h = sample.face_box
    return 0.5 + (x - 32) / 400.0, 0.5 + (y - 32) / 400.0


def _bump(size: int, cx: float, cy: float, sigma: float) -> np.ndarray:
    grid = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))


def render_image(sample: AnnotatedSample, size: int = 224) -> np.ndarray:
    """Render a (3, size, size) float32 image in [0, 1]."""
    rng = np.random.default_rng(_seed(sample.image_ref))
    cx, cy = _face_center(sample)
    grid = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(grid, grid, indexing="ij")

    background = rng.uniform(0.15, 0.6, 3)[:, None, None] * np.ones((3, size, size))
    face = (((xx - cx) / 0.28) ** 2 + ((yy - cy) / 0.36) ** 2) <= 1.0
    pale = sample.has_attribute("Pale_Skin")
    skin = np.array([0.85, 0.68, 0.55]) if not pale else np.array([0.95, 0.85, 0.8])
    skin = skin * rng.uniform(0.9, 1.05)

    img = background.copy()
    if sample.is_live:
        shading = 0.55 + 0.45 * _bump(size, cx, cy, 0.22)
        img[:, face] = (skin[:, None] * shading[face][None, :])
    else:
        img[:, face] = skin[:, None]
        macro = sample.spoof_type.macro
        freq = {"print": 40.0, "replay": 22.0, "paper_cut": 9.0, "3d": 5.0}[macro]
        phase = rng.uniform(0, 2 * np.pi)
        stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx + 0.6 * yy) + phase)
        img = img * (0.8 + 0.3 * stripes)[None]
        if macro == "replay":
            glare = _bump(size, rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1)
            img = img + 0.4 * glare[None]
        if macro == "paper_cut":
            img[:, face & (np.abs(yy - cy) < 0.05)] = 0.05

    gain = _ILLUM_GAIN[sample.illumination]
    if sample.illumination is Illumination.BACK:
        img[:, ~face] = np.minimum(1.0, img[:, ~face] * 1.6)
        img[:, face] *= gain
    else:
        img *= gain
    img = img + rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synthetic_depth(sample: AnnotatedSample) -> np.ndarray:
    """Depth stand-in: a unit-peak bump over the face centre."""
    cx, cy = _face_center(sample)
    sigma = 0.18 + 0.04 * min(sample.face_box[2], sample.face_box[3]) / 200.0
    depth = _bump(MAP_SIZE, cx, cy, sigma)
    return depth / depth.max()


def synthetic_reflection(sample: AnnotatedSample) -> np.ndarray:
    """Reflection stand-in: a glare patch, strongest for screen replays."""
    rng = np.random.default_rng(_seed(sample.image_ref) ^ 0x5EED)
    strength = 1.0 if sample.spoof_type.macro == "replay" else 0.3
    patch = _bump(MAP_SIZE, rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), 0.15)
    return np.clip(strength * patch, 0.0, 1.0)


def ramp_map(sample: AnnotatedSample | None = None) -> np.ndarray:
    """Deterministic ramp in [0, 1]; handy pass-through fixture."""
    return np.linspace(0.0, 1.0, MAP_SIZE * MAP_SIZE).reshape(MAP_SIZE, MAP_SIZE)


def attribute_vector(sample: AnnotatedSample) -> np.ndarray:
    return np.asarray(sample.face_attributes, dtype=np.float32)


__all__ = [
    "MAP_SIZE",
    "attribute_vector",
    "ramp_map",
    "render_image",
    "synthetic_depth",
    "synthetic_reflection",
]
