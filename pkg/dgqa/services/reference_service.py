"""
Reference Corpus Service
Procedural pristine images standing in for natural photographs at desk scale.

Each image combines a 1/f-spectrum texture (the power law natural scenes
follow), a smooth illumination gradient and a few flat-coloured shapes that
contribute hard edges.
"""

import logging
from typing import List

import numpy as np
from scipy import fft

from dgqa.constants import MIN_IMAGE_SIDE
from dgqa.errors import InputValidationError
from dgqa.models import RasterImage
from dgqa.seeding import derive_seed

logger = logging.getLogger(__name__)

VALUE_FLOOR = 0.05
VALUE_CEIL = 0.95


def pink_noise_field(height: int, width: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance field with amplitude spectrum ~ 1/f**exponent"""
    fy = fft.fftfreq(height)[:, None]
    fx = fft.rfftfreq(width)[None, :]
    freq = np.sqrt(fx ** 2 + fy ** 2)
    freq[0, 0] = 1.0
    amplitude = 1.0 / freq ** exponent
    amplitude[0, 0] = 0.0
    phase = rng.uniform(0.0, 2.0 * np.pi, size=amplitude.shape)
    field = fft.irfft2(amplitude * np.exp(1j * phase), s=(height, width))
    field -= field.mean()
    return field / (field.std() + 1e-12)


def _shape_mask(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    cy, cx = rng.uniform(0, height), rng.uniform(0, width)
    ry = rng.uniform(0.08, 0.3) * height
    rx = rng.uniform(0.08, 0.3) * width
    if rng.random() < 0.5:
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)


def synthesize_reference(size: int, seed: int) -> RasterImage:
    """One procedural pristine image of shape (size, size, 3)"""
    if size < MIN_IMAGE_SIDE:
        raise InputValidationError(f"Reference size must be at least {MIN_IMAGE_SIDE}, got {size}")
    rng = np.random.default_rng(seed)
    texture = pink_noise_field(size, size, rng.uniform(0.9, 1.3), rng)

    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    gradient = 0.15 * (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5))

    base = rng.uniform(0.3, 0.7, size=3)
    img = np.empty((size, size, 3))
    for c in range(3):
        tint = pink_noise_field(size, size, 1.2, rng)
        img[..., c] = base[c] + 0.12 * texture + 0.03 * tint + gradient

    for _ in range(int(rng.integers(3, 7))):
        mask = _shape_mask(size, size, rng)
        color = rng.uniform(0.15, 0.85, size=3)
        img[mask] = color + 0.06 * texture[mask][:, None]

    lo, hi = img.min(), img.max()
    img = VALUE_FLOOR + (VALUE_CEIL - VALUE_FLOOR) * (img - lo) / max(hi - lo, 1e-12)
    return RasterImage(img)


def synthesize_references(n: int, size: int = 128, seed: int = 0) -> List[RasterImage]:
    """
    Deterministic procedural reference corpus.

    Args:
        n: Number of images
        size: Side length in pixels (>= 64)
        seed: Base seed; image i uses a seed derived from (seed, i)

    Returns:
        List of pristine rasters with values in [0.05, 0.95]
    """
    if n < 1:
        raise InputValidationError(f"Need at least one reference image, got n={n}")
    images = [synthesize_reference(size, derive_seed(seed, "reference", i)) for i in range(n)]
    logger.info(f"Synthesized {n} procedural references of size {size}x{size}")
    return images
