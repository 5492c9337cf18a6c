"""
Feature Service
Natural-scene-statistics features (MSCN coefficients + AGGD fits at two
scales) and random patch sampling.
"""

import logging
import threading
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.special import gamma

from dgqa import constants as C
from dgqa.errors import InputValidationError
from dgqa.models import RasterImage
from dgqa.schemas import PatchMode, PatchPolicy
from dgqa.seeding import derive_seed

logger = logging.getLogger(__name__)

# Rows of feature vectors for one image: shape (n_rows, FEATURE_DIM)
FeatureFn = Callable[[RasterImage, str], np.ndarray]

_AGGD_RATIO = gamma(2.0 / C.AGGD_ALPHA_GRID) ** 2 / (
    gamma(1.0 / C.AGGD_ALPHA_GRID) * gamma(3.0 / C.AGGD_ALPHA_GRID)
)
_MSCN_TRUNCATE = (C.MSCN_WINDOW // 2) / C.MSCN_SIGMA

# (row offset, col offset) pairs: horizontal, vertical, main diagonal, anti-diagonal
PAIRWISE_ORIENTATIONS = ("horizontal", "vertical", "diagonal", "antidiagonal")


class AGGDParams(NamedTuple):
    alpha: float
    sigma_left: float
    sigma_right: float


def luminance(image: RasterImage) -> np.ndarray:
    return image.pixels @ C.LUMA_WEIGHTS


def mscn(image: Union[RasterImage, np.ndarray]) -> np.ndarray:
    """
    Mean-subtracted contrast-normalized coefficients (I - mu) / (sigma + C).

    Args:
        image: Raster (converted to luminance) or a 2-D luminance field

    Returns:
        Coefficient field of the same height and width
    """
    gray = luminance(image) if isinstance(image, RasterImage) else np.asarray(image, dtype=np.float64)
    if gray.ndim != 2:
        raise InputValidationError(f"mscn expects a 2-D luminance field, got shape {gray.shape}")
    if min(gray.shape) < C.MSCN_WINDOW:
        raise InputValidationError(
            f"Image {gray.shape} is smaller than the {C.MSCN_WINDOW}x{C.MSCN_WINDOW} window"
        )
    mu = ndimage.gaussian_filter(gray, C.MSCN_SIGMA, mode="reflect", truncate=_MSCN_TRUNCATE)
    second = ndimage.gaussian_filter(gray * gray, C.MSCN_SIGMA, mode="reflect", truncate=_MSCN_TRUNCATE)
    sigma = np.sqrt(np.abs(second - mu * mu))
    return (gray - mu) / (sigma + C.MSCN_C)


def aggd_fit(samples) -> AGGDParams:
    """
    Moment-matching fit of an asymmetric generalized Gaussian.

    The shape is looked up on a precomputed grid over [0.2, 10]. An all-zero
    input returns the fallback (1, 0, 0).
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < C.AGGD_MIN_SAMPLES:
        raise InputValidationError(f"aggd_fit needs at least {C.AGGD_MIN_SAMPLES} samples, got {x.size}")
    if not np.any(x):
        return AGGDParams(1.0, 0.0, 0.0)

    left = x[x < 0]
    right = x[x > 0]
    sigma_l = float(np.sqrt(np.mean(left ** 2))) if left.size else 0.0
    sigma_r = float(np.sqrt(np.mean(right ** 2))) if right.size else 0.0
    gamma_hat = sigma_l / sigma_r if sigma_l > 0 and sigma_r > 0 else 1.0
    r_hat = np.mean(np.abs(x)) ** 2 / np.mean(x ** 2)
    r_norm = r_hat * (gamma_hat ** 3 + 1) * (gamma_hat + 1) / (gamma_hat ** 2 + 1) ** 2
    alpha = float(C.AGGD_ALPHA_GRID[np.argmin((_AGGD_RATIO - r_norm) ** 2)])
    return AGGDParams(alpha, sigma_l, sigma_r)


def _pairwise_products(field: np.ndarray) -> List[np.ndarray]:
    return [
        field[:, :-1] * field[:, 1:],
        field[:-1, :] * field[1:, :],
        field[:-1, :-1] * field[1:, 1:],
        field[:-1, 1:] * field[1:, :-1],
    ]


def _downsample2(gray: np.ndarray) -> np.ndarray:
    h, w = (gray.shape[0] // 2) * 2, (gray.shape[1] // 2) * 2
    g = gray[:h, :w]
    return 0.25 * (g[0::2, 0::2] + g[1::2, 0::2] + g[0::2, 1::2] + g[1::2, 1::2])


def _scale_features(gray: np.ndarray) -> List[float]:
    field = mscn(gray)
    base = aggd_fit(field)
    feats = [base.alpha, 0.5 * (base.sigma_left + base.sigma_right)]
    for product in _pairwise_products(field):
        fit = aggd_fit(product)
        a = fit.alpha
        eta = (fit.sigma_right - fit.sigma_left) * (gamma(2.0 / a) / gamma(1.0 / a)) * np.sqrt(
            gamma(1.0 / a) / gamma(3.0 / a)
        )
        feats.extend([a, eta, fit.sigma_left ** 2, fit.sigma_right ** 2])
    return feats


def extract_features(image: RasterImage) -> np.ndarray:
    """
    36-dimensional NSS feature vector: 18 statistics at full and half scale.

    Per scale: MSCN shape and mean scale, then for each of the four pairwise
    product orientations shape, mean offset, left and right variance.
    """
    gray = luminance(image)
    feats: List[float] = []
    for _ in range(C.FEATURE_SCALES):
        feats.extend(_scale_features(gray))
        gray = _downsample2(gray)
    vector = np.nan_to_num(np.asarray(feats, dtype=np.float64), nan=0.0, posinf=0.0, neginf=0.0)
    if vector.shape != (C.FEATURE_DIM,):
        raise InputValidationError(f"Feature vector has length {vector.size}, expected {C.FEATURE_DIM}")
    return vector


def patch_corners(height: int, width: int, size: int, count: int,
                  rng: np.random.Generator) -> List[Tuple[int, int]]:
    """Uniform random top-left corners of size x size crops fully inside the image"""
    if size > min(height, width):
        raise InputValidationError(f"Patch size {size} exceeds image {width}x{height}")
    tops = rng.integers(0, height - size + 1, size=count)
    lefts = rng.integers(0, width - size + 1, size=count)
    return [(int(t), int(l)) for t, l in zip(tops, lefts)]


def sample_patches(image: RasterImage, policy: PatchPolicy, mode: Union[PatchMode, str],
                   seed: Optional[int] = None) -> List[RasterImage]:
    """
    Random crops for training or test-time averaging.

    Train mode additionally flips each patch horizontally with probability 0.5.

    Args:
        image: Source raster
        policy: Patch size, counts and seed
        mode: "train" or "test"
        seed: Overrides policy.seed (used to give each image its own stream)
    """
    mode = PatchMode(mode)
    rng = np.random.default_rng(policy.seed if seed is None else seed)
    count = policy.train_patches_per_image if mode is PatchMode.TRAIN else policy.test_patches_per_image
    corners = patch_corners(image.height, image.width, policy.patch_size, count, rng)
    patches = [image.crop(top, left, policy.patch_size) for top, left in corners]
    if mode is PatchMode.TRAIN:
        flips = rng.random(count) < 0.5
        patches = [p.flipped() if flip else p for p, flip in zip(patches, flips)]
    return patches


class PatchFeatureExtractor:
    """
    Feature function over random patches, memoized per (key, mode).

    Each image gets its own patch stream derived from the policy seed and the
    caller-supplied key (the sample id), so features do not depend on the
    order in which images are visited.
    """

    def __init__(self, policy: PatchPolicy, mode: Union[PatchMode, str] = PatchMode.TRAIN):
        self.policy = policy
        self.mode = PatchMode(mode)
        self._cache: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def __call__(self, image: RasterImage, key: str) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        seed = derive_seed(self.policy.seed, key, self.mode.value)
        rows = np.stack([extract_features(p) for p in sample_patches(image, self.policy, self.mode, seed)])
        with self._lock:
            self._cache[key] = rows
        return rows

    def cached_rows(self) -> Dict[str, np.ndarray]:
        with self._lock:
            return dict(self._cache)

    def preload(self, rows_by_key: Dict[str, np.ndarray]) -> None:
        with self._lock:
            self._cache.update(rows_by_key)

    def __len__(self) -> int:
        return len(self._cache)


def whole_image_features(image: RasterImage, key: str = "") -> np.ndarray:
    """Feature function without patching: one row per image"""
    return extract_features(image)[None, :]
