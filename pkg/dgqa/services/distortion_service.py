"""
Distortion Engine Service
Severity-controlled synthetic distortion operators, the default family
registry, PSNR-based pseudo-MOS labels and per-family dataset generation.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import fft, ndimage

from dgqa import constants as C
from dgqa.errors import InputValidationError, RegistryError
from dgqa.models import DistortionSpec, DomainDataset, DomainSample, RasterImage
from dgqa.seeding import sample_seed

logger = logging.getLogger(__name__)

Operator = Callable[[np.ndarray, object, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class FamilyDescriptor:
    """A registered distortion family and its 5-entry severity table"""
    domain_id: int
    name: str
    parameter_name: str
    levels: Tuple[object, ...]
    operator: Operator
    stochastic: bool = False

    def parameter(self, level: int) -> object:
        return self.levels[level - 1]


# ---------- filtering helpers (reflect padding everywhere) -------------------

def _gaussian_rgb(x: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(x, sigma=(sigma, sigma, 0.0), mode="reflect")


def _convolve_rgb(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return np.stack(
        [ndimage.convolve(x[..., c], kernel, mode="reflect") for c in range(x.shape[2])],
        axis=-1,
    )


def disk_kernel(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    kernel = ((xx ** 2 + yy ** 2) <= radius ** 2 + 1e-9).astype(np.float64)
    return kernel / kernel.sum()


def motion_kernel(length: int, angle: float) -> np.ndarray:
    """Line kernel of the given odd length rotated by angle (radians)"""
    center = length // 2
    t = np.linspace(-center, center, 4 * length)
    rows = np.rint(center - t * np.sin(angle)).astype(int)
    cols = np.rint(center + t * np.cos(angle)).astype(int)
    kernel = np.zeros((length, length))
    kernel[rows, cols] = 1.0
    return kernel / kernel.sum()


def _deadzone(values: np.ndarray, step: float) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) / step) * step


def _pad_to_multiple(x: np.ndarray, block: int) -> np.ndarray:
    pad_h = (-x.shape[0]) % block
    pad_w = (-x.shape[1]) % block
    if pad_h == 0 and pad_w == 0:
        return x
    return np.pad(x, ((0, pad_h), (0, pad_w), (0, 0)), mode="symmetric")


def _blockify(x: np.ndarray, block: int) -> np.ndarray:
    h, w, c = x.shape
    return x.reshape(h // block, block, w // block, block, c).transpose(0, 2, 1, 3, 4)


def _unblockify(blocks: np.ndarray) -> np.ndarray:
    nh, nw, b, _, c = blocks.shape
    return blocks.transpose(0, 2, 1, 3, 4).reshape(nh * b, nw * b, c)


# ---------- operators ---------------------------------------------------------

def gaussian_blur(x, sigma, rng):
    return _gaussian_rgb(x, float(sigma))


def lens_blur(x, radius, rng):
    return _convolve_rgb(x, disk_kernel(float(radius)))


def motion_blur(x, length, rng):
    return _convolve_rgb(x, motion_kernel(int(length), rng.uniform(0.0, np.pi)))


def jpeg2000_approx(x, params, rng):
    # two-band pyramid: quantize the coarse base, dead-zone the detail bands
    sigma, step = params
    low1 = _gaussian_rgb(x, sigma)
    low2 = _gaussian_rgb(low1, 2.0 * sigma)
    base = np.round(low2 / (step / 4.0)) * (step / 4.0)
    return base + _deadzone(low1 - low2, step) + _deadzone(x - low1, 2.0 * step)


def jpeg_approx(x, scale, rng):
    h, w, _ = x.shape
    quant = C.JPEG_LUMA_TABLE * float(scale) / (8.0 * 255.0)
    blocks = _blockify(_pad_to_multiple(x - 0.5, C.JPEG_BLOCK), C.JPEG_BLOCK)
    coeffs = fft.dctn(blocks, axes=(2, 3), norm="ortho")
    q = quant[:, :, None]
    coeffs = np.round(coeffs / q) * q
    restored = _unblockify(fft.idctn(coeffs, axes=(2, 3), norm="ortho")) + 0.5
    return restored[:h, :w, :]


def white_noise(x, sigma, rng):
    return x + rng.normal(0.0, float(sigma), size=x.shape)


def impulse_noise(x, fraction, rng):
    """Replace exactly floor(fraction * H * W) pixel positions by salt or pepper"""
    h, w, c = x.shape
    n_pixels = h * w
    count = int(np.floor(float(fraction) * n_pixels))
    out = x.reshape(n_pixels, c).copy()
    positions = rng.choice(n_pixels, size=count, replace=False)
    salt = rng.random(count) < 0.5
    out[positions] = np.where(salt[:, None], 1.0, 0.0)
    return out.reshape(h, w, c)


def multiplicative_noise(x, sigma, rng):
    return x * (1.0 + rng.normal(0.0, float(sigma), size=x.shape))


def brighten(x, gamma, rng):
    return 1.0 - np.power(1.0 - x, float(gamma))


def darken(x, gamma, rng):
    return np.power(x, float(gamma))


def mean_shift(x, delta, rng):
    return x + float(delta)


def jitter(x, std, rng):
    h, w, _ = x.shape
    dy = np.rint(rng.normal(0.0, float(std), size=(h, w))).astype(int)
    dx = np.rint(rng.normal(0.0, float(std), size=(h, w))).astype(int)
    rows = np.clip(np.arange(h)[:, None] + dy, 0, h - 1)
    cols = np.clip(np.arange(w)[None, :] + dx, 0, w - 1)
    return x[rows, cols, :]


def pixelate(x, block, rng):
    h, w, _ = x.shape
    block = int(block)
    blocks = _blockify(_pad_to_multiple(x, block), block)
    means = blocks.mean(axis=(2, 3), keepdims=True)
    return _unblockify(np.broadcast_to(means, blocks.shape))[:h, :w, :]


def high_sharpen(x, amount, rng):
    return x + float(amount) * (x - _gaussian_rgb(x, C.HIGH_SHARPEN_SIGMA))


def contrast_change(x, factor, rng):
    mean_luma = float(np.mean(x @ C.LUMA_WEIGHTS))
    return mean_luma + float(factor) * (x - mean_luma)


def _build_default_registry() -> Dict[int, FamilyDescriptor]:
    families = [
        FamilyDescriptor(1, "gaussian_blur", "sigma", C.GAUSSIAN_BLUR_SIGMA, gaussian_blur),
        FamilyDescriptor(2, "lens_blur", "radius", C.LENS_BLUR_RADIUS, lens_blur),
        FamilyDescriptor(3, "motion_blur", "length", C.MOTION_BLUR_LENGTH, motion_blur, stochastic=True),
        FamilyDescriptor(9, "jpeg2000_approx", "sigma_step",
                         tuple(zip(C.JPEG2000_SMOOTH_SIGMA, C.JPEG2000_STEP)), jpeg2000_approx),
        FamilyDescriptor(10, "jpeg_approx", "quant_scale", C.JPEG_QUANT_SCALE, jpeg_approx),
        FamilyDescriptor(11, "white_noise", "sigma", C.WHITE_NOISE_SIGMA, white_noise, stochastic=True),
        FamilyDescriptor(13, "impulse_noise", "fraction", C.IMPULSE_NOISE_FRACTION, impulse_noise,
                         stochastic=True),
        FamilyDescriptor(14, "multiplicative_noise", "sigma", C.MULTIPLICATIVE_NOISE_SIGMA,
                         multiplicative_noise, stochastic=True),
        FamilyDescriptor(16, "brighten", "gamma", C.BRIGHTEN_GAMMA, brighten),
        FamilyDescriptor(17, "darken", "gamma", C.DARKEN_GAMMA, darken),
        FamilyDescriptor(18, "mean_shift", "delta", C.MEAN_SHIFT_DELTA, mean_shift),
        FamilyDescriptor(19, "jitter", "std", C.JITTER_STD, jitter, stochastic=True),
        FamilyDescriptor(22, "pixelate", "block", C.PIXELATE_BLOCK, pixelate),
        FamilyDescriptor(24, "high_sharpen", "amount", C.HIGH_SHARPEN_AMOUNT, high_sharpen),
        FamilyDescriptor(25, "contrast_change", "factor", C.CONTRAST_FACTOR, contrast_change),
    ]
    return {f.domain_id: f for f in families}


# KADID indices not listed (4-8, 12, 15, 20, 21, 23) are extension points:
# register a FamilyDescriptor under the free index in a copy of this mapping.
DEFAULT_REGISTRY: Dict[int, FamilyDescriptor] = _build_default_registry()


def registry_default() -> List[Tuple[int, FamilyDescriptor]]:
    """Default desk-scale registry as (domain id, descriptor) pairs, ordered by id"""
    return sorted(DEFAULT_REGISTRY.items())


def get_family(family: int, registry: Optional[Mapping[int, FamilyDescriptor]] = None) -> FamilyDescriptor:
    registry = DEFAULT_REGISTRY if registry is None else registry
    try:
        return registry[int(family)]
    except KeyError:
        raise RegistryError(family, registry.keys()) from None


def family_name(family: int, registry: Optional[Mapping[int, FamilyDescriptor]] = None) -> str:
    try:
        return get_family(family, registry).name
    except RegistryError:
        return f"family_{family}"


def apply_distortion(image: RasterImage, spec: DistortionSpec,
                     registry: Optional[Mapping[int, FamilyDescriptor]] = None) -> RasterImage:
    """
    Apply one distortion family at one severity level.

    Args:
        image: Input raster
        spec: Family, level and seed
        registry: Family registry (default registry when omitted)

    Returns:
        Same-size raster, clamped to [0, 1]; bit-identical for identical inputs

    Raises:
        RegistryError: If the family is not registered
    """
    descriptor = get_family(spec.family, registry)
    rng = np.random.default_rng(spec.seed)
    out = descriptor.operator(np.array(image.pixels), descriptor.parameter(spec.level), rng)
    if out.shape != image.shape:
        raise InputValidationError(f"{descriptor.name} changed the raster shape to {out.shape}")
    return RasterImage.from_array(out)


def _check_same_size(reference: RasterImage, distorted: RasterImage) -> None:
    if reference.shape != distorted.shape:
        raise InputValidationError(
            f"Dimension mismatch: reference {reference.shape} vs distorted {distorted.shape}"
        )


def psnr(reference: RasterImage, distorted: RasterImage) -> float:
    """PSNR in dB over all pixels and channels; identical images return the 100 dB cap"""
    _check_same_size(reference, distorted)
    mse = float(np.mean((reference.pixels - distorted.pixels) ** 2))
    if mse == 0.0:
        return C.PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), C.PSNR_CAP_DB)


def psnr_to_pseudo_mos(value_db: float) -> float:
    scaled = (value_db - C.PSEUDO_MOS_FLOOR_DB) / C.PSEUDO_MOS_SPAN_DB
    return 100.0 * float(np.clip(scaled, 0.0, 1.0))


def pseudo_label(reference: RasterImage, distorted: RasterImage) -> float:
    """Pseudo-MOS in [0, 100]: 100 * clamp((PSNR - 15) / 35, 0, 1)"""
    return psnr_to_pseudo_mos(psnr(reference, distorted))


def generate_domain(references: Sequence[RasterImage], family: int, levels: Sequence[int], seed: int,
                    reference_ids: Optional[Sequence[str]] = None,
                    registry: Optional[Mapping[int, FamilyDescriptor]] = None,
                    max_workers: int = 1) -> DomainDataset:
    """
    Build one source domain: one sample per (reference, level).

    Sample i uses seed XOR i, so the output does not depend on max_workers.

    Args:
        references: Pristine reference rasters
        family: Registered family id
        levels: Severity levels to generate
        seed: Base seed
        reference_ids: Identifiers for the references (ref_0000, ... when omitted)
        registry: Family registry (default registry when omitted)
        max_workers: Thread count for per-sample generation

    Returns:
        DomainDataset whose labels are pseudo-MOS values
    """
    if not references:
        raise InputValidationError("generate_domain needs at least one reference image")
    if any(isinstance(lv, bool) or not float(lv).is_integer() for lv in levels):
        raise InputValidationError(f"Severity levels must be integers, got {list(levels)}")
    levels = sorted(set(int(lv) for lv in levels))
    if not levels:
        raise InputValidationError("generate_domain needs at least one severity level")
    descriptor = get_family(family, registry)
    if reference_ids is None:
        reference_ids = [f"ref_{i:04d}" for i in range(len(references))]
    if len(reference_ids) != len(references):
        raise InputValidationError("reference_ids must match references in length")

    jobs = [
        (index, ref_idx, level)
        for index, (ref_idx, level) in enumerate(
            (r, lv) for r in range(len(references)) for lv in levels
        )
    ]

    def _make(job) -> DomainSample:
        index, ref_idx, level = job
        reference = references[ref_idx]
        spec = DistortionSpec(family=descriptor.domain_id, level=level, seed=sample_seed(seed, index))
        distorted = apply_distortion(reference, spec, registry)
        rid = reference_ids[ref_idx]
        return DomainSample(
            sample_id=f"d{descriptor.domain_id:02d}_{rid}_l{level}",
            image=distorted,
            quality=pseudo_label(reference, distorted),
            reference_id=rid,
            level=level,
        )

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            samples = list(pool.map(_make, jobs))
    else:
        samples = [_make(job) for job in jobs]

    logger.info(f"Generated domain #{descriptor.domain_id} ({descriptor.name}): {len(samples)} samples")
    return DomainDataset(domain=descriptor.domain_id, samples=tuple(samples), name=descriptor.name)
