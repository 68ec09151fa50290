"""
Foreground extraction, outlier clipping and [0, 1] normalization.

The chain run before correction: keep the largest bright 6-connected
component, clamp its intensities into a fraction of their range, then map
the result onto [0, 1]. Background voxels end at 0.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from skills.thresholding import DegenerateHistogramError, build_histogram, classify, otsu_thresholds
from skills.volume import Mask, Volume, require_same_dims

logger = logging.getLogger(__name__)

LO_FRAC = 0.05
HI_FRAC = 0.85

# Face neighbors only
SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


class EmptyForegroundError(ValueError):
    """Binarization left no foreground voxel."""


@dataclass(frozen=True)
class Normalization:
    """normalized = scale * original + offset on the mask."""
    scale: float = 1.0
    offset: float = 0.0

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(values, dtype=np.float64) + self.offset

    def invert(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.offset) / self.scale


@dataclass(frozen=True)
class PreprocessResult:
    volume: Volume
    mask: Mask
    normalization: Normalization


def binarize(v: Volume) -> Mask:
    """Single-level Otsu on all voxels after a global min/max rescale to [0, 1]."""
    data = v.data.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi > lo:
        scaled = (data - lo) / (hi - lo)
        try:
            cut = otsu_thresholds(build_histogram(scaled), 2)
            return Mask(classify(scaled, cut) == 1)
        except DegenerateHistogramError:
            pass
    logger.warning("Degenerate intensity histogram, treating every nonzero voxel as foreground")
    return Mask(data != 0)


def largest_component(mask: Mask) -> Mask:
    """The biggest 6-connected component; ties go to the first one met in x-fastest scan order."""
    components, count = ndimage.label(mask.bits, structure=SIX_CONNECTED)
    if count == 0:
        return mask
    sizes = np.bincount(components.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    logger.debug(f"Found {count} components, keeping #{keep} with {sizes[keep - 1]} voxels")
    return Mask(components == keep)


def extract_foreground(v: Volume) -> Mask:
    mask = binarize(v)
    if mask.count == 0:
        raise EmptyForegroundError("Binarization produced no foreground voxels")
    return largest_component(mask)


def _masked_range(v: Volume, mask: Mask) -> tuple[float, float]:
    require_same_dims(v, mask)
    if mask.count == 0:
        raise ValueError("Mask is empty")
    values = v.data[mask.bits]
    return float(values.min()), float(values.max())


def clip_outliers(v: Volume, mask: Mask, lo_frac: float = LO_FRAC, hi_frac: float = HI_FRAC) -> Volume:
    """Clamp masked voxels into [vmin + lo_frac * range, vmin + hi_frac * range]; zero the background."""
    if not 0.0 <= lo_frac <= hi_frac <= 1.0:
        raise ValueError(f"Need 0 <= lo_frac <= hi_frac <= 1, got {lo_frac}, {hi_frac}")
    vmin, vmax = _masked_range(v, mask)
    if vmax == vmin:
        logger.warning("Degenerate intensity spectrum on the mask, skipping clipping")
        return v

    span = vmax - vmin
    data = np.clip(v.data.astype(np.float64), vmin + lo_frac * span, vmin + hi_frac * span)
    data[~mask.bits] = 0.0
    return Volume(data, v.spacing)


def normalize_unit(v: Volume, mask: Mask) -> tuple[Volume, Normalization]:
    vmin, vmax = _masked_range(v, mask)
    if vmax > vmin:
        scale = 1.0 / (vmax - vmin)
        norm = Normalization(scale=scale, offset=-vmin * scale)
    else:
        norm = Normalization(scale=1.0, offset=-vmin)

    data = np.where(mask.bits, norm.apply(v.data), 0.0)
    # Rounding can land a hair outside the unit interval
    return Volume(np.clip(data, 0.0, 1.0), v.spacing), norm


def preprocess(v: Volume, mask: Mask | None = None,
               lo_frac: float = LO_FRAC, hi_frac: float = HI_FRAC) -> PreprocessResult:
    """Full chain; foreground extraction is skipped when a mask is supplied."""
    if mask is None:
        mask = extract_foreground(v)
    clipped = clip_outliers(v, mask, lo_frac, hi_frac)
    normalized, norm = normalize_unit(clipped, mask)
    logger.info(f"Preprocessed {mask.count} foreground voxels (scale={norm.scale:.6g}, offset={norm.offset:.6g})")
    return PreprocessResult(normalized, mask, norm)
