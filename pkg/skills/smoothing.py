"""
Mask-aware separable Gaussian smoothing of the bias field.

Normalized convolution: the field is zeroed off the mask, convolved, and
divided by the convolved mask, so background voxels contribute no weight and
the skull boundary does not pull the field toward zero.
"""

import math

import numpy as np
from scipy.ndimage import correlate1d

from skills.volume import Mask, Volume, require_same_dims

DEFAULT_SIGMA = (8.0, 8.0, 2.0)
TRUNCATE = 3.0

# sigma is given as (x, y, z); arrays are (z, y, x)
_ARRAY_AXIS = {0: 2, 1: 1, 2: 0}


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Unit-sum taps over [-ceil(3 sigma), ceil(3 sigma)]; a single 1 for sigma 0."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    radius = math.ceil(TRUNCATE * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (x / sigma) ** 2)
    return taps / taps.sum()


def smooth_masked(values: np.ndarray, bits: np.ndarray, sigma_vox,
                  order: tuple[int, int, int] = (0, 1, 2)) -> np.ndarray:
    """
    Normalized convolution of a (z, y, x) array restricted to `bits`.

    `order` lists the (x, y, z) axes in the sequence they are filtered. Values
    off the mask are never read, so they may hold anything, NaN included.
    Returns float64 with 0 off the mask.
    """
    sigma_vox = tuple(float(s) for s in sigma_vox)
    if len(sigma_vox) != 3 or any(s < 0 for s in sigma_vox):
        raise ValueError(f"sigma must be three non-negative values, got {sigma_vox}")

    weight = bits.astype(np.float64)
    num = np.where(bits, values, 0.0).astype(np.float64)
    den = weight.copy()
    for axis in order:
        if sigma_vox[axis] == 0:
            continue
        kernel = gaussian_kernel(sigma_vox[axis])
        num = correlate1d(num, kernel, axis=_ARRAY_AXIS[axis], mode="constant", cval=0.0)
        den = correlate1d(den, kernel, axis=_ARRAY_AXIS[axis], mode="constant", cval=0.0)

    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=bits & (den > 0))
    return out


def gaussian_smooth(b: Volume, mask: Mask, sigma_vox=DEFAULT_SIGMA) -> Volume:
    require_same_dims(b, mask)
    return Volume(smooth_masked(b.data, mask.bits, sigma_vox), b.spacing)
