"""
Synthetic head phantoms with ground truth, and known smooth bias fields.

The head is an ellipsoid whose outer shell is bone, filled with soft tissue
and an optional air cavity. With nz == 1 the z semi-axis is ignored and the
head becomes an in-plane ellipse, which is the geometry of the 2-D cupping
check. The mask is the whole head support, cavity included.
"""

import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from skills.volume import AIR, BONE, TISSUE, LabelVolume, Mask, Volume

logger = logging.getLogger(__name__)

Triple = tuple[float, float, float]


class PhantomGeometryError(ValueError):
    """The requested geometry does not fit the grid or is not nested."""


# ── Configuration ────────────────────────────────────────────────────────────

class CavitySpec(BaseModel):
    semi_axes: Triple = Field((12.0, 10.0, 6.0), description="Cavity semi-axes (x, y, z) in voxels")
    offset: Triple = Field((8.0, 0.0, 0.0), description="Cavity center relative to the head center")


class PhantomSpec(BaseModel):
    dims: tuple[int, int, int] = Field((64, 64, 32), description="Voxel counts (nx, ny, nz)")
    spacing: Triple = Field((1.0, 1.0, 1.0), description="Voxel size (sx, sy, sz)")
    semi_axes: Triple = Field((30.0, 28.0, 14.0), description="Head semi-axes (x, y, z) in voxels")
    center_offset: Triple = Field((0.0, 0.0, 0.0), description="Head center relative to the grid center")
    skull_thickness: float = Field(2.0, ge=1.0, description="Bone shell thickness in voxels")
    intensities: Triple = Field((0.05, 0.45, 0.85), description="Air, tissue, bone")
    cavity: CavitySpec | None = Field(default_factory=CavitySpec, description="Internal air cavity, None for none")
    noise: float = Field(0.005, ge=0.0, description="Std of additive Gaussian noise")
    seed: int = Field(0, ge=0, lt=2 ** 64)

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, value):
        if any(d < 1 for d in value):
            raise ValueError("dims must be positive")
        return value

    @field_validator("spacing", "semi_axes")
    @classmethod
    def _positive(cls, value):
        if any(v <= 0 for v in value):
            raise ValueError("values must be positive")
        return value

    @model_validator(mode="after")
    def _ordered_intensities(self):
        air, tissue, bone = self.intensities
        if not 0.0 <= air < tissue < bone <= 1.0:
            raise ValueError(f"Need 0 <= air < tissue < bone <= 1, got {self.intensities}")
        return self


class GaussianBlob(BaseModel):
    center: Triple = Field(description="Center in mask-box coordinates, each in [-1, 1]")
    width: float = Field(gt=0.0, description="Std in mask-box coordinates")
    weight: float = 1.0


def _default_blobs() -> list[GaussianBlob]:
    return [GaussianBlob(center=(0.4, -0.3, 0.0), width=0.6, weight=1.0),
            GaussianBlob(center=(-0.5, 0.4, 0.0), width=0.5, weight=-0.7)]


# Terms of the second-order polynomial over mask-box coordinates (u, v, w)
POLYNOMIAL_TERMS = ("u", "v", "w", "uu", "vv", "ww", "uv", "uw", "vw")


class BiasSpec(BaseModel):
    kind: Literal["cupping-radial", "polynomial", "gaussian-blobs"] = "cupping-radial"
    amplitude: float = Field(0.15, ge=0.0, description="Depth (cupping) or peak-to-peak size of the field")
    zero_mean: bool = Field(True, description="Remove the mean over the mask")
    coefficients: tuple[float, ...] = Field((1.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
                                            description=f"Polynomial coefficients for {', '.join(POLYNOMIAL_TERMS)}")
    blobs: list[GaussianBlob] = Field(default_factory=_default_blobs)

    @field_validator("coefficients")
    @classmethod
    def _nine_terms(cls, value):
        if len(value) != len(POLYNOMIAL_TERMS):
            raise ValueError(f"Expected {len(POLYNOMIAL_TERMS)} coefficients, got {len(value)}")
        return value


class PhantomConfig(BaseModel):
    """JSON config of the `phantom` command."""
    phantom: PhantomSpec = Field(default_factory=PhantomSpec)
    bias: BiasSpec = Field(default_factory=BiasSpec)


def disk_phantom_spec(size: int = 128, radius: float = 56.0, skull_thickness: float = 3.0,
                      cavity_offset: float = 25.0, noise: float = 0.005, seed: int = 0) -> PhantomSpec:
    """Single-slice disk head with a small cavity shifted along y, off the horizontal midline."""
    return PhantomSpec(
        dims=(size, size, 1),
        semi_axes=(radius, radius, 1.0),
        skull_thickness=skull_thickness,
        cavity=CavitySpec(semi_axes=(10.0, 8.0, 1.0), offset=(0.0, cavity_offset, 0.0)),
        noise=noise,
        seed=seed,
    )


# ── Geometry ─────────────────────────────────────────────────────────────────

def _grid(dims) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Voxel coordinates as (z, y, x)-shaped float arrays, ordered x, y, z."""
    nx, ny, nz = dims
    z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    return x.astype(np.float64), y.astype(np.float64), z.astype(np.float64)


def _radius(coords, center, semi_axes, planar: bool) -> np.ndarray:
    """Normalized ellipsoid radius; <= 1 inside."""
    total = np.zeros_like(coords[0])
    for axis in range(2 if planar else 3):
        total += ((coords[axis] - center[axis]) / semi_axes[axis]) ** 2
    return np.sqrt(total)


def _check_geometry(spec: PhantomSpec, center) -> None:
    planar = spec.dims[2] == 1
    for axis in range(2 if planar else 3):
        lo, hi = center[axis] - spec.semi_axes[axis], center[axis] + spec.semi_axes[axis]
        if lo < 0 or hi > spec.dims[axis] - 1:
            raise PhantomGeometryError(
                f"Head extent [{lo:g}, {hi:g}] on axis {'xyz'[axis]} leaves the grid of {spec.dims[axis]} voxels"
            )
        if spec.skull_thickness >= spec.semi_axes[axis]:
            raise PhantomGeometryError(
                f"Skull thickness {spec.skull_thickness:g} swallows semi-axis {spec.semi_axes[axis]:g} on axis {'xyz'[axis]}"
            )


def make_phantom(spec: PhantomSpec | None = None) -> tuple[Volume, LabelVolume, Mask]:
    """Noisy piecewise-constant truth, exact labels, and the head support."""
    spec = spec or PhantomSpec()
    planar = spec.dims[2] == 1
    grid_center = [(n - 1) / 2.0 for n in spec.dims]
    center = [c + o for c, o in zip(grid_center, spec.center_offset)]
    _check_geometry(spec, center)

    coords = _grid(spec.dims)
    inner_axes = [a - spec.skull_thickness for a in spec.semi_axes]
    head = _radius(coords, center, spec.semi_axes, planar) <= 1.0
    inner = _radius(coords, center, inner_axes, planar) <= 1.0

    labels = np.full(head.shape, AIR, dtype=np.uint8)
    labels[head] = BONE
    labels[head & inner] = TISSUE
    if spec.cavity is not None:
        cavity_center = [c + o for c, o in zip(center, spec.cavity.offset)]
        cavity = _radius(coords, cavity_center, spec.cavity.semi_axes, planar) <= 1.0
        if np.any(cavity & ~inner):
            raise PhantomGeometryError("Cavity reaches outside the inner skull surface")
        labels[cavity] = AIR

    rng = np.random.Generator(np.random.Philox(spec.seed))
    truth = np.asarray(spec.intensities)[labels] + spec.noise * rng.standard_normal(labels.shape)
    truth = np.clip(truth, 0.0, 1.0)

    counts = np.bincount(labels.ravel(), minlength=3)
    logger.info(f"Phantom {spec.dims}: air={counts[AIR]}, tissue={counts[TISSUE]}, bone={counts[BONE]}")
    return Volume(truth, spec.spacing), LabelVolume(labels, spec.spacing), Mask(head)


# ── Bias fields ──────────────────────────────────────────────────────────────

def _box_coordinates(coords, mask: Mask) -> list[np.ndarray]:
    """Coordinates rescaled so the mask bounding box spans [-1, 1] on each axis (0 on flat axes)."""
    scaled = []
    for axis in range(3):
        values = coords[axis][mask.bits]
        lo, hi = values.min(), values.max()
        half = (hi - lo) / 2.0
        scaled.append((coords[axis] - (lo + hi) / 2.0) / half if half > 0 else np.zeros_like(coords[axis]))
    return scaled


def _cupping(coords, mask: Mask, amplitude: float) -> np.ndarray:
    x, y = coords[0], coords[1]
    cx, cy = x[mask.bits].mean(), y[mask.bits].mean()
    r = np.hypot(x - cx, y - cy)
    r_max = r[mask.bits].max()
    if r_max == 0:
        return np.full(r.shape, -amplitude)
    return -amplitude * (1.0 - (r / r_max) ** 2)


def _polynomial(box, coefficients) -> np.ndarray:
    u, v, w = box
    terms = (u, v, w, u * u, v * v, w * w, u * v, u * w, v * w)
    return sum(c * t for c, t in zip(coefficients, terms))


def _blobs(box, blobs: list[GaussianBlob]) -> np.ndarray:
    field = np.zeros_like(box[0])
    for blob in blobs:
        dist2 = sum((box[axis] - blob.center[axis]) ** 2 for axis in range(3))
        field += blob.weight * np.exp(-dist2 / (2.0 * blob.width ** 2))
    return field


def _scale_to_amplitude(field: np.ndarray, mask: Mask, amplitude: float) -> np.ndarray:
    values = field[mask.bits]
    spread = values.max() - values.min()
    if spread == 0:
        return np.zeros_like(field)
    return field * (amplitude / spread)


def make_bias(spec: BiasSpec, dims: tuple[int, int, int], mask: Mask,
              spacing: Triple = (1.0, 1.0, 1.0)) -> Volume:
    """Smooth field on the mask, 0 elsewhere."""
    if mask.dims != tuple(dims):
        raise ValueError(f"Mask dims {mask.dims} differ from {tuple(dims)}")
    if mask.count == 0 or spec.amplitude == 0:
        return Volume(np.zeros(mask.bits.shape), spacing)

    coords = _grid(dims)
    if spec.kind == "cupping-radial":
        field = _cupping(coords, mask, spec.amplitude)
    elif spec.kind == "polynomial":
        field = _scale_to_amplitude(_polynomial(_box_coordinates(coords, mask), spec.coefficients), mask, spec.amplitude)
    else:
        field = _scale_to_amplitude(_blobs(_box_coordinates(coords, mask), spec.blobs), mask, spec.amplitude)

    if spec.zero_mean:
        field = field - field[mask.bits].mean()
    return Volume(np.where(mask.bits, field, 0.0), spacing)


def corrupt(truth: Volume, bias: Volume) -> Volume:
    """truth + bias, clamped to [0, 1]."""
    if truth.dims != bias.dims:
        raise ValueError(f"Dimension mismatch: {truth.dims} vs {bias.dims}")
    observed = truth.data.astype(np.float64) + bias.data.astype(np.float64)
    return Volume(np.clip(observed, 0.0, 1.0), truth.spacing)
