"""
Stage-1 -> stage-2 volume preparation.

- ROI: padded bounding box of the predicted mask's foreground
- crop both volumes to the ROI and resample to a cube (trilinear for the
  image, nearest neighbour for the mask so it stays binary)
- window and rescale Hounsfield Units to [0, 1]
- rotation augmentation: 0 and +-10 degrees about each axis (27 variants)

We use scipy.ndimage for the interpolation (map_coordinates / affine_transform),
order=1 for images and order=0 for masks.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass
from enum import IntEnum
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from errors import ConfigError, EmptyMaskError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_ANGLES: Tuple[float, ...] = (-10.0, 0.0, 10.0)


class VolumeKind(IntEnum):
    IMAGE = 0
    MASK = 1


@dataclass(frozen=True)
class Volume:
    """Dense (D, H, W) float32 grid with voxel spacing in millimetres."""

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: VolumeKind = VolumeKind.IMAGE

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"volume data must be a non-empty 3-D array, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "kind", VolumeKind(self.kind))
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValidationError(f"spacing must be three positive values, got {self.spacing}")
        if self.kind is VolumeKind.MASK and not is_binary(data):
            raise ValidationError("mask volume has voxels outside {0, 1}")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)  # type: ignore[return-value]

    def replace(self, data: np.ndarray, spacing: Sequence[float] = None) -> "Volume":
        return Volume(data=data, spacing=tuple(spacing) if spacing is not None else self.spacing, kind=self.kind)


@dataclass(frozen=True)
class Roi:
    """Half-open box: lo inclusive, hi exclusive, (z, y, x) order."""

    lo: Tuple[int, int, int]
    hi: Tuple[int, int, int]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))  # type: ignore[return-value]

    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))  # type: ignore[return-value]

    def clamp(self, dims: Sequence[int]) -> "Roi":
        lo = tuple(max(0, min(int(l), int(d))) for l, d in zip(self.lo, dims))
        hi = tuple(max(0, min(int(h), int(d))) for h, d in zip(self.hi, dims))
        return Roi(lo, hi)  # type: ignore[arg-type]

    def is_degenerate(self) -> bool:
        return any(h <= l for l, h in zip(self.lo, self.hi))


@dataclass(frozen=True)
class PreprocessConfig:
    pad: int = 20
    lo_hu: float = -100.0
    hi_hu: float = 240.0

    def validate(self) -> "PreprocessConfig":
        if self.pad < 0:
            raise ConfigError(f"pad must be >= 0, got {self.pad}")
        if self.lo_hu >= self.hi_hu:
            raise ConfigError(f"HU window is empty: lo_hu={self.lo_hu} >= hi_hu={self.hi_hu}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def is_binary(data: np.ndarray) -> bool:
    return bool(np.all((data == 0) | (data == 1)))


def bounding_box(mask: Volume, pad: int = 20) -> Roi:
    """Tight foreground box grown by `pad` voxels per side, clamped to the volume."""
    coords = np.argwhere(mask.data > 0.5)
    if coords.size == 0:
        raise EmptyMaskError("mask has no foreground voxel")
    lo = coords.min(axis=0) - pad
    hi = coords.max(axis=0) + 1 + pad
    return Roi(tuple(int(v) for v in lo), tuple(int(v) for v in hi)).clamp(mask.dims)


def _axis_grid(n_in: int, n_out: int) -> np.ndarray:
    # corner-aligned sampling positions in input index space
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.linspace(0.0, n_in - 1, n_out)


def _resample(data: np.ndarray, out_shape: Sequence[int], order: int) -> np.ndarray:
    grids = [_axis_grid(n_in, n_out) for n_in, n_out in zip(data.shape, out_shape)]
    coords = np.meshgrid(*grids, indexing="ij")
    out = ndimage.map_coordinates(data.astype(np.float64), coords, order=order, mode="nearest")
    return out.astype(np.float32)


def _resampled_spacing(spacing: Sequence[float], n_in: Sequence[int], n_out: int) -> Tuple[float, ...]:
    out = []
    for s, n in zip(spacing, n_in):
        if n > 1 and n_out > 1:
            out.append(s * (n - 1) / (n_out - 1))
        else:
            out.append(s * n / n_out)
    return tuple(out)


def crop_and_resample(image: Volume, mask: Volume, roi: Roi, out_side: int) -> Tuple[Volume, Volume]:
    if image.dims != mask.dims:
        raise ShapeError(f"image {image.dims} and mask {mask.dims} differ")
    if out_side < 1:
        raise ConfigError(f"out_side must be positive, got {out_side}")
    roi = roi.clamp(image.dims)
    if roi.is_degenerate():
        raise ValidationError(f"roi {roi} is empty after clamping to {image.dims}")
    window = roi.slices()
    out_shape = (out_side,) * 3
    spacing = _resampled_spacing(image.spacing, roi.shape, out_side)
    image_out = Volume(_resample(image.data[window], out_shape, order=1), spacing, VolumeKind.IMAGE)
    mask_out = Volume(_resample(mask.data[window], out_shape, order=0), spacing, VolumeKind.MASK)
    return image_out, mask_out


def normalize_hu(image: Volume, lo_hu: float = -100.0, hi_hu: float = 240.0) -> Volume:
    """Clamp to [lo_hu, hi_hu] and rescale linearly onto [0, 1]."""
    if image.kind is not VolumeKind.IMAGE:
        raise ValidationError("normalize_hu expects an image volume")
    if lo_hu >= hi_hu:
        raise ConfigError(f"HU window is empty: lo_hu={lo_hu} >= hi_hu={hi_hu}")
    clipped = np.clip(image.data.astype(np.float64), lo_hu, hi_hu)
    return image.replace((clipped - lo_hu) / (hi_hu - lo_hu))


def center_roi(dims: Sequence[int]) -> Roi:
    """Centered box covering half of each axis."""
    lo = tuple(int(d) // 4 for d in dims)
    hi = tuple(l + max(1, int(d) // 2) for l, d in zip(lo, dims))
    return Roi(lo, hi)  # type: ignore[arg-type]


def prepare_case(image: Volume, mask: Volume, out_side: int, cfg: PreprocessConfig = PreprocessConfig(), case_id: str = "") -> Tuple[Volume, Volume]:
    """Full stage-2 input pipeline: ROI crop, resample, HU normalization."""
    cfg.validate()
    try:
        roi = bounding_box(mask, cfg.pad)
    except EmptyMaskError:
        roi = center_roi(mask.dims)
        logger.warning(f"[preprocess] ⚠️ {case_id or 'case'}: empty mask, falling back to center crop {roi}")
    image_out, mask_out = crop_and_resample(image, mask, roi, out_side)
    return normalize_hu(image_out, cfg.lo_hu, cfg.hi_hu), mask_out


# ---- rotation augmentation ----
def rotation_grid(angles: Sequence[float] = DEFAULT_ANGLES) -> List[Tuple[float, float, float]]:
    """Cartesian product of per-axis angles as (z, y, x) triples."""
    return [tuple(float(a) for a in combo) for combo in itertools.product(angles, repeat=3)]  # type: ignore[misc]


def rotation_matrix(angles_deg: Sequence[float]) -> np.ndarray:
    """
    Rotation in (z, y, x) index space: about the z axis first, then y, then x.
    """
    az, ay, ax = (np.deg2rad(a) for a in angles_deg)
    cz, sz = np.cos(az), np.sin(az)
    cy, sy = np.cos(ay), np.sin(ay)
    cx, sx = np.cos(ax), np.sin(ax)
    rot_z = np.array([[1, 0, 0], [0, cz, -sz], [0, sz, cz]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_x = np.array([[cx, -sx, 0], [sx, cx, 0], [0, 0, 1]])
    return rot_x @ rot_y @ rot_z


def rotate_array(data: np.ndarray, matrix: np.ndarray, order: int) -> np.ndarray:
    """Rotate about the volume centre; voxels mapped from outside are 0."""
    center = (np.asarray(data.shape, dtype=np.float64) - 1) / 2.0
    inverse = matrix.T
    offset = center - inverse @ center
    out = ndimage.affine_transform(
        data.astype(np.float64), inverse, offset=offset, order=order, mode="constant", cval=0.0
    )
    return out.astype(np.float32)


def rotate_pair(image: Volume, mask: Volume, angles_deg: Sequence[float]) -> Tuple[Volume, Volume]:
    if image.dims != mask.dims:
        raise ShapeError(f"image {image.dims} and mask {mask.dims} differ")
    if all(a == 0 for a in angles_deg):
        return image.replace(image.data.copy()), mask.replace(mask.data.copy())
    matrix = rotation_matrix(angles_deg)
    return (
        image.replace(rotate_array(image.data, matrix, order=1)),
        mask.replace(rotate_array(mask.data, matrix, order=0)),
    )


def rotation_variants(image: Volume, mask: Volume, angles: Sequence[float] = DEFAULT_ANGLES) -> List[Tuple[Volume, Volume]]:
    """All len(angles)**3 jointly rotated (image, mask) pairs; (0, 0, 0) is an exact copy."""
    return [rotate_pair(image, mask, combo) for combo in rotation_grid(angles)]


class Augmenter:
    """Draws one of the rotation variants per sample; matrices are built once."""

    def __init__(self, angles: Sequence[float] = DEFAULT_ANGLES):
        self.grid = rotation_grid(angles)
        self.matrices = [None if all(a == 0 for a in g) else rotation_matrix(g) for g in self.grid]

    def __len__(self) -> int:
        return len(self.grid)

    def apply(self, image: np.ndarray, mask: np.ndarray, index: int) -> Tuple[np.ndarray, np.ndarray]:
        matrix = self.matrices[index]
        if matrix is None:
            return image, mask
        return rotate_array(image, matrix, order=1), rotate_array(mask, matrix, order=0)

    def draw(self, image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        return self.apply(image, mask, int(rng.integers(len(self.grid))))
