"""
Seeded synthetic (image, mask, label) cases.

Each case is a jittered, randomly oriented ellipsoid "organ" with smooth value
noise texture on a darker background. Abnormal cases carry a shape anomaly
(a bump or dent on the organ boundary, visible in the mask) and/or a texture
anomaly (a darker blob inside the organ, invisible in the mask). The mask is the
organ support, optionally perturbed by dilation/erosion patches to imitate an
imperfect stage-1 segmentation.

Cases are independent: case i draws from SeedSequence(seed).spawn(n)[i].
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from config import typed_fields
from errors import ConfigError, FormatError, ValidationError
from preprocess import Volume, VolumeKind
from train import Sample
from volume_io import read_volume, write_volume

logger = logging.getLogger(__name__)

MIN_SIDE = 16
BASE_RADII = (0.34, 0.28, 0.24)
ORGAN_FRACTION = (0.05, 0.30)
MAX_REDRAWS = 50
MANIFEST_FIELDS = ["case_id", "image", "mask", "z", "shape_anomaly", "texture_anomaly"]


@dataclass(frozen=True)
class GenConfig:
    side: int = 32
    n_normal: int = 200
    n_abnormal: int = 136
    shape_signal: float = 0.5
    texture_signal: float = 0.5
    seg_noise: float = 0.0
    seed: int = 0
    exclusive_channels: bool = True
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise_cells: int = 4
    organ_hu: float = 100.0
    background_hu: float = -20.0
    lesion_shift_hu: float = -45.0
    texture_hu: float = 20.0
    scanner_noise_hu: float = 5.0

    def validate(self) -> "GenConfig":
        if self.side < MIN_SIDE:
            raise ConfigError(f"side must be >= {MIN_SIDE}, got {self.side}")
        if self.n_normal < 0 or self.n_abnormal < 0 or self.n_normal + self.n_abnormal == 0:
            raise ConfigError(f"need a positive case count, got {self.n_normal} normal / {self.n_abnormal} abnormal")
        for name in ("shape_signal", "texture_signal"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.n_abnormal and self.shape_signal == 0 and self.texture_signal == 0:
            raise ConfigError("abnormal cases need shape_signal or texture_signal > 0")
        if self.seg_noise < 0:
            raise ConfigError(f"seg_noise must be >= 0, got {self.seg_noise}")
        if self.noise_cells < 1:
            raise ConfigError(f"noise_cells must be >= 1, got {self.noise_cells}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["spacing"] = list(self.spacing)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GenConfig":
        return cls(**typed_fields(cls, data, "gen-data")).validate()


def value_noise(shape: Sequence[int], cells: int, rng: np.random.Generator) -> np.ndarray:
    """Random lattice of (cells + 1)^3 values in [-1, 1], trilinearly interpolated."""
    lattice = rng.uniform(-1.0, 1.0, size=(cells + 1,) * 3)
    grids = [np.linspace(0.0, cells, n) for n in shape]
    coords = np.meshgrid(*grids, indexing="ij")
    return ndimage.map_coordinates(lattice, coords, order=1, mode="nearest")


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    # QR of a Gaussian matrix, sign-fixed, is uniform over orthogonal matrices
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _draw_channels(cfg: GenConfig, rng: np.random.Generator) -> Tuple[bool, bool]:
    """(shape anomaly, texture anomaly) for an abnormal case; at least one is set."""
    if cfg.exclusive_channels:
        p_shape = cfg.shape_signal / (cfg.shape_signal + cfg.texture_signal)
        shape = bool(rng.random() < p_shape)
        return shape, not shape
    while True:
        shape = bool(rng.random() < cfg.shape_signal)
        texture = bool(rng.random() < cfg.texture_signal)
        if shape or texture:
            return shape, texture


def _organ(cfg: GenConfig, rng: np.random.Generator, coords: np.ndarray, shape_anomaly: bool) -> np.ndarray:
    side = cfg.side
    total = side ** 3
    for _ in range(MAX_REDRAWS):
        center = (side - 1) / 2.0 + rng.uniform(-0.05, 0.05, size=3) * side
        radii = np.asarray(BASE_RADII) * side * rng.uniform(0.9, 1.1, size=3)
        rotation = _random_rotation(rng)
        local = (coords - center) @ rotation / radii
        rho = np.linalg.norm(local, axis=-1)
        limit = np.ones_like(rho)
        if shape_anomaly:
            direction = _unit_vector(rng)
            amplitude = rng.choice([-1.0, 1.0]) * rng.uniform(0.3, 0.4)
            cosine = (local @ direction) / np.maximum(rho, 1e-9)
            limit = 1.0 + amplitude * np.exp(-(1.0 - cosine) / 0.08)
        organ = rho <= limit
        fraction = organ.sum() / total
        if ORGAN_FRACTION[0] <= fraction <= ORGAN_FRACTION[1]:
            return organ
    raise ValidationError(f"could not draw an organ within {ORGAN_FRACTION} of the volume in {MAX_REDRAWS} tries")


def _lesion(cfg: GenConfig, rng: np.random.Generator, coords: np.ndarray, organ: np.ndarray) -> np.ndarray:
    """Smooth blob of weight in [0, 1] centred on an interior organ voxel."""
    interior = ndimage.binary_erosion(organ, iterations=2)
    candidates = np.argwhere(interior if interior.any() else organ)
    center = candidates[rng.integers(len(candidates))]
    sigma = rng.uniform(0.07, 0.1) * cfg.side
    dist2 = np.sum((coords - center) ** 2, axis=-1)
    return np.exp(-dist2 / (2.0 * sigma ** 2)) * organ


def _perturb_mask(cfg: GenConfig, rng: np.random.Generator, coords: np.ndarray, organ: np.ndarray) -> np.ndarray:
    if cfg.seg_noise <= 0:
        return organ.copy()
    boundary = organ ^ ndimage.binary_erosion(organ)
    points = np.argwhere(boundary)
    mask = organ.copy()
    patches = int(np.ceil(cfg.seg_noise * 8))
    iterations = max(1, int(round(cfg.seg_noise * 2)))
    for _ in range(patches):
        center = points[rng.integers(len(points))]
        patch = np.sum((coords - center) ** 2, axis=-1) <= 3.0 ** 2
        if rng.random() < 0.5:
            grown = ndimage.binary_dilation(organ, iterations=iterations)
        else:
            grown = ndimage.binary_erosion(organ, iterations=iterations)
        mask[patch] = grown[patch]
    if not mask.any():
        return organ.copy()
    return mask


def generate_case(cfg: GenConfig, case_id: str, z: int, rng: np.random.Generator) -> Sample:
    side = cfg.side
    coords = np.stack(np.meshgrid(*(np.arange(side, dtype=np.float64),) * 3, indexing="ij"), axis=-1)
    shape_anomaly, texture_anomaly = _draw_channels(cfg, rng) if z == 1 else (False, False)

    organ = _organ(cfg, rng, coords, shape_anomaly)
    texture = value_noise((side,) * 3, cfg.noise_cells, rng)
    image = np.where(organ, cfg.organ_hu + cfg.texture_hu * texture, cfg.background_hu)
    if texture_anomaly:
        image = image + cfg.lesion_shift_hu * _lesion(cfg, rng, coords, organ)
    image = image + rng.normal(0.0, cfg.scanner_noise_hu, size=image.shape)
    mask = _perturb_mask(cfg, rng, coords, organ)

    return Sample(
        case_id=case_id,
        image=Volume(image, cfg.spacing, VolumeKind.IMAGE),
        mask=Volume(mask.astype(np.float32), cfg.spacing, VolumeKind.MASK),
        z=z,
        meta={"shape_anomaly": shape_anomaly, "texture_anomaly": texture_anomaly},
    )


def generate(cfg: GenConfig) -> List[Sample]:
    cfg.validate()
    labels = [0] * cfg.n_normal + [1] * cfg.n_abnormal
    streams = np.random.SeedSequence(cfg.seed).spawn(len(labels))
    samples = [
        generate_case(cfg, f"case{i:04d}", z, np.random.default_rng(stream))
        for i, (z, stream) in enumerate(zip(labels, streams))
    ]
    shape_count = sum(s.meta["shape_anomaly"] for s in samples)
    texture_count = sum(s.meta["texture_anomaly"] for s in samples)
    logger.info(
        f"[gen-data] ✅ {len(samples)} cases (side {cfg.side}): "
        f"{cfg.n_abnormal} abnormal, {shape_count} shape / {texture_count} texture anomalies"
    )
    return samples


def write_dataset(samples: Sequence[Sample], out_dir: Union[str, Path]) -> Path:
    """VOL1 pair per case plus manifest.csv with paths relative to out_dir."""
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        for s in samples:
            image_rel = f"volumes/{s.case_id}_image.vol"
            mask_rel = f"volumes/{s.case_id}_mask.vol"
            write_volume(out_dir / image_rel, s.image)
            write_volume(out_dir / mask_rel, s.mask)
            writer.writerow(
                {
                    "case_id": s.case_id,
                    "image": image_rel,
                    "mask": mask_rel,
                    "z": s.z,
                    "shape_anomaly": int(bool(s.meta.get("shape_anomaly", False))),
                    "texture_anomaly": int(bool(s.meta.get("texture_anomaly", False))),
                }
            )
    return manifest


def load_dataset(manifest: Union[str, Path]) -> List[Sample]:
    manifest = Path(manifest)
    root = manifest.parent
    samples = []
    with manifest.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        missing = {"case_id", "image", "mask", "z"} - set(reader.fieldnames or [])
        if missing:
            raise FormatError(f"{manifest}: missing column(s) {sorted(missing)}")
        for row in reader:
            try:
                z = int(row["z"])
            except ValueError as exc:
                raise FormatError(f"{manifest}: bad label {row['z']!r} for {row['case_id']}") from exc
            meta = {key: bool(int(row[key])) for key in ("shape_anomaly", "texture_anomaly") if row.get(key)}
            samples.append(
                Sample(
                    case_id=row["case_id"],
                    image=read_volume(root / row["image"]),
                    mask=read_volume(root / row["mask"]),
                    z=z,
                    meta=meta,
                )
            )
    return samples
