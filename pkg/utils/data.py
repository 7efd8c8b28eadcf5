"""
Synthetic pathology-like segmentation data.

Two styles are rendered: "nuclei" (many small, dense ellipses) and
"glands" (a few ring structures). Each sample draws from its own RNG stream
spawned from the master seed, so a sample does not depend on how many
others are generated or in which order.
"""
import logging
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, ImageFormatError, LabelRangeError, ShapeError
from .file_handlers import (read_image, read_json_file, read_mask, sha256_file, write_image,
                            write_json_file, write_mask)

logger = logging.getLogger(__name__)

BACKGROUND_RGB = np.array([0.92, 0.80, 0.88])
FOREGROUND_PALETTE = np.array([
    [0.36, 0.20, 0.56],
    [0.62, 0.18, 0.30],
    [0.20, 0.42, 0.60],
    [0.48, 0.52, 0.18],
    [0.70, 0.45, 0.15],
])
TRANSFORMS = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270")


class SynthStyle(str, Enum):
    NUCLEI = "nuclei"
    GLANDS = "glands"


OBJECT_RANGES = {SynthStyle.NUCLEI: (10, 40), SynthStyle.GLANDS: (2, 5)}


@dataclass
class SynthSpec:
    style: SynthStyle = SynthStyle.NUCLEI
    side: int = 64
    in_channels: int = 3
    n_classes: int = 2
    min_objects: Optional[int] = None
    max_objects: Optional[int] = None
    noise: float = 0.04
    seed: int = 0

    def __post_init__(self):
        try:
            self.style = SynthStyle(self.style)
        except ValueError as e:
            raise ConfigError(str(e))
        low, high = OBJECT_RANGES[self.style]
        self.min_objects = low if self.min_objects is None else self.min_objects
        self.max_objects = high if self.max_objects is None else self.max_objects
        if not 0 <= self.min_objects <= self.max_objects:
            raise ConfigError(f"invalid object range [{self.min_objects}, {self.max_objects}]")
        if self.side < 16 or self.in_channels not in (1, 3):
            raise ConfigError(f"need side ≥ 16 and 1 or 3 channels, got {self.side}, {self.in_channels}")
        if not 2 <= self.n_classes <= len(FOREGROUND_PALETTE) + 1:
            raise ConfigError(f"n_classes must lie in [2, {len(FOREGROUND_PALETTE) + 1}], got {self.n_classes}")
        if self.noise < 0:
            raise ConfigError(f"noise must be non-negative, got {self.noise}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SynthSpec":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown data config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["style"] = self.style.value
        return data


@dataclass
class SegSample:
    """An in_channels×S×S image in [0, 1] with an S×S integer label mask."""

    image: np.ndarray
    mask: np.ndarray
    n_classes: int = 2

    def __post_init__(self):
        if self.image.ndim != 3 or self.mask.ndim != 2 or self.image.shape[1:] != self.mask.shape:
            raise ShapeError(f"image {self.image.shape} and mask {self.mask.shape} do not match")
        if self.mask.size and (self.mask.min() < 0 or self.mask.max() >= self.n_classes):
            raise LabelRangeError(
                f"mask labels span [{self.mask.min()}, {self.mask.max()}], outside [0, {self.n_classes})")


def _render_nuclei(rng: np.random.Generator, spec: SynthSpec, count: int,
                   mask: np.ndarray, shade: np.ndarray) -> None:
    yy, xx = np.mgrid[0:spec.side, 0:spec.side].astype(np.float64)
    for _ in range(count):
        cy, cx = rng.uniform(0, spec.side, size=2)
        ry, rx = rng.uniform(2.0, 6.0, size=2)
        theta = rng.uniform(0.0, np.pi)
        label = 1 if spec.n_classes == 2 else int(rng.integers(1, spec.n_classes))
        intensity = rng.uniform(0.85, 1.15)
        dy, dx = yy - cy, xx - cx
        u = (dx * np.cos(theta) + dy * np.sin(theta)) / rx
        v = (-dx * np.sin(theta) + dy * np.cos(theta)) / ry
        inside = u * u + v * v <= 1.0
        mask[inside] = label
        shade[inside] = intensity


def _render_glands(rng: np.random.Generator, spec: SynthSpec, count: int,
                   mask: np.ndarray, shade: np.ndarray) -> None:
    yy, xx = np.mgrid[0:spec.side, 0:spec.side].astype(np.float64)
    for _ in range(count):
        cy, cx = rng.uniform(0, spec.side, size=2)
        outer = rng.uniform(8.0, 16.0)
        thickness = rng.uniform(3.0, 6.0)
        label = 1 if spec.n_classes == 2 else int(rng.integers(1, spec.n_classes))
        intensity = rng.uniform(0.85, 1.15)
        dist = np.hypot(yy - cy, xx - cx)
        ring = (dist <= outer) & (dist >= outer - thickness)
        mask[ring] = label
        shade[ring] = intensity


RENDERERS = {SynthStyle.NUCLEI: _render_nuclei, SynthStyle.GLANDS: _render_glands}


def render_sample(spec: SynthSpec, rng: np.random.Generator) -> SegSample:
    """Draw one sample; the mask is exactly the rendered geometry."""
    mask = np.zeros((spec.side, spec.side), dtype=np.int64)
    shade = np.ones((spec.side, spec.side))
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    RENDERERS[spec.style](rng, spec, count, mask, shade)

    colors = np.vstack([BACKGROUND_RGB, FOREGROUND_PALETTE])[mask]
    image = (colors * shade[..., None]).transpose(2, 0, 1)
    if spec.in_channels == 1:
        image = image.mean(axis=0, keepdims=True)
    image = image + rng.normal(0.0, spec.noise, size=image.shape)
    image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
    return SegSample(image, mask, spec.n_classes)


def generate_dataset(spec: SynthSpec, n: int) -> List[SegSample]:
    """n samples, reproducible for a given spec.seed."""
    children = np.random.SeedSequence(spec.seed).spawn(n)
    samples = [render_sample(spec, np.random.default_rng(child)) for child in children]
    logger.debug("generated %d %s samples (seed %d)", n, spec.style.value, spec.seed)
    return samples


def apply_transform(sample: SegSample, name: str) -> SegSample:
    """Apply one named flip/rotation to image and mask identically."""
    ops = {
        "identity": lambda a: a,
        "hflip": lambda a: np.flip(a, axis=-1),
        "vflip": lambda a: np.flip(a, axis=-2),
        "rot90": lambda a: np.rot90(a, 1, axes=(-2, -1)),
        "rot180": lambda a: np.rot90(a, 2, axes=(-2, -1)),
        "rot270": lambda a: np.rot90(a, 3, axes=(-2, -1)),
    }
    if name not in ops:
        raise ValueError(f"Unknown transform '{name}'. Available: {list(ops)}")
    if sample.mask.shape[0] != sample.mask.shape[1]:
        raise ShapeError(f"augmentation needs square samples, got {sample.mask.shape}")
    op = ops[name]
    return SegSample(np.ascontiguousarray(op(sample.image)), np.ascontiguousarray(op(sample.mask)),
                     sample.n_classes)


def augment(sample: SegSample, rng: np.random.Generator) -> SegSample:
    """Uniformly one of identity, h-flip, v-flip and the three rotations."""
    return apply_transform(sample, TRANSFORMS[int(rng.integers(len(TRANSFORMS)))])


def split_dataset(samples: Sequence[SegSample], ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2),
                  seed: int = 0) -> Tuple[List[SegSample], List[SegSample], List[SegSample]]:
    """Shuffle and cut into train/validation/test parts."""
    if len(ratios) != 3 or min(ratios) < 0 or not np.isclose(sum(ratios), 1.0):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(round(ratios[0] * len(samples)))
    n_val = int(round(ratios[1] * len(samples)))
    parts = np.split(order, [n_train, n_train + n_val])
    return tuple([samples[i] for i in part] for part in parts)


def kfold_indices(n: int, folds: int, seed: int = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(train, held-out) index pairs for a shuffled k-fold partition."""
    if not 2 <= folds <= n:
        raise ConfigError(f"need 2 ≤ folds ≤ {n}, got {folds}")
    order = np.random.default_rng(seed).permutation(n)
    chunks = np.array_split(order, folds)
    return [(np.sort(np.concatenate(chunks[:k] + chunks[k + 1:])), np.sort(chunks[k])) for k in range(folds)]


def collate(samples: Sequence[SegSample]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack samples into an N×C×S×S image batch and an N×S×S mask batch."""
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])


def iterate_batches(samples: Sequence[SegSample], batch_size: int, rng: Optional[np.random.Generator] = None,
                    augmentation: bool = False) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield batches, shuffled and augmented when an RNG is supplied."""
    order = rng.permutation(len(samples)) if rng is not None else np.arange(len(samples))
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        if augmentation and rng is not None:
            chunk = [augment(s, rng) for s in chunk]
        yield collate(chunk)


def save_dataset(samples: Sequence[SegSample], directory: Union[str, Path],
                 spec: Optional[SynthSpec] = None) -> Path:
    """
    Write images/NNNN.ppm, masks/NNNN.pgm and manifest.json with checksums.

    Returns:
        Path: The manifest path
    """
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        image_rel = f"images/{i:04d}.ppm" if sample.image.shape[0] == 3 else f"images/{i:04d}.pgm"
        mask_rel = f"masks/{i:04d}.pgm"
        write_image(sample.image, root / image_rel)
        write_mask(sample.mask, root / mask_rel)
        entries.append({
            "image": image_rel,
            "mask": mask_rel,
            "image_sha256": sha256_file(root / image_rel),
            "mask_sha256": sha256_file(root / mask_rel),
        })
    n_classes = samples[0].n_classes if samples else (spec.n_classes if spec else 2)
    manifest = {
        "count": len(entries),
        "n_classes": n_classes,
        "spec": spec.to_dict() if spec is not None else None,
        "samples": entries,
    }
    path = root / "manifest.json"
    write_json_file(path, manifest)
    logger.info("wrote %d samples to %s", len(entries), root)
    return path


def load_dataset(directory: Union[str, Path], verify: bool = True) -> List[SegSample]:
    """
    Read a dataset directory written by `save_dataset`.

    Raises:
        FileNotFoundError: If the manifest or a listed file is missing
        ImageFormatError: On a checksum mismatch or an undecodable file
        LabelRangeError: If a mask label is ≥ the manifest's n_classes
    """
    root = Path(directory)
    manifest = read_json_file(root / "manifest.json")
    n_classes = int(manifest.get("n_classes", 2))
    samples = []
    for entry in manifest.get("samples", []):
        image_path, mask_path = root / entry["image"], root / entry["mask"]
        if verify:
            for path, key in ((image_path, "image_sha256"), (mask_path, "mask_sha256")):
                if sha256_file(path) != entry[key]:
                    raise ImageFormatError(f"checksum mismatch for {path}")
        samples.append(SegSample(read_image(image_path), read_mask(mask_path, n_classes), n_classes))
    return samples
