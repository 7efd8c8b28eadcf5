import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, ImageFormatError, LabelRangeError

PathLike = Union[str, Path]


def read_json_file(file_path: PathLike) -> Dict[str, Any]:
    """
    Read and return a UTF-8 JSON object.

    Args:
        file_path (PathLike): Path to the JSON file

    Returns:
        Dict[str, Any]: The parsed object

    Raises:
        FileNotFoundError: If the file doesn't exist
        ConfigError: If the file is not a JSON object
    """
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"File not found: {file_path}")

    with open(file_path, 'r', encoding='utf-8') as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in {file_path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{file_path} must hold a JSON object, got {type(data).__name__}")
    return data


def write_json_file(file_path: PathLike, data: Dict[str, Any]) -> None:
    """Write `data` as sorted, indented JSON so equal data gives equal bytes."""
    Path(file_path).parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def sha256_file(file_path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _open_pnm(file_path: PathLike, expected_modes: tuple) -> np.ndarray:
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"File not found: {file_path}")
    try:
        with Image.open(file_path) as img:
            img.load()
            if img.format != 'PPM':
                raise ImageFormatError(f"{file_path} is {img.format}, not binary PPM/PGM")
            if img.mode not in expected_modes:
                raise ImageFormatError(
                    f"{file_path} has mode {img.mode}; only 8-bit data (maxval 255) is supported")
            return np.asarray(img, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as e:
        if isinstance(e, ImageFormatError):
            raise
        raise ImageFormatError(f"Cannot decode {file_path}: {e}")


def read_image(file_path: PathLike) -> np.ndarray:
    """
    Read a binary PPM (P6) or PGM (P5) image as C×H×W floats in [0, 1].

    Raises:
        FileNotFoundError: If the file doesn't exist
        ImageFormatError: On a malformed header, truncated data or a maxval other than 255
    """
    pixels = _open_pnm(file_path, ('RGB', 'L'))
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_image(image: np.ndarray, file_path: PathLike) -> None:
    """Write a 3×H×W (P6) or 1×H×W (P5) image with values in [0, 1]."""
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ImageFormatError(f"image must be 1×H×W or 3×H×W, got shape {image.shape}")
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    if image.shape[0] == 3:
        Image.fromarray(pixels.transpose(1, 2, 0), 'RGB').save(file_path, format='PPM')
    else:
        Image.fromarray(pixels[0], 'L').save(file_path, format='PPM')


def read_mask(file_path: PathLike, n_classes: Optional[int] = None) -> np.ndarray:
    """
    Read a binary PGM (P5) label mask as H×W int64.

    Raises:
        ImageFormatError: If the file is not an 8-bit PGM
        LabelRangeError: If a label is ≥ n_classes
    """
    mask = _open_pnm(file_path, ('L',)).astype(np.int64)
    if n_classes is not None and mask.size and mask.max() >= n_classes:
        raise LabelRangeError(f"{file_path} holds label {mask.max()}, but n_classes is {n_classes}")
    return mask


def write_mask(mask: np.ndarray, file_path: PathLike) -> None:
    if mask.ndim != 2:
        raise ImageFormatError(f"mask must be H×W, got shape {mask.shape}")
    if mask.size and (mask.min() < 0 or mask.max() > 255):
        raise LabelRangeError(f"mask labels must lie in [0, 255] for PGM, got [{mask.min()}, {mask.max()}]")
    Image.fromarray(mask.astype(np.uint8), 'L').save(file_path, format='PPM')
