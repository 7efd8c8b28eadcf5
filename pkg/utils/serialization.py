"""
Binary tensor and checkpoint formats.

Tensor record ("FTEN"), all little-endian:
    magic b"FTEN" | version u32 | dtype tag u32 | rank u32 | dims u64 × rank | raw values

Checkpoint ("FUNW"):
    magic b"FUNW" | version u32 | config length u32 | config UTF-8 JSON | count u32 | FTEN records
"""
import io
import json
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Tuple, Union

import numpy as np

from .errors import CheckpointError

TENSOR_MAGIC = b"FTEN"
CHECKPOINT_MAGIC = b"FUNW"
FORMAT_VERSION = 1

DTYPE_TAGS: Dict[int, str] = {1: '<f4', 2: '<f8', 3: '<i8'}
TAG_BY_KIND: Dict[str, int] = {'float32': 1, 'float64': 2, 'int64': 3}


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    chunk = stream.read(size)
    if len(chunk) != size:
        raise CheckpointError(f"truncated file while reading {what}: wanted {size} bytes, got {len(chunk)}")
    return chunk


def _read_u32(stream: BinaryIO, what: str) -> int:
    return struct.unpack('<I', _read_exact(stream, 4, what))[0]


def write_tensor(stream: BinaryIO, array: np.ndarray) -> None:
    """Append one FTEN record for `array` to a binary stream."""
    name = np.dtype(array.dtype).name
    if name not in TAG_BY_KIND:
        raise CheckpointError(f"cannot serialize dtype {name}")
    tag = TAG_BY_KIND[name]
    stream.write(TENSOR_MAGIC)
    stream.write(struct.pack('<III', FORMAT_VERSION, tag, array.ndim))
    stream.write(struct.pack(f'<{array.ndim}Q', *array.shape))
    stream.write(np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes())


def read_tensor(stream: BinaryIO) -> np.ndarray:
    """
    Read one FTEN record.

    Raises:
        CheckpointError: On a bad magic, unknown version or dtype tag, or truncation
    """
    magic = _read_exact(stream, 4, "tensor magic")
    if magic != TENSOR_MAGIC:
        raise CheckpointError(f"bad tensor magic {magic!r}")
    version, tag, rank = struct.unpack('<III', _read_exact(stream, 12, "tensor header"))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported tensor version {version}")
    if tag not in DTYPE_TAGS:
        raise CheckpointError(f"unknown dtype tag {tag}")
    dims = struct.unpack(f'<{rank}Q', _read_exact(stream, 8 * rank, "tensor dims"))
    dtype = np.dtype(DTYPE_TAGS[tag])
    count = int(np.prod(dims)) if rank else 1
    raw = _read_exact(stream, count * dtype.itemsize, "tensor values")
    return np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder('='))


def save_tensor(array: np.ndarray, path: Union[str, Path]) -> None:
    with open(path, 'wb') as f:
        write_tensor(f, array)


def load_tensor(path: Union[str, Path]) -> np.ndarray:
    with open(path, 'rb') as f:
        return read_tensor(f)


def encode_checkpoint(config: Dict[str, Any], arrays: List[np.ndarray]) -> bytes:
    """Serialize a config and an ordered list of arrays into FUNW bytes."""
    buffer = io.BytesIO()
    text = json.dumps(config, sort_keys=True).encode('utf-8')
    buffer.write(CHECKPOINT_MAGIC)
    buffer.write(struct.pack('<II', FORMAT_VERSION, len(text)))
    buffer.write(text)
    buffer.write(struct.pack('<I', len(arrays)))
    for array in arrays:
        write_tensor(buffer, array)
    return buffer.getvalue()


def decode_checkpoint(blob: bytes) -> Tuple[Dict[str, Any], List[np.ndarray]]:
    """
    Parse FUNW bytes back into (config, arrays).

    Raises:
        CheckpointError: On a corrupt, truncated or wrong-version file
    """
    stream = io.BytesIO(blob)
    magic = _read_exact(stream, 4, "checkpoint magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file (magic {magic!r})")
    version = _read_u32(stream, "checkpoint version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    length = _read_u32(stream, "config length")
    try:
        config = json.loads(_read_exact(stream, length, "config").decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint config is not valid JSON: {e}")
    count = _read_u32(stream, "tensor count")
    arrays = [read_tensor(stream) for _ in range(count)]
    if stream.read(1):
        raise CheckpointError("trailing bytes after the last tensor")
    return config, arrays


def write_checkpoint(path: Union[str, Path], config: Dict[str, Any], arrays: List[np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(config, arrays))


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], List[np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    return decode_checkpoint(path.read_bytes())
