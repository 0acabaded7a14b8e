"""
Feature-map dump container and grayscale PGM export.

Layout (little-endian):
    magic 8 bytes b"MFDFMAP1"
    u32 stage_id, u32 b, u32 d, u32 h, u32 w
    b*d*h*w f32 values, row-major (batch, channel, row, col)
"""

import io
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from PIL import Image

from src.utils.artifacts import atomic_write_bytes
from src.utils.errors import FormatError

FEATURE_MAGIC = b"MFDFMAP1"
_HEADER = np.dtype("<u4")
_HEADER_BYTES = len(FEATURE_MAGIC) + 5 * _HEADER.itemsize
CONSTANT_GRAY = 128


@dataclass
class FeatureDump:
    stage_id: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 4:
            raise FormatError(f"feature dump values must be [b, d, h, w], got {self.values.shape}")


def encode_feature_dump(dump: FeatureDump) -> bytes:
    header = np.array([dump.stage_id, *dump.values.shape], dtype=_HEADER)
    return FEATURE_MAGIC + header.tobytes() + dump.values.astype("<f4").tobytes()


def decode_feature_dump(data: bytes) -> FeatureDump:
    if len(data) < _HEADER_BYTES:
        raise FormatError(f"truncated feature dump ({len(data)} bytes)")
    if data[:len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise FormatError("not a feature dump: bad magic")
    stage_id, b, d, h, w = (int(v) for v in np.frombuffer(data, dtype=_HEADER, count=5, offset=len(FEATURE_MAGIC)))
    expected = b * d * h * w * 4
    if len(data) - _HEADER_BYTES != expected:
        raise FormatError(f"payload is {len(data) - _HEADER_BYTES} bytes, header implies {expected}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER_BYTES).reshape(b, d, h, w)
    return FeatureDump(stage_id=stage_id, values=values.astype(np.float32))


def write_feature_dump(path: Union[str, Path], dump: FeatureDump) -> Path:
    return atomic_write_bytes(path, encode_feature_dump(dump))


def read_feature_dump(path: Union[str, Path]) -> FeatureDump:
    return decode_feature_dump(Path(path).read_bytes())


def to_grayscale(feature_map: np.ndarray) -> np.ndarray:
    """Min-max scale one 2-D map to uint8; constant maps become mid-gray."""
    fmap = np.asarray(feature_map, dtype=np.float64)
    low, high = float(fmap.min()), float(fmap.max())
    if not high > low:
        return np.full(fmap.shape, CONSTANT_GRAY, dtype=np.uint8)
    return np.round((fmap - low) / (high - low) * 255.0).astype(np.uint8)


def export_pgm(dump: FeatureDump, out_dir: Union[str, Path], max_channels: Optional[int] = None) -> List[Path]:
    """Write sample<i>_channel<c>.pgm (binary P5) per sample and channel."""
    out_dir = Path(out_dir)
    b, d, _, _ = dump.values.shape
    channels = d if max_channels is None else min(d, max_channels)
    written = []
    for i in range(b):
        for c in range(channels):
            buffer = io.BytesIO()
            Image.fromarray(to_grayscale(dump.values[i, c])).save(buffer, format="PPM")
            written.append(atomic_write_bytes(out_dir / f"sample{i:03d}_channel{c:03d}.pgm", buffer.getvalue()))
    return written
