"""
Model checkpoint container.

Layout (little-endian):
    magic        8 bytes  b"MFDCKPT1"
    spec digest 32 bytes  SHA-256 of the ModelSpec canonical JSON
    entries until end of file, each:
        u32 name length, name bytes (UTF-8),
        u32 rank, rank x u32 extents,
        product(extents) x f64 values (row-major)

Entries cover parameters and batch-norm running statistics.
"""

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from src.models.spec_schema import ModelSpec
from src.nn.network import StagedNetwork
from src.utils.artifacts import atomic_write_bytes
from src.utils.errors import FormatError
from src.utils.logger import get_logger, log_checkpoint_save

log = get_logger("utils.checkpoint")

CHECKPOINT_MAGIC = b"MFDCKPT1"
DIGEST_BYTES = 32

State = Dict[str, np.ndarray]


def encode_checkpoint(digest: bytes, state: Mapping[str, np.ndarray]) -> bytes:
    if len(digest) != DIGEST_BYTES:
        raise FormatError(f"spec digest must be {DIGEST_BYTES} bytes, got {len(digest)}")
    parts = [CHECKPOINT_MAGIC, digest]
    for name, value in state.items():
        value = np.asarray(value)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Tuple[bytes, State]:
    header = len(CHECKPOINT_MAGIC) + DIGEST_BYTES
    if len(data) < header:
        raise FormatError(f"truncated checkpoint ({len(data)} bytes)")
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    digest = data[len(CHECKPOINT_MAGIC):header]
    state: State = OrderedDict()
    offset = header

    def _take(count: int) -> bytes:
        nonlocal offset
        if offset + count > len(data):
            raise FormatError(f"truncated checkpoint entry at byte {offset}")
        chunk = data[offset:offset + count]
        offset += count
        return chunk

    while offset < len(data):
        (name_length,) = struct.unpack("<I", _take(4))
        name = _take(name_length).decode("utf-8")
        (rank,) = struct.unpack("<I", _take(4))
        extents = struct.unpack(f"<{rank}I", _take(4 * rank))
        count = int(np.prod(extents)) if rank else 1
        values = np.frombuffer(_take(8 * count), dtype="<f8").reshape(extents)
        state[name] = values.astype(np.float64)
    return digest, state


def write_checkpoint(path: Union[str, Path], spec: ModelSpec, state: Mapping[str, np.ndarray]) -> Path:
    return atomic_write_bytes(path, encode_checkpoint(spec.digest(), state))


def read_checkpoint(path: Union[str, Path], spec: Optional[ModelSpec] = None) -> Tuple[bytes, State]:
    """
    Read a checkpoint, optionally verifying it was written for ``spec``.

    Raises:
        FormatError: malformed file or digest mismatch
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    digest, state = decode_checkpoint(path.read_bytes())
    if spec is not None and digest != spec.digest():
        raise FormatError(f"{path} was written for a different model spec than {spec.name}")
    return digest, state


def save_model(model: StagedNetwork, path: Union[str, Path], run_id: str = "run") -> Path:
    written = write_checkpoint(path, model.spec, model.state_dict())
    log_checkpoint_save(run_id, str(written), model.parameter_count(), logger_instance=log)
    return written
