"""Little-endian tensor container used for checkpoints and datasets.

Layout: 8 magic bytes, u64 tensor count, then per tensor a u64 name length,
the UTF-8 name, u64 rank, rank u64 extents and the float32 data; a u32 CRC32
of everything before it closes the file.
"""
import hashlib
import math
import struct
import zlib
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .errors import BadMagicError, ChecksumError, FormatError, ShapeError, TruncatedError
from .model import ModelState

CHECKPOINT_MAGIC = b"H2TCKPT1"
TENSOR_MAGIC = b"H2TTENS1"
MAX_RANK = 32

PathLike = Union[str, Path]


def encode_container(magic: bytes, tensors: Dict[str, np.ndarray]) -> bytes:
    parts = [magic, struct.pack("<Q", len(tensors))]
    for name, array in tensors.items():
        raw_name = name.encode("utf-8")
        array = np.asarray(array)
        parts.append(struct.pack("<Q", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<Q", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buffer: bytes, source: str, offset: int = 0):
        self.buffer = buffer
        self.offset = offset
        self.source = source
        self.short_in_name = False

    def take(self, size: int, what: str, name: bool = False) -> bytes:
        end = self.offset + size
        if end > len(self.buffer):
            self.short_in_name = name
            raise TruncatedError(f"{self.source}: truncated while reading {what}")
        chunk = self.buffer[self.offset:end]
        self.offset = end
        return chunk

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def _read_tensors(reader: _Reader) -> Dict[str, np.ndarray]:
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(reader.u64("tensor count")):
        raw_name = reader.take(reader.u64("name length"), "name", name=True)
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{reader.source}: tensor name is not valid UTF-8") from exc
        rank = reader.u64(f"rank of {name}")
        if rank > MAX_RANK:
            raise FormatError(f"{reader.source}: implausible rank {rank} for {name}")
        shape = struct.unpack(f"<{rank}Q", reader.take(8 * rank, f"extents of {name}"))
        data = reader.take(4 * math.prod(shape), f"data of {name}")
        tensors[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(shape)
    return tensors


def _mismatch_error(buffer: bytes, start: int, source: str) -> FormatError:
    """Classify a buffer whose trailer disagrees with its contents.

    A file cut short keeps plausible headers and runs out of bytes outside a
    name; anything else is corruption.
    """
    reader = _Reader(buffer, source, start)
    try:
        _read_tensors(reader)
        body_end = reader.offset
        stored = struct.unpack("<I", reader.take(4, "checksum"))[0]
    except TruncatedError as exc:
        return ChecksumError(f"{source}: checksum mismatch") if reader.short_in_name else exc
    except FormatError:
        return ChecksumError(f"{source}: checksum mismatch")
    if reader.offset < len(buffer) and zlib.crc32(buffer[:body_end]) == stored:
        return FormatError(f"{source}: {len(buffer) - reader.offset} unexpected trailing bytes")
    return ChecksumError(f"{source}: checksum mismatch")


def decode_container(buffer: bytes, magic: bytes, source: str = "<buffer>") -> Dict[str, np.ndarray]:
    """Check magic and CRC32 trailer, then decode the named tensors"""
    found = _Reader(buffer, source).take(len(magic), "magic")
    if found != magic:
        raise BadMagicError(f"{source}: bad magic {found!r}, expected {magic!r}")
    if len(buffer) < len(magic) + 8 + 4:
        raise TruncatedError(f"{source}: truncated before the checksum trailer")

    body_end = len(buffer) - 4
    stored = struct.unpack("<I", buffer[body_end:])[0]
    if zlib.crc32(buffer[:body_end]) != stored:
        raise _mismatch_error(buffer, len(magic), source)

    reader = _Reader(buffer[:body_end], source, len(magic))
    tensors = _read_tensors(reader)
    if reader.offset != body_end:
        raise FormatError(f"{source}: {body_end - reader.offset} unexpected bytes before the checksum")
    return tensors


def write_container(path: PathLike, magic: bytes, tensors: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(magic, tensors))
    return path


def read_container(path: PathLike, magic: bytes) -> Dict[str, np.ndarray]:
    path = Path(path)
    return decode_container(path.read_bytes(), magic, source=str(path))


def save_checkpoint(path: PathLike, model: ModelState) -> Path:
    return write_container(path, CHECKPOINT_MAGIC,
                           {name: param.value for name, param in model.parameters()})


def load_checkpoint(path: PathLike, model: ModelState) -> ModelState:
    """Overwrite ``model``'s parameter values with those stored at ``path``"""
    stored = read_container(path, CHECKPOINT_MAGIC)
    for name, param in model.parameters():
        if name not in stored:
            raise FormatError(f"{path}: checkpoint has no parameter {name}")
        if stored[name].shape != param.value.shape:
            raise ShapeError(f"checkpoint parameter {name}", param.value.shape, stored[name].shape)
        param.tensor.data = stored[name].copy()
        param.momentum.fill(0.0)
    extra = set(stored) - {name for name, _ in model.parameters()}
    if extra:
        raise FormatError(f"{path}: unexpected parameters {sorted(extra)}")
    return model


def file_sha256(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
