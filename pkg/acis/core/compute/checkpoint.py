"""
Flat binary checkpoints.

Layout: the magic bytes b"ACIS1", then one record per named parameter until end of file:
name length, UTF-8 name, rank, each shape dimension (all unsigned 64-bit little-endian),
followed by the raw float64 little-endian values in row-major order.
"""
import logging
import struct
from os import PathLike
from pathlib import Path
from typing import BinaryIO, Dict, Union

import numpy as np

from acis.core.exceptions import CheckpointFormatError

log = logging.getLogger("acis.core.compute.checkpoint")

MAGIC = b"ACIS1"
_U64 = struct.Struct("<Q")


def write_checkpoint(fp: BinaryIO, state: Dict[str, np.ndarray]):
    fp.write(MAGIC)
    for name, value in state.items():
        encoded = name.encode("utf-8")
        value = np.ascontiguousarray(value, dtype="<f8")
        fp.write(_U64.pack(len(encoded)))
        fp.write(encoded)
        fp.write(_U64.pack(value.ndim))
        for dim in value.shape:
            fp.write(_U64.pack(dim))
        fp.write(value.tobytes(order="C"))


def read_checkpoint(fp: BinaryIO) -> Dict[str, np.ndarray]:
    if fp.read(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("checkpoint does not start with the ACIS1 magic")

    state: Dict[str, np.ndarray] = {}
    while True:
        header = fp.read(_U64.size)
        if not header:
            return state

        name = _read_exact(fp, _read_u64(header)).decode("utf-8")
        rank = _read_u64(_read_exact(fp, _U64.size))
        shape = tuple(_read_u64(_read_exact(fp, _U64.size)) for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        raw = _read_exact(fp, 8 * count)
        state[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save(path: Union[str, PathLike], state: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fp:
        write_checkpoint(fp, state)

    log.debug(f"save: {path} ({len(state)} parameters)")
    return path


def load(path: Union[str, PathLike]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointFormatError(f"checkpoint {path} could not be found")

    with open(path, "rb") as fp:
        state = read_checkpoint(fp)

    log.debug(f"load: {path} ({len(state)} parameters)")
    return state


def _read_exact(fp: BinaryIO, size: int) -> bytes:
    data = fp.read(size)
    if len(data) != size:
        raise CheckpointFormatError(f"checkpoint truncated: expected {size} bytes, got {len(data)}")
    return data


def _read_u64(data: bytes) -> int:
    if len(data) != _U64.size:
        raise CheckpointFormatError("checkpoint truncated inside a length field")
    return _U64.unpack(data)[0]
