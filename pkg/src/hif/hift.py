"""HIFT binary tensor container and checkpoint files.

Tensor record layout (no alignment padding, little-endian throughout):

    magic   4 bytes  b"HIFT"
    version 1 byte   0x01
    dtype   1 byte   0 = float32, 1 = float64
    rank    1 byte
    extents rank * uint64
    payload raw row-major scalars

A checkpoint is a JSON header (format version, config echo, training
step, name -> byte-offset index) followed by the concatenated tensor
records; the header is length-prefixed with a uint64 so the payload start
is unambiguous. Tensors are stored sorted by name, which makes
save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HIFT"
VERSION = 1
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

CHECKPOINT_FORMAT = 1


class ContainerError(ValueError):
    """Malformed or unsupported HIFT data."""


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODE:
        raise ContainerError(f"unsupported dtype {arr.dtype}")
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 255:
        raise ContainerError("rank exceeds container limit")
    head = MAGIC + struct.pack("<BBB", VERSION, _DTYPE_CODE[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return head + little.tobytes(order="C")


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor record; returns (array, offset past the record)."""
    if buf[offset : offset + 4] != MAGIC:
        raise ContainerError(f"bad magic at offset {offset}")
    version, code, rank = struct.unpack_from("<BBB", buf, offset + 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if code not in _CODE_DTYPE:
        raise ContainerError(f"unknown dtype code {code}")
    pos = offset + 7
    dims = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = _CODE_DTYPE[code]
    count = int(np.prod(dims)) if rank else 1
    nbytes = count * dtype.itemsize
    if pos + nbytes > len(buf):
        raise ContainerError("truncated tensor payload")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(dims)
    return arr.astype(dtype.newbyteorder("=")), pos + nbytes


def write_tensor(path, arr: np.ndarray):
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path) -> np.ndarray:
    arr, _ = tensor_from_bytes(Path(path).read_bytes())
    return arr


# -- checkpoints --------------------------------------------------------


def save_checkpoint(path, tensors: dict, config: dict, step: int):
    """Write named tensors plus a config echo; names must be unique."""
    names = sorted(tensors)
    if len(names) != len(set(names)):
        raise ContainerError("duplicate tensor names")
    blobs = []
    index = {}
    offset = 0
    for name in names:
        blob = tensor_to_bytes(np.asarray(tensors[name]))
        index[name] = offset
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": config,
        "step": int(step),
        "index": index,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[dict, dict, int]:
    """Returns (tensors, config, step)."""
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise ContainerError("checkpoint too short")
    (head_len,) = struct.unpack_from("<Q", buf, 0)
    try:
        header = json.loads(buf[8 : 8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"bad checkpoint header: {e}") from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ContainerError(f"unsupported checkpoint format {header.get('format')}")
    payload = 8 + head_len
    tensors = {}
    for name, off in header["index"].items():
        arr, _ = tensor_from_bytes(buf, payload + off)
        tensors[name] = arr
    return tensors, header["config"], header["step"]
