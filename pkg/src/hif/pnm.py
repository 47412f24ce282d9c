"""Binary PGM (P5) / PPM (P6) readers and writers, plus raw planar frames.

Only the 8-bit binary variants are supported; maxval must be 255.
Comments (# ...) in the header are honored.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PnmError(ValueError):
    """Unreadable or unsupported image file."""


def _read_header_tokens(buf: bytes, count: int) -> tuple[list, int]:
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(buf):
            raise PnmError("truncated header")
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(buf) and not buf[pos : pos + 1].isspace():
                pos += 1
            tokens.append(buf[start:pos])
    return tokens, pos + 1  # single whitespace after maxval


def read_pnm(path) -> np.ndarray:
    """Read a P5 or P6 file; returns (H, W) or (H, W, 3) uint8."""
    buf = Path(path).read_bytes()
    if len(buf) < 2 or buf[:1] != b"P":
        raise PnmError(f"{path}: not a PNM file")
    kind = buf[:2]
    if kind not in (b"P5", b"P6"):
        raise PnmError(f"{path}: unsupported PNM type {kind!r} (need binary P5/P6)")
    tokens, pos = _read_header_tokens(buf[2:], 3)
    pos += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as e:
        raise PnmError(f"{path}: bad header field: {e}") from e
    if maxval != 255:
        raise PnmError(f"{path}: unsupported maxval {maxval}")
    channels = 1 if kind == b"P5" else 3
    need = width * height * channels
    data = buf[pos : pos + need]
    if len(data) != need:
        raise PnmError(f"{path}: expected {need} pixel bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8)
    return arr.reshape((height, width) if channels == 1 else (height, width, 3))


def write_pnm(path, image: np.ndarray):
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        kind = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        kind = b"P6"
    else:
        raise PnmError(f"cannot write array of shape {image.shape}")
    h, w = image.shape[:2]
    header = kind + f"\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.tobytes(order="C"))


def read_raw(path, height: int, width: int, channels: int = 1) -> np.ndarray:
    """Raw planar 8-bit frame with caller-supplied dims."""
    buf = Path(path).read_bytes()
    need = height * width * channels
    if len(buf) != need:
        raise PnmError(f"{path}: raw frame needs {need} bytes, found {len(buf)}")
    arr = np.frombuffer(buf, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width)
    # planar: channel planes stored back to back
    return arr.reshape(channels, height, width).transpose(1, 2, 0)
