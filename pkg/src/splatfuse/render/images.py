"""Binary PPM (P6) read/write."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from ..errors import MalformedFile


def to_uint8(rgb: NDArray) -> NDArray[np.uint8]:
    return np.round(np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(rgb: NDArray, path) -> None:
    img = to_uint8(rgb)
    h, w = img.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_ppm(path) -> NDArray[np.float64]:
    """Read a P6 file into floats in [0, 1]."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedFile("truncated PPM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise MalformedFile(f"not a binary PPM: {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise MalformedFile("only 8-bit PPM is supported")
    body = data[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise MalformedFile("PPM body is truncated")
    return np.frombuffer(body, np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0
