"""8-bit binary PGM (P5) encoding, decoding and reading."""

import re
from pathlib import Path

import numpy as np

from patchbench.errors import CorpusFormatError, StorageError

_HEADER = re.compile(rb"\AP5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s")


def encode_pgm(pixels: np.ndarray) -> bytes:
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise StorageError(f"PGM needs a 2-D uint8 array, got {pixels.dtype} {pixels.shape}")
    height, width = pixels.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def decode_pgm(data: bytes, source: str = "<bytes>") -> np.ndarray:
    match = _HEADER.match(data)
    if not match:
        raise CorpusFormatError(f"{source}: malformed PGM header")
    width, height, maxval = (int(g) for g in match.groups())
    if maxval != 255:
        raise CorpusFormatError(f"{source}: only 8-bit PGM is supported (maxval {maxval})")
    body = data[match.end() :]
    if len(body) != width * height:
        raise CorpusFormatError(
            f"{source}: expected {width * height} pixel bytes, found {len(body)}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()


def read_pgm(path: Path) -> np.ndarray:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    return decode_pgm(data, str(path))
