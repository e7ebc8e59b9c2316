"""Descriptor export: CSV rows or a raw block behind a one-line text header."""

import csv
import io
from pathlib import Path

import numpy as np

from patchbench.errors import CorpusFormatError, StorageError


def descriptors_csv(ids: list[str], descs: np.ndarray) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", *(f"d{i}" for i in range(descs.shape[1]))])
    binary = descs.dtype == np.bool_
    for pid, row in zip(ids, descs):
        values = (str(int(v)) for v in row) if binary else (f"{v:.9g}" for v in row)
        writer.writerow([pid, *values])
    return buf.getvalue().encode("utf-8")


def encode_raw(family: str, descs: np.ndarray) -> bytes:
    """`<family> <D> <count>` then little-endian float32 values, or packed bits for binary."""
    count, dim = descs.shape
    header = f"{family} {dim} {count}\n".encode("ascii")
    if descs.dtype == np.bool_:
        return header + np.packbits(descs, axis=1).tobytes()
    return header + descs.astype("<f4").tobytes()


def decode_raw(data: bytes) -> tuple[str, np.ndarray]:
    head, sep, body = data.partition(b"\n")
    try:
        family, dim_text, count_text = head.decode("ascii").split()
        dim, count = int(dim_text), int(count_text)
    except (UnicodeDecodeError, ValueError) as e:
        raise CorpusFormatError("malformed descriptor header") from e
    if not sep:
        raise CorpusFormatError("descriptor block has no header line")
    float_size = 4 * dim * count
    packed_size = ((dim + 7) // 8) * count
    if len(body) == float_size:
        return family, np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float64)
    if len(body) == packed_size:
        packed = np.frombuffer(body, dtype=np.uint8).reshape(count, -1)
        return family, np.unpackbits(packed, axis=1, count=dim).astype(np.bool_)
    raise CorpusFormatError(f"descriptor block of {len(body)} bytes fits neither layout")


def write_descriptors(path: Path, family: str, ids: list[str], descs: np.ndarray) -> None:
    """Write CSV for a .csv path, the raw block otherwise."""
    path = Path(path)
    data = descriptors_csv(ids, descs) if path.suffix == ".csv" else encode_raw(family, descs)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e
