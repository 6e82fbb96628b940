"""Embedding containers and the EMB1 / label file formats.

EMB1 layout (all little-endian)::

    bytes 0-3     b"EMB1"
    bytes 4-7     u32 header length H
    bytes 8..8+H  UTF-8 JSON {"n": int, "d": int, "dtype": "f32"|"f64", "order": "row"}
    remainder     n*d values, row-major
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"EMB1"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

PathLike = Union[str, Path]


class FormatError(ValueError):
    """Raised when a file does not follow the EMB1 or label layout."""


class ValidationError(ValueError):
    """Raised when array contents violate an embedding invariant."""


def write_emb1(path: PathLike, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {array.shape}")
    if array.dtype == np.float32:
        tag = "f32"
    elif array.dtype == np.float64:
        tag = "f64"
    else:
        raise ValueError(f"unsupported dtype {array.dtype}; use float32 or float64")
    n, d = array.shape
    header = json.dumps({"n": n, "d": d, "dtype": tag, "order": "row"}).encode("utf-8")
    payload = np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_emb1(path: PathLike) -> np.ndarray:
    """Read the raw payload of an EMB1 file without validation or normalization.

    The returned array keeps the on-disk dtype (float32 or float64).
    """
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: missing EMB1 magic")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if 8 + hlen > len(raw):
        raise FormatError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from None
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header is not a JSON object")
    n, d = header.get("n"), header.get("d")
    if not isinstance(n, int) or not isinstance(d, int) or isinstance(n, bool) or isinstance(d, bool):
        raise FormatError(f"{path}: header needs integer 'n' and 'd'")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: n and d must be >= 1, got n={n}, d={d}")
    tag = header.get("dtype")
    if tag not in _DTYPES:
        raise FormatError(f"{path}: unsupported dtype {tag!r} (expected 'f32' or 'f64')")
    if header.get("order", "row") != "row":
        raise FormatError(f"{path}: only row-major order is supported")
    dtype = _DTYPES[tag]
    body = raw[8 + hlen:]
    expected = n * d * dtype.itemsize
    if len(body) != expected:
        raise FormatError(f"{path}: payload has {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype=dtype).reshape(n, d).astype(dtype.newbyteorder("="))


def _validated(array: np.ndarray, what: str) -> np.ndarray:
    """Check finiteness, renormalize rows to unit length, return a read-only float64 copy."""
    if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
        raise ValidationError(f"{what}: expected a non-empty 2-D array, got shape {array.shape}")
    finite = np.isfinite(array)
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        raise ValidationError(f"{what}: non-finite value at ({row}, {col})")
    data = np.array(array, dtype=np.float64)
    norms = np.linalg.norm(data, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"{what}: zero-norm row at index {zero[0]}")
    data /= norms[:, None]
    data.setflags(write=False)
    return data


@dataclass(frozen=True)
class EmbeddingSet:
    """Query features, one unit-norm row per sample (float64 internally)."""

    data: np.ndarray
    source_dtype: str = "f64"

    @classmethod
    def from_array(cls, array, source_dtype: str | None = None) -> "EmbeddingSet":
        array = np.asarray(array)
        if source_dtype is None:
            source_dtype = "f32" if array.dtype == np.float32 else "f64"
        return cls(_validated(array, "features"), source_dtype)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.n

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True)
class AnchorSet:
    """Class text embeddings, one unit-norm row per class."""

    data: np.ndarray
    source_dtype: str = "f64"

    @classmethod
    def from_array(cls, array, source_dtype: str | None = None) -> "AnchorSet":
        array = np.asarray(array)
        if source_dtype is None:
            source_dtype = "f32" if array.dtype == np.float32 else "f64"
        return cls(_validated(array, "anchors"), source_dtype)

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def load_embeddings(path: PathLike) -> EmbeddingSet:
    raw = read_emb1(path)
    return EmbeddingSet.from_array(raw, "f32" if raw.dtype == np.float32 else "f64")


def load_anchors(path: PathLike, d: int | None = None) -> AnchorSet:
    """Load class anchors; if ``d`` is given the dimension must match it."""
    raw = read_emb1(path)
    anchors = AnchorSet.from_array(raw, "f32" if raw.dtype == np.float32 else "f64")
    if d is not None and anchors.d != d:
        raise ValidationError(f"anchors have dimension {anchors.d}, features have {d}")
    return anchors


def save_embeddings(path: PathLike, emb, dtype: str = "f64") -> None:
    write_emb1(path, np.asarray(emb, dtype=_DTYPES[dtype].newbyteorder("=")))


def load_labels(path: PathLike, k: int | None = None) -> np.ndarray:
    """Read one non-negative class index per line into an int64 array.

    Raises
    ------
    FormatError
        On an empty file or a line that is not a decimal integer.
    ValidationError
        On an index outside ``[0, k)``.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: empty label file")
    labels = np.empty(len(lines), dtype=np.int64)
    for i, line in enumerate(lines):
        s = line.strip()
        if not s.isdigit():
            raise FormatError(f"{path}: line {i + 1} is not a non-negative integer: {line!r}")
        labels[i] = int(s)
    if k is not None:
        check_labels(labels, k)
    return labels


def check_labels(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        raise ValidationError(f"label {labels[bad[0]]} at line {bad[0] + 1} is out of range [0, {k})")
    return labels


def save_labels(path: PathLike, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(y)}\n" for y in labels)
