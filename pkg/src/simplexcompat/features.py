"""Labelled embedding sets and their binary FSET file format.

Layout (little-endian)::

    b"FSET" | u32 version=1 | u32 dim | u64 count | u32 len(model_id) | model_id utf-8
    count x (u32 label | dim x f32)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"FSET"
VERSION = 1
_HEADER = struct.Struct("<4sIIQI")


@dataclass
class FeatureSet:
    """Embeddings of one evaluation split under one model.

    Vectors are kept as float32, the precision of the file format, so an
    in-memory set and its reloaded copy evaluate identically.
    """

    model_id: str
    labels: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2 or self.labels.shape != (self.vectors.shape[0],):
            raise ValidationError("feature set needs a (count, dim) array and one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 0xFFFFFFFF):
            raise ValidationError("labels must fit in an unsigned 32-bit integer")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def records(self):
        return list(zip(self.labels.tolist(), self.vectors))

    def subset(self, index) -> "FeatureSet":
        return FeatureSet(self.model_id, self.labels[index], self.vectors[index])

    def to_bytes(self) -> bytes:
        mid = self.model_id.encode("utf-8")
        rec = np.empty(len(self), dtype=np.dtype([("label", "<u4"), ("vec", "<f4", (self.dim,))]))
        rec["label"] = self.labels
        rec["vec"] = self.vectors
        return _HEADER.pack(MAGIC, VERSION, self.dim, len(self), len(mid)) + mid + rec.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "FeatureSet":
        if len(buf) < _HEADER.size:
            raise ValidationError("truncated FSET header")
        magic, version, dim, count, mlen = _HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise ValidationError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise ValidationError(f"unsupported FSET version {version}")
        off = _HEADER.size
        model_id = buf[off : off + mlen].decode("utf-8")
        off += mlen
        dt = np.dtype([("label", "<u4"), ("vec", "<f4", (dim,))])
        if len(buf) - off != count * dt.itemsize:
            raise ValidationError(f"FSET body has {len(buf) - off} bytes, expected {count * dt.itemsize}")
        rec = np.frombuffer(buf, dtype=dt, count=count, offset=off)
        vecs = rec["vec"].reshape(count, dim)
        return cls(model_id, rec["label"].astype(np.int64), vecs)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FeatureSet":
        return cls.from_bytes(Path(path).read_bytes())


def extract_features(model, data, model_id: str | None = None) -> FeatureSet:
    return FeatureSet(model_id or model.model_id, data.y, model.embed(data.X))
