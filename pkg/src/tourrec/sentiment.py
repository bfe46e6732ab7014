"""Per-POI comment embeddings and the pairwise coherence distance.

A POI whose comments cluster tightly in embedding space (consistently
positive reviews) gets a small distance, which the scoring gate divides by
to boost the POI.  Distances are normalized cosine: (1 - cos) / 2 in [0, 1].

PEMB file format (little-endian): magic ``PEMB``, u32 version (=1),
u32 dimension, u32 record count; per record u32 poi_id, u32 comment_index,
then dimension float32 values.  A JSON mirror is accepted for debugging.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

PEMB_MAGIC = b"PEMB"
PEMB_VERSION = 1
DEFAULT_DIM = 384
MAX_COMMENTS_PER_POI = 20
NEUTRAL_DISTANCE = 0.5


class EmbeddingError(ValueError):
    pass


class EmbeddingStore:
    """Immutable map poi_id -> comment embedding matrix (m x dim)."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise EmbeddingError(f"dimension must be positive, got {dim}")
        self.dim = dim
        self._vectors: dict[int, list[np.ndarray]] = {}

    def add(self, poi_id: int, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise EmbeddingError(
                f"poi {poi_id}: vector of dimension {vec.shape} in a d={self.dim} store"
            )
        if not np.linalg.norm(vec) > 0:
            raise EmbeddingError(f"poi {poi_id}: zero-norm embedding rejected")
        vecs = self._vectors.setdefault(poi_id, [])
        if len(vecs) < MAX_COMMENTS_PER_POI:
            vecs.append(vec)

    def vectors(self, poi_id: int) -> list[np.ndarray]:
        return self._vectors.get(poi_id, [])

    def n_comments(self, poi_id: int) -> int:
        return len(self._vectors.get(poi_id, []))

    def poi_ids(self) -> list[int]:
        return sorted(self._vectors)


def pair_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cosine distance (1 - cos)/2, in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise EmbeddingError("zero-norm vector has no direction")
    cos = float(np.dot(a, b) / (na * nb))
    cos = max(-1.0, min(1.0, cos))
    return (1.0 - cos) / 2.0


def poi_sentiment_distance(store: EmbeddingStore, poi_id: int, aggregate: str = "mean") -> float:
    """Aggregate pairwise distance over a POI's comments; 0.5 if fewer than 2."""
    vecs = store.vectors(poi_id)
    if len(vecs) < 2:
        return NEUTRAL_DISTANCE
    dists = [
        pair_distance(vecs[i], vecs[j])
        for i in range(len(vecs))
        for j in range(i + 1, len(vecs))
    ]
    if aggregate == "mean":
        return float(np.mean(dists))
    if aggregate == "min":
        return float(np.min(dists))
    if aggregate == "max":
        return float(np.max(dists))
    raise EmbeddingError(f"unknown aggregator {aggregate!r}")


def save_embeddings(store: EmbeddingStore, path) -> None:
    records = [
        (poi_id, idx, vec)
        for poi_id in store.poi_ids()
        for idx, vec in enumerate(store.vectors(poi_id))
    ]
    with Path(path).open("wb") as fh:
        fh.write(PEMB_MAGIC)
        fh.write(struct.pack("<III", PEMB_VERSION, store.dim, len(records)))
        for poi_id, idx, vec in records:
            fh.write(struct.pack("<II", poi_id, idx))
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def load_embeddings(path) -> EmbeddingStore:
    """Load a PEMB (or JSON mirror) embedding file."""
    path = Path(path)
    if not path.exists():
        raise EmbeddingError(f"embedding file not found: {path}")
    head = path.open("rb").read(4)
    if head != PEMB_MAGIC:
        if head[:1] == b"{":
            return _load_json(path)
        raise EmbeddingError(f"{path}: bad magic {head!r} at offset 0, expected {PEMB_MAGIC!r}")
    data = path.read_bytes()
    if len(data) < 16:
        raise EmbeddingError(f"{path}: truncated header at offset {len(data)}")
    version, dim, count = struct.unpack_from("<III", data, 4)
    if version != PEMB_VERSION:
        raise EmbeddingError(f"{path}: unsupported version {version} at offset 4")
    store = EmbeddingStore(dim)
    offset = 16
    rec_size = 8 + 4 * dim
    for i in range(count):
        if offset + rec_size > len(data):
            raise EmbeddingError(f"{path}: truncated record {i} at offset {offset}")
        poi_id, _idx = struct.unpack_from("<II", data, offset)
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset + 8)
        store.add(poi_id, vec)
        offset += rec_size
    if offset != len(data):
        raise EmbeddingError(f"{path}: {len(data) - offset} trailing bytes at offset {offset}")
    return store


def _load_json(path: Path) -> EmbeddingStore:
    doc = json.loads(path.read_text(encoding="utf-8"))
    store = EmbeddingStore(int(doc["dim"]))
    for rec in doc.get("records", []):
        vec = np.asarray(rec["vec"], dtype=np.float32)
        if vec.shape != (store.dim,):
            raise EmbeddingError(
                f"{path}: record poi={rec['poi']} has dimension {vec.size}, store is d={store.dim}"
            )
        store.add(int(rec["poi"]), vec)
    return store
