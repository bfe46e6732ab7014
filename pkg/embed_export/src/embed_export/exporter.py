"""Comment-file parsing, embedding, and PEMB serialization.

The PEMB binary layout (shared with the consuming recommendation engine):
magic ``PEMB``, little-endian u32 version (=1), u32 dimension, u32 record
count, then per record u32 poi_id, u32 comment_index, dim x float32.
"""

import hashlib
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PEMB_MAGIC = b"PEMB"
PEMB_VERSION = 1
EMBEDDING_DIM = 384
MAX_COMMENTS_PER_POI = 20
ENCODER_MODEL = "sentence-transformers/all-MiniLM-L6-v2"  # pinned; emits 384-dim vectors


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class PoiComments:
    poi_id: int
    comments: tuple[str, ...]


def _normalize(text: str) -> str:
    return " ".join(text.split())


def load_comment_file(path) -> list[PoiComments]:
    """Parse the comment JSON: a list of {poi_id, comments: [str, ...]}.

    Whitespace is normalized; empty comments are dropped; at most 20
    comments are retained per POI.
    """
    path = Path(path)
    if not path.exists():
        raise ExportError(f"comment file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ExportError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(doc, list):
        raise ExportError(f"{path}: expected a top-level list")
    out = []
    seen = set()
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or "poi_id" not in entry or "comments" not in entry:
            raise ExportError(f"{path}: entry {i} must have poi_id and comments")
        poi_id = entry["poi_id"]
        if not isinstance(poi_id, int) or poi_id < 0:
            raise ExportError(f"{path}: entry {i}: poi_id must be a non-negative integer")
        if poi_id in seen:
            raise ExportError(f"{path}: duplicate poi_id {poi_id}")
        seen.add(poi_id)
        comments = [_normalize(c) for c in entry["comments"] if isinstance(c, str)]
        comments = [c for c in comments if c][:MAX_COMMENTS_PER_POI]
        out.append(PoiComments(poi_id=poi_id, comments=tuple(comments)))
    return out


def stub_vector(text: str, dim: int = EMBEDDING_DIM) -> np.ndarray:
    """Deterministic unit-norm pseudo-embedding seeded by the text's hash."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vec = rng.standard_normal(dim).astype(np.float32)
    vec /= np.linalg.norm(vec)
    return vec


def _encode_stub(comments: list[str]) -> np.ndarray:
    return np.stack([stub_vector(c) for c in comments])


_encoder = None


def _encode_pretrained(comments: list[str]) -> np.ndarray:
    global _encoder
    if _encoder is None:
        from sentence_transformers import SentenceTransformer  # heavy; import lazily

        _encoder = SentenceTransformer(ENCODER_MODEL)
    vecs = _encoder.encode(comments, convert_to_numpy=True, normalize_embeddings=True)
    return vecs.astype(np.float32)


def write_pemb(records: list[tuple[int, int, np.ndarray]], path, dim: int = EMBEDDING_DIM):
    with Path(path).open("wb") as fh:
        fh.write(PEMB_MAGIC)
        fh.write(struct.pack("<III", PEMB_VERSION, dim, len(records)))
        for poi_id, idx, vec in records:
            if vec.shape != (dim,):
                raise ExportError(f"vector for poi {poi_id} has shape {vec.shape}")
            fh.write(struct.pack("<II", poi_id, idx))
            fh.write(vec.astype("<f4").tobytes())


def export(comments: list[PoiComments], mode: str, out_path) -> dict:
    """Embed every comment and write the PEMB file; returns a small summary.

    POIs whose comment list is empty (after cleaning) are omitted with a
    warning on stderr.
    """
    if mode not in ("stub", "encoder"):
        raise ExportError(f"mode must be 'stub' or 'encoder', got {mode!r}")
    encode = _encode_stub if mode == "stub" else _encode_pretrained
    records = []
    omitted = []
    for pc in sorted(comments, key=lambda c: c.poi_id):
        if not pc.comments:
            omitted.append(pc.poi_id)
            print(f"warning: poi {pc.poi_id} has no usable comments, omitted",
                  file=sys.stderr)
            continue
        vecs = encode(list(pc.comments))
        records.extend((pc.poi_id, i, v) for i, v in enumerate(vecs))
    write_pemb(records, out_path)
    return {
        "out": str(out_path),
        "mode": mode,
        "dim": EMBEDDING_DIM,
        "pois": len(comments) - len(omitted),
        "records": len(records),
        "omitted_pois": omitted,
        "encoder_model": ENCODER_MODEL if mode == "encoder" else None,
    }
