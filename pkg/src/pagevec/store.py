"""On-disk index format and storage accounting.

An index directory holds two files:

  manifest.json   format_version, dim, variant, alpha, and one entry per
                  document: doc_id, k, vector_offset (starting row in the
                  blob), and per-row provenance.
  vectors.bin     all document vectors stacked row-major as little-endian
                  float32, framed as:

                      magic   4 bytes  b"CPVX"
                      version u32
                      dim     u32
                      count   u64
                      payload count * dim * 4 bytes
                      check   u64, BLAKE2b-64 of the payload

Readers verify magic, version, exact file size, and checksum; writers never
mutate an existing file in place (write to a temp name, then rename).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import CorruptIndex, DimMismatch, VersionMismatch
from .fusion import MultiVectorRecord, VectorProvenance, validate_record
from .layout import BoundingBox, ContentType

logger = logging.getLogger(__name__)

MAGIC = b"CPVX"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_CHECK = struct.Struct("<Q")
# Fixed framing cost per blob: header plus trailing checksum.
BLOB_OVERHEAD = _HEADER.size + _CHECK.size

MANIFEST_NAME = "manifest.json"
VECTORS_NAME = "vectors.bin"


def _payload_check(payload: bytes) -> int:
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return _CHECK.unpack(digest)[0]


def write_vector_blob(vectors: np.ndarray, path: str | Path) -> None:
    """Write a (count, dim) float32 matrix in the framed binary format."""
    v = np.ascontiguousarray(vectors, dtype="<f4")
    if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
        raise ValueError(f"blob needs a non-empty 2-D matrix, got shape {v.shape}")
    payload = v.tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, v.shape[1], v.shape[0]))
        fh.write(payload)
        fh.write(_CHECK.pack(_payload_check(payload)))
    os.replace(tmp, path)


def read_vector_blob(path: str | Path) -> np.ndarray:
    """Read a framed blob back; misframed or corrupted files raise."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < BLOB_OVERHEAD:
        raise CorruptIndex(f"{path}: too short to be a vector blob ({len(raw)} bytes)")
    magic, version, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptIndex(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: format version {version}, this build reads {FORMAT_VERSION}"
        )
    expected = BLOB_OVERHEAD + count * dim * 4
    if len(raw) != expected:
        raise CorruptIndex(
            f"{path}: size {len(raw)} does not match framed size {expected}"
        )
    payload = raw[_HEADER.size : _HEADER.size + count * dim * 4]
    (stored_check,) = _CHECK.unpack_from(raw, len(raw) - _CHECK.size)
    if stored_check != _payload_check(payload):
        raise CorruptIndex(f"{path}: payload checksum mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()


def _provenance_json(p: VectorProvenance) -> dict:
    return {
        "ref": p.ref,
        "bbox": p.bbox.as_list() if p.bbox is not None else None,
        "content_type": p.content_type.value if p.content_type is not None else None,
    }


def _provenance_from_json(obj: dict) -> VectorProvenance:
    bbox = obj.get("bbox")
    ctype = obj.get("content_type")
    return VectorProvenance(
        ref=obj["ref"],
        bbox=BoundingBox(*(float(v) for v in bbox)) if bbox is not None else None,
        content_type=ContentType(ctype) if ctype is not None else None,
    )


class RetrievalIndex:
    """An immutable, iterable collection of MultiVectorRecords."""

    def __init__(
        self,
        records: Sequence[MultiVectorRecord],
        variant: str | None = None,
        alpha: float | None = None,
    ):
        records = tuple(records)
        if not records:
            raise ValueError("an index needs at least one record")
        dims = {rec.dim for rec in records}
        if len(dims) != 1:
            raise DimMismatch(f"records carry mixed dims {sorted(dims)}")
        ids = [rec.doc_id for rec in records]
        if len(set(ids)) != len(ids):
            dupes = sorted({d for d in ids if ids.count(d) > 1})
            raise ValueError(f"duplicate doc_ids in index: {dupes[:5]}")
        self._records = records
        self._by_id = {rec.doc_id: rec for rec in records}
        self.dim = dims.pop()
        self.variant = variant
        self.alpha = alpha

    @classmethod
    def from_records(
        cls,
        records: Sequence[MultiVectorRecord],
        variant: str | None = None,
        alpha: float | None = None,
    ) -> "RetrievalIndex":
        return cls(records, variant=variant, alpha=alpha)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[MultiVectorRecord]:
        return iter(self._records)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    @property
    def doc_ids(self) -> list[str]:
        return [rec.doc_id for rec in self._records]

    def get(self, doc_id: str) -> MultiVectorRecord:
        try:
            return self._by_id[doc_id]
        except KeyError:
            raise KeyError(f"no document {doc_id!r} in index") from None


def save(
    records: Sequence[MultiVectorRecord],
    path: str | Path,
    variant: str | None = None,
    alpha: float | None = None,
) -> None:
    """Persist records to an index directory (created if missing)."""
    records = list(records)
    if not records:
        raise ValueError("refusing to save an empty index")
    index = RetrievalIndex(records, variant=variant, alpha=alpha)
    for rec in records:
        validate_record(rec)

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    stacked = np.vstack([rec.vectors for rec in records])
    write_vector_blob(stacked, path / VECTORS_NAME)

    docs = []
    offset = 0
    for rec in records:
        docs.append(
            {
                "doc_id": rec.doc_id,
                "k": rec.k,
                "vector_offset": offset,
                "provenance": [_provenance_json(p) for p in rec.provenance],
            }
        )
        offset += rec.k
    manifest = {
        "format_version": FORMAT_VERSION,
        "dim": index.dim,
        "variant": variant,
        "alpha": alpha,
        "docs": docs,
    }
    tmp = path / (MANIFEST_NAME + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    os.replace(tmp, path / MANIFEST_NAME)


def load(path: str | Path) -> RetrievalIndex:
    """Load an index directory, verifying framing, checksum, and layout."""
    path = Path(path)
    try:
        with open(path / MANIFEST_NAME, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise CorruptIndex(f"cannot read {path / MANIFEST_NAME}: {exc}")
    except json.JSONDecodeError as exc:
        raise CorruptIndex(f"{path / MANIFEST_NAME}: bad JSON: {exc}")

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: manifest format version {version}, this build reads {FORMAT_VERSION}"
        )
    vectors = read_vector_blob(path / VECTORS_NAME)
    dim = int(manifest["dim"])
    if vectors.shape[1] != dim:
        raise CorruptIndex(
            f"{path}: manifest dim {dim} but blob rows have dim {vectors.shape[1]}"
        )

    # Validate the whole doc table before building any record, so a tampered
    # manifest surfaces as CorruptIndex rather than a downstream shape error.
    next_offset = 0
    for doc in manifest["docs"]:
        k = int(doc["k"])
        offset = int(doc["vector_offset"])
        if k < 1:
            raise CorruptIndex(f"{path}: doc {doc['doc_id']!r} has k={k}")
        if offset != next_offset:
            raise CorruptIndex(
                f"{path}: doc {doc['doc_id']!r} starts at row {offset}, "
                f"expected {next_offset}; offsets must be contiguous and increasing"
            )
        if len(doc["provenance"]) != k:
            raise CorruptIndex(
                f"{path}: doc {doc['doc_id']!r} lists {len(doc['provenance'])} "
                f"provenance entries for k={k}"
            )
        next_offset = offset + k
    if next_offset != vectors.shape[0]:
        raise CorruptIndex(
            f"{path}: docs cover {next_offset} vectors but blob holds {vectors.shape[0]}"
        )

    records = []
    for doc in manifest["docs"]:
        k = int(doc["k"])
        offset = int(doc["vector_offset"])
        rec = MultiVectorRecord(
            doc_id=str(doc["doc_id"]),
            vectors=np.ascontiguousarray(vectors[offset : offset + k]),
            provenance=tuple(_provenance_from_json(p) for p in doc["provenance"]),
        )
        validate_record(rec)
        records.append(rec)
    return RetrievalIndex(
        records,
        variant=manifest.get("variant"),
        alpha=manifest.get("alpha"),
    )


@dataclass(frozen=True)
class StorageStats:
    """Index footprint summary."""

    num_docs: int
    avg_vectors_per_doc: float
    total_bytes: int
    reduction_vs_grid: float


def storage_stats(index: RetrievalIndex, grid_baseline: int = 768) -> StorageStats:
    """Summarize index size against a dense patch-grid baseline.

    reduction_vs_grid = 1 - avg_vectors_per_doc / grid_baseline, i.e. the
    fraction of per-document vectors saved relative to keeping one vector
    per grid patch. total_bytes is the exact framed blob size.
    """
    if grid_baseline < 1:
        raise ValueError("grid_baseline must be >= 1")
    ks = [rec.k for rec in index]
    total_vectors = sum(ks)
    avg = total_vectors / len(ks)
    return StorageStats(
        num_docs=len(ks),
        avg_vectors_per_doc=avg,
        total_bytes=BLOB_OVERHEAD + total_vectors * index.dim * 4,
        reduction_vs_grid=1.0 - avg / grid_baseline,
    )
