"""Multi-vector document representations.

A document arrives here as k local (region) embeddings plus one global
(whole-page) embedding, and leaves as a MultiVectorRecord under one of four
variants:

  fused          each local blended with the global vector,
                 w_j = alpha * global + (1 - alpha) * local_j, re-normalized
  local          the local vectors verbatim
  type_avg       one normalized mean vector per distinct content type
  global_append  the local vectors plus the global vector appended last

Every record keeps provenance: which region (or type, or the page global)
each row came from, so scores can be attributed back to layout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .encode import EncoderInterface, encode_requests, page_request, region_request
from .layout import BoundingBox, ContentType, LayoutRegion
from .validation import as_matrix, as_vector, check_fraction

logger = logging.getLogger(__name__)

PROVENANCE_GLOBAL = "GLOBAL"


class Variant(str, Enum):
    FUSED = "fused"
    LOCAL = "local"
    TYPE_AVG = "type_avg"
    GLOBAL_APPEND = "global_append"


@dataclass(frozen=True)
class FusionConfig:
    """Representation choice; alpha only matters for the fused variant."""

    alpha: float = 0.7
    variant: Variant = Variant.FUSED

    def __post_init__(self):
        check_fraction(self.alpha, "alpha")
        object.__setattr__(self, "variant", Variant(self.variant))


@dataclass(frozen=True)
class VectorProvenance:
    """Where one record row came from.

    ref is a region index (int), a content-type label, or PROVENANCE_GLOBAL.
    """

    ref: int | str
    bbox: BoundingBox | None = None
    content_type: ContentType | None = None


@dataclass(frozen=True)
class MultiVectorRecord:
    """One indexed document: k unit float32 vectors plus aligned provenance."""

    doc_id: str
    vectors: np.ndarray
    provenance: tuple[VectorProvenance, ...]

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        v = self.vectors
        if not isinstance(v, np.ndarray) or v.ndim != 2 or v.dtype != np.float32:
            raise ValueError("vectors must be a 2-D float32 array")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"vectors must be non-empty, got shape {v.shape}")
        if len(self.provenance) != v.shape[0]:
            raise ValueError(
                f"{len(self.provenance)} provenance entries for {v.shape[0]} vectors"
            )

    @property
    def k(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def validate_record(record: MultiVectorRecord, tol: float = 1e-6) -> None:
    """Strict check: every row unit-norm within tol and finite."""
    v = record.vectors.astype(np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"record {record.doc_id!r} has non-finite vectors")
    norms = np.linalg.norm(v, axis=1)
    worst = float(np.max(np.abs(norms - 1.0)))
    if worst > tol:
        raise ValueError(
            f"record {record.doc_id!r} has a row with norm off unit by {worst:.3g}"
        )


def _as_unit_f32(vec64: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(vec64, dtype=np.float32)


def fuse_global_local(locals_: np.ndarray, global_vec: np.ndarray, alpha: float) -> np.ndarray:
    """Blend each local vector with the global vector and re-normalize.

    alpha = 0 returns the locals bit-for-bit; alpha = 1 returns the global
    vector repeated bit-for-bit. In between, each fused row is
    normalize(alpha * global + (1 - alpha) * local). A blend that cancels to
    (near) zero norm falls back to the untouched local vector with a warning
    instead of failing.
    """
    check_fraction(alpha, "alpha")
    locals32 = np.ascontiguousarray(locals_, dtype=np.float32)
    if locals32.ndim != 2:
        raise ValueError(f"locals must be 2-D, got shape {locals32.shape}")
    g32 = np.ascontiguousarray(global_vec, dtype=np.float32)
    if g32.shape != (locals32.shape[1],):
        raise ValueError(
            f"global vector shape {g32.shape} does not match locals dim {locals32.shape[1]}"
        )

    if alpha == 0.0:
        return locals32.copy()
    if alpha == 1.0:
        return np.tile(g32, (locals32.shape[0], 1))

    loc64 = locals32.astype(np.float64)
    g64 = g32.astype(np.float64)
    fused = alpha * g64 + (1.0 - alpha) * loc64
    norms = np.linalg.norm(fused, axis=1)
    out = np.empty_like(locals32)
    for j in range(locals32.shape[0]):
        if norms[j] < 1e-12:
            logger.warning(
                "fusion of local %d cancelled the global vector (alpha=%.3g); "
                "keeping the local vector",
                j, alpha,
            )
            out[j] = locals32[j]
        else:
            out[j] = _as_unit_f32(fused[j] / norms[j])
    return out


def _region_provenance(regions: Sequence[LayoutRegion]) -> tuple[VectorProvenance, ...]:
    return tuple(
        VectorProvenance(ref=r.index, bbox=r.bbox, content_type=r.content_type)
        for r in regions
    )


@dataclass(frozen=True)
class PageEmbeddings:
    """Encoder output for one page, ready for record building."""

    doc_id: str
    locals_: np.ndarray
    global_vec: np.ndarray | None
    regions: tuple[LayoutRegion, ...]

    def __post_init__(self):
        loc = as_matrix(self.locals_, name="locals")
        if len(self.regions) != loc.shape[0]:
            raise ValueError(
                f"{len(self.regions)} regions for {loc.shape[0]} local vectors"
            )
        if self.global_vec is not None:
            as_vector(self.global_vec, dim=loc.shape[1], name="global_vec")


def build_local_record(
    doc_id: str, locals_: np.ndarray, regions: Sequence[LayoutRegion]
) -> MultiVectorRecord:
    """Locals verbatim, one row per region."""
    vectors = np.ascontiguousarray(locals_, dtype=np.float32)
    return MultiVectorRecord(doc_id, vectors.copy(), _region_provenance(regions))


def build_type_avg_record(
    doc_id: str, locals_: np.ndarray, types: Sequence[ContentType]
) -> MultiVectorRecord:
    """One normalized mean vector per distinct content type.

    Types are ordered by first occurrence; each output row is
    normalize(mean(locals of that type)). A mean that cancels to zero keeps
    the type's first local vector instead, with a warning.
    """
    locals32 = np.ascontiguousarray(locals_, dtype=np.float32)
    if locals32.ndim != 2 or locals32.shape[0] != len(types):
        raise ValueError("types must align with local vectors")
    order: list[ContentType] = []
    members: dict[ContentType, list[int]] = {}
    for j, ctype in enumerate(types):
        ctype = ContentType(ctype)
        if ctype not in members:
            members[ctype] = []
            order.append(ctype)
        members[ctype].append(j)

    rows = []
    provenance = []
    for ctype in order:
        idx = members[ctype]
        mean = locals32[idx].astype(np.float64).mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < 1e-12:
            logger.warning(
                "type %s mean cancelled to zero for doc %s; keeping first member",
                ctype.value, doc_id,
            )
            rows.append(locals32[idx[0]])
        else:
            rows.append(_as_unit_f32(mean / norm))
        provenance.append(VectorProvenance(ref=ctype.value, content_type=ctype))
    return MultiVectorRecord(doc_id, np.stack(rows), tuple(provenance))


def build_global_append_record(
    doc_id: str,
    locals_: np.ndarray,
    global_vec: np.ndarray,
    regions: Sequence[LayoutRegion],
) -> MultiVectorRecord:
    """Locals verbatim with the global vector appended as the last row."""
    locals32 = np.ascontiguousarray(locals_, dtype=np.float32)
    g32 = np.ascontiguousarray(global_vec, dtype=np.float32)
    vectors = np.vstack([locals32, g32[np.newaxis, :]])
    provenance = _region_provenance(regions) + (VectorProvenance(ref=PROVENANCE_GLOBAL),)
    return MultiVectorRecord(doc_id, vectors, provenance)


def build_fused_record(
    doc_id: str,
    locals_: np.ndarray,
    global_vec: np.ndarray,
    alpha: float,
    regions: Sequence[LayoutRegion],
) -> MultiVectorRecord:
    """Fused variant: every local blended with the global vector."""
    vectors = fuse_global_local(locals_, global_vec, alpha)
    return MultiVectorRecord(doc_id, vectors, _region_provenance(regions))


def build_record(page: PageEmbeddings, cfg: FusionConfig) -> MultiVectorRecord:
    """Build the configured representation for one page."""
    variant = Variant(cfg.variant)
    if variant in (Variant.FUSED, Variant.GLOBAL_APPEND) and page.global_vec is None:
        raise ValueError(f"variant {variant.value} needs a global vector")
    if variant is Variant.FUSED:
        return build_fused_record(
            page.doc_id, page.locals_, page.global_vec, cfg.alpha, page.regions
        )
    if variant is Variant.LOCAL:
        return build_local_record(page.doc_id, page.locals_, page.regions)
    if variant is Variant.TYPE_AVG:
        return build_type_avg_record(
            page.doc_id, page.locals_, [r.content_type for r in page.regions]
        )
    return build_global_append_record(
        page.doc_id, page.locals_, page.global_vec, page.regions
    )


def split_global(record: MultiVectorRecord) -> tuple[np.ndarray, np.ndarray]:
    """Split a global_append record into (locals, global vector).

    Raises ValueError when the record's last row is not the page global.
    """
    if not record.provenance or record.provenance[-1].ref != PROVENANCE_GLOBAL:
        raise ValueError(
            f"record {record.doc_id!r} carries no global row; "
            "build it with the global_append variant"
        )
    if record.k < 2:
        raise ValueError(f"record {record.doc_id!r} has a global row but no locals")
    return record.vectors[:-1], record.vectors[-1]


def embed_pages(
    regions_by_page: Sequence[tuple[str, Sequence[LayoutRegion]]],
    adapter: EncoderInterface,
    include_global: bool = True,
) -> list[PageEmbeddings]:
    """Encode every page's region crops (and optionally the page itself).

    All requests go through the adapter as one ordered batch, so adapters
    with server-side batching benefit. Pages with no regions are rejected.
    """
    requests = []
    spans: list[tuple[str, int]] = []
    for page_id, regions in regions_by_page:
        if not regions:
            raise ValueError(f"page {page_id!r} has no regions to encode")
        for region in regions:
            requests.append(region_request(page_id, region.index, region.bbox))
        if include_global:
            requests.append(page_request(page_id))
        spans.append((page_id, len(regions)))

    vectors = encode_requests(requests, adapter)
    pages: list[PageEmbeddings] = []
    pos = 0
    for (page_id, n_regions), (_, regions) in zip(spans, regions_by_page):
        locals_ = np.stack(vectors[pos : pos + n_regions])
        pos += n_regions
        global_vec = None
        if include_global:
            global_vec = vectors[pos]
            pos += 1
        pages.append(
            PageEmbeddings(
                doc_id=page_id,
                locals_=locals_,
                global_vec=global_vec,
                regions=tuple(regions),
            )
        )
    return pages


class RepresentationBuilder(BaseEstimator, TransformerMixin):
    """Transformer from PageEmbeddings to MultiVectorRecords."""

    def __init__(self, variant: str = "fused", alpha: float = 0.7):
        self.variant = variant
        self.alpha = alpha

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: Sequence[PageEmbeddings]) -> list[MultiVectorRecord]:
        cfg = FusionConfig(alpha=self.alpha, variant=Variant(self.variant))
        return [build_record(page, cfg) for page in X]
