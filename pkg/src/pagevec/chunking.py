"""Patch-grid chunking baselines.

A page here is a dense rows x cols grid of patch embeddings (the kind a
vision tower emits). Chunking compresses the grid into a few vectors, either
guided by layout regions or by embedding similarity alone:

  region_mean     one normalized mean per region with assigned patches
  region_cluster  agglomerative clusters within each region's patches
  type_mean       one normalized mean per content type
  type_cluster    agglomerative clusters within each type's patches
  semantic        all patches clustered down to exactly
                  min(semantic_k, n_patches) vectors, layout ignored

Layout-guided modes assign each patch to the region containing its center
(smallest region wins on overlap, then lowest region index) and discard
unassigned patches. Clustering is average-linkage over cosine similarity,
merging while the best pair clears merge_threshold, with fully deterministic
tie-breaking: highest similarity first, then the lexicographically smallest
pair.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .encode import normalize
from .errors import DegenerateVector, GeometryMismatch
from .fusion import PROVENANCE_GLOBAL, MultiVectorRecord, VectorProvenance
from .layout import BoundingBox, ContentType, LayoutRegion, PageGeometry

logger = logging.getLogger(__name__)

DISCARDED = -1


class ChunkMode(str, Enum):
    TYPE_MEAN = "type_mean"
    TYPE_CLUSTER = "type_cluster"
    REGION_MEAN = "region_mean"
    REGION_CLUSTER = "region_cluster"
    SEMANTIC = "semantic"


@dataclass(frozen=True)
class ChunkingConfig:
    mode: ChunkMode = ChunkMode.REGION_MEAN
    semantic_k: int = 10
    merge_threshold: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "mode", ChunkMode(self.mode))
        if self.semantic_k < 1:
            raise ValueError("semantic_k must be >= 1")
        if not -1.0 <= self.merge_threshold <= 1.0:
            raise ValueError("merge_threshold must be a cosine value in [-1, 1]")


@dataclass(frozen=True)
class PatchGrid:
    """Dense patch embeddings for one page, row-major, uniform tiling."""

    page: PageGeometry
    rows: int
    cols: int
    vectors: np.ndarray

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must be at least 1x1")
        v = self.vectors
        if not isinstance(v, np.ndarray) or v.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        if v.shape[0] != self.rows * self.cols:
            raise ValueError(
                f"grid {self.rows}x{self.cols} needs {self.rows * self.cols} vectors, "
                f"got {v.shape[0]}"
            )

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def patch_rect(self, idx: int) -> BoundingBox:
        r, c = divmod(idx, self.cols)
        w, h = self.page.width / self.cols, self.page.height / self.rows
        return BoundingBox(c * w, r * h, (c + 1) * w, (r + 1) * h)

    def patch_center(self, idx: int) -> tuple[float, float]:
        r, c = divmod(idx, self.cols)
        return (
            (c + 0.5) * self.page.width / self.cols,
            (r + 0.5) * self.page.height / self.rows,
        )


def assign_patches(grid: PatchGrid, regions: Sequence[LayoutRegion]) -> np.ndarray:
    """Map every patch to a region index, or DISCARDED (-1).

    A patch belongs to the region whose (closed) box contains the patch
    center; among several containing regions the smallest area wins, then
    the lowest region index. Regions must lie within the grid's page.
    """
    for region in regions:
        b = region.bbox
        if b.x1 < 0 or b.y1 < 0 or b.x2 > grid.page.width or b.y2 > grid.page.height:
            raise GeometryMismatch(
                f"region {region.index} box {b.as_list()} exceeds page "
                f"{grid.page.width}x{grid.page.height}"
            )

    out = np.full(grid.n_patches, DISCARDED, dtype=np.int64)
    order = sorted(regions, key=lambda r: (r.bbox.area, r.index))
    for p in range(grid.n_patches):
        cx, cy = grid.patch_center(p)
        for region in order:
            b = region.bbox
            if b.x1 <= cx <= b.x2 and b.y1 <= cy <= b.y2:
                out[p] = region.index
                break
    return out


def _cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    v = vectors.astype(np.float64)
    norms = np.linalg.norm(v, axis=1)
    safe = np.where(norms < 1e-12, 1.0, norms)
    unit = v / safe[:, np.newaxis]
    unit[norms < 1e-12] = 0.0
    return unit @ unit.T


def average_linkage_clusters(
    vectors: np.ndarray,
    merge_threshold: float | None = None,
    target_count: int | None = None,
) -> list[list[int]]:
    """Agglomerative average-linkage clustering over cosine similarity.

    Starts from singletons and repeatedly merges the pair of clusters with
    the highest average pairwise similarity, breaking ties toward the
    lexicographically smallest pair. With merge_threshold, merging stops
    once the best pair falls below it; with target_count, merging continues
    regardless of similarity until exactly that many clusters remain.
    Returns member index lists ordered by smallest member.
    """
    if (merge_threshold is None) == (target_count is None):
        raise ValueError("pass exactly one of merge_threshold or target_count")
    m = int(np.asarray(vectors).shape[0])
    if m == 0:
        return []
    members: list[list[int] | None] = [[i] for i in range(m)]
    sizes = np.ones(m, dtype=np.float64)
    sim = _cosine_matrix(np.asarray(vectors))
    # Dead slots and the diagonal stay at -inf; only i < j cells are read.
    work = sim.copy()
    work[np.tril_indices(m)] = -np.inf

    count = m
    stop_at = 1 if target_count is None else min(target_count, m)
    while count > stop_at:
        flat = int(np.argmax(work))
        i, j = divmod(flat, m)
        best = work[i, j]
        if target_count is None and best < merge_threshold:
            break
        if not np.isfinite(best):
            break
        # Average linkage via size-weighted similarity updates.
        for k in range(m):
            if members[k] is None or k in (i, j):
                continue
            s_ik = work[min(i, k), max(i, k)]
            s_jk = work[min(j, k), max(j, k)]
            merged = (sizes[i] * s_ik + sizes[j] * s_jk) / (sizes[i] + sizes[j])
            work[min(i, k), max(i, k)] = merged
        members[i] = members[i] + members[j]  # type: ignore[operator]
        sizes[i] += sizes[j]
        members[j] = None
        work[j, :] = -np.inf
        work[:, j] = -np.inf
        count -= 1

    clusters = [sorted(mem) for mem in members if mem is not None]
    clusters.sort(key=lambda mem: mem[0])
    return clusters


def _mean_vector(patches: np.ndarray, member_idx: Sequence[int], what: str) -> np.ndarray:
    mean = patches[list(member_idx)].astype(np.float64).mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        logger.warning("%s mean cancelled to zero; keeping first member", what)
        return normalize(patches[member_idx[0]]).astype(np.float32)
    return np.ascontiguousarray(mean / norm, dtype=np.float32)


def chunk(
    grid: PatchGrid,
    regions: Sequence[LayoutRegion],
    types: Sequence[ContentType] | None = None,
    cfg: ChunkingConfig | None = None,
) -> MultiVectorRecord:
    """Compress a patch grid into a MultiVectorRecord under the chosen mode.

    If every patch is discarded in a layout-guided mode, the whole grid
    collapses to a single whole-page mean vector (with a warning) rather
    than failing.
    """
    cfg = cfg or ChunkingConfig()
    if grid.n_patches < 1:
        raise ValueError("grid has no patches")
    if types is None:
        types = [r.content_type for r in regions]
    elif len(types) != len(regions):
        raise ValueError(f"{len(types)} types for {len(regions)} regions")
    doc_id = grid.page.page_id
    patches = np.asarray(grid.vectors)

    if cfg.mode is ChunkMode.SEMANTIC:
        clusters = average_linkage_clusters(
            patches, target_count=min(cfg.semantic_k, grid.n_patches)
        )
        rows = [_mean_vector(patches, mem, f"cluster {n}") for n, mem in enumerate(clusters)]
        prov = tuple(VectorProvenance(ref=n) for n in range(len(clusters)))
        return MultiVectorRecord(doc_id, np.stack(rows), prov)

    assignment = assign_patches(grid, regions)
    kept = assignment != DISCARDED
    if not np.any(kept):
        logger.warning(
            "all %d patches discarded on page %s under mode %s; "
            "emitting whole-page mean",
            grid.n_patches, doc_id, cfg.mode.value,
        )
        row = _mean_vector(patches, list(range(grid.n_patches)), "whole page")
        return MultiVectorRecord(
            doc_id, row[np.newaxis, :], (VectorProvenance(ref=PROVENANCE_GLOBAL),)
        )

    by_region = {r.index: r for r in regions}
    type_of = {r.index: ContentType(t) for r, t in zip(regions, types)}

    # Groups in region-index order; for type modes, keyed by first occurrence.
    groups: list[tuple[VectorProvenance, list[int]]] = []
    if cfg.mode in (ChunkMode.REGION_MEAN, ChunkMode.REGION_CLUSTER):
        for region in sorted(regions, key=lambda r: r.index):
            mine = [int(p) for p in np.flatnonzero(assignment == region.index)]
            if mine:
                groups.append(
                    (
                        VectorProvenance(
                            ref=region.index,
                            bbox=region.bbox,
                            content_type=type_of[region.index],
                        ),
                        mine,
                    )
                )
    else:
        seen: dict[ContentType, list[int]] = {}
        order: list[ContentType] = []
        for region in sorted(regions, key=lambda r: r.index):
            mine = [int(p) for p in np.flatnonzero(assignment == region.index)]
            if not mine:
                continue
            ctype = type_of[region.index]
            if ctype not in seen:
                seen[ctype] = []
                order.append(ctype)
            seen[ctype].extend(mine)
        for ctype in order:
            groups.append(
                (
                    VectorProvenance(ref=ctype.value, content_type=ctype),
                    sorted(seen[ctype]),
                )
            )

    rows = []
    prov = []
    if cfg.mode in (ChunkMode.REGION_MEAN, ChunkMode.TYPE_MEAN):
        for provenance, mine in groups:
            rows.append(_mean_vector(patches, mine, f"group {provenance.ref}"))
            prov.append(provenance)
    else:
        for provenance, mine in groups:
            local = average_linkage_clusters(
                patches[mine], merge_threshold=cfg.merge_threshold
            )
            for cluster in local:
                global_members = [mine[i] for i in cluster]
                rows.append(
                    _mean_vector(patches, global_members, f"group {provenance.ref}")
                )
                prov.append(provenance)
    return MultiVectorRecord(doc_id, np.stack(rows), tuple(prov))


class PatchChunker(BaseEstimator, TransformerMixin):
    """Transformer from (PatchGrid, regions) pairs to MultiVectorRecords."""

    def __init__(
        self,
        mode: str = "region_mean",
        semantic_k: int = 10,
        merge_threshold: float = 0.9,
    ):
        self.mode = mode
        self.semantic_k = semantic_k
        self.merge_threshold = merge_threshold

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> list[MultiVectorRecord]:
        cfg = ChunkingConfig(
            mode=ChunkMode(self.mode),
            semantic_k=self.semantic_k,
            merge_threshold=self.merge_threshold,
        )
        return [chunk(grid, regions, cfg=cfg) for grid, regions in X]


# ---------------------------------------------------------------------------
# Patch-grid files: JSON-lines manifest plus a binary vector blob.
# ---------------------------------------------------------------------------

def write_patch_grids(
    grids: Sequence[PatchGrid], manifest_path: str | Path, blob_path: str | Path
) -> None:
    """Write grids as a manifest of {"page_id", "rows", "cols", "width",
    "height"} lines plus one stacked vector blob, rows in manifest order."""
    from .store import write_vector_blob

    stacked = np.vstack([np.asarray(g.vectors, dtype=np.float32) for g in grids])
    write_vector_blob(stacked, blob_path)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for g in grids:
            fh.write(
                json.dumps(
                    {
                        "page_id": g.page.page_id,
                        "rows": g.rows,
                        "cols": g.cols,
                        "width": g.page.width,
                        "height": g.page.height,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_patch_grids(manifest_path: str | Path, blob_path: str | Path) -> list[PatchGrid]:
    from .store import read_vector_blob

    vectors = read_vector_blob(blob_path)
    grids: list[PatchGrid] = []
    offset = 0
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            rows, cols = int(obj["rows"]), int(obj["cols"])
            n = rows * cols
            if offset + n > vectors.shape[0]:
                raise ValueError(
                    f"patch-grid manifest wants more vectors than blob holds "
                    f"({offset + n} > {vectors.shape[0]})"
                )
            page = PageGeometry(
                str(obj["page_id"]), float(obj["width"]), float(obj["height"])
            )
            grids.append(
                PatchGrid(page, rows, cols, vectors[offset : offset + n].copy())
            )
            offset += n
    if offset != vectors.shape[0]:
        raise ValueError(
            f"blob holds {vectors.shape[0]} vectors but manifest consumed {offset}"
        )
    return grids
