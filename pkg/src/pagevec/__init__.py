"""pagevec: layout-aware multi-vector document retrieval.

Pages are split into layout regions, each region (and the whole page) is
embedded, the vectors are fused into a compact per-document set, and
queries score documents by late interaction: every query vector picks its
best document vector and the picks sum.
"""

from .chunking import (
    DISCARDED,
    ChunkingConfig,
    ChunkMode,
    PatchChunker,
    PatchGrid,
    assign_patches,
    average_linkage_clusters,
    chunk,
    read_patch_grids,
    write_patch_grids,
)
from .encode import (
    EncodeKind,
    EncodeRequest,
    EncoderInterface,
    FileEncoder,
    HttpEncoder,
    PageTokens,
    SyntheticEncoder,
    TokenCorpus,
    encode_request,
    encode_requests,
    normalize,
    page_request,
    query_request,
    read_token_corpus,
    region_request,
    synthetic_embed,
    write_embedding_file,
    write_token_corpus,
)
from .errors import (
    AdapterFailure,
    CorruptIndex,
    DegenerateVector,
    DimMismatch,
    EmptyBag,
    EmptyIndex,
    GeometryMismatch,
    InvalidGeometry,
    MalformedRun,
    PagevecError,
    VersionMismatch,
    VocabTooSmall,
)
from .evaluation import (
    AttributionEntry,
    AttributionReport,
    ConcentratedCorpus,
    NdcgReport,
    Query,
    attribute,
    default_vocab,
    gen_concentrated_corpus,
    ndcg_at_k,
    read_qrels,
    read_queries,
    read_run,
    to_detector_pages,
    write_qrels,
    write_queries,
    write_run,
)
from .fusion import (
    PROVENANCE_GLOBAL,
    FusionConfig,
    MultiVectorRecord,
    PageEmbeddings,
    RepresentationBuilder,
    VectorProvenance,
    Variant,
    build_fused_record,
    build_global_append_record,
    build_local_record,
    build_record,
    build_type_avg_record,
    embed_pages,
    fuse_global_local,
    split_global,
    validate_record,
)
from .layout import (
    DEFAULT_CATEGORY_MAP,
    BoundingBox,
    ContentType,
    DetectionRecord,
    LayoutParseConfig,
    LayoutRegion,
    LayoutSplitter,
    PageDetections,
    PageGeometry,
    clamp_to_page,
    grid_fallback,
    map_category_id,
    read_crop_specs,
    read_detector_file,
    reading_order,
    sort_reading_order,
    split_page,
    write_crop_specs,
)
from .scoring import (
    MaxSimResult,
    MaxSimRetriever,
    RelevanceScore,
    combined_region_score,
    maxsim,
    rank,
    resolve_scorer,
    single_vector_score,
)
from .store import (
    BLOB_OVERHEAD,
    FORMAT_VERSION,
    RetrievalIndex,
    StorageStats,
    load,
    read_vector_blob,
    save,
    storage_stats,
    write_vector_blob,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterFailure", "AttributionEntry", "AttributionReport", "BLOB_OVERHEAD",
    "BoundingBox", "ChunkMode", "ChunkingConfig", "ConcentratedCorpus",
    "ContentType", "CorruptIndex", "DEFAULT_CATEGORY_MAP", "DISCARDED",
    "DegenerateVector", "DetectionRecord", "DimMismatch", "EmptyBag",
    "EmptyIndex", "EncodeKind", "EncodeRequest", "EncoderInterface",
    "FORMAT_VERSION", "FileEncoder", "FusionConfig", "GeometryMismatch",
    "HttpEncoder", "InvalidGeometry", "LayoutParseConfig", "LayoutRegion",
    "LayoutSplitter", "MalformedRun", "MaxSimResult", "MaxSimRetriever",
    "MultiVectorRecord", "NdcgReport", "PROVENANCE_GLOBAL", "PageDetections",
    "PageEmbeddings", "PageGeometry", "PageTokens", "PagevecError",
    "PatchChunker", "PatchGrid", "Query", "RelevanceScore",
    "RepresentationBuilder", "RetrievalIndex", "StorageStats",
    "SyntheticEncoder", "TokenCorpus", "Variant", "VectorProvenance",
    "VersionMismatch", "VocabTooSmall", "assign_patches", "attribute",
    "average_linkage_clusters", "build_fused_record",
    "build_global_append_record", "build_local_record", "build_record",
    "build_type_avg_record", "chunk", "clamp_to_page",
    "combined_region_score", "default_vocab", "embed_pages", "encode_request",
    "encode_requests", "fuse_global_local", "gen_concentrated_corpus",
    "grid_fallback", "load", "map_category_id", "maxsim", "ndcg_at_k",
    "normalize", "page_request", "query_request", "rank", "read_crop_specs",
    "read_detector_file", "read_patch_grids", "read_qrels", "read_queries",
    "read_run", "read_token_corpus", "read_vector_blob", "reading_order",
    "region_request", "resolve_scorer", "save", "single_vector_score",
    "sort_reading_order", "split_global", "split_page", "storage_stats",
    "synthetic_embed", "to_detector_pages", "validate_record", "write_crop_specs",
    "write_embedding_file", "write_patch_grids", "write_qrels", "write_queries",
    "write_run", "write_token_corpus", "write_vector_blob",
]
