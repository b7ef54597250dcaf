"""Retrieval evaluation and the synthetic benchmark corpus.

File formats follow the usual TREC conventions:

  qrels  one judgment per line:  query_id 0 doc_id grade
  run    one hit per line:       query_id Q0 doc_id rank score tag

nDCG@k uses exponential gain (2^grade - 1), a 1/log2(rank + 1) discount,
and an ideal ranking built from all judged documents truncated at k.
Queries whose ideal gain is zero are skipped and reported, not averaged in.

gen_concentrated_corpus builds a deterministic token-bag corpus where each
region of each document owns a distinctive disjoint vocabulary slice and
every page shares one filler bag, so region-level evidence is concentrated
while page-level evidence is diluted. Each query samples tokens from one
region of one document, making that document its only relevant answer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import json

import numpy as np

from .encode import PageTokens, TokenCorpus
from .errors import MalformedRun, VocabTooSmall
from .fusion import MultiVectorRecord, VectorProvenance
from .layout import (
    BoundingBox,
    ContentType,
    DetectionRecord,
    LayoutRegion,
    PageDetections,
    PageGeometry,
)
from .scoring import RelevanceScore, maxsim

logger = logging.getLogger(__name__)

Qrels = dict[str, dict[str, int]]


# ---------------------------------------------------------------------------
# Qrels and run files.
# ---------------------------------------------------------------------------

def read_qrels(path: str | Path) -> Qrels:
    """Read TREC qrels; both 4-column and bare 3-column lines are accepted."""
    qrels: Qrels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) == 4:
                qid, _, doc_id, grade = parts
            elif len(parts) == 3:
                qid, doc_id, grade = parts
            else:
                raise MalformedRun(f"{path}:{lineno}: qrels line has {len(parts)} fields")
            try:
                grade_val = int(grade)
            except ValueError:
                raise MalformedRun(f"{path}:{lineno}: grade {grade!r} is not an integer")
            if grade_val < 0:
                raise MalformedRun(f"{path}:{lineno}: negative grade {grade_val}")
            qrels.setdefault(qid, {})[doc_id] = grade_val
    return qrels


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels):
            for doc_id in sorted(qrels[qid]):
                fh.write(f"{qid} 0 {doc_id} {qrels[qid][doc_id]}\n")


RunHit = tuple[str, int, float]  # (doc_id, rank, score)


def write_run(
    results: Mapping[str, Sequence[RelevanceScore]], path: str | Path, tag: str = "pagevec"
) -> None:
    """Write ranked results in run format, ranks dense from 1."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, hits in results.items():
            for rank_pos, hit in enumerate(hits, start=1):
                fh.write(f"{qid} Q0 {hit.doc_id} {rank_pos} {hit.value:.6f} {tag}\n")


def read_run(path: str | Path) -> dict[str, list[RunHit]]:
    """Read a run file; ranks must be dense from 1 with non-increasing scores."""
    run: dict[str, list[RunHit]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise MalformedRun(f"{path}:{lineno}: run line has {len(parts)} fields")
            qid, _, doc_id, rank_s, score_s, _tag = parts
            try:
                rank_pos, score = int(rank_s), float(score_s)
            except ValueError:
                raise MalformedRun(f"{path}:{lineno}: bad rank/score {rank_s!r} {score_s!r}")
            hits = run.setdefault(qid, [])
            if rank_pos != len(hits) + 1:
                raise MalformedRun(
                    f"{path}:{lineno}: rank {rank_pos} for {qid!r}, expected {len(hits) + 1}"
                )
            if hits and score > hits[-1][2]:
                raise MalformedRun(
                    f"{path}:{lineno}: score {score} increases over rank {len(hits)}"
                )
            hits.append((doc_id, rank_pos, score))
    return run


# ---------------------------------------------------------------------------
# nDCG.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NdcgReport:
    per_query: dict[str, float]
    mean: float
    evaluated: int
    skipped: tuple[str, ...]


def _ranked_doc_ids(hits) -> list[str]:
    out = []
    for hit in hits:
        if isinstance(hit, str):
            out.append(hit)
        elif isinstance(hit, RelevanceScore):
            out.append(hit.doc_id)
        else:
            out.append(hit[0])
    return out


def _dcg(grades: Sequence[int]) -> float:
    return sum(
        (2.0 ** g - 1.0) / math.log2(pos + 1) for pos, g in enumerate(grades, start=1)
    )


def ndcg_at_k(run: Mapping[str, Sequence], qrels: Qrels, k: int = 5) -> NdcgReport:
    """nDCG@k per query and the mean over queries with any relevant judgment.

    Unjudged documents in the run count as grade 0. Queries with zero ideal
    gain (nothing relevant judged) are skipped and listed in the report.
    The mean is accumulated in ascending query-id order.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    per_query: dict[str, float] = {}
    skipped: list[str] = []
    for qid in sorted(run):
        judged = qrels.get(qid, {})
        ideal = sorted(judged.values(), reverse=True)[:k]
        idcg = _dcg(ideal)
        if idcg <= 0.0:
            skipped.append(qid)
            continue
        ranked = _ranked_doc_ids(run[qid])[:k]
        dcg = _dcg([judged.get(doc_id, 0) for doc_id in ranked])
        per_query[qid] = dcg / idcg

    qids = sorted(per_query)
    mean = sum(per_query[q] for q in qids) / len(qids) if qids else 0.0
    if skipped:
        logger.info("ndcg@%d skipped %d queries with zero ideal gain", k, len(skipped))
    return NdcgReport(
        per_query=per_query, mean=mean, evaluated=len(qids), skipped=tuple(skipped)
    )


# ---------------------------------------------------------------------------
# Score attribution.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttributionEntry:
    """Which document vector one query vector matched, and how strongly."""

    query_vector: int
    doc_vector: int
    provenance: VectorProvenance
    similarity: float


@dataclass(frozen=True)
class AttributionReport:
    doc_id: str
    score: float
    entries: tuple[AttributionEntry, ...]


def attribute(query, record: MultiVectorRecord) -> AttributionReport:
    """Explain a MaxSim score: per query vector, the winning record row.

    Shares the maxsim code path, so the winners here are exactly the argmax
    rows that produced the score.
    """
    result = maxsim(query, record)
    entries = tuple(
        AttributionEntry(
            query_vector=i,
            doc_vector=w,
            provenance=record.provenance[w],
            similarity=s,
        )
        for i, (w, s) in enumerate(zip(result.winners, result.winner_sims))
    )
    return AttributionReport(doc_id=record.doc_id, score=result.value, entries=entries)


# ---------------------------------------------------------------------------
# Queries file.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Query:
    """One evaluation query: free text, an explicit token bag, or both."""

    query_id: str
    text: str | None = None
    tokens: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.query_id:
            raise ValueError("query_id must be non-empty")
        if self.text is None and self.tokens is None:
            raise ValueError(f"query {self.query_id!r} needs text or tokens")

    @property
    def text_for_encoding(self) -> str:
        if self.text is not None:
            return self.text
        return " ".join(self.tokens)


def read_queries(path: str | Path) -> list[Query]:
    """Read queries as JSON lines: {"query_id", "text"?, "tokens"?}."""
    queries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            qid = str(obj["query_id"])
            if qid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate query_id {qid!r}")
            seen.add(qid)
            tokens = obj.get("tokens")
            queries.append(
                Query(
                    query_id=qid,
                    text=obj.get("text"),
                    tokens=tuple(str(t) for t in tokens) if tokens is not None else None,
                )
            )
    return queries


def write_queries(queries: Sequence[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            obj: dict = {"query_id": q.query_id}
            if q.text is not None:
                obj["text"] = q.text
            if q.tokens is not None:
                obj["tokens"] = list(q.tokens)
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Synthetic concentrated corpus.
# ---------------------------------------------------------------------------

_GENERATED_TYPES = (
    ContentType.TEXT,
    ContentType.TABLE,
    ContentType.FIGURE,
    ContentType.TITLE,
    ContentType.FORMULA,
)

# Inverse of the detector category convention, for synthesizing detections.
_TYPE_TO_CATEGORY = {
    ContentType.TITLE: 0,
    ContentType.TEXT: 1,
    ContentType.OTHER: 2,
    ContentType.FIGURE: 3,
    ContentType.FIGURE_CAPTION: 4,
    ContentType.TABLE: 5,
    ContentType.TABLE_CAPTION: 6,
    ContentType.TABLE_FOOTNOTE: 7,
    ContentType.FORMULA: 8,
    ContentType.FORMULA_CAPTION: 9,
}


def default_vocab(size: int) -> list[str]:
    return [f"w{i:05d}" for i in range(size)]


@dataclass
class ConcentratedCorpus:
    """Everything gen_concentrated_corpus hands back."""

    token_corpus: TokenCorpus
    pages: dict[str, PageGeometry]
    regions: dict[str, list[LayoutRegion]]
    queries: list[Query]
    qrels: Qrels


def gen_concentrated_corpus(
    num_docs: int,
    regions_per_doc: int,
    vocab: Sequence[str],
    seed: int,
    tokens_per_region: int = 12,
    filler_tokens: int = 20,
    query_tokens: int = 2,
) -> ConcentratedCorpus:
    """Build a deterministic corpus with region-concentrated evidence.

    Every region of every document receives a disjoint slice of the
    vocabulary; every page-level bag is the union of its regions' tokens
    plus one filler bag shared across all documents. One query is generated
    per document, sampling query_tokens tokens from a single region, so that
    document is the query's only relevant answer.
    """
    if num_docs < 1 or regions_per_doc < 1:
        raise ValueError("need at least one document and one region per document")
    if not 1 <= query_tokens <= tokens_per_region:
        raise ValueError("query_tokens must be in [1, tokens_per_region]")
    vocab = [str(t) for t in vocab]
    if len(set(vocab)) != len(vocab):
        raise ValueError("vocab contains duplicate tokens")
    needed = num_docs * regions_per_doc * tokens_per_region + filler_tokens
    if len(vocab) < needed:
        raise VocabTooSmall(
            f"need {needed} distinct tokens for {num_docs} docs x {regions_per_doc} "
            f"regions x {tokens_per_region} tokens + {filler_tokens} filler, "
            f"got {len(vocab)}"
        )

    rng = np.random.default_rng(seed)
    shuffled = [vocab[i] for i in rng.permutation(len(vocab))]
    filler = tuple(shuffled[:filler_tokens])
    cursor = filler_tokens

    width, height = 1000.0, 1000.0
    strip = height / regions_per_doc
    corpus = TokenCorpus()
    pages: dict[str, PageGeometry] = {}
    regions: dict[str, list[LayoutRegion]] = {}

    for d in range(num_docs):
        page_id = f"d{d:04d}"
        region_tokens: dict[int, tuple[str, ...]] = {}
        page_regions: list[LayoutRegion] = []
        for r in range(regions_per_doc):
            bag = tuple(shuffled[cursor : cursor + tokens_per_region])
            cursor += tokens_per_region
            region_tokens[r] = bag
            page_regions.append(
                LayoutRegion(
                    index=r,
                    bbox=BoundingBox(0.0, r * strip, width, (r + 1) * strip),
                    content_type=_GENERATED_TYPES[r % len(_GENERATED_TYPES)],
                    area_ratio=1.0 / regions_per_doc,
                )
            )
        page_bag = tuple(t for r in range(regions_per_doc) for t in region_tokens[r])
        corpus.pages[page_id] = PageTokens(
            region_tokens=region_tokens, page_tokens=page_bag + filler
        )
        pages[page_id] = PageGeometry(page_id, width, height)
        regions[page_id] = page_regions

    queries: list[Query] = []
    qrels: Qrels = {}
    for d in range(num_docs):
        page_id = f"d{d:04d}"
        target_region = int(rng.integers(regions_per_doc))
        bag = corpus.pages[page_id].region_tokens[target_region]
        picks = rng.choice(len(bag), size=query_tokens, replace=False)
        qid = f"q{d:04d}"
        queries.append(Query(query_id=qid, tokens=tuple(bag[int(p)] for p in sorted(picks))))
        qrels[qid] = {page_id: 1}

    return ConcentratedCorpus(
        token_corpus=corpus, pages=pages, regions=regions, queries=queries, qrels=qrels
    )


def to_detector_pages(corpus: ConcentratedCorpus) -> list[PageDetections]:
    """Render the generated layout as detector output, for CLI pipelines."""
    out = []
    for page_id in corpus.pages:
        dets = tuple(
            DetectionRecord(
                bbox=region.bbox,
                category_id=_TYPE_TO_CATEGORY[region.content_type],
                score=1.0,
            )
            for region in corpus.regions[page_id]
        )
        out.append(PageDetections(page=corpus.pages[page_id], detections=dets))
    return out
