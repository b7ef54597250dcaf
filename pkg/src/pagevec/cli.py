"""Command-line pipeline.

Subcommands mirror the library stages:

  split        detector JSONL -> crop-spec JSONL
  index        crop specs + encoder -> index directory
  query        index + queries -> run file
  eval         run file + qrels -> nDCG@k table
  stats        index -> storage summary
  attribute    explain one (query, document) MaxSim score
  sweep-alpha  build indexes across a fusion-weight grid and evaluate each

Exit codes: 0 success, 2 usage, 3 data problem, 4 adapter problem. Failures
print one JSON diagnostic line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass

import numpy as np

from . import evaluation, fusion, layout, scoring, store
from .encode import (
    EncoderInterface,
    FileEncoder,
    HttpEncoder,
    SyntheticEncoder,
    encode_request,
    query_request,
    read_token_corpus,
)
from .errors import AdapterFailure, DimMismatch, PagevecError

logger = logging.getLogger(__name__)

_DATA_EXIT = 3
_ADAPTER_EXIT = 4


@dataclass(frozen=True)
class RunConfig:
    """Validated run-wide settings shared by the heavier subcommands."""

    encoder_spec: str
    dim: int = 256
    variant: str = "fused"
    alpha: float = 0.7
    top_k: int = 5
    eval_k: int = 5

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"--dim must be >= 2, got {self.dim}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"--alpha must be in [0, 1], got {self.alpha}")
        if self.top_k < 1 or self.eval_k < 1:
            raise ValueError("--top-k and --k must be >= 1")
        fusion.Variant(self.variant)
        kind = self.encoder_spec.split(":", 1)[0]
        if kind not in ("mock", "file", "http"):
            raise ValueError(
                f"encoder spec must start with mock:, file:, or http:, got {self.encoder_spec!r}"
            )


def build_encoder(spec: str, dim: int, tokens_path: str | None = None) -> EncoderInterface:
    """Turn an encoder spec string into an adapter.

    mock:<seed>  deterministic synthetic encoder (token bags from --tokens)
    file:<path>  precomputed embeddings
    http:<url>   remote embedding service
    """
    kind, _, arg = spec.partition(":")
    if kind == "mock":
        seed = int(arg) if arg else 0
        corpus = read_token_corpus(tokens_path) if tokens_path else None
        return SyntheticEncoder(corpus=corpus, seed=seed, dim=dim)
    if kind == "file":
        if not arg:
            raise ValueError("file: encoder spec needs a path, e.g. file:emb.jsonl")
        return FileEncoder(arg, dim=dim)
    if kind == "http":
        if not arg:
            raise ValueError("http: encoder spec needs a url, e.g. http://host:8000")
        # "http://host" keeps its scheme; "http:<full-url>" unwraps to <full-url>.
        url = f"http:{arg}" if arg.startswith("//") else arg
        return HttpEncoder(url, dim=dim)
    raise ValueError(f"unknown encoder spec {spec!r}")


def _layout_config(args) -> layout.LayoutParseConfig:
    return layout.LayoutParseConfig(
        min_area_ratio=args.tau,
        max_regions=args.max_regions,
        grid_rows=args.grid_rows,
        grid_cols=args.grid_cols,
        band_epsilon=args.band_epsilon,
    )


def cmd_split(args) -> int:
    pages = layout.read_detector_file(args.detections)
    cfg = _layout_config(args)
    regions = [(p.page.page_id, layout.split_page(p.page, p.detections, cfg)) for p in pages]
    layout.write_crop_specs(regions, args.out)
    total = sum(len(r) for _, r in regions)
    print(f"split {len(regions)} pages into {total} regions -> {args.out}")
    return 0


def cmd_index(args) -> int:
    cfg = RunConfig(
        encoder_spec=args.encoder, dim=args.dim, variant=args.variant, alpha=args.alpha
    )
    adapter = build_encoder(cfg.encoder_spec, cfg.dim, args.tokens)
    regions_by_page = layout.read_crop_specs(args.regions)
    if not regions_by_page:
        raise ValueError(f"no regions found in {args.regions}")
    needs_global = cfg.variant in ("fused", "global_append")
    pages = fusion.embed_pages(regions_by_page, adapter, include_global=needs_global)
    builder = fusion.RepresentationBuilder(variant=cfg.variant, alpha=cfg.alpha)
    records = builder.transform(pages)
    store.save(records, args.out, variant=cfg.variant, alpha=cfg.alpha)
    total = sum(rec.k for rec in records)
    print(f"indexed {len(records)} documents ({total} vectors, dim {cfg.dim}) -> {args.out}")
    return 0


def _encode_queries(queries, adapter) -> dict[str, np.ndarray]:
    return {
        q.query_id: encode_request(query_request(q.text_for_encoding), adapter) for q in queries
    }


def cmd_query(args) -> int:
    index = store.load(args.index)
    queries = evaluation.read_queries(args.queries)
    if not queries:
        raise ValueError(f"no queries found in {args.queries}")
    adapter = build_encoder(args.encoder, index.dim, args.tokens)
    embedded = _encode_queries(queries, adapter)
    results = {
        qid: scoring.rank(
            q_vec, index, top_k=args.top_k, scorer=args.scorer, n_workers=args.workers
        )
        for qid, q_vec in embedded.items()
    }
    evaluation.write_run(results, args.out, tag=args.tag)
    print(f"ranked {len(results)} queries over {len(index)} documents -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    run = evaluation.read_run(args.run)
    qrels = evaluation.read_qrels(args.qrels)
    report = evaluation.ndcg_at_k(run, qrels, k=args.k)
    for qid in sorted(report.per_query):
        print(f"{qid}\t{report.per_query[qid]:.6f}")
    print(
        f"mean\t{report.mean:.6f}\tqueries={report.evaluated}\tskipped={len(report.skipped)}"
    )
    return 0


def cmd_stats(args) -> int:
    index = store.load(args.index)
    stats = store.storage_stats(index, grid_baseline=args.grid_baseline)
    print(f"num_docs\t{stats.num_docs}")
    print(f"avg_vectors_per_doc\t{stats.avg_vectors_per_doc:.6f}")
    print(f"total_bytes\t{stats.total_bytes}")
    print(f"reduction_vs_grid\t{stats.reduction_vs_grid:.6f}")
    print(f"reduction_pct\t{stats.reduction_vs_grid * 100.0:.2f}%")
    return 0


def cmd_attribute(args) -> int:
    index = store.load(args.index)
    queries = {q.query_id: q for q in evaluation.read_queries(args.queries)}
    if args.query_id not in queries:
        raise ValueError(f"query {args.query_id!r} not found in {args.queries}")
    record = index.get(args.doc_id)
    adapter = build_encoder(args.encoder, index.dim, args.tokens)
    q_vec = encode_request(query_request(queries[args.query_id].text_for_encoding), adapter)
    report = evaluation.attribute(q_vec, record)
    payload = {
        "query_id": args.query_id,
        "doc_id": report.doc_id,
        "score": report.score,
        "entries": [
            {
                "query_vector": e.query_vector,
                "doc_vector": e.doc_vector,
                "ref": e.provenance.ref,
                "bbox": e.provenance.bbox.as_list() if e.provenance.bbox else None,
                "content_type": (
                    e.provenance.content_type.value if e.provenance.content_type else None
                ),
                "similarity": e.similarity,
            }
            for e in report.entries
        ],
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _parse_alphas(text: str | None) -> list[float]:
    if not text:
        return [round(0.1 * i, 1) for i in range(1, 10)]
    alphas = [float(tok) for tok in text.split(",") if tok.strip()]
    if not alphas:
        raise ValueError("--alphas parsed to an empty list")
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"alpha {a} outside [0, 1]")
    return alphas


def cmd_sweep_alpha(args) -> int:
    cfg = RunConfig(
        encoder_spec=args.encoder, dim=args.dim, top_k=args.top_k, eval_k=args.k
    )
    alphas = _parse_alphas(args.alphas)
    adapter = build_encoder(cfg.encoder_spec, cfg.dim, args.tokens)
    regions_by_page = layout.read_crop_specs(args.regions)
    if not regions_by_page:
        raise ValueError(f"no regions found in {args.regions}")
    queries = evaluation.read_queries(args.queries)
    qrels = evaluation.read_qrels(args.qrels)

    # Encode once; only the fusion weight changes between sweep points.
    pages = fusion.embed_pages(regions_by_page, adapter, include_global=True)
    embedded = _encode_queries(queries, adapter)

    for alpha in alphas:
        fcfg = fusion.FusionConfig(alpha=alpha, variant=fusion.Variant.FUSED)
        records = [fusion.build_record(page, fcfg) for page in pages]
        index = store.RetrievalIndex.from_records(records, variant="fused", alpha=alpha)
        results = {
            qid: scoring.rank(q_vec, index, top_k=cfg.top_k) for qid, q_vec in embedded.items()
        }
        report = evaluation.ndcg_at_k(results, qrels, k=cfg.eval_k)
        print(f"{alpha:.2f}\t{report.mean:.6f}\tqueries={report.evaluated}")
    return 0


def _add_layout_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, default=0.01,
                   help="minimum region area as a fraction of page area")
    p.add_argument("--max-regions", type=int, default=20,
                   help="cap on regions kept per page")
    p.add_argument("--grid-rows", type=int, default=3,
                   help="fallback grid rows for detector-empty pages")
    p.add_argument("--grid-cols", type=int, default=3,
                   help="fallback grid columns for detector-empty pages")
    p.add_argument("--band-epsilon", type=float, default=0.02,
                   help="reading-order band tolerance, fraction of page height")


def _add_encoder_flags(p: argparse.ArgumentParser, with_dim: bool = True) -> None:
    p.add_argument("--encoder", required=True,
                   help="encoder spec: mock:<seed>, file:<path>, or http:<url>")
    p.add_argument("--tokens", default=None,
                   help="token-bag corpus JSONL (used by the mock encoder)")
    if with_dim:
        p.add_argument("--dim", type=int, default=256,
                       help="embedding dimensionality")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pagevec",
        description="Layout-aware multi-vector document retrieval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="turn detector output into crop regions")
    p.add_argument("--detections", required=True, help="detector output JSONL")
    p.add_argument("--out", required=True, help="crop-spec JSONL to write")
    _add_layout_flags(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("index", help="embed crop regions and build an index")
    p.add_argument("--regions", required=True, help="crop-spec JSONL from split")
    p.add_argument("--out", required=True, help="index directory to write")
    p.add_argument("--variant", default="fused",
                   choices=[v.value for v in fusion.Variant],
                   help="document representation variant")
    p.add_argument("--alpha", type=float, default=0.7,
                   help="global weight for the fused variant")
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="rank an index against a query file")
    p.add_argument("--index", required=True, help="index directory")
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--out", required=True, help="run file to write")
    p.add_argument("--top-k", type=int, default=5, help="hits to keep per query")
    p.add_argument("--scorer", default="maxsim", choices=list(scoring.SCORER_NAMES),
                   help="scoring rule (non-maxsim rules need a global_append index)")
    p.add_argument("--workers", type=int, default=1, help="scoring threads")
    p.add_argument("--tag", default="pagevec", help="run-file tag column")
    _add_encoder_flags(p, with_dim=False)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="score a run file against qrels with nDCG@k")
    p.add_argument("--run", required=True, help="run file")
    p.add_argument("--qrels", required=True, help="qrels file")
    p.add_argument("--k", type=int, default=5, help="nDCG cutoff")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="report index storage statistics")
    p.add_argument("--index", required=True, help="index directory")
    p.add_argument("--grid-baseline", type=int, default=768,
                   help="dense patch count to compare against")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("attribute", help="explain one query-document score")
    p.add_argument("--index", required=True, help="index directory")
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--query-id", required=True, help="query to explain")
    p.add_argument("--doc-id", required=True, help="document to explain")
    _add_encoder_flags(p, with_dim=False)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("sweep-alpha", help="evaluate nDCG across fusion weights")
    p.add_argument("--regions", required=True, help="crop-spec JSONL from split")
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--qrels", required=True, help="qrels file")
    p.add_argument("--alphas", default=None,
                   help="comma-separated weights (default 0.1..0.9 step 0.1)")
    p.add_argument("--top-k", type=int, default=5, help="hits to keep per query")
    p.add_argument("--k", type=int, default=5, help="nDCG cutoff")
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_sweep_alpha)

    return parser


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(
        json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
    )
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors and --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (AdapterFailure, DimMismatch) as exc:
        return _fail(exc, _ADAPTER_EXIT)
    except (PagevecError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        return _fail(exc, _DATA_EXIT)


if __name__ == "__main__":
    sys.exit(main())
