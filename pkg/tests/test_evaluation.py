"""Evaluation harness: qrels/run files, nDCG, attribution, synthetic corpus."""

from __future__ import annotations

import math

import numpy as np
import pytest

from pagevec.encode import SyntheticEncoder, synthetic_embed
from pagevec.errors import MalformedRun, VocabTooSmall
from pagevec.evaluation import (
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
from pagevec.fusion import MultiVectorRecord, VectorProvenance
from pagevec.scoring import RelevanceScore, maxsim


def _reference_ndcg(run: dict[str, list[str]], qrels, k):
    """From-scratch nDCG@k evaluator used as an independent oracle."""
    per_query = {}
    for qid, ranked in run.items():
        judged = qrels.get(qid, {})
        gains = sorted(judged.values(), reverse=True)
        idcg = 0.0
        for pos, g in enumerate(gains[:k], start=1):
            idcg += (2.0 ** g - 1.0) / math.log2(pos + 1)
        if idcg == 0.0:
            continue
        dcg = 0.0
        for pos, doc in enumerate(ranked[:k], start=1):
            dcg += (2.0 ** judged.get(doc, 0) - 1.0) / math.log2(pos + 1)
        per_query[qid] = dcg / idcg
    if not per_query:
        return per_query, 0.0
    return per_query, sum(per_query.values()) / len(per_query)


def _record(doc_id, vectors):
    vectors = np.asarray(vectors, dtype=np.float32)
    prov = tuple(VectorProvenance(ref=i) for i in range(vectors.shape[0]))
    return MultiVectorRecord(doc_id=doc_id, vectors=vectors, provenance=prov)


def _unit_rows(rng, n, dim):
    mat = rng.normal(size=(n, dim))
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    return mat.astype(np.float32)


# ---------------------------------------------------------------------------
# qrels files


def test_qrels_round_trip(tmp_path):
    qrels = {"q1": {"d1": 2, "d2": 0}, "q2": {"d9": 1}}
    path = tmp_path / "qrels.txt"
    write_qrels(qrels, path)
    assert read_qrels(path) == qrels


def test_qrels_three_column_form(tmp_path):
    path = tmp_path / "qrels.txt"
    path.write_text("q1 d1 2\nq1 d2 0\n", encoding="utf-8")
    assert read_qrels(path) == {"q1": {"d1": 2, "d2": 0}}


def test_qrels_bad_grade(tmp_path):
    path = tmp_path / "qrels.txt"
    path.write_text("q1 0 d1 high\n", encoding="utf-8")
    with pytest.raises(MalformedRun):
        read_qrels(path)


def test_qrels_negative_grade(tmp_path):
    path = tmp_path / "qrels.txt"
    path.write_text("q1 0 d1 -1\n", encoding="utf-8")
    with pytest.raises(MalformedRun):
        read_qrels(path)


def test_qrels_wrong_field_count(tmp_path):
    path = tmp_path / "qrels.txt"
    path.write_text("q1 0 d1 1 extra\n", encoding="utf-8")
    with pytest.raises(MalformedRun):
        read_qrels(path)


# ---------------------------------------------------------------------------
# run files


def _results(**kw):
    out = {}
    for qid, pairs in kw.items():
        out[qid] = [RelevanceScore(doc_id=d, value=v) for d, v in pairs]
    return out


def test_run_round_trip(tmp_path):
    path = tmp_path / "run.txt"
    write_run(_results(q1=[("d2", 1.5), ("d1", 0.25)]), path, tag="trial")
    run = read_run(path)
    assert list(run) == ["q1"]
    assert run["q1"] == [("d2", 1, 1.5), ("d1", 2, 0.25)]
    text = path.read_text()
    assert "q1 Q0 d2 1 1.500000 trial" in text


def test_run_rank_gap_rejected(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text("q1 Q0 d1 1 0.9 t\nq1 Q0 d2 3 0.5 t\n", encoding="utf-8")
    with pytest.raises(MalformedRun):
        read_run(path)


def test_run_increasing_score_rejected(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text("q1 Q0 d1 1 0.5 t\nq1 Q0 d2 2 0.9 t\n", encoding="utf-8")
    with pytest.raises(MalformedRun):
        read_run(path)


def test_run_five_fields_rejected(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text("q1 Q0 d1 1 0.5\n", encoding="utf-8")
    with pytest.raises(MalformedRun):
        read_run(path)


def test_run_interleaved_queries_ok(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text(
        "q1 Q0 d1 1 0.9 t\nq2 Q0 d7 1 0.8 t\nq1 Q0 d2 2 0.4 t\n", encoding="utf-8"
    )
    run = read_run(path)
    assert [h[0] for h in run["q1"]] == ["d1", "d2"]
    assert [h[0] for h in run["q2"]] == ["d7"]


# ---------------------------------------------------------------------------
# nDCG


def test_ndcg_perfect_single_relevant():
    report = ndcg_at_k({"q1": ["hit", "x", "y"]}, {"q1": {"hit": 1}}, k=5)
    assert report.per_query["q1"] == pytest.approx(1.0)
    assert report.mean == pytest.approx(1.0)


def test_ndcg_hand_example_two_relevant_at_2_and_4():
    run = {"q": ["n1", "rel1", "n2", "rel2", "n3"]}
    qrels = {"q": {"rel1": 1, "rel2": 1}}
    report = ndcg_at_k(run, qrels, k=5)
    dcg = 1.0 / math.log2(3) + 1.0 / math.log2(5)
    idcg = 1.0 + 1.0 / math.log2(3)
    assert report.per_query["q"] == pytest.approx(dcg / idcg, abs=1e-12)
    assert report.per_query["q"] == pytest.approx(0.6510, abs=1e-4)


def test_ndcg_miss_is_zero():
    report = ndcg_at_k({"q": ["a", "b", "c"]}, {"q": {"z": 2}}, k=3)
    assert report.per_query["q"] == 0.0


def test_ndcg_zero_idcg_skipped_and_reported():
    run = {"q1": ["a"], "q2": ["b"]}
    qrels = {"q1": {"a": 1}, "q2": {"b": 0}}
    report = ndcg_at_k(run, qrels, k=5)
    assert report.evaluated == 1
    assert report.skipped == ("q2",)
    assert "q2" not in report.per_query


def test_ndcg_k_cutoff_ignores_tail():
    run = {"q": ["x1", "x2", "rel"]}
    qrels = {"q": {"rel": 1}}
    assert ndcg_at_k(run, qrels, k=2).per_query["q"] == 0.0
    assert ndcg_at_k(run, qrels, k=3).per_query["q"] > 0.0


def test_ndcg_graded_gains():
    run = {"q": ["lo", "hi"]}
    qrels = {"q": {"hi": 2, "lo": 1}}
    report = ndcg_at_k(run, qrels, k=5)
    dcg = 1.0 / math.log2(2) + 3.0 / math.log2(3)
    idcg = 3.0 / math.log2(2) + 1.0 / math.log2(3)
    assert report.per_query["q"] == pytest.approx(dcg / idcg, abs=1e-12)


def test_ndcg_unjudged_docs_count_zero():
    run = {"q": ["mystery", "rel"]}
    qrels = {"q": {"rel": 1}}
    report = ndcg_at_k(run, qrels, k=5)
    assert report.per_query["q"] == pytest.approx(1.0 / math.log2(3), abs=1e-12)


def test_ndcg_matches_reference_fuzz():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n_docs = int(rng.integers(3, 20))
        docs = [f"d{i}" for i in range(n_docs)]
        n_q = int(rng.integers(1, 6))
        run = {}
        qrels = {}
        for qi in range(n_q):
            qid = f"q{qi}"
            perm = rng.permutation(n_docs)
            depth = int(rng.integers(1, n_docs + 1))
            run[qid] = [docs[i] for i in perm[:depth]]
            judged = {}
            for doc in docs:
                if rng.random() < 0.3:
                    judged[doc] = int(rng.integers(0, 4))
            if judged:
                qrels[qid] = judged
        k = int(rng.integers(1, 8))
        report = ndcg_at_k(run, qrels, k=k)
        ref_per_query, ref_mean = _reference_ndcg(run, qrels, k)
        assert set(report.per_query) == set(ref_per_query)
        for qid, val in report.per_query.items():
            assert val == pytest.approx(ref_per_query[qid], abs=1e-6)
            assert 0.0 <= val <= 1.0 + 1e-12
        assert report.mean == pytest.approx(ref_mean, abs=1e-6)


def test_ndcg_monotone_under_rank_improvement():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n_docs = 10
        docs = [f"d{i}" for i in range(n_docs)]
        ranked = list(rng.permutation(docs))
        rel_doc = docs[int(rng.integers(n_docs))]
        qrels = {"q": {rel_doc: 1}}
        pos = ranked.index(rel_doc)
        if pos == 0:
            continue
        improved = ranked.copy()
        improved[pos - 1], improved[pos] = improved[pos], improved[pos - 1]
        before = ndcg_at_k({"q": ranked}, qrels, k=5).per_query["q"]
        after = ndcg_at_k({"q": improved}, qrels, k=5).per_query["q"]
        assert after >= before - 1e-12


def test_ndcg_accepts_relevance_scores_and_hits():
    hits = [RelevanceScore(doc_id="rel", value=0.9), RelevanceScore(doc_id="x", value=0.1)]
    qrels = {"q": {"rel": 1}}
    assert ndcg_at_k({"q": hits}, qrels, k=5).per_query["q"] == pytest.approx(1.0)
    triples = [("rel", 1, 0.9), ("x", 2, 0.1)]
    assert ndcg_at_k({"q": triples}, qrels, k=5).per_query["q"] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# attribution


def test_attribute_k1_all_to_vector_zero():
    rng = np.random.default_rng(2)
    rec = _record("d", _unit_rows(rng, 1, 8))
    q = _unit_rows(rng, 3, 8)
    report = attribute(q, rec)
    assert [e.doc_vector for e in report.entries] == [0, 0, 0]


def test_attribute_orthogonal_basis_winner():
    rec = _record("d", np.eye(4, dtype=np.float32))
    q = np.eye(4, dtype=np.float32)[2][np.newaxis, :]
    report = attribute(q, rec)
    assert report.entries[0].doc_vector == 2
    assert report.entries[0].similarity == pytest.approx(1.0)
    assert report.entries[0].provenance.ref == 2


def test_attribute_matches_maxsim_winners_fuzz():
    rng = np.random.default_rng(3)
    for _ in range(100):
        dim = int(rng.integers(2, 16))
        rec = _record("d", _unit_rows(rng, int(rng.integers(1, 8)), dim))
        q = _unit_rows(rng, int(rng.integers(1, 5)), dim)
        report = attribute(q, rec)
        res = maxsim(q, rec)
        assert [e.doc_vector for e in report.entries] == list(res.winners)
        assert report.score == pytest.approx(res.value, abs=1e-9)
        for entry, sim in zip(report.entries, res.winner_sims):
            assert entry.similarity == pytest.approx(sim, abs=1e-9)
            assert -1.0 - 1e-6 <= entry.similarity <= 1.0 + 1e-6


# ---------------------------------------------------------------------------
# query files


def test_query_requires_text_or_tokens():
    with pytest.raises(ValueError):
        Query(query_id="q1")
    assert Query(query_id="q1", text="hello").text_for_encoding == "hello"
    assert Query(query_id="q1", tokens=("a", "b")).text_for_encoding == "a b"


def test_queries_round_trip(tmp_path):
    queries = [Query(query_id="q1", text="solar panels"),
               Query(query_id="q2", tokens=("wind", "turbine"))]
    path = tmp_path / "queries.jsonl"
    write_queries(queries, path)
    back = read_queries(path)
    assert back == queries


def test_queries_duplicate_id_rejected(tmp_path):
    path = tmp_path / "queries.jsonl"
    path.write_text('{"query_id": "q1", "text": "a"}\n{"query_id": "q1", "text": "b"}\n',
                    encoding="utf-8")
    with pytest.raises(ValueError):
        read_queries(path)


# ---------------------------------------------------------------------------
# synthetic corpus generator


def test_corpus_shape_and_qrels():
    corpus = gen_concentrated_corpus(10, 5, default_vocab(1000), seed=7)
    assert len(corpus.pages) == 10
    assert len(corpus.queries) == 10
    for query in corpus.queries:
        judged = corpus.qrels[query.query_id]
        assert len(judged) == 1
        assert list(judged.values()) == [1]
    for page_id, regions in corpus.regions.items():
        assert len(regions) == 5
        assert page_id in corpus.token_corpus.pages


def test_corpus_deterministic():
    a = gen_concentrated_corpus(6, 3, default_vocab(500), seed=11)
    b = gen_concentrated_corpus(6, 3, default_vocab(500), seed=11)
    assert [q.tokens for q in a.queries] == [q.tokens for q in b.queries]
    for page_id in a.token_corpus.pages:
        pa, pb = a.token_corpus.pages[page_id], b.token_corpus.pages[page_id]
        assert pa.region_tokens == pb.region_tokens
        assert pa.page_tokens == pb.page_tokens


def test_corpus_seeds_differ():
    a = gen_concentrated_corpus(6, 3, default_vocab(500), seed=1)
    b = gen_concentrated_corpus(6, 3, default_vocab(500), seed=2)
    assert [q.tokens for q in a.queries] != [q.tokens for q in b.queries]


def test_corpus_region_bags_disjoint():
    corpus = gen_concentrated_corpus(8, 4, default_vocab(800), seed=3)
    seen: set[str] = set()
    for page in corpus.token_corpus.pages.values():
        for bag in page.region_tokens.values():
            bag_set = set(bag)
            assert not bag_set & seen
            seen |= bag_set


def test_corpus_page_bag_is_union_plus_shared_filler():
    corpus = gen_concentrated_corpus(4, 3, default_vocab(400), seed=5)
    fillers = []
    for page in corpus.token_corpus.pages.values():
        region_union = {t for bag in page.region_tokens.values() for t in bag}
        page_set = set(page.page_tokens)
        assert region_union <= page_set
        fillers.append(frozenset(page_set - region_union))
    assert len(set(fillers)) == 1  # same filler bag on every page


def test_corpus_query_tokens_come_from_one_region():
    corpus = gen_concentrated_corpus(10, 5, default_vocab(1000), seed=9)
    for query in corpus.queries:
        (doc_id,) = corpus.qrels[query.query_id]
        page = corpus.token_corpus.pages[doc_id]
        homes = [idx for idx, bag in page.region_tokens.items()
                 if set(query.tokens) <= set(bag)]
        assert len(homes) == 1


def test_corpus_vocab_too_small():
    with pytest.raises(VocabTooSmall):
        gen_concentrated_corpus(10, 5, default_vocab(100), seed=0)


def test_corpus_relevant_region_wins_cosine():
    """The query's own region vector should top every region in the corpus."""
    corpus = gen_concentrated_corpus(10, 4, default_vocab(1000), seed=13)
    enc = SyntheticEncoder(corpus.token_corpus, seed=13, dim=256)
    region_vecs = {}
    for page_id, page in corpus.token_corpus.pages.items():
        for ridx, bag in page.region_tokens.items():
            region_vecs[(page_id, ridx)] = synthetic_embed(bag, seed=13, dim=256)
    wins = 0
    for query in corpus.queries:
        (doc_id,) = corpus.qrels[query.query_id]
        q_vec = enc.encode_query(query.text_for_encoding)[0]
        best_key = max(region_vecs, key=lambda key: float(q_vec @ region_vecs[key]))
        if best_key[0] == doc_id:
            wins += 1
    assert wins >= 0.95 * len(corpus.queries)


def test_to_detector_pages_round_trips_layout():
    from pagevec.layout import split_page

    corpus = gen_concentrated_corpus(5, 4, default_vocab(500), seed=17)
    detector_pages = to_detector_pages(corpus)
    assert [p.page.page_id for p in detector_pages] == list(corpus.pages)
    for page in detector_pages:
        regions = split_page(page.page, page.detections)
        want = corpus.regions[page.page.page_id]
        assert len(regions) == len(want)
        for got, orig in zip(regions, want):
            assert got.index == orig.index
            assert got.content_type == orig.content_type
            assert (got.bbox.x1, got.bbox.y1, got.bbox.x2, got.bbox.y2) == (
                orig.bbox.x1, orig.bbox.y1, orig.bbox.x2, orig.bbox.y2)


def test_default_vocab_distinct():
    vocab = default_vocab(300)
    assert len(vocab) == 300
    assert len(set(vocab)) == 300
