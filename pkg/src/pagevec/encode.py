"""Embedding adapters: how crops, pages, and queries become vectors.

Three interchangeable adapters sit behind one interface:

  * SyntheticEncoder: deterministic token-bag embeddings for offline tests,
  * FileEncoder: precomputed vectors looked up by id,
  * HttpEncoder: a remote embedding service speaking a small JSON protocol.

Normalization happens exactly once, at the adapter boundary (encode /
encode_requests); everything downstream may assume unit-norm float32 rows of
one fixed dimensionality per adapter.

Region requests use an opaque locator of the form "<page_id>#r<index>" so
adapters that key on ids can resolve individual crops; the pixel box still
travels alongside for services that crop server-side.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import requests

from .errors import AdapterFailure, DegenerateVector, DimMismatch, EmptyBag
from .layout import BoundingBox

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


class EncodeKind(str, Enum):
    REGION = "region"
    PAGE = "page"
    QUERY = "query"


def normalize(v) -> np.ndarray:
    """L2-normalize a vector in float64; near-zero norm raises DegenerateVector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"normalize expects a 1-D vector, got shape {v.shape}")
    n = float(np.linalg.norm(v))
    if n < NORM_FLOOR:
        raise DegenerateVector(f"cannot normalize a vector with norm {n:.3g}")
    return v / n


def page_ref(page_id: str) -> str:
    """Locator for a whole-page request."""
    return page_id


def region_ref(page_id: str, region_index: int) -> str:
    """Locator for one crop region of a page."""
    return f"{page_id}#r{region_index}"


def parse_ref(ref: str) -> tuple[str, int | None]:
    """Split a locator into (page_id, region_index-or-None)."""
    if "#r" in ref:
        page_id, _, tail = ref.rpartition("#r")
        try:
            return page_id, int(tail)
        except ValueError:
            pass
    return ref, None


@dataclass(frozen=True)
class EncodeRequest:
    """One thing to embed: a region crop, a whole page, or a query string."""

    kind: EncodeKind
    image_ref: str | None = None
    crop: BoundingBox | None = None
    text: str | None = None

    def __post_init__(self):
        if self.kind in (EncodeKind.REGION, EncodeKind.PAGE) and not self.image_ref:
            raise ValueError(f"{self.kind.value} request needs image_ref")
        if self.kind is EncodeKind.REGION and self.crop is None:
            raise ValueError("region request needs crop")
        if self.kind is EncodeKind.QUERY and self.text is None:
            raise ValueError("query request needs text")


def region_request(page_id: str, region_index: int, crop: BoundingBox) -> EncodeRequest:
    return EncodeRequest(EncodeKind.REGION, image_ref=region_ref(page_id, region_index), crop=crop)


def page_request(page_id: str) -> EncodeRequest:
    return EncodeRequest(EncodeKind.PAGE, image_ref=page_ref(page_id))


def query_request(text: str) -> EncodeRequest:
    return EncodeRequest(EncodeKind.QUERY, text=text)


class EncoderInterface(ABC):
    """Adapter contract: fixed dim, raw (pre-normalization) vectors out."""

    dim: int

    @abstractmethod
    def encode_region(self, image_ref: str, crop: BoundingBox | None) -> np.ndarray:
        """Embed one crop region; returns a 1-D vector of length dim."""

    @abstractmethod
    def encode_page(self, image_ref: str) -> np.ndarray:
        """Embed one whole page; returns a 1-D vector of length dim."""

    @abstractmethod
    def encode_query(self, text: str) -> np.ndarray:
        """Embed a query; returns a (n_q, dim) matrix, n_q >= 1 (default 1)."""


def _finish_single(raw, dim: int, what: str) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.shape[0] != dim:
        raise DimMismatch(f"{what} returned shape {raw.shape}, expected ({dim},)")
    return normalize(raw).astype(np.float32)


def _finish_query(raw, dim: int, what: str) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 1:
        raw = raw[np.newaxis, :]
    if raw.ndim != 2 or raw.shape[0] < 1 or raw.shape[1] != dim:
        raise DimMismatch(f"{what} returned shape {raw.shape}, expected (n_q, {dim})")
    return np.stack([normalize(row) for row in raw]).astype(np.float32)


def encode_request(request: EncodeRequest, adapter: EncoderInterface) -> np.ndarray:
    """Run one request through an adapter and normalize the result.

    Region and page requests yield a unit float32 vector of shape (dim,);
    query requests yield a (n_q, dim) matrix of unit rows.
    """
    return encode_requests([request], adapter)[0]


def encode_requests(
    requests_: Sequence[EncodeRequest], adapter: EncoderInterface
) -> list[np.ndarray]:
    """Encode a batch, preserving order; uses adapter-side batching if offered."""
    if hasattr(adapter, "encode_batch"):
        raws = adapter.encode_batch(requests_)
        if len(raws) != len(requests_):
            raise AdapterFailure(
                f"adapter returned {len(raws)} vectors for {len(requests_)} requests"
            )
    else:
        raws = []
        for req in requests_:
            if req.kind is EncodeKind.REGION:
                raws.append(adapter.encode_region(req.image_ref, req.crop))
            elif req.kind is EncodeKind.PAGE:
                raws.append(adapter.encode_page(req.image_ref))
            else:
                raws.append(adapter.encode_query(req.text))

    out = []
    for req, raw in zip(requests_, raws):
        what = f"{type(adapter).__name__}[{req.kind.value}]"
        if req.kind is EncodeKind.QUERY:
            out.append(_finish_query(raw, adapter.dim, what))
        else:
            out.append(_finish_single(raw, adapter.dim, what))
    return out


# ---------------------------------------------------------------------------
# Synthetic encoder: deterministic token-bag embeddings.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PageTokens:
    """Token bags for one page: per-region bags plus a page-level bag."""

    region_tokens: Mapping[int, tuple[str, ...]]
    page_tokens: tuple[str, ...]


@dataclass
class TokenCorpus:
    """Token bags for a whole corpus, keyed by page id."""

    pages: dict[str, PageTokens] = field(default_factory=dict)

    def __contains__(self, page_id: str) -> bool:
        return page_id in self.pages


def _token_seed(seed: int, token: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{token}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def synthetic_embed(token_bag: Sequence[str], seed: int, dim: int) -> np.ndarray:
    """Deterministic bag-of-tokens embedding.

    Each token hashes (with the seed) to its own fixed Gaussian direction;
    the bag embeds as the normalized sum of its tokens' directions, counted
    with multiplicity. Equivalent to a seeded random projection of the bag's
    term-frequency vector. Same bag + same seed always gives the same vector;
    disjoint bags land nearly orthogonal at moderate dim.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    bag = list(token_bag)
    if not bag:
        raise EmptyBag("synthetic_embed needs at least one token")
    acc = np.zeros(dim, dtype=np.float64)
    for token in bag:
        rng = np.random.default_rng(_token_seed(seed, token))
        acc += rng.standard_normal(dim)
    return normalize(acc)


class SyntheticEncoder(EncoderInterface):
    """Offline encoder over a TokenCorpus; fully determined by its seed.

    Regions embed their region token bag, pages embed the page-level bag,
    and queries embed their whitespace-split text.
    """

    def __init__(self, corpus: TokenCorpus | None = None, seed: int = 0, dim: int = 256):
        if dim < 2:
            raise ValueError(f"dim must be >= 2, got {dim}")
        self.corpus = corpus or TokenCorpus()
        self.seed = int(seed)
        self.dim = int(dim)
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _embed(self, bag: Sequence[str]) -> np.ndarray:
        key = "\x00".join(bag)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        vec = synthetic_embed(bag, self.seed, self.dim)
        with self._lock:
            self._cache[key] = vec
        return vec

    def _page(self, page_id: str) -> PageTokens:
        try:
            return self.corpus.pages[page_id]
        except KeyError:
            raise AdapterFailure(f"no token bags for page {page_id!r}") from None

    def encode_region(self, image_ref: str, crop: BoundingBox | None = None) -> np.ndarray:
        page_id, region_index = parse_ref(image_ref)
        if region_index is None:
            raise AdapterFailure(f"region locator {image_ref!r} names no region")
        page = self._page(page_id)
        try:
            bag = page.region_tokens[region_index]
        except KeyError:
            raise AdapterFailure(
                f"page {page_id!r} has no token bag for region {region_index}"
            ) from None
        return self._embed(bag)

    def encode_page(self, image_ref: str) -> np.ndarray:
        return self._embed(self._page(image_ref).page_tokens)

    def encode_query(self, text: str) -> np.ndarray:
        tokens = text.split()
        if not tokens:
            raise EmptyBag("query text has no tokens")
        return self._embed(tokens)[np.newaxis, :]


def write_token_corpus(corpus: TokenCorpus, path: str | Path) -> None:
    """Write token bags as JSON lines:
    {"page_id", "regions": [{"region_index", "tokens"}], "page_tokens"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for page_id, page in corpus.pages.items():
            fh.write(
                json.dumps(
                    {
                        "page_id": page_id,
                        "regions": [
                            {"region_index": idx, "tokens": list(tokens)}
                            for idx, tokens in sorted(page.region_tokens.items())
                        ],
                        "page_tokens": list(page.page_tokens),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_token_corpus(path: str | Path) -> TokenCorpus:
    corpus = TokenCorpus()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            page_id = str(obj["page_id"])
            if page_id in corpus.pages:
                raise ValueError(f"duplicate page_id {page_id!r} in {path}")
            corpus.pages[page_id] = PageTokens(
                region_tokens={
                    int(reg["region_index"]): tuple(str(t) for t in reg["tokens"])
                    for reg in obj.get("regions", [])
                },
                page_tokens=tuple(str(t) for t in obj.get("page_tokens", [])),
            )
    return corpus


# ---------------------------------------------------------------------------
# File encoder: precomputed embeddings keyed by id.
# ---------------------------------------------------------------------------

class FileEncoder(EncoderInterface):
    """Looks embeddings up in a precomputed file instead of computing them.

    Two on-disk forms are accepted:
      * JSON lines, one {"id": ..., "vector": [...]} per line;
      * a binary blob (store module format) with a sidecar "<path>.ids.jsonl"
        holding one {"id": ...} line per blob row.

    Repeated ids accumulate into a multi-vector entry; regions and pages must
    resolve to exactly one vector, queries may resolve to several. Lookup
    keys are the request locator for regions and pages, the literal text for
    queries.
    """

    def __init__(self, path: str | Path, dim: int | None = None):
        self.path = Path(path)
        self._table: dict[str, list[np.ndarray]] = {}
        if self.path.suffix == ".bin":
            self._load_blob()
        else:
            self._load_jsonl()
        if not self._table:
            raise AdapterFailure(f"embedding file {self.path} holds no vectors")
        first = next(iter(self._table.values()))[0]
        self.dim = int(dim) if dim is not None else int(first.shape[0])
        for key, vecs in self._table.items():
            for vec in vecs:
                if vec.shape[0] != self.dim:
                    raise DimMismatch(
                        f"entry {key!r} has dim {vec.shape[0]}, expected {self.dim}"
                    )

    def _add(self, key: str, vec: np.ndarray) -> None:
        self._table.setdefault(key, []).append(np.asarray(vec, dtype=np.float32))

    def _load_jsonl(self) -> None:
        with open(self.path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    self._add(str(obj["id"]), np.array(obj["vector"], dtype=np.float32))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise AdapterFailure(f"{self.path}:{lineno}: bad embedding line: {exc}")

    def _load_blob(self) -> None:
        from .store import read_vector_blob  # deferred: store depends on nothing here

        vectors = read_vector_blob(self.path)
        sidecar = Path(str(self.path) + ".ids.jsonl")
        try:
            with open(sidecar, "r", encoding="utf-8") as fh:
                ids = [json.loads(line)["id"] for line in fh if line.strip()]
        except OSError as exc:
            raise AdapterFailure(f"missing sidecar id file for {self.path}: {exc}")
        if len(ids) != vectors.shape[0]:
            raise AdapterFailure(
                f"sidecar lists {len(ids)} ids but blob holds {vectors.shape[0]} vectors"
            )
        for key, row in zip(ids, vectors):
            self._add(str(key), row)

    def _lookup(self, key: str) -> list[np.ndarray]:
        try:
            return self._table[key]
        except KeyError:
            raise AdapterFailure(f"no precomputed embedding for id {key!r}") from None

    def _lookup_one(self, key: str) -> np.ndarray:
        vecs = self._lookup(key)
        if len(vecs) != 1:
            raise AdapterFailure(f"id {key!r} maps to {len(vecs)} vectors, expected 1")
        return vecs[0]

    def encode_region(self, image_ref: str, crop: BoundingBox | None = None) -> np.ndarray:
        return self._lookup_one(image_ref)

    def encode_page(self, image_ref: str) -> np.ndarray:
        return self._lookup_one(image_ref)

    def encode_query(self, text: str) -> np.ndarray:
        return np.stack(self._lookup(text))


def write_embedding_file(entries: Iterable[tuple[str, np.ndarray]], path: str | Path) -> None:
    """Write (id, vector) pairs in the JSON-lines precomputed format."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, vec in entries:
            fh.write(
                json.dumps(
                    {"id": key, "vector": [float(x) for x in np.asarray(vec).ravel()]}
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# HTTP encoder: remote embedding service.
# ---------------------------------------------------------------------------

class HttpEncoder(EncoderInterface):
    """Remote adapter POSTing batches to <base_url>/embed.

    Request body:  {"inputs": [{"kind", "image_uri", "crop", "text"}, ...]}
    Response body: {"dim": int, "vectors": [[...], ...]}, one vector per
    input, in order. Anything but HTTP 200 (or a transport error) raises
    AdapterFailure; a response dim other than the declared one raises
    DimMismatch.
    """

    def __init__(self, base_url: str, dim: int, timeout: float = 30.0, batch_size: int = 32):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.dim = int(dim)
        self.timeout = float(timeout)
        self.batch_size = int(batch_size)

    def _post(self, inputs: list[dict]) -> list[np.ndarray]:
        try:
            resp = requests.post(
                f"{self.base_url}/embed", json={"inputs": inputs}, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise AdapterFailure(f"embedding service unreachable: {exc}")
        if resp.status_code != 200:
            raise AdapterFailure(
                f"embedding service returned HTTP {resp.status_code}: {resp.text[:200]}"
            )
        try:
            body = resp.json()
            got_dim = int(body["dim"])
            vectors = [np.asarray(v, dtype=np.float64) for v in body["vectors"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise AdapterFailure(f"embedding service sent a malformed body: {exc}")
        if got_dim != self.dim:
            raise DimMismatch(f"service reports dim {got_dim}, adapter declared {self.dim}")
        if len(vectors) != len(inputs):
            raise AdapterFailure(
                f"service returned {len(vectors)} vectors for {len(inputs)} inputs"
            )
        return vectors

    @staticmethod
    def _wire(req: EncodeRequest) -> dict:
        return {
            "kind": req.kind.value,
            "image_uri": req.image_ref,
            "crop": req.crop.as_list() if req.crop is not None else None,
            "text": req.text,
        }

    def encode_batch(self, requests_: Sequence[EncodeRequest]) -> list[np.ndarray]:
        """Batched entry point used by encode_requests; order-preserving."""
        out: list[np.ndarray] = []
        for start in range(0, len(requests_), self.batch_size):
            chunk = requests_[start : start + self.batch_size]
            out.extend(self._post([self._wire(r) for r in chunk]))
        return out

    def encode_region(self, image_ref: str, crop: BoundingBox | None = None) -> np.ndarray:
        req = EncodeRequest(EncodeKind.REGION, image_ref=image_ref, crop=crop)
        return self._post([self._wire(req)])[0]

    def encode_page(self, image_ref: str) -> np.ndarray:
        return self._post([self._wire(page_request(image_ref))])[0]

    def encode_query(self, text: str) -> np.ndarray:
        return self._post([self._wire(query_request(text))])[0][np.newaxis, :]
