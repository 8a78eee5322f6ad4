"""Policy-aware vector retrieval over an in-process exact index.

The index is an exact linear scan (no ANN) so that recall numbers in the
evaluation reflect gating behavior alone. Three search modes exist:

* ungated: raw cosine top-k over everything (experiment baseline only),
* post-filter: over-fetch ungated, drop unauthorized hits, truncate,
* pushdown: the authorization predicate is applied inside the scan, so the
  result is the true top-k of the authorized subset.

Embeddings are synthetic and fully deterministic: a unit topic direction
plus a text-derived component hashed from word trigrams, mixed so that two
texts sharing a topic land at ~0.95 cosine while unrelated topics stay near
zero. Textual near-duplicates get strongly correlated vectors, which is what
lets workload generators construct adversarial cross-tenant neighbors.
"""

from __future__ import annotations

import json
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import AuthorizationError, ConfigurationError, ConflictError, ValidationError
from .policy import PolicySet, build_storage_filter, evaluate, is_permitted
from .tenancy import (
    Chunk,
    Document,
    OwnershipMetadata,
    Principal,
    TenantId,
    chunk_document,
    ownership_from_record,
    ownership_to_record,
)

DEFAULT_DIMENSION = 256

# Mix weights for the synthetic embedding: squared weights sum to 1 and the
# topic share equals the target same-topic cosine. Verified empirically by
# scripts/calibrate_embedding_mix.py (measured band ~0.95 +/- 0.01).
SAME_TOPIC_TARGET = 0.95
TOPIC_WEIGHT = float(np.sqrt(SAME_TOPIC_TARGET))
TEXT_WEIGHT = float(np.sqrt(1.0 - SAME_TOPIC_TARGET))

UNGATED = "ungated"
POST_FILTER = "post_filter"
PUSHDOWN = "pushdown"


def _stable_hash(*parts: str) -> int:
    return zlib.crc32("|".join(parts).encode("utf-8"))


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValidationError("cannot normalize a zero vector")
    return v / n


@dataclass(frozen=True)
class Embedding:
    """Unit-norm dense vector."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValidationError("embedding must be a 1-d vector")
        if abs(float(np.linalg.norm(v)) - 1.0) > 1e-6:
            raise ValidationError("embedding must have unit L2 norm")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


class SyntheticEmbedder:
    """Deterministic text embedder driven by (text, topic, seed).

    The tenant argument on :meth:`embed_document` is accepted for call-site
    symmetry with ingestion but does not influence the vector: like a real
    text encoder, the embedding is a pure function of content.
    """

    def __init__(self, dim: int = DEFAULT_DIMENSION, seed: int = 0):
        if dim < 8:
            raise ConfigurationError("embedding dimension must be >= 8")
        self.dim = dim
        self.seed = seed
        self._topic_vectors: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def topic_vector(self, topic: str) -> np.ndarray:
        with self._lock:
            cached = self._topic_vectors.get(topic)
            if cached is None:
                rng = np.random.default_rng(_stable_hash("topic", str(self.seed), topic))
                cached = _unit(rng.standard_normal(self.dim))
                cached.setflags(write=False)
                self._topic_vectors[topic] = cached
            return cached

    @property
    def known_topics(self) -> frozenset[str]:
        with self._lock:
            return frozenset(self._topic_vectors)

    def _text_noise(self, text: str) -> np.ndarray:
        words = text.split()
        if not words:
            raise ValidationError("cannot embed empty text")
        if len(words) >= 3:
            grams = [" ".join(words[i : i + 3]) for i in range(len(words) - 2)]
        else:
            grams = words
        vec = np.zeros(self.dim, dtype=np.float64)
        salt = str(self.seed)
        for g in grams:
            h = _stable_hash(salt, g)
            vec[h % self.dim] += 1.0 if (h >> 16) & 1 else -1.0
        if not vec.any():
            vec[_stable_hash(salt, text) % self.dim] = 1.0
        return _unit(vec)

    def embed_document(self, text: str, topic: str, tenant: TenantId | None = None) -> Embedding:
        t = self.topic_vector(topic)
        n = self._text_noise(text)
        # Project the text component off the topic direction so the
        # same-topic cosine stays tightly inside the calibrated band.
        n_perp = n - float(n @ t) * t
        norm = float(np.linalg.norm(n_perp))
        if norm < 1e-9:
            alt = np.zeros(self.dim)
            alt[int(np.argmin(np.abs(t)))] = 1.0
            n_perp = alt - float(alt @ t) * t
            norm = float(np.linalg.norm(n_perp))
        return Embedding(_unit(TOPIC_WEIGHT * t + TEXT_WEIGHT * (n_perp / norm)))

    def embed_query(self, text: str) -> Embedding:
        """Embed free query text, inferring the topic from known labels.

        The first query word that matches a previously seen topic label picks
        the topic direction; with no match the vector is text-only.
        """
        known = self.known_topics
        for word in text.split():
            if word in known:
                return self.embed_document(text, word)
        return Embedding(self._text_noise(text))


def synthetic_embed(
    text: str, topic: str, tenant: TenantId | None = None, seed: int = 0, dim: int = DEFAULT_DIMENSION
) -> Embedding:
    """One-shot convenience wrapper around :class:`SyntheticEmbedder`."""
    return SyntheticEmbedder(dim=dim, seed=seed).embed_document(text, topic, tenant)


@dataclass(frozen=True)
class GatingMode:
    kind: str
    overfetch_factor: int = 5

    def __post_init__(self) -> None:
        if self.kind not in (UNGATED, POST_FILTER, PUSHDOWN):
            raise ValidationError(f"unknown gating mode {self.kind!r}")
        if self.overfetch_factor < 1:
            raise ValidationError("overfetch_factor must be >= 1")

    @classmethod
    def ungated(cls) -> "GatingMode":
        return cls(UNGATED)

    @classmethod
    def post_filter(cls, overfetch_factor: int = 5) -> "GatingMode":
        return cls(POST_FILTER, overfetch_factor)

    @classmethod
    def pushdown(cls) -> "GatingMode":
        return cls(PUSHDOWN)


@dataclass(frozen=True)
class SearchRequest:
    query: Embedding
    k: int
    theta: float | None = None
    mode: GatingMode = field(default_factory=GatingMode.pushdown)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.theta is not None and not -1.0 <= self.theta <= 1.0:
            raise ValidationError("theta must be in [-1, 1]")


@dataclass(frozen=True)
class SearchHit:
    chunk_id: str
    doc_id: str
    score: float
    ownership: OwnershipMetadata
    text: str


@dataclass(frozen=True)
class SearchResult:
    hits: tuple[SearchHit, ...]
    latency_us: int


class _Snapshot:
    """Immutable view of the index used by lock-free readers."""

    __slots__ = ("matrix", "ids", "chunks")

    def __init__(self, matrix: np.ndarray, ids: np.ndarray, chunks: tuple[Chunk, ...]):
        self.matrix = matrix
        self.ids = ids
        self.chunks = chunks

    def __len__(self) -> int:
        return len(self.chunks)


_EMPTY = None  # sentinel replaced lazily per dimension


class VectorIndex:
    """Exact in-memory vector index with many-reader / exclusive-writer access.

    ``resource_ownership`` is the ownership record of the store itself; when
    set, gated searches authorize the principal against it before any
    similarity work. A shared store leaves it None and relies on chunk-level
    gating for isolation.
    """

    def __init__(self, dim: int = DEFAULT_DIMENSION, resource_ownership: OwnershipMetadata | None = None):
        if dim < 1:
            raise ConfigurationError("index dimension must be >= 1")
        self.dim = dim
        self.resource_ownership = resource_ownership
        self._lock = threading.RLock()
        self._vectors: list[np.ndarray] = []
        self._chunks: list[Chunk] = []
        self._chunk_ids: set[str] = set()
        self._doc_ids: set[str] = set()
        self._snapshot: _Snapshot | None = self._empty_snapshot()

    def _empty_snapshot(self) -> _Snapshot:
        return _Snapshot(np.zeros((0, self.dim)), np.asarray([], dtype=str), ())

    def __len__(self) -> int:
        with self._lock:
            return len(self._chunks)

    def insert_chunk(self, chunk: Chunk, embedding: Embedding) -> None:
        if embedding.dim != self.dim:
            raise ConfigurationError(
                f"embedding dimension {embedding.dim} does not match index dimension {self.dim}"
            )
        with self._lock:
            if chunk.chunk_id in self._chunk_ids:
                raise ConflictError(f"chunk id {chunk.chunk_id!r} already present")
            self._vectors.append(embedding.values)
            self._chunks.append(chunk)
            self._chunk_ids.add(chunk.chunk_id)
            self._snapshot = None

    def ingest(
        self,
        document: Document,
        embedder: SyntheticEmbedder,
        chunker: Callable[[Document, int], list[Chunk]] = chunk_document,
        target_tokens: int = 512,
    ) -> list[str]:
        """Chunk, embed, and insert one document; returns the new chunk ids."""
        if embedder.dim != self.dim:
            raise ConfigurationError(
                f"embedder dimension {embedder.dim} does not match index dimension {self.dim}"
            )
        with self._lock:
            if document.doc_id in self._doc_ids:
                raise ConflictError(f"document {document.doc_id!r} already ingested")
            chunks = chunker(document, target_tokens)
            for chunk in chunks:
                emb = embedder.embed_document(chunk.text, document.topic, document.ownership.owner_tenant)
                self.insert_chunk(chunk, emb)
            self._doc_ids.add(document.doc_id)
            return [c.chunk_id for c in chunks]

    def snapshot(self) -> _Snapshot:
        with self._lock:
            if self._snapshot is None:
                self._snapshot = _Snapshot(
                    np.vstack(self._vectors) if self._vectors else np.zeros((0, self.dim)),
                    np.asarray([c.chunk_id for c in self._chunks], dtype=str),
                    tuple(self._chunks),
                )
            return self._snapshot

    def entries(self) -> Iterator[tuple[str, np.ndarray, Chunk]]:
        snap = self.snapshot()
        for i, chunk in enumerate(snap.chunks):
            yield chunk.chunk_id, snap.matrix[i], chunk


def _hits_from_order(snap: _Snapshot, scores: np.ndarray, order: np.ndarray, k: int, theta: float | None) -> tuple[SearchHit, ...]:
    picked = order[:k]
    hits = []
    for i in picked:
        s = float(scores[i])
        if theta is not None and s <= theta:
            continue
        c = snap.chunks[i]
        hits.append(SearchHit(c.chunk_id, c.doc_id, s, c.ownership, c.text))
    return tuple(hits)


def _rank(snap: _Snapshot, query: Embedding) -> tuple[np.ndarray, np.ndarray]:
    scores = snap.matrix @ query.values
    # Primary key: descending score; secondary: ascending chunk id, so equal
    # scores order deterministically.
    order = np.lexsort((snap.ids, -scores))
    return scores, order


def search_ungated(index: VectorIndex, req: SearchRequest) -> SearchResult:
    """Raw cosine top-k over all entries, no authorization anywhere."""
    if req.mode.kind != UNGATED:
        raise ValidationError("search_ungated requires an ungated request")
    start = time.perf_counter_ns()
    snap = index.snapshot()
    if len(snap) == 0:
        return SearchResult((), (time.perf_counter_ns() - start) // 1000)
    scores, order = _rank(snap, req.query)
    hits = _hits_from_order(snap, scores, order, req.k, req.theta)
    return SearchResult(hits, (time.perf_counter_ns() - start) // 1000)


def search_gated(
    index: VectorIndex, principal: Principal, policy: PolicySet, req: SearchRequest
) -> SearchResult:
    """Authorized top-k search (post-filter or pushdown).

    Resource-level authorization runs before any similarity computation.
    Pushdown results are the exact top-k of the authorized subset; post-filter
    over-fetches ``k * overfetch_factor`` ungated candidates and keeps only
    authorized ones, so recall can drop but unauthorized hits never pass.
    """
    if req.mode.kind not in (POST_FILTER, PUSHDOWN):
        raise ValidationError("search_gated requires a post_filter or pushdown request")
    if index.resource_ownership is not None:
        decision = evaluate(policy, principal, index.resource_ownership)
        if not decision.permitted:
            raise AuthorizationError(
                f"principal {principal.user_id!r} is not permitted on this vector store ({decision.reason})"
            )
    start = time.perf_counter_ns()
    snap = index.snapshot()
    if len(snap) == 0:
        return SearchResult((), (time.perf_counter_ns() - start) // 1000)

    if req.mode.kind == PUSHDOWN:
        predicate = build_storage_filter(policy, principal)
        mask = np.fromiter((predicate(c.ownership) for c in snap.chunks), dtype=bool, count=len(snap))
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            return SearchResult((), (time.perf_counter_ns() - start) // 1000)
        sub_scores = snap.matrix[idx] @ req.query.values
        sub_order = np.lexsort((snap.ids[idx], -sub_scores))
        picked = idx[sub_order[: req.k]]
        hits = []
        for j, i in enumerate(picked):
            s = float(sub_scores[sub_order[j]])
            if req.theta is not None and s <= req.theta:
                continue
            c = snap.chunks[i]
            hits.append(SearchHit(c.chunk_id, c.doc_id, s, c.ownership, c.text))
        return SearchResult(tuple(hits), (time.perf_counter_ns() - start) // 1000)

    # post-filter: ungated over-fetch, then chunk-level authorization.
    scores, order = _rank(snap, req.query)
    fetched = order[: req.k * req.mode.overfetch_factor]
    kept = [i for i in fetched if is_permitted(policy, principal, snap.chunks[i].ownership)]
    hits = []
    for i in kept[: req.k]:
        s = float(scores[i])
        if req.theta is not None and s <= req.theta:
            continue
        c = snap.chunks[i]
        hits.append(SearchHit(c.chunk_id, c.doc_id, s, c.ownership, c.text))
    return SearchResult(tuple(hits), (time.perf_counter_ns() - start) // 1000)


def brute_force_topk(
    index: VectorIndex, principal: Principal, policy: PolicySet, query: Embedding, k: int
) -> list[SearchHit]:
    """Reference oracle: plain-Python scan over the authorized subset.

    Kept free of the numpy ranking path on purpose; used as ground truth for
    pushdown equivalence and recall checks.
    """
    q = query.values.tolist()
    scored: list[tuple[float, str, Chunk]] = []
    for chunk_id, vec, chunk in index.entries():
        if not is_permitted(policy, principal, chunk.ownership):
            continue
        score = 0.0
        for a, b in zip(q, vec.tolist()):
            score += a * b
        scored.append((score, chunk_id, chunk))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [
        SearchHit(chunk_id, chunk.doc_id, score, chunk.ownership, chunk.text)
        for score, chunk_id, chunk in scored[:k]
    ]


# --- index snapshot files ---------------------------------------------------

_SNAPSHOT_MAGIC = b"TGIDX\x00"
_SNAPSHOT_VERSION = 1


def save_index(index: VectorIndex, path: str | Path) -> int:
    """Dump (chunk_id, vector, ownership) entries to a versioned binary file."""
    snap = index.snapshot()
    header = {
        "dim": index.dim,
        "count": len(snap),
        "resource_ownership": (
            ownership_to_record(index.resource_ownership) if index.resource_ownership else None
        ),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", _SNAPSHOT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for i, chunk in enumerate(snap.chunks):
            meta = {
                "chunk_id": chunk.chunk_id,
                "doc_id": chunk.doc_id,
                "text": chunk.text,
                "token_count": chunk.token_count,
                "ownership": ownership_to_record(chunk.ownership),
            }
            meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(meta_bytes)))
            fh.write(meta_bytes)
            fh.write(np.asarray(snap.matrix[i], dtype=np.float64).tobytes())
    return len(snap)


def load_index(path: str | Path) -> VectorIndex:
    with open(path, "rb") as fh:
        magic = fh.read(len(_SNAPSHOT_MAGIC))
        if magic != _SNAPSHOT_MAGIC:
            raise ValidationError(f"{path}: not an index snapshot (bad magic)")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _SNAPSHOT_VERSION:
            raise ValidationError(f"{path}: unsupported snapshot version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        ro = header.get("resource_ownership")
        index = VectorIndex(
            dim=int(header["dim"]),
            resource_ownership=ownership_from_record(ro) if ro else None,
        )
        vec_bytes = index.dim * 8
        for _ in range(int(header["count"])):
            (meta_len,) = struct.unpack("<I", fh.read(4))
            meta = json.loads(fh.read(meta_len).decode("utf-8"))
            values = np.frombuffer(fh.read(vec_bytes), dtype=np.float64)
            chunk = Chunk(
                chunk_id=meta["chunk_id"],
                doc_id=meta["doc_id"],
                text=meta["text"],
                ownership=ownership_from_record(meta["ownership"]),
                token_count=int(meta["token_count"]),
            )
            index.insert_chunk(chunk, Embedding(values))
            index._doc_ids.add(chunk.doc_id)
    return index
