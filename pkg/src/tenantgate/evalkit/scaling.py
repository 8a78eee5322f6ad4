"""Pushdown-vs-post-filter scaling experiment over the adversarial corpus."""

from __future__ import annotations

import statistics
import time

from ..policy import default_policy
from ..retrieval import (
    GatingMode,
    SearchRequest,
    SyntheticEmbedder,
    VectorIndex,
    search_gated,
    search_ungated,
)
from .workload import build_scaling_workload

DEFAULT_SIZES = (100, 1_000, 10_000, 50_000)


def run_pushdown_scaling(
    sizes: tuple[int, ...] = DEFAULT_SIZES,
    overfetch: int = 5,
    k: int = 5,
    seed: int = 0,
    dim: int = 256,
) -> dict:
    """Measure post-filter recall decay and pushdown exactness per corpus size."""
    policy = default_policy()
    rows = []
    for size in sizes:
        workload = build_scaling_workload(size, seed=seed)
        embedder = SyntheticEmbedder(dim=dim, seed=seed)
        index = VectorIndex(dim=dim)
        t0 = time.perf_counter()
        for doc in workload.documents:
            index.ingest(doc, embedder)
        ingest_s = time.perf_counter() - t0

        pf_recalls, pd_recalls = [], []
        gated_lat_ms, overhead_ms = [], []
        warm = embedder.embed_query(workload.queries[0].query_text)
        search_ungated(index, SearchRequest(query=warm, k=k, mode=GatingMode.ungated()))
        for q in workload.queries:
            query = embedder.embed_query(q.query_text)
            raw = search_ungated(index, SearchRequest(query=query, k=k, mode=GatingMode.ungated()))
            post = search_gated(
                index,
                workload.principal,
                policy,
                SearchRequest(query=query, k=k, mode=GatingMode.post_filter(overfetch)),
            )
            push = search_gated(
                index, workload.principal, policy, SearchRequest(query=query, k=k, mode=GatingMode.pushdown())
            )
            expected = set(q.expected_doc_ids)
            pf_recalls.append(len([h for h in post.hits if h.doc_id in expected]) / len(expected))
            pd_recalls.append(len([h for h in push.hits if h.doc_id in expected]) / len(expected))
            gated_lat_ms.append(post.latency_us / 1000.0)
            overhead_ms.append((post.latency_us - raw.latency_us) / 1000.0)

        rows.append(
            {
                "corpus_size": size,
                "postfilter_recall_at_5": statistics.fmean(pf_recalls),
                "pushdown_recall_at_5": statistics.fmean(pd_recalls),
                "gated_latency_ms_median": statistics.median(gated_lat_ms),
                "filter_overhead_ms_median": statistics.median(overhead_ms),
                "ingest_s": round(ingest_s, 3),
            }
        )

    pf = [r["postfilter_recall_at_5"] for r in rows]
    checks = [
        {
            "name": "pushdown_recall_exact_all_sizes",
            "passed": all(r["pushdown_recall_at_5"] == 1.0 for r in rows),
            "detail": " ".join(f"{r['corpus_size']}:{r['pushdown_recall_at_5']:.3f}" for r in rows),
        },
        {
            "name": "postfilter_recall_non_increasing",
            "passed": all(pf[i] >= pf[i + 1] for i in range(len(pf) - 1)),
            "detail": " ".join(f"{v:.3f}" for v in pf),
        },
    ]
    if rows and rows[0]["corpus_size"] == 100:
        checks.append(
            {
                "name": "postfilter_recall_full_at_100",
                "passed": rows[0]["postfilter_recall_at_5"] == 1.0,
                "detail": f"{rows[0]['postfilter_recall_at_5']:.3f}",
            }
        )
    if rows and rows[-1]["corpus_size"] == 50_000:
        checks.append(
            {
                "name": "postfilter_recall_collapsed_at_50k",
                "passed": rows[-1]["postfilter_recall_at_5"] <= 0.05,
                "detail": f"{rows[-1]['postfilter_recall_at_5']:.3f}",
            }
        )

    return {"overfetch": overfetch, "k": k, "rows": rows, "checks": checks}
