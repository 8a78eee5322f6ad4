"""The 2x2 configuration matrix: orchestration mode x retrieval gating.

Config A: client-side loop, ungated search.
Config B: client-side loop, gated search.
Config C: server-side orchestration, ungated retrieval.
Config D: server-side orchestration, gated retrieval.

Client-side configurations drive their own search+chat loop against the
gateway, exactly the way an application framework outside the trust boundary
would; server-side configurations make a single responses call.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

from ..retrieval import brute_force_topk
from .client import GatewayHandle
from .metrics import CallOutcome, LeakDetector, ProbeOutcome, compute_avr, compute_ctlr, compute_retrieval_quality
from .workload import Probe, Workload, tenant_principal

CONFIGS = ("A", "B", "C", "D")
CONFIG_STYLE = {
    "A": ("client", "ungated"),
    "B": ("client", "gated"),
    "C": ("server", "ungated"),
    "D": ("server", "gated"),
}

SEARCH_PATH = "/v1/vector_stores/vs_main/search"
UNSAFE_SEARCH_PATH = "/v1/unsafe/vector_stores/vs_main/search"
RESPONSES_PATH = "/v1/responses"
UNSAFE_RESPONSES_PATH = "/v1/unsafe/responses"


@dataclass
class MatrixOptions:
    k: int = 5
    verify_oracle: bool = True


def _dedupe(ids: list[str]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for i in ids:
        seen.setdefault(i)
    return tuple(seen)


def _client_flow(
    handle: GatewayHandle, probe: Probe, gated: bool, detector: LeakDetector, k: int
) -> tuple[ProbeOutcome, float, list[str]]:
    path = SEARCH_PATH if gated else UNSAFE_SEARCH_PATH
    started = time.perf_counter()
    search = handle.post(path, probe.principal, {"query": probe.query_text, "k": k})
    search.raise_for_status()
    body = search.json()
    search_leak = detector.search_response_leaks(body, probe.principal)
    context = " ".join(h["text"] for h in body["data"])
    prompt = f"Context: {context} Question: {probe.query_text}"
    chat = handle.post(
        "/v1/chat/completions",
        probe.principal,
        {"model": "scripted-model", "messages": [{"role": "user", "content": prompt}]},
    )
    chat.raise_for_status()
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    chat_leak = detector.text_leaks(chat.text, probe.principal)
    calls = (
        CallOutcome("search", search_leak),
        CallOutcome("chat", chat_leak),
    )
    outcome = ProbeOutcome(
        probe_id=probe.probe_id,
        kind=probe.kind,
        leaked=search_leak or chat_leak,
        calls=calls,
        ranked_doc_ids=_dedupe([h["doc_id"] for h in body["data"]]),
    )
    return outcome, elapsed_ms, [h["chunk_id"] for h in body["data"]]


def _server_flow(
    handle: GatewayHandle, probe: Probe, gated: bool, detector: LeakDetector
) -> tuple[ProbeOutcome, float, list[str]]:
    path = RESPONSES_PATH if gated else UNSAFE_RESPONSES_PATH
    started = time.perf_counter()
    resp = handle.post(
        path, probe.principal, {"model": "scripted-model", "input": probe.query_text}
    )
    resp.raise_for_status()
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    leaked = detector.text_leaks(resp.text, probe.principal)
    ranked: list[str] = []
    chunk_ids: list[str] = []
    for item in resp.json()["output"]:
        if item.get("type") == "tool_call":
            ranked.extend(h["doc_id"] for h in item.get("results", []))
            chunk_ids.extend(h["chunk_id"] for h in item.get("results", []))
    outcome = ProbeOutcome(
        probe_id=probe.probe_id,
        kind=probe.kind,
        leaked=leaked,
        calls=(CallOutcome("responses", leaked),),
        ranked_doc_ids=_dedupe(ranked),
    )
    return outcome, elapsed_ms, chunk_ids


def _verify_pushdown_oracle(handle: GatewayHandle, probe: Probe, ranked_chunk_ids: list[str], k: int) -> bool:
    state = handle.state
    assert state is not None
    query = state.embedder.embed_query(probe.query_text)
    index = state.indexes["vs_main"]
    expected = brute_force_topk(index, probe.principal, state.policy, query, k)
    return [h.chunk_id for h in expected] == ranked_chunk_ids


def run_g3_drills(handle: GatewayHandle) -> dict:
    """Exercise every deny path and verify the provider is never invoked."""
    finance = tenant_principal("finance")
    engineering = tenant_principal("engineering")
    conv = handle.post("/v1/conversations", finance, {})
    conv.raise_for_status()
    conv_id = conv.json()["id"]

    before = handle.provider_calls()
    drills = []

    resp = handle.client.post(
        SEARCH_PATH, json={"query": "anything", "k": 1}, headers={"Authorization": "Bearer garbage"}
    )
    drills.append({"name": "malformed_token", "status": resp.status_code, "expected": 401})

    resp = handle.client.post(SEARCH_PATH, json={"query": "anything", "k": 1})
    drills.append({"name": "missing_token", "status": resp.status_code, "expected": 401})

    resp = handle.post(
        RESPONSES_PATH,
        engineering,
        {"model": "scripted-model", "input": "quarterly-forecast report", "conversation": conv_id},
    )
    drills.append({"name": "cross_tenant_conversation", "status": resp.status_code, "expected": 403})

    resp = handle.post("/v1/vector_stores/vs_engineering/search", finance, {"query": "plan", "k": 1})
    drills.append({"name": "cross_tenant_vector_store", "status": resp.status_code, "expected": 403})

    resp = handle.post(
        "/v1/chat/completions",
        finance,
        {"model": "model-engineering", "messages": [{"role": "user", "content": "hello"}]},
    )
    drills.append({"name": "cross_tenant_model", "status": resp.status_code, "expected": 403})

    resp = handle.post(
        RESPONSES_PATH, finance, {"model": "unknown-model", "input": "quarterly-forecast report"}
    )
    drills.append({"name": "unknown_model", "status": resp.status_code, "expected": 404})

    resp = handle.post(
        RESPONSES_PATH, finance, {"model": "scripted-model", "input": "please [[BLOCKED-CONTENT]] now"}
    )
    drills.append({"name": "blocked_input", "status": resp.status_code, "expected": 400})

    delta = handle.provider_calls() - before
    for d in drills:
        d["ok"] = d["status"] == d["expected"]
    return {
        "drills": drills,
        "provider_call_delta": delta,
        "all_fail_fast": delta == 0 and all(d["ok"] for d in drills),
    }


def run_matrix(handle: GatewayHandle, workload: Workload, options: MatrixOptions | None = None) -> dict:
    """Run all four configurations over the full probe set."""
    options = options or MatrixOptions()
    if handle.state is not None:
        policy = handle.state.policy
    else:
        from ..policy import default_policy

        policy = default_policy()
    detector = LeakDetector(workload.doc_map, workload.canary_registry, policy)

    security: dict[str, dict] = {}
    quality: dict[str, dict] = {}
    latency: dict[str, dict] = {}
    oracle_checked = 0
    oracle_mismatches = 0

    for config in CONFIGS:
        side, gating = CONFIG_STYLE[config]
        gated = gating == "gated"
        all_calls: list[CallOutcome] = []
        cross_outcomes: list[ProbeOutcome] = []
        injection_outcomes: list[ProbeOutcome] = []
        ranked_lists: list[tuple[str, ...]] = []
        expected_sets: list[frozenset[str]] = []
        elapsed: list[float] = []

        for probe in workload.probes.authorized + workload.probes.cross_tenant + workload.probes.injection:
            if side == "client":
                outcome, ms, chunk_ids = _client_flow(handle, probe, gated, detector, options.k)
            else:
                outcome, ms, chunk_ids = _server_flow(handle, probe, gated, detector)
            elapsed.append(ms)
            all_calls.extend(outcome.calls)
            if probe.kind == "authorized":
                ranked_lists.append(outcome.ranked_doc_ids)
                expected_sets.append(frozenset(probe.expected_doc_ids))
            elif probe.kind == "cross_tenant":
                cross_outcomes.append(outcome)
            else:
                injection_outcomes.append(outcome)

            # Gated search is pushdown by default; cross-check each result
            # against the plain-Python oracle when the index is reachable.
            if options.verify_oracle and handle.state is not None and gated:
                oracle_checked += 1
                if not _verify_pushdown_oracle(handle, probe, chunk_ids, options.k):
                    oracle_mismatches += 1

        injection_leaks = sum(1 for o in injection_outcomes if o.leaked)
        security[config] = {
            "orchestration": side,
            "retrieval": gating,
            "ctlr": compute_ctlr(cross_outcomes),
            "avr": compute_avr(all_calls),
            "injection_probes": len(injection_outcomes),
            "injection_leaked": injection_leaks,
            "injection_leak_rate": injection_leaks / len(injection_outcomes),
            "api_calls": len(all_calls),
            "leaked_calls": sum(1 for c in all_calls if c.leaked),
        }
        q = compute_retrieval_quality(ranked_lists, expected_sets, k=options.k)
        quality[config] = {
            "precision_at_5": q["precision_at_k"],
            "recall_at_5": q["recall_at_k"],
            "mrr": q["mrr"],
            "queries": int(q["queries"]),
        }
        latency[config] = {
            "p50_ms": statistics.median(elapsed),
            "p99_ms": statistics.quantiles(elapsed, n=100)[98] if len(elapsed) >= 100 else max(elapsed),
            "mean_ms": statistics.fmean(elapsed),
        }

    g3 = run_g3_drills(handle)

    def ratio(a: float, b: float) -> float:
        return a / b if b > 0 else float("inf")

    quality["ratios"] = {
        "client_precision_gated_vs_ungated": ratio(
            quality["B"]["precision_at_5"], quality["A"]["precision_at_5"]
        ),
        "server_precision_gated_vs_ungated": ratio(
            quality["D"]["precision_at_5"], quality["C"]["precision_at_5"]
        ),
    }
    quality["pushdown_oracle"] = {"checked": oracle_checked, "mismatches": oracle_mismatches}

    checks = [
        {
            "name": "ctlr_gated_zero",
            "passed": security["B"]["ctlr"] == 0.0 and security["D"]["ctlr"] == 0.0,
            "detail": f"B={security['B']['ctlr']:.4f} D={security['D']['ctlr']:.4f}",
        },
        {
            "name": "avr_gated_zero",
            "passed": security["B"]["avr"] == 0.0 and security["D"]["avr"] == 0.0,
            "detail": f"B={security['B']['avr']:.4f} D={security['D']['avr']:.4f}",
        },
        {
            "name": "ctlr_ungated_floor",
            "passed": security["A"]["ctlr"] >= 0.98 and security["C"]["ctlr"] >= 0.98,
            "detail": f"A={security['A']['ctlr']:.4f} C={security['C']['ctlr']:.4f}",
        },
        {
            "name": "injection_gated_blocked",
            "passed": security["B"]["injection_leaked"] == 0 and security["D"]["injection_leaked"] == 0,
            "detail": f"B={security['B']['injection_leaked']} D={security['D']['injection_leaked']}",
        },
        {
            "name": "injection_ungated_floor",
            "passed": security["A"]["injection_leaked"] >= 45 and security["C"]["injection_leaked"] >= 45,
            "detail": f"A={security['A']['injection_leaked']}/90 C={security['C']['injection_leaked']}/90",
        },
        {
            "name": "g3_fail_fast",
            "passed": g3["all_fail_fast"],
            "detail": f"provider_call_delta={g3['provider_call_delta']}",
        },
        {
            "name": "gated_precision_ratio",
            "passed": quality["ratios"]["client_precision_gated_vs_ungated"] >= 2.0
            and quality["ratios"]["server_precision_gated_vs_ungated"] >= 2.0,
            "detail": "client={:.2f} server={:.2f}".format(
                quality["ratios"]["client_precision_gated_vs_ungated"],
                quality["ratios"]["server_precision_gated_vs_ungated"],
            ),
        },
        {
            "name": "gated_mrr_exact",
            "passed": quality["B"]["mrr"] == 1.0 and quality["D"]["mrr"] == 1.0,
            "detail": f"B={quality['B']['mrr']:.4f} D={quality['D']['mrr']:.4f}",
        },
        {
            "name": "gated_recall_exact",
            "passed": quality["B"]["recall_at_5"] == 1.0 and quality["D"]["recall_at_5"] == 1.0,
            "detail": f"B={quality['B']['recall_at_5']:.4f} D={quality['D']['recall_at_5']:.4f}",
        },
    ]
    if oracle_checked:
        checks.append(
            {
                "name": "pushdown_matches_oracle",
                "passed": oracle_mismatches == 0,
                "detail": f"{oracle_checked - oracle_mismatches}/{oracle_checked}",
            }
        )

    return {
        "security": security,
        "quality": quality,
        "g3": g3,
        "performance": {"latency_ms": latency},
        "checks": checks,
    }
