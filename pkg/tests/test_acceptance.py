"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see the
criterion lines inline). The full-matrix and throughput fixtures are shared
across criteria, so the suite executes each experiment once.
"""

import json
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from tenantgate.evalkit.abac_cases import run_abac_matrix
from tenantgate.evalkit.bench import measure_relative_overhead, run_throughput
from tenantgate.evalkit.client import GatewayHandle
from tenantgate.evalkit.matrix import MatrixOptions, run_matrix
from tenantgate.evalkit.scaling import run_pushdown_scaling
from tenantgate.evalkit.workload import CorpusSpec, build_workload
from tenantgate.errors import AuthorizationError, MaxStepsExceededError
from tenantgate.gateway import ServerConfig
from tenantgate.orchestration import (
    Conversation,
    ConversationStore,
    OrchestratorDeps,
    ResponsesRequest,
    SafetyChecker,
    Turn,
    compact_conversation,
    run_response,
)
from tenantgate.policy import build_storage_filter, default_policy, evaluate
from tenantgate.providers import ScriptedProvider, ScriptedRule, ToolCall
from tenantgate.retrieval import (
    GatingMode,
    SearchRequest,
    SyntheticEmbedder,
    VectorIndex,
    brute_force_topk,
    search_gated,
)
from tenantgate.tenancy import (
    AccessAttributes,
    Document,
    OwnershipMetadata,
    Principal,
    chunk_document,
)

from conftest import documents, ownerships, policies, principals

SEED = 0
DIM = 256


def report_line(criterion: str, passed: bool, detail: str) -> None:
    print(f"[{criterion}] {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, f"{criterion}: {detail}"


def run_full_matrix() -> dict:
    workload = build_workload(CorpusSpec(seed=SEED))
    config = ServerConfig(
        enable_ungated_endpoints=True, simulated_latency_s=0.0, seed=SEED, embedding_dim=DIM
    )
    with GatewayHandle.in_process(config, workload.documents) as handle:
        started = time.perf_counter()
        sections = run_matrix(handle, workload, MatrixOptions(k=5, verify_oracle=True))
        sections["elapsed_s"] = time.perf_counter() - started
    return sections


@pytest.fixture(scope="module")
def matrix_runs():
    return run_full_matrix(), run_full_matrix()


@pytest.fixture(scope="module")
def scaling_report():
    return run_pushdown_scaling(seed=SEED, dim=DIM)


@pytest.fixture(scope="module")
def throughput_report():
    started = time.perf_counter()
    section = run_throughput(seed=SEED, dim=DIM)
    section["elapsed_s"] = time.perf_counter() - started
    return section


def test_criterion_01_security_headline(matrix_runs):
    run, _ = matrix_runs
    sec = run["security"]
    ok = (
        sec["B"]["ctlr"] == 0.0
        and sec["D"]["ctlr"] == 0.0
        and sec["B"]["avr"] == 0.0
        and sec["D"]["avr"] == 0.0
        and sec["A"]["ctlr"] >= 0.98
        and sec["C"]["ctlr"] >= 0.98
        and run["elapsed_s"] < 120.0
    )
    report_line(
        "criterion 1: security headline",
        ok,
        f"CTLR A={sec['A']['ctlr']:.3f} B={sec['B']['ctlr']:.3f} "
        f"C={sec['C']['ctlr']:.3f} D={sec['D']['ctlr']:.3f}; "
        f"AVR B={sec['B']['avr']:.3f} D={sec['D']['avr']:.3f}; "
        f"runtime={run['elapsed_s']:.1f}s (<120s)",
    )


def test_criterion_02_injection_resilience(matrix_runs):
    sec = matrix_runs[0]["security"]
    ok = (
        sec["B"]["injection_leaked"] == 0
        and sec["D"]["injection_leaked"] == 0
        and sec["A"]["injection_leaked"] >= 45
        and sec["C"]["injection_leaked"] >= 45
    )
    report_line(
        "criterion 2: injection resilience",
        ok,
        f"leaked A={sec['A']['injection_leaked']}/90 B={sec['B']['injection_leaked']}/90 "
        f"C={sec['C']['injection_leaked']}/90 D={sec['D']['injection_leaked']}/90",
    )


def test_criterion_03_g3_fail_fast(matrix_runs):
    g3 = matrix_runs[0]["g3"]
    ok = g3["provider_call_delta"] == 0 and all(d["ok"] for d in g3["drills"])
    report_line(
        "criterion 3: deny paths fail fast",
        ok,
        f"{len(g3['drills'])} deny drills, provider call delta={g3['provider_call_delta']}",
    )


def test_criterion_04_abac_matrix():
    started = time.perf_counter()
    report = run_abac_matrix()
    elapsed = time.perf_counter() - started
    ok = report["correct"] == 48 and report["false_positives"] == 0 and elapsed < 1.0
    report_line(
        "criterion 4: authorization matrix",
        ok,
        f"{report['correct']}/48 correct, {report['false_positives']} false positives, "
        f"runtime={elapsed * 1000:.0f}ms (<1s)",
    )


def test_criterion_05_retrieval_quality(matrix_runs):
    quality = matrix_runs[0]["quality"]
    ratios = quality["ratios"]
    ok = (
        ratios["client_precision_gated_vs_ungated"] >= 2.0
        and ratios["server_precision_gated_vs_ungated"] >= 2.0
        and quality["B"]["mrr"] == 1.0
        and quality["D"]["mrr"] == 1.0
        and quality["B"]["recall_at_5"] == 1.0
        and quality["D"]["recall_at_5"] == 1.0
    )
    report_line(
        "criterion 5: retrieval quality",
        ok,
        f"P@5 ratio client={ratios['client_precision_gated_vs_ungated']:.2f} "
        f"server={ratios['server_precision_gated_vs_ungated']:.2f} (>=2.0); "
        f"gated MRR={quality['D']['mrr']:.3f} R@5={quality['D']['recall_at_5']:.3f} (=1.000)",
    )


def test_criterion_06_pushdown_exactness_and_scaling(scaling_report):
    rows = scaling_report["rows"]
    pf = [r["postfilter_recall_at_5"] for r in rows]
    ok_scaling = (
        all(r["pushdown_recall_at_5"] == 1.0 for r in rows)
        and pf[0] == 1.0
        and all(pf[i] >= pf[i + 1] for i in range(len(pf) - 1))
        and pf[-1] <= 0.05
    )

    # randomized small instances: pushdown must equal the brute-force oracle
    rng = np.random.default_rng(1234)
    tenants = ("finance", "engineering", "legal")
    policy = default_policy()
    words = [f"w{i:02d}" for i in range(40)]
    mismatches = 0
    instances = 1000
    for trial in range(instances):
        emb = SyntheticEmbedder(dim=16, seed=trial % 17)
        index = VectorIndex(dim=16)
        for i in range(int(rng.integers(1, 20))):
            tenant = tenants[int(rng.integers(0, 3))]
            text = " ".join(rng.choice(words, size=10))
            index.ingest(
                Document(
                    doc_id=f"{tenant}-{i}",
                    text=text,
                    topic=f"topic-{int(rng.integers(0, 3))}",
                    ownership=OwnershipMetadata(
                        owner_tenant=tenant,
                        owner_user=f"{tenant}:ingest",
                        access_attributes=AccessAttributes.of(teams=[f"{tenant}-staff"]),
                    ),
                ),
                emb,
            )
        principal = Principal(
            "probe",
            tenants[int(rng.integers(0, 3))],
            AccessAttributes.of(teams=[f"{tenants[int(rng.integers(0, 3))]}-staff"]),
        )
        query = emb.embed_query(" ".join(rng.choice(words, size=6)))
        k = int(rng.integers(1, 8))
        fast = search_gated(index, principal, policy, SearchRequest(query=query, k=k, mode=GatingMode.pushdown()))
        slow = brute_force_topk(index, principal, policy, query, k)
        if [h.chunk_id for h in fast.hits] != [h.chunk_id for h in slow]:
            mismatches += 1

    ok = ok_scaling and mismatches == 0
    report_line(
        "criterion 6: pushdown exactness and scaling",
        ok,
        "pushdown R@5=" + "/".join(f"{r['pushdown_recall_at_5']:.3f}" for r in rows)
        + "; postfilter R@5=" + "/".join(f"{v:.3f}" for v in pf)
        + f"; oracle matches {instances - mismatches}/{instances}",
    )


def test_criterion_07_relative_overhead(matrix_runs):
    overhead = measure_relative_overhead(seed=SEED, dim=DIM)
    latency = matrix_runs[0]["performance"]["latency_ms"]
    reported = " ".join(
        f"{config}:p50={latency[config]['p50_ms']:.1f}ms" for config in sorted(latency)
    )
    ok = (
        overhead["gated_overhead_ms_median"] < 25.0
        and overhead["policy_evaluate_ms_median"] < 1.0
    )
    report_line(
        "criterion 7: relative overhead",
        ok,
        f"gated-ungated median={overhead['gated_overhead_ms_median']:.3f}ms (<25ms), "
        f"policy evaluate median={overhead['policy_evaluate_ms_median']:.4f}ms (<1ms); "
        f"end-to-end latencies reported without assertion: {reported}",
    )


def test_criterion_08_throughput_properties(throughput_report):
    checks = {c["name"]: c for c in throughput_report["checks"]}
    needed = (
        "gating_preserves_throughput",
        "client_faster_than_server_at_top_concurrency",
        "qps_non_decreasing_in_concurrency",
    )
    ok = all(checks[name]["passed"] for name in needed) and throughput_report["elapsed_s"] < 600.0
    qps = throughput_report["qps"]
    report_line(
        "criterion 8: throughput properties",
        ok,
        "; ".join(f"{name}={checks[name]['passed']}" for name in needed)
        + f"; c25 A={qps['A']['25']:.0f} C={qps['C']['25']:.0f} qps"
        + f"; runtime={throughput_report['elapsed_s']:.0f}s (<600s)",
    )


def test_criterion_09_determinism(matrix_runs):
    run1, run2 = matrix_runs
    sec1 = json.dumps(run1["security"], sort_keys=True).encode()
    sec2 = json.dumps(run2["security"], sort_keys=True).encode()
    qual1 = json.dumps(run1["quality"], sort_keys=True).encode()
    qual2 = json.dumps(run2["quality"], sort_keys=True).encode()
    ok = sec1 == sec2 and qual1 == qual2
    report_line(
        "criterion 9: determinism",
        ok,
        f"security section {len(sec1)} bytes identical={sec1 == sec2}; "
        f"quality section {len(qual1)} bytes identical={qual1 == qual2}",
    )


# --- criterion 10: property suites (>=500 randomized cases each) -------------

PROPERTY_SETTINGS = settings(
    max_examples=500, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)


@PROPERTY_SETTINGS
@given(documents(), st.integers(min_value=1, max_value=64))
def test_criterion_10a_ownership_inheritance(doc, target):
    for chunk in chunk_document(doc, target):
        assert chunk.ownership == doc.ownership


@PROPERTY_SETTINGS
@given(policies, principals(), ownerships())
def test_criterion_10b_default_deny(policy, p, o):
    if not any(rule.condition.matches(p, o) for rule in policy.rules):
        assert evaluate(policy, p, o).outcome == "deny"


@PROPERTY_SETTINGS
@given(policies, principals(), ownerships())
def test_criterion_10c_filter_evaluate_equivalence(policy, p, o):
    assert build_storage_filter(policy, p)(o) == (evaluate(policy, p, o).outcome == "permit")


def _loop_deps(rule: ScriptedRule, max_steps: int) -> OrchestratorDeps:
    index = VectorIndex(dim=16)
    return OrchestratorDeps(
        provider=ScriptedProvider([rule]),
        index=index,
        policy=default_policy(),
        embedder=SyntheticEmbedder(dim=16, seed=0),
        store=ConversationStore(),
        safety=SafetyChecker(index=index, policy=default_policy()),
        max_steps=max_steps,
    )


rule_kinds = st.sampled_from(["text", "tool_then", "tool_loop"])


@PROPERTY_SETTINGS
@given(rule_kinds, st.integers(min_value=1, max_value=6), st.text("abcde ", min_size=1, max_size=24))
def test_criterion_10d_execution_sequence_shape(kind, max_steps, payload):
    if kind == "text":
        rule = ScriptedRule(match="", respond="fine")
    elif kind == "tool_then":
        rule = ScriptedRule(match="", tool=ToolCall("echo", {"x": payload}), then="used {tool_result}")
    else:
        rule = ScriptedRule(match="", tool=ToolCall("echo", {"x": payload}))
    deps = _loop_deps(rule, max_steps)
    principal = Principal("alice", "finance", AccessAttributes.of(teams=["finance-staff"]))
    request = ResponsesRequest("run the payload", "m", tools=("echo",))
    if kind == "tool_loop" or (kind == "tool_then" and max_steps < 2):
        with pytest.raises(MaxStepsExceededError) as exc:
            run_response(principal, request, deps)
        assert len(exc.value.partial_steps) == max_steps
        assert all(s.tool_call is not None and s.tool_result is not None for s in exc.value.partial_steps)
    else:
        result = run_response(principal, request, deps)
        steps = result.sequence.steps
        assert 1 <= len(steps) <= max_steps
        assert steps[-1].tool_call is None and steps[-1].tool_result is None
        for step in steps[:-1]:
            assert step.tool_call is not None and step.tool_result is not None


@PROPERTY_SETTINGS
@given(
    st.sampled_from(["roles", "teams", "projects", "namespaces"]),
    st.text("xyz", min_size=1, max_size=6),
)
def test_criterion_10e_per_turn_revalidation(category, value):
    policy = default_policy()
    store = ConversationStore()
    owner = Principal("owner", "finance", AccessAttributes.from_mapping({category: [value]}))
    conv = store.create(owner)
    colleague = Principal("colleague", "finance", AccessAttributes.from_mapping({category: [value]}))
    assert store.load(colleague, conv.conv_id, policy).conv_id == conv.conv_id
    revoked = Principal("colleague", "finance", AccessAttributes())
    with pytest.raises(AuthorizationError):
        store.load(revoked, conv.conv_id, policy)


turn_strategy = st.tuples(
    st.sampled_from(["user", "assistant", "tool"]),
    st.lists(st.sampled_from(["aa", "bb", "cc", "dd"]), min_size=1, max_size=30).map(" ".join),
)


@PROPERTY_SETTINGS
@given(st.lists(turn_strategy, min_size=1, max_size=12), st.integers(min_value=1, max_value=64))
def test_criterion_10f_compaction_preserves_user_turns(turns, threshold):
    provider = ScriptedProvider(
        [ScriptedRule(match="Summarize the prior", respond="compact digest of earlier activity")]
    )
    principal = Principal("alice", "finance", AccessAttributes.of(teams=["finance-staff"]))
    conv = Conversation(
        conv_id="conv_prop",
        ownership=OwnershipMetadata(
            owner_tenant="finance", owner_user="alice", access_attributes=principal.attributes
        ),
        turns=tuple(Turn(role, text, len(text.split())) for role, text in turns),
    )
    out = compact_conversation(principal, conv, threshold, provider, default_policy())
    assert [t.text for t in out.turns if t.role == "user"] == [
        t.text for t in conv.turns if t.role == "user"
    ]
    compactable = any(t.role in ("assistant", "tool") for t in conv.turns)
    if conv.total_tokens > threshold and compactable:
        assert out.total_tokens < conv.total_tokens
    else:
        assert out is conv
