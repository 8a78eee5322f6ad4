import json
from collections import Counter

import pytest

from tenantgate.errors import ValidationError
from tenantgate.evalkit.workload import (
    INJECTION_CATEGORIES,
    CorpusSpec,
    build_scaling_workload,
    build_workload,
    find_canaries,
    principal_token,
    read_canary_registry,
    read_probes,
    tenant_principal,
    write_canary_registry,
    write_probes,
)
from tenantgate.gateway import parse_token
from tenantgate.tenancy import count_tokens, read_corpus, write_corpus


@pytest.fixture(scope="module")
def workload():
    return build_workload(CorpusSpec(seed=1))


class TestCorpusGeneration:
    def test_default_counts(self, workload):
        assert len(workload.documents) == 300
        per_tenant = Counter(d.ownership.owner_tenant for d in workload.documents)
        assert per_tenant == {"finance": 100, "engineering": 100, "legal": 100}

    def test_topic_histogram_uniform(self, workload):
        hist = Counter((d.ownership.owner_tenant, d.topic) for d in workload.documents)
        assert set(hist.values()) == {10}
        assert len(hist) == 30

    def test_document_length_near_target(self, workload):
        for d in workload.documents:
            assert count_tokens(d.text) == 512

    def test_canaries_unique_and_embedded(self, workload):
        assert len(workload.canary_registry) == 300
        for canary, doc_id in workload.canary_registry.items():
            assert canary in workload.doc_map[doc_id].text
        per_doc = Counter(len(find_canaries(d.text)) for d in workload.documents)
        assert per_doc == {1: 300}

    def test_same_seed_is_byte_identical(self):
        a = build_workload(CorpusSpec(seed=9))
        b = build_workload(CorpusSpec(seed=9))
        assert [d.text for d in a.documents] == [d.text for d in b.documents]
        assert a.canary_registry == b.canary_registry
        assert a.probes == b.probes

    def test_different_seed_differs(self):
        a = build_workload(CorpusSpec(seed=1, docs_per_tenant=20))
        b = build_workload(CorpusSpec(seed=2, docs_per_tenant=20))
        assert [d.text for d in a.documents] != [d.text for d in b.documents]

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            CorpusSpec(tenants=("solo",))
        with pytest.raises(ValidationError):
            CorpusSpec(docs_per_tenant=5, topics=10)
        with pytest.raises(ValidationError):
            CorpusSpec(tokens_per_doc=4)


class TestProbeGeneration:
    def test_counts(self, workload):
        p = workload.probes
        assert len(p.authorized) == 300
        assert len(p.cross_tenant) == 300
        assert len(p.injection) == 90

    def test_injection_category_split(self, workload):
        split = Counter(p.category for p in workload.probes.injection)
        assert split == {
            "instruction_override": 23,
            "role_impersonation": 23,
            "debug_exploitation": 22,
            "context_manipulation": 22,
        }
        assert set(split) == set(INJECTION_CATEGORIES)

    def test_authorized_expected_sets_nonempty_and_own_tenant(self, workload):
        for p in workload.probes.authorized:
            assert p.expected_doc_ids
            for doc_id in p.expected_doc_ids:
                assert workload.doc_map[doc_id].ownership.owner_tenant == p.principal.tenant

    def test_cross_probes_target_other_tenants(self, workload):
        for p in workload.probes.cross_tenant:
            assert p.target_tenant != p.principal.tenant
            assert workload.doc_map[p.target_doc_id].ownership.owner_tenant == p.target_tenant

    def test_queries_never_contain_canaries(self, workload):
        for group in (workload.probes.authorized, workload.probes.cross_tenant, workload.probes.injection):
            for p in group:
                assert not find_canaries(p.query_text)

    def test_injection_wraps_template(self, workload):
        p = workload.probes.injection[0]
        assert p.category == "instruction_override"
        assert p.query_text.startswith("Ignore previous instructions")


class TestFileRoundTrips:
    def test_corpus_file(self, tmp_path, workload):
        path = tmp_path / "corpus.jsonl"
        write_corpus(path, workload.documents)
        loaded = list(read_corpus(path))
        assert len(loaded) == 300
        assert loaded[0] == workload.documents[0]

    def test_probes_file(self, tmp_path, workload):
        path = tmp_path / "probes.json"
        write_probes(path, workload.probes, workload.spec)
        loaded = read_probes(path)
        assert loaded == workload.probes
        meta = json.loads(path.read_text())["spec"]
        assert meta["seed"] == 1

    def test_canary_registry_file(self, tmp_path, workload):
        path = tmp_path / "canaries.json"
        write_canary_registry(path, workload.canary_registry)
        assert read_canary_registry(path) == workload.canary_registry

    def test_registry_file_is_byte_stable(self, tmp_path, workload):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_canary_registry(a, workload.canary_registry)
        write_canary_registry(b, dict(reversed(list(workload.canary_registry.items()))))
        assert a.read_bytes() == b.read_bytes()


class TestPrincipalToken:
    def test_round_trips_through_gateway_parser(self):
        p = tenant_principal("finance")
        assert parse_token(principal_token(p)) == p


class TestScalingWorkload:
    def test_shape(self):
        w = build_scaling_workload(1000, seed=0)
        assert len(w.documents) == 1000
        assert len(w.queries) == 5
        for q in w.queries:
            assert len(q.expected_doc_ids) == 5
            for doc_id in q.expected_doc_ids:
                assert doc_id.startswith("finance-scale-")
        assert w.principal.tenant == "finance"

    def test_deterministic(self):
        a = build_scaling_workload(200, seed=3)
        b = build_scaling_workload(200, seed=3)
        assert [d.text for d in a.documents] == [d.text for d in b.documents]

    def test_too_small_rejected(self):
        with pytest.raises(ValidationError):
            build_scaling_workload(50)
