import statistics
import time

import pytest
from hypothesis import given

from tenantgate.errors import UnsupportedPolicyError, ValidationError
from tenantgate.policy import (
    DENY,
    PERMIT,
    AccessRule,
    Always,
    AttributeMatch,
    OwnerMatch,
    PolicySet,
    TenantEquals,
    build_storage_filter,
    default_policy,
    evaluate,
    load_policy_file,
    policy_from_config,
    policy_to_config,
)
from tenantgate.tenancy import AccessAttributes, OwnershipMetadata, Principal

from conftest import ownerships, policies, principals


def owned_by(p: Principal) -> OwnershipMetadata:
    return OwnershipMetadata(owner_tenant=p.tenant, owner_user=p.user_id)


class TestDefaultPolicy:
    def test_owner_is_permitted(self, finance_principal):
        decision = evaluate(default_policy(), finance_principal, owned_by(finance_principal))
        assert decision.outcome == PERMIT
        assert decision.matched_rule == 0

    def test_attribute_match_is_permitted(self, finance_principal):
        o = OwnershipMetadata(
            owner_tenant="legal",
            owner_user="someone",
            access_attributes=AccessAttributes.of(teams=["finance-staff"]),
        )
        assert evaluate(default_policy(), finance_principal, o).outcome == PERMIT

    def test_disjoint_other_owner_is_denied(self, finance_principal):
        o = OwnershipMetadata(
            owner_tenant="engineering",
            owner_user="bob",
            access_attributes=AccessAttributes.of(teams=["engineering-staff"]),
        )
        decision = evaluate(default_policy(), finance_principal, o)
        assert decision.outcome == DENY
        assert decision.matched_rule is None


class TestEvaluateSemantics:
    def test_empty_policy_denies_everything(self, finance_principal):
        assert evaluate(PolicySet(), finance_principal, owned_by(finance_principal)).outcome == DENY

    def test_earlier_deny_overrides_later_permit(self, finance_principal):
        o = owned_by(finance_principal)
        permit_only = PolicySet.of(AccessRule(PERMIT, OwnerMatch()))
        assert evaluate(permit_only, finance_principal, o).outcome == PERMIT
        with_deny = PolicySet.of(
            AccessRule(DENY, TenantEquals("finance")), AccessRule(PERMIT, OwnerMatch())
        )
        assert evaluate(with_deny, finance_principal, o).outcome == DENY

    def test_first_match_wins_in_order(self, finance_principal):
        o = owned_by(finance_principal)
        policy = PolicySet.of(AccessRule(PERMIT, Always()), AccessRule(DENY, Always()))
        assert evaluate(policy, finance_principal, o).outcome == PERMIT

    @given(policies, principals(), ownerships())
    def test_purity(self, policy, p, o):
        assert evaluate(policy, p, o) == evaluate(policy, p, o)

    @given(policies, principals(), ownerships())
    def test_permit_implies_permit_rule_matched(self, policy, p, o):
        decision = evaluate(policy, p, o)
        if decision.outcome == PERMIT:
            assert policy.rules[decision.matched_rule].scope == PERMIT

    def test_invalid_scope_rejected(self):
        with pytest.raises(ValidationError):
            AccessRule("allow", Always())

    def test_decision_reason_is_informative(self, finance_principal):
        decision = evaluate(default_policy(), finance_principal, owned_by(finance_principal))
        assert "OwnerMatch" in decision.reason


class TestStorageFilter:
    @given(policies, principals(), ownerships())
    def test_equivalent_to_evaluate(self, policy, p, o):
        predicate = build_storage_filter(policy, p)
        assert predicate(o) == (evaluate(policy, p, o).outcome == PERMIT)

    def test_empty_policy_filter_is_false(self, finance_principal):
        predicate = build_storage_filter(PolicySet(), finance_principal)
        assert not predicate(owned_by(finance_principal))

    def test_unknown_condition_kind_unsupported(self, finance_principal):
        class CustomCondition:
            def matches(self, p, o):
                return True

        policy = PolicySet.of(AccessRule(PERMIT, CustomCondition()))
        with pytest.raises(UnsupportedPolicyError):
            build_storage_filter(policy, finance_principal)


class TestPolicyConfig:
    def test_round_trip(self):
        policy = PolicySet.of(
            AccessRule(DENY, TenantEquals("acme")),
            AccessRule(PERMIT, OwnerMatch()),
            AccessRule(PERMIT, AttributeMatch(("roles", "teams"))),
            AccessRule(PERMIT, Always()),
        )
        assert policy_from_config(policy_to_config(policy)) == policy

    def test_load_file(self, tmp_path):
        path = tmp_path / "policy.json"
        path.write_text(
            '{"rules": [{"scope": "permit", "condition": "owner-match"},'
            ' {"scope": "deny", "condition": "tenant-equals", "tenant": "acme"}]}'
        )
        policy = load_policy_file(path)
        assert len(policy.rules) == 2
        assert policy.rules[1].condition == TenantEquals("acme")

    @pytest.mark.parametrize(
        "body",
        [
            "not json at all",
            '{"rules": "nope"}',
            '{"rules": [{"scope": "maybe", "condition": "always"}]}',
            '{"rules": [{"scope": "permit", "condition": "wildcard"}]}',
            '{"rules": [{"scope": "permit", "condition": "tenant-equals"}]}',
            '{"rules": [{"scope": "permit", "condition": "attribute-match", "categories": []}]}',
        ],
    )
    def test_malformed_files_abort(self, tmp_path, body):
        path = tmp_path / "bad.json"
        path.write_text(body)
        with pytest.raises(ValidationError):
            load_policy_file(path)

    def test_missing_file_aborts(self, tmp_path):
        with pytest.raises(ValidationError):
            load_policy_file(tmp_path / "absent.json")


def test_evaluate_median_latency_under_1ms(finance_principal):
    policy = default_policy()
    o = OwnershipMetadata(
        owner_tenant="legal",
        owner_user="someone",
        access_attributes=AccessAttributes.of(teams=["finance-staff"]),
    )
    samples = []
    for _ in range(2000):
        t0 = time.perf_counter_ns()
        evaluate(policy, finance_principal, o)
        samples.append((time.perf_counter_ns() - t0) / 1e6)
    assert statistics.median(samples) < 1.0
