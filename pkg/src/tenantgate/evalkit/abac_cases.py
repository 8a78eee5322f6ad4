"""The 48-case authorization correctness matrix.

Cross product: 3 ownership relationships x 4 attribute-overlap patterns x
2 policy variants x 2 request granularities. Expected outcomes are authored
as a literal table, independent of the engine under test; a false positive
is a permit where the table says deny.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..policy import DENY, PERMIT, AccessRule, PolicySet, TenantEquals, default_policy, evaluate
from ..tenancy import AccessAttributes, Document, OwnershipMetadata, Principal, chunk_document

RESOURCE_TENANT = "acme"
OTHER_TENANT = "rival"

OWNER_RELATIONSHIPS = ("owner", "same_tenant", "other_tenant")
OVERLAP_PATTERNS = ("none", "roles", "teams", "projects")
POLICY_VARIANTS = ("default", "default_plus_tenant_deny")
REQUEST_TYPES = ("resource", "chunk")

# Hand-derived expectations for (relationship, overlap, variant); request
# granularity never changes the outcome because chunks inherit ownership.
EXPECTED = {
    # default policy: owner always permitted, otherwise any attribute overlap
    ("owner", "none", "default"): PERMIT,
    ("owner", "roles", "default"): PERMIT,
    ("owner", "teams", "default"): PERMIT,
    ("owner", "projects", "default"): PERMIT,
    ("same_tenant", "none", "default"): DENY,
    ("same_tenant", "roles", "default"): PERMIT,
    ("same_tenant", "teams", "default"): PERMIT,
    ("same_tenant", "projects", "default"): PERMIT,
    ("other_tenant", "none", "default"): DENY,
    ("other_tenant", "roles", "default"): PERMIT,
    ("other_tenant", "teams", "default"): PERMIT,
    ("other_tenant", "projects", "default"): PERMIT,
    # an explicit deny on the resource's tenant precedes everything
    ("owner", "none", "default_plus_tenant_deny"): DENY,
    ("owner", "roles", "default_plus_tenant_deny"): DENY,
    ("owner", "teams", "default_plus_tenant_deny"): DENY,
    ("owner", "projects", "default_plus_tenant_deny"): DENY,
    ("same_tenant", "none", "default_plus_tenant_deny"): DENY,
    ("same_tenant", "roles", "default_plus_tenant_deny"): DENY,
    ("same_tenant", "teams", "default_plus_tenant_deny"): DENY,
    ("same_tenant", "projects", "default_plus_tenant_deny"): DENY,
    ("other_tenant", "none", "default_plus_tenant_deny"): DENY,
    ("other_tenant", "roles", "default_plus_tenant_deny"): DENY,
    ("other_tenant", "teams", "default_plus_tenant_deny"): DENY,
    ("other_tenant", "projects", "default_plus_tenant_deny"): DENY,
}


@dataclass(frozen=True)
class MatrixCase:
    case_id: str
    relationship: str
    overlap: str
    variant: str
    request_type: str
    principal: Principal
    ownership: OwnershipMetadata
    policy: PolicySet
    expected: str


def _resource_document() -> Document:
    return Document(
        doc_id="matrix-doc",
        text=" ".join(["ledger"] * 32),
        topic="compliance-audit",
        ownership=OwnershipMetadata(
            owner_tenant=RESOURCE_TENANT,
            owner_user="owner-user",
            access_attributes=AccessAttributes.of(
                roles=["res-role"], teams=["res-team"], projects=["res-proj"]
            ),
        ),
    )


def _principal(relationship: str, overlap: str) -> Principal:
    if relationship == "owner":
        user, tenant = "owner-user", RESOURCE_TENANT
    elif relationship == "same_tenant":
        user, tenant = "colleague", RESOURCE_TENANT
    else:
        user, tenant = "outsider", OTHER_TENANT
    attrs = {"roles": ["p-role"], "teams": ["p-team"], "projects": ["p-proj"]}
    if overlap == "roles":
        attrs["roles"] = ["res-role"]
    elif overlap == "teams":
        attrs["teams"] = ["res-team"]
    elif overlap == "projects":
        attrs["projects"] = ["res-proj"]
    return Principal(user_id=user, tenant=tenant, attributes=AccessAttributes.from_mapping(attrs))


def _policy(variant: str) -> PolicySet:
    base = default_policy()
    if variant == "default":
        return base
    return PolicySet(rules=(AccessRule(DENY, TenantEquals(RESOURCE_TENANT)),) + base.rules)


def build_cases() -> list[MatrixCase]:
    doc = _resource_document()
    chunk_ownership = chunk_document(doc, 16)[0].ownership
    cases = []
    for relationship in OWNER_RELATIONSHIPS:
        for overlap in OVERLAP_PATTERNS:
            for variant in POLICY_VARIANTS:
                for request_type in REQUEST_TYPES:
                    cases.append(
                        MatrixCase(
                            case_id=f"{relationship}/{overlap}/{variant}/{request_type}",
                            relationship=relationship,
                            overlap=overlap,
                            variant=variant,
                            request_type=request_type,
                            principal=_principal(relationship, overlap),
                            ownership=doc.ownership if request_type == "resource" else chunk_ownership,
                            policy=_policy(variant),
                            expected=EXPECTED[(relationship, overlap, variant)],
                        )
                    )
    return cases


def run_abac_matrix() -> dict:
    """Evaluate all 48 cases; returns per-case rows and the summary."""
    rows = []
    correct = 0
    false_positives = 0
    for case in build_cases():
        actual = evaluate(case.policy, case.principal, case.ownership).outcome
        ok = actual == case.expected
        correct += ok
        if actual == PERMIT and case.expected == DENY:
            false_positives += 1
        rows.append(
            {
                "case_id": case.case_id,
                "expected": case.expected,
                "actual": actual,
                "ok": ok,
            }
        )
    total = len(rows)
    report = {
        "total": total,
        "correct": correct,
        "accuracy": correct / total,
        "false_positives": false_positives,
        "cases": rows,
    }
    report["checks"] = [
        {"name": "abac_matrix_all_correct", "passed": correct == total, "detail": f"{correct}/{total}"},
        {
            "name": "abac_matrix_no_false_positives",
            "passed": false_positives == 0,
            "detail": str(false_positives),
        },
    ]
    return report
