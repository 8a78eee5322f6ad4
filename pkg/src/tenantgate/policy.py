"""Declarative attribute-based access control with a default-deny model.

A PolicySet is an ordered rule list. Evaluation walks the list and the first
rule whose condition matches decides the outcome; when nothing matches the
answer is deny. Placing a deny rule ahead of a permit rule therefore
overrides it, which keeps combination semantics trivially auditable.

Two evaluation routes exist on purpose:

* :func:`evaluate` interprets the rule list per call.
* :func:`build_storage_filter` compiles the rule list once into a metadata
  predicate suitable for pushdown inside a vector index scan.

The two must agree on every (principal, ownership) pair; the test suite
checks this equivalence exhaustively on randomized inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import UnsupportedPolicyError, ValidationError
from .tenancy import ATTRIBUTE_CATEGORIES, OwnershipMetadata, Principal, TenantId

PERMIT = "permit"
DENY = "deny"

MetadataPredicate = Callable[[OwnershipMetadata], bool]


@dataclass(frozen=True)
class OwnerMatch:
    """Principal is the resource owner (same user id and tenant)."""

    def matches(self, p: Principal, o: OwnershipMetadata) -> bool:
        return p.user_id == o.owner_user and p.tenant == o.owner_tenant


@dataclass(frozen=True)
class AttributeMatch:
    """At least one listed category intersects between principal and resource."""

    categories: tuple[str, ...] = ATTRIBUTE_CATEGORIES

    def __post_init__(self) -> None:
        unknown = set(self.categories) - set(ATTRIBUTE_CATEGORIES)
        if unknown:
            raise ValidationError(f"unknown attribute categories: {sorted(unknown)}")

    def matches(self, p: Principal, o: OwnershipMetadata) -> bool:
        return p.attributes.intersects(o.access_attributes, self.categories)


@dataclass(frozen=True)
class TenantEquals:
    """Resource is owned by the given tenant (resource-scoped condition)."""

    tenant: TenantId

    def matches(self, p: Principal, o: OwnershipMetadata) -> bool:
        return o.owner_tenant == self.tenant


@dataclass(frozen=True)
class Always:
    def matches(self, p: Principal, o: OwnershipMetadata) -> bool:
        return True


Condition = OwnerMatch | AttributeMatch | TenantEquals | Always


@dataclass(frozen=True)
class AccessRule:
    scope: str  # PERMIT or DENY
    condition: Condition

    def __post_init__(self) -> None:
        if self.scope not in (PERMIT, DENY):
            raise ValidationError(f"rule scope must be permit or deny, got {self.scope!r}")


@dataclass(frozen=True)
class PolicySet:
    rules: tuple[AccessRule, ...] = ()

    @classmethod
    def of(cls, *rules: AccessRule) -> "PolicySet":
        return cls(rules=tuple(rules))


@dataclass(frozen=True)
class Decision:
    outcome: str
    matched_rule: int | None
    reason: str

    @property
    def permitted(self) -> bool:
        return self.outcome == PERMIT


def default_policy() -> PolicySet:
    """Permit owners and attribute matches; everything else is denied."""
    return PolicySet.of(
        AccessRule(PERMIT, OwnerMatch()),
        AccessRule(PERMIT, AttributeMatch()),
    )


def evaluate(policy: PolicySet, p: Principal, o: OwnershipMetadata) -> Decision:
    """Pure, total decision function: first matching rule wins, else deny."""
    for i, rule in enumerate(policy.rules):
        if rule.condition.matches(p, o):
            return Decision(
                outcome=rule.scope,
                matched_rule=i,
                reason=f"rule[{i}] {rule.scope} {type(rule.condition).__name__}",
            )
    return Decision(outcome=DENY, matched_rule=None, reason="default-deny: no rule matched")


def is_permitted(policy: PolicySet, p: Principal, o: OwnershipMetadata) -> bool:
    return evaluate(policy, p, o).outcome == PERMIT


def _compile_condition(cond: Condition, p: Principal) -> MetadataPredicate:
    # Deliberately re-derives each condition against ownership fields instead
    # of calling cond.matches, so the compiled route stays independent of the
    # interpreted route.
    if isinstance(cond, OwnerMatch):
        user, tenant = p.user_id, p.tenant
        return lambda o: o.owner_user == user and o.owner_tenant == tenant
    if isinstance(cond, AttributeMatch):
        wanted = [(c, p.attributes.category(c)) for c in cond.categories]
        wanted = [(c, vals) for c, vals in wanted if vals]
        if not wanted:
            return lambda o: False
        return lambda o: any(vals & o.access_attributes.category(c) for c, vals in wanted)
    if isinstance(cond, TenantEquals):
        t = cond.tenant
        return lambda o: o.owner_tenant == t
    if isinstance(cond, Always):
        return lambda o: True
    raise UnsupportedPolicyError(
        f"condition {type(cond).__name__} is not expressible as a metadata predicate"
    )


def build_storage_filter(policy: PolicySet, p: Principal) -> MetadataPredicate:
    """Compile the policy into a single ownership predicate for pushdown.

    For every ownership o the predicate returns exactly
    ``evaluate(policy, p, o).outcome == permit``.
    """
    compiled: list[tuple[str, MetadataPredicate]] = [
        (rule.scope, _compile_condition(rule.condition, p)) for rule in policy.rules
    ]

    def predicate(o: OwnershipMetadata) -> bool:
        for scope, cond in compiled:
            if cond(o):
                return scope == PERMIT
        return False

    return predicate


# --- policy configuration files -------------------------------------------

_CONDITION_NAMES = ("owner-match", "attribute-match", "tenant-equals", "always")


def _condition_from_config(entry: dict) -> Condition:
    name = entry.get("condition")
    if name == "owner-match":
        return OwnerMatch()
    if name == "attribute-match":
        categories = entry.get("categories", list(ATTRIBUTE_CATEGORIES))
        if not isinstance(categories, list) or not categories:
            raise ValidationError("attribute-match requires a non-empty 'categories' list")
        return AttributeMatch(categories=tuple(categories))
    if name == "tenant-equals":
        tenant = entry.get("tenant")
        if not tenant or not isinstance(tenant, str):
            raise ValidationError("tenant-equals requires a non-empty 'tenant' string")
        return TenantEquals(tenant=tenant)
    if name == "always":
        return Always()
    raise ValidationError(f"unknown condition {name!r}; expected one of {_CONDITION_NAMES}")


def _condition_to_config(cond: Condition) -> dict:
    if isinstance(cond, OwnerMatch):
        return {"condition": "owner-match"}
    if isinstance(cond, AttributeMatch):
        return {"condition": "attribute-match", "categories": list(cond.categories)}
    if isinstance(cond, TenantEquals):
        return {"condition": "tenant-equals", "tenant": cond.tenant}
    if isinstance(cond, Always):
        return {"condition": "always"}
    raise UnsupportedPolicyError(f"cannot serialize condition {type(cond).__name__}")


def policy_from_config(config: dict) -> PolicySet:
    rules_cfg = config.get("rules")
    if not isinstance(rules_cfg, list):
        raise ValidationError("policy config must contain a 'rules' list")
    rules = []
    for i, entry in enumerate(rules_cfg):
        if not isinstance(entry, dict):
            raise ValidationError(f"rules[{i}] must be an object")
        scope = entry.get("scope")
        if scope not in (PERMIT, DENY):
            raise ValidationError(f"rules[{i}].scope must be permit or deny, got {scope!r}")
        rules.append(AccessRule(scope=scope, condition=_condition_from_config(entry)))
    return PolicySet(rules=tuple(rules))


def policy_to_config(policy: PolicySet) -> dict:
    return {
        "rules": [{"scope": r.scope, **_condition_to_config(r.condition)} for r in policy.rules]
    }


def load_policy_file(path: str | Path) -> PolicySet:
    """Load a policy config; any malformation raises with a diagnostic."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read policy file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"policy file {path} is not valid JSON: {exc}") from exc
    return policy_from_config(config)
