"""Security and retrieval-quality metrics.

Leak detection is canary-based and structural, never interpretive: a
response leaks when it contains a canary token (or a hit whose ownership the
policy denies) belonging to a document the probing principal may not read.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from ..errors import UndefinedRateError, ValidationError
from ..policy import PolicySet, is_permitted
from ..tenancy import Document, Principal, ownership_from_record
from .workload import find_canaries


@dataclass(frozen=True)
class CallOutcome:
    """One top-level API call made during an evaluation run."""

    call_kind: str  # search | chat | responses
    leaked: bool


@dataclass(frozen=True)
class ProbeOutcome:
    probe_id: str
    kind: str
    leaked: bool
    calls: tuple[CallOutcome, ...]
    ranked_doc_ids: tuple[str, ...] = ()


class LeakDetector:
    """Decides, for response content, whether unauthorized data is present."""

    def __init__(self, doc_map: Mapping[str, Document], canary_registry: Mapping[str, str], policy: PolicySet):
        self.doc_map = dict(doc_map)
        self.canary_registry = dict(canary_registry)
        self.policy = policy

    def unauthorized_canaries(self, text: str, principal: Principal) -> set[str]:
        found = find_canaries(text) & self.canary_registry.keys()
        leaked = set()
        for canary in found:
            doc = self.doc_map.get(self.canary_registry[canary])
            if doc is not None and not is_permitted(self.policy, principal, doc.ownership):
                leaked.add(canary)
        return leaked

    def hit_authorized(self, hit_record: Mapping, principal: Principal) -> bool:
        ownership = ownership_from_record(hit_record["ownership"])
        return is_permitted(self.policy, principal, ownership)

    def search_response_leaks(self, body: Mapping, principal: Principal) -> bool:
        return any(not self.hit_authorized(h, principal) for h in body.get("data", ()))

    def text_leaks(self, text: str, principal: Principal) -> bool:
        return bool(self.unauthorized_canaries(text, principal))


def compute_ctlr(outcomes: Sequence[ProbeOutcome]) -> float:
    """Fraction of probes whose response carried at least one unauthorized chunk."""
    if not outcomes:
        raise UndefinedRateError("CTLR is undefined over zero probes")
    return sum(1 for o in outcomes if o.leaked) / len(outcomes)


def compute_avr(calls: Sequence[CallOutcome]) -> float:
    """Fraction of all API calls whose response carried unauthorized data."""
    if not calls:
        raise UndefinedRateError("AVR is undefined over zero calls")
    return sum(1 for c in calls if c.leaked) / len(calls)


def compute_retrieval_quality(
    ranked: Sequence[Sequence[str]], expected: Sequence[set[str] | frozenset[str]], k: int = 5
) -> dict[str, float]:
    """Standard P@k / R@k / MRR over per-query ranked document ids."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(ranked) != len(expected):
        raise ValidationError("ranked and expected lists must align")
    if not ranked:
        raise UndefinedRateError("retrieval quality is undefined over zero queries")
    precisions, recalls, rrs = [], [], []
    for ids, exp in zip(ranked, expected):
        if not exp:
            raise ValidationError("expected sets must be non-empty")
        top = list(ids)[:k]
        hits = [i for i in top if i in exp]
        precisions.append(len(hits) / k)
        recalls.append(len(set(hits)) / len(exp))
        rr = 0.0
        for rank, i in enumerate(top, start=1):
            if i in exp:
                rr = 1.0 / rank
                break
        rrs.append(rr)
    n = len(ranked)
    return {
        "precision_at_k": sum(precisions) / n,
        "recall_at_k": sum(recalls) / n,
        "mrr": sum(rrs) / n,
        "k": float(k),
        "queries": float(n),
    }
