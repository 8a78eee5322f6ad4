"""Server-side control path: the inference/tool loop inside the trust boundary.

A response request runs through a fixed pipeline: input safety, then
alternating inference and tool execution until the provider stops asking for
tools, then output safety, then persistence into the tenant-scoped
conversation store. Every authorization decision uses the caller's principal;
tools never run under a service identity, and any deny happens before the
provider is invoked on that branch.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import (
    AuthorizationError,
    MaxStepsExceededError,
    NotFoundError,
    PolicyViolationError,
    ToolLocusError,
    ValidationError,
)
from .policy import PolicySet, evaluate
from .providers import CompletionRequest, InferenceProvider, Message, ToolCall
from .retrieval import GatingMode, SearchRequest, SyntheticEmbedder, VectorIndex, search_gated, search_ungated
from .tenancy import OwnershipMetadata, Principal, count_tokens

logger = logging.getLogger("tenantgate.safety")

DEFAULT_MAX_STEPS = 8

# Deterministic pattern screening. Injection phrasing is logged but allowed
# through: the actual defense lives in retrieval gating, and blocking on
# phrasing would only mask whether that defense works.
INJECTION_LOG_PATTERNS = (
    "ignore previous instructions",
    "ignore all previous instructions",
    "disregard prior instructions",
    "reveal your system prompt",
)
BLOCK_PATTERNS = (
    "<|im_start|>",
    "<<SYS>>",
    "[[BLOCKED-CONTENT]]",
)


@dataclass(frozen=True)
class SafetyVerdict:
    allowed: bool
    category: str | None = None
    matched_pattern: str | None = None

    def __post_init__(self) -> None:
        if not self.allowed and self.category is None:
            raise ValidationError("blocked verdicts must carry a category")


@dataclass(frozen=True)
class Turn:
    role: str  # user | assistant | tool
    text: str
    token_count: int


@dataclass(frozen=True)
class Conversation:
    conv_id: str
    ownership: OwnershipMetadata
    turns: tuple[Turn, ...] = ()

    @property
    def total_tokens(self) -> int:
        return sum(t.token_count for t in self.turns)


@dataclass(frozen=True)
class ExecutionStep:
    inference_output: str
    tool_call: ToolCall | None = None
    tool_result: str | None = None

    def __post_init__(self) -> None:
        if (self.tool_call is None) != (self.tool_result is None):
            raise ValidationError("tool_call and tool_result must be present together")


@dataclass(frozen=True)
class ExecutionSequence:
    steps: tuple[ExecutionStep, ...]
    final_response: str

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValidationError("an execution sequence has at least one step")
        if self.steps[-1].tool_call is not None:
            raise ValidationError("the final step must not carry a tool call")


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    execution_locus: str  # server | client
    authorization_required: bool = True

    def __post_init__(self) -> None:
        if self.execution_locus not in ("server", "client"):
            raise ValidationError("execution_locus must be 'server' or 'client'")


@dataclass(frozen=True)
class ToolOutcome:
    text: str
    data: dict | None = None


ToolHandler = Callable[[Principal, dict, "OrchestratorDeps"], ToolOutcome]


class ToolRegistry:
    def __init__(self) -> None:
        self._tools: dict[str, tuple[ToolDescriptor, ToolHandler | None]] = {}

    def register(self, descriptor: ToolDescriptor, handler: ToolHandler | None = None) -> None:
        if descriptor.execution_locus == "server" and handler is None:
            raise ValidationError(f"server tool {descriptor.name!r} requires a handler")
        self._tools[descriptor.name] = (descriptor, handler)

    def get(self, name: str) -> tuple[ToolDescriptor, ToolHandler | None]:
        if name not in self._tools:
            raise NotFoundError(f"tool {name!r} is not registered")
        return self._tools[name]

    def names(self) -> tuple[str, ...]:
        return tuple(self._tools)


class ConversationStore:
    """In-process conversation state with per-call authorization.

    Reads re-evaluate the policy on every access so attribute revocation
    takes effect on the next turn. Writes are serialized per conversation.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._conversations: dict[str, Conversation] = {}
        self._counter = 0

    def create(self, principal: Principal) -> Conversation:
        with self._lock:
            self._counter += 1
            conv = Conversation(
                conv_id=f"conv_{self._counter:06d}",
                ownership=OwnershipMetadata(
                    owner_tenant=principal.tenant,
                    owner_user=principal.user_id,
                    access_attributes=principal.attributes,
                    ingested_at=time.time(),
                ),
            )
            self._conversations[conv.conv_id] = conv
            return conv

    def _authorize(self, principal: Principal, conv: Conversation, policy: PolicySet) -> None:
        decision = evaluate(policy, principal, conv.ownership)
        if not decision.permitted:
            raise AuthorizationError(
                f"principal {principal.user_id!r} may not access conversation {conv.conv_id} ({decision.reason})"
            )

    def load(self, principal: Principal, conv_id: str, policy: PolicySet) -> Conversation:
        with self._lock:
            conv = self._conversations.get(conv_id)
        if conv is None:
            raise NotFoundError(f"conversation {conv_id!r} not found")
        self._authorize(principal, conv, policy)
        return conv

    def append_turn(
        self, principal: Principal, conv_id: str, role: str, text: str, policy: PolicySet
    ) -> Conversation:
        if role not in ("user", "assistant", "tool"):
            raise ValidationError(f"unknown turn role {role!r}")
        with self._lock:
            conv = self._conversations.get(conv_id)
            if conv is None:
                raise NotFoundError(f"conversation {conv_id!r} not found")
            self._authorize(principal, conv, policy)
            updated = Conversation(
                conv_id=conv.conv_id,
                ownership=conv.ownership,
                turns=conv.turns + (Turn(role, text, count_tokens(text)),),
            )
            self._conversations[conv_id] = updated
            return updated

    def replace(self, principal: Principal, conv: Conversation, policy: PolicySet) -> None:
        with self._lock:
            existing = self._conversations.get(conv.conv_id)
            if existing is None:
                raise NotFoundError(f"conversation {conv.conv_id!r} not found")
            self._authorize(principal, existing, policy)
            if existing.ownership != conv.ownership:
                raise ValidationError("conversation ownership is immutable")
            self._conversations[conv.conv_id] = conv

    def save_snapshot(self, path: str | Path) -> int:
        from .tenancy import ownership_to_record

        with self._lock:
            payload = {
                cid: {
                    "ownership": ownership_to_record(c.ownership),
                    "turns": [[t.role, t.text, t.token_count] for t in c.turns],
                }
                for cid, c in self._conversations.items()
            }
            counter = self._counter
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"counter": counter, "conversations": payload}, fh, sort_keys=True)
        return len(payload)

    def load_snapshot(self, path: str | Path) -> int:
        from .tenancy import ownership_from_record

        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        with self._lock:
            self._counter = int(data.get("counter", 0))
            self._conversations = {
                cid: Conversation(
                    conv_id=cid,
                    ownership=ownership_from_record(entry["ownership"]),
                    turns=tuple(Turn(r, txt, int(n)) for r, txt, n in entry["turns"]),
                )
                for cid, entry in data.get("conversations", {}).items()
            }
            return len(self._conversations)


class SafetyChecker:
    """Deterministic input/output screening plus a retrieval leak detector.

    The output-side leak detector flags any verbatim chunk text whose
    ownership the principal is not permitted on. It is only armed when the
    orchestrator runs gated retrieval: the ungated configuration exists to
    measure behavior *without* an authorization stack, and scrubbing its
    output would silently re-enable one.
    """

    def __init__(
        self,
        index: VectorIndex | None = None,
        policy: PolicySet | None = None,
        leak_check_enabled: bool = True,
        block_patterns: tuple[str, ...] = BLOCK_PATTERNS,
        injection_patterns: tuple[str, ...] = INJECTION_LOG_PATTERNS,
    ):
        self.index = index
        self.policy = policy
        self.leak_check_enabled = leak_check_enabled
        self.block_patterns = block_patterns
        self.injection_patterns = injection_patterns

    def _screen(self, text: str) -> SafetyVerdict | None:
        lowered = text.lower()
        for pattern in self.block_patterns:
            if pattern.lower() in lowered:
                return SafetyVerdict(allowed=False, category="blocked-content", matched_pattern=pattern)
        for pattern in self.injection_patterns:
            if pattern.lower() in lowered:
                logger.info("prompt-injection phrasing observed (pattern=%r); allowed through", pattern)
                return SafetyVerdict(allowed=True, category="prompt-injection", matched_pattern=pattern)
        return None

    def input_safety(self, text: str) -> SafetyVerdict:
        return self._screen(text) or SafetyVerdict(allowed=True)

    def output_safety(self, text: str, principal: Principal) -> SafetyVerdict:
        screened = self._screen(text)
        if screened is not None and not screened.allowed:
            return screened
        if self.leak_check_enabled and self.index is not None and self.policy is not None:
            from .policy import is_permitted

            for chunk_id, _vec, chunk in self.index.entries():
                if chunk.text in text and not is_permitted(self.policy, principal, chunk.ownership):
                    return SafetyVerdict(
                        allowed=False, category="cross-tenant-leak", matched_pattern=chunk_id
                    )
        return screened or SafetyVerdict(allowed=True)


# --- tools -------------------------------------------------------------------


def file_search_tool(principal: Principal, args: dict, deps: "OrchestratorDeps") -> ToolOutcome:
    """Retrieve chunks for the calling principal, honoring the gating mode."""
    query_text = str(args.get("query", ""))
    if not query_text.strip():
        return ToolOutcome("[file_search: empty query]", {"hits": []})
    k = int(args.get("k", deps.search_k))
    query = deps.embedder.embed_query(query_text)
    if deps.retrieval_mode.kind == "ungated":
        result = search_ungated(deps.index, SearchRequest(query=query, k=k, mode=GatingMode.ungated()))
    else:
        result = search_gated(
            deps.index, principal, deps.policy, SearchRequest(query=query, k=k, mode=deps.retrieval_mode)
        )
    if not result.hits:
        return ToolOutcome("[file_search: no results]", {"hits": []})
    lines = [f"[{h.chunk_id}] {h.text}" for h in result.hits]
    data = {
        "hits": [
            {
                "chunk_id": h.chunk_id,
                "doc_id": h.doc_id,
                "score": h.score,
                "owner_tenant": h.ownership.owner_tenant,
            }
            for h in result.hits
        ]
    }
    return ToolOutcome("\n".join(lines), data)


def echo_tool(principal: Principal, args: dict, deps: "OrchestratorDeps") -> ToolOutcome:
    """Stub function tool: returns its argument unchanged."""
    return ToolOutcome(str(args.get("x", "")), None)


def default_tool_registry() -> ToolRegistry:
    registry = ToolRegistry()
    registry.register(ToolDescriptor("file_search", "server"), file_search_tool)
    registry.register(ToolDescriptor("echo", "server", authorization_required=False), echo_tool)
    # Declared so the locus refusal path is a real, registered surface.
    registry.register(ToolDescriptor("client_calculator", "client"), None)
    return registry


@dataclass
class OrchestratorDeps:
    provider: InferenceProvider
    index: VectorIndex
    policy: PolicySet
    embedder: SyntheticEmbedder
    store: ConversationStore
    safety: SafetyChecker
    tools: ToolRegistry = field(default_factory=default_tool_registry)
    retrieval_mode: GatingMode = field(default_factory=GatingMode.pushdown)
    max_steps: int = DEFAULT_MAX_STEPS
    search_k: int = 5


@dataclass(frozen=True)
class ResponsesRequest:
    input_text: str
    model_id: str
    conversation_id: str | None = None
    tools: tuple[str, ...] = ("file_search", "echo")

    def __post_init__(self) -> None:
        if not self.input_text:
            raise ValidationError("input text must be non-empty")


@dataclass(frozen=True)
class OrchestrationResult:
    sequence: ExecutionSequence
    conversation_id: str
    final_text: str
    output_items: tuple[dict, ...]
    usage: dict


def execute_tool(principal: Principal, call: ToolCall, deps: OrchestratorDeps) -> ToolOutcome:
    """Run a server-locus tool under the caller's identity.

    Authorization failures inside a tool degrade to an annotated empty
    result rather than aborting the whole response.
    """
    descriptor, handler = deps.tools.get(call.name)
    if descriptor.execution_locus != "server":
        raise ToolLocusError(f"tool {call.name!r} is client-locus and cannot run server-side")
    assert handler is not None
    try:
        return handler(principal, call.arguments, deps)
    except AuthorizationError as exc:
        return ToolOutcome(f"[denied: {exc}]", {"denied": True, "hits": []})


def run_response(
    principal: Principal, request: ResponsesRequest, deps: OrchestratorDeps
) -> OrchestrationResult:
    """Execute one responses-API request end to end inside the trust boundary.

    Pipeline order: input safety -> (inference -> tool)* -> output safety ->
    persist. Any deny on this path raises before the provider is called.
    """
    verdict = deps.safety.input_safety(request.input_text)
    if not verdict.allowed:
        raise PolicyViolationError(
            f"input blocked by safety screening ({verdict.matched_pattern!r})", category=verdict.category
        )

    if request.conversation_id is not None:
        conversation = deps.store.load(principal, request.conversation_id, deps.policy)
    else:
        conversation = deps.store.create(principal)

    messages = [Message(t.role, t.text) for t in conversation.turns]
    messages.append(Message("user", request.input_text))

    steps: list[ExecutionStep] = []
    tool_data: list[dict | None] = []
    prompt_tokens = 0
    completion_tokens = 0
    for _ in range(deps.max_steps):
        result = deps.provider.complete(
            CompletionRequest(request.model_id, tuple(messages), request.tools)
        )
        prompt_tokens += result.prompt_tokens
        completion_tokens += result.completion_tokens
        if result.tool_call is None:
            steps.append(ExecutionStep(result.text))
            tool_data.append(None)
            break
        outcome = execute_tool(principal, result.tool_call, deps)
        steps.append(ExecutionStep(result.text, result.tool_call, outcome.text))
        tool_data.append(outcome.data)
        messages.append(Message("tool", outcome.text))
    else:
        raise MaxStepsExceededError(
            f"no terminal step after {deps.max_steps} inference calls", partial_steps=steps
        )

    final_text = steps[-1].inference_output
    sequence = ExecutionSequence(steps=tuple(steps), final_response=final_text)

    out_verdict = deps.safety.output_safety(final_text, principal)
    if not out_verdict.allowed:
        # Nothing is persisted for a blocked response.
        raise PolicyViolationError(
            f"output blocked by safety screening ({out_verdict.category})", category=out_verdict.category
        )

    deps.store.append_turn(principal, conversation.conv_id, "user", request.input_text, deps.policy)
    for step in steps:
        if step.tool_result is not None:
            deps.store.append_turn(principal, conversation.conv_id, "tool", step.tool_result, deps.policy)
    deps.store.append_turn(principal, conversation.conv_id, "assistant", final_text, deps.policy)

    output_items: list[dict] = []
    for step, data in zip(steps, tool_data):
        if step.tool_call is not None:
            item = {
                "type": "tool_call",
                "name": step.tool_call.name,
                "arguments": step.tool_call.arguments,
                "result": step.tool_result,
            }
            if data is not None and "hits" in data:
                item["results"] = data["hits"]
            output_items.append(item)
    output_items.append(
        {
            "type": "message",
            "role": "assistant",
            "content": [{"type": "output_text", "text": final_text}],
        }
    )

    return OrchestrationResult(
        sequence=sequence,
        conversation_id=conversation.conv_id,
        final_text=final_text,
        output_items=tuple(output_items),
        usage={
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens,
        },
    )


COMPACTION_PROMPT = "Summarize the prior assistant and tool activity for handoff:"


def compact_conversation(
    principal: Principal,
    conv: Conversation,
    threshold_tokens: int,
    provider: InferenceProvider,
    policy: PolicySet,
) -> Conversation:
    """Collapse assistant/tool history into one summary turn when over budget.

    User turns are preserved byte-identically and in order. The summary is
    produced by the provider and truncated so the compacted conversation is
    always strictly smaller than the original. Below the threshold (or with
    nothing to compact) the conversation is returned unchanged.
    """
    if threshold_tokens < 1:
        raise ValidationError("threshold_tokens must be >= 1")
    decision = evaluate(policy, principal, conv.ownership)
    if not decision.permitted:
        raise AuthorizationError(
            f"principal {principal.user_id!r} may not compact conversation {conv.conv_id}"
        )
    if conv.total_tokens <= threshold_tokens:
        return conv

    replaced = [t for t in conv.turns if t.role in ("assistant", "tool")]
    if not replaced:
        return conv
    replaced_tokens = sum(t.token_count for t in replaced)

    instruction = (
        f"{COMPACTION_PROMPT} {len(replaced)} turns totalling {replaced_tokens} tokens."
    )
    summary = provider.complete(
        CompletionRequest("compaction", (Message("user", instruction),), ())
    ).text

    budget = replaced_tokens - 1
    summary_words = summary.split()[:budget]
    new_turns: tuple[Turn, ...] = tuple(t for t in conv.turns if t.role == "user")
    if summary_words:
        text = " ".join(summary_words)
        new_turns = (Turn("assistant", text, len(summary_words)),) + new_turns
    return Conversation(conv_id=conv.conv_id, ownership=conv.ownership, turns=new_turns)
