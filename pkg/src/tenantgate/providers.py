"""Pluggable completion providers and the deterministic scripted provider.

The inference layer is shared across tenants: one provider instance serves
every principal, and isolation is enforced entirely by what context reaches
it. Providers must be safe to call from many requests concurrently and must
never carry state from one request into another's result.

The scripted provider replaces a real model in every experiment. Rules match
a substring of the last user message; the first match wins and either
returns text or emits a tool call. After a tool result arrives, the matched
rule's ``then`` text answers the follow-up inference step.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .errors import ValidationError
from .tenancy import count_tokens


@dataclass(frozen=True)
class Message:
    role: str  # user | assistant | tool | system
    text: str


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[Message, ...]
    available_tools: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValidationError("completion request requires at least one message")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    tool_call: ToolCall | None
    prompt_tokens: int
    completion_tokens: int


class InferenceProvider(Protocol):
    """Contract all completion backends implement."""

    def complete(self, req: CompletionRequest) -> CompletionResult: ...


@dataclass(frozen=True)
class ScriptedRule:
    """One row of the scripted response table.

    ``match`` is a substring pattern over the last user message ("" matches
    everything, making the rule a default). Exactly one of ``respond`` /
    ``tool`` is set. ``then`` is the post-tool follow-up; "{tool_result}"
    inside it is replaced by the tool output, and "{input}" inside tool
    arguments is replaced by the last user message. A tool rule without
    ``then`` keeps re-emitting its tool call, so the orchestrator's step
    bound is what terminates it.
    """

    match: str
    respond: str | None = None
    tool: ToolCall | None = None
    then: str | None = None

    def __post_init__(self) -> None:
        if (self.respond is None) == (self.tool is None):
            raise ValidationError("scripted rule must set exactly one of respond/tool")
        if self.then is not None and self.tool is None:
            raise ValidationError("'then' only applies to tool rules")


DEFAULT_FALLBACK = "I do not have a scripted answer for that."


class ScriptedProvider:
    """Deterministic rule-table provider with call counting.

    A default rule always exists: when no configured rule matches, the
    fallback text is returned. ``latency_s`` simulates inference time and is
    slept on every call (throughput experiments rely on it).
    """

    def __init__(
        self,
        rules: Sequence[ScriptedRule] = (),
        fallback: str = DEFAULT_FALLBACK,
        latency_s: float = 0.0,
    ):
        self.rules = tuple(rules)
        self.fallback = fallback
        self.latency_s = latency_s
        self._calls = 0
        self._lock = threading.Lock()

    # -- instrumentation ----------------------------------------------------

    def call_count(self) -> int:
        with self._lock:
            return self._calls

    def reset_count(self) -> None:
        with self._lock:
            self._calls = 0

    # -- completion ----------------------------------------------------------

    @staticmethod
    def _last_of_role(messages: tuple[Message, ...], role: str) -> Message | None:
        for m in reversed(messages):
            if m.role == role:
                return m
        return None

    def _match_rule(self, last_user_text: str) -> ScriptedRule | None:
        for rule in self.rules:
            if rule.match in last_user_text:
                return rule
        return None

    def complete(self, req: CompletionRequest) -> CompletionResult:
        with self._lock:
            self._calls += 1
        if self.latency_s > 0:
            time.sleep(self.latency_s)

        prompt_tokens = sum(count_tokens(m.text) for m in req.messages)
        last_user = self._last_of_role(req.messages, "user")
        rule = self._match_rule(last_user.text if last_user else "")

        # A trailing tool message means this is the follow-up step after a
        # tool execution: answer with the rule's 'then' template. Rules
        # without 'then' fall through and re-emit their action.
        if req.messages[-1].role == "tool" and rule is not None and rule.then is not None:
            text = rule.then.replace("{tool_result}", req.messages[-1].text)
            return CompletionResult(text, None, prompt_tokens, count_tokens(text))

        if rule is None:
            text = self.fallback
            return CompletionResult(text, None, prompt_tokens, count_tokens(text))

        if rule.respond is not None:
            text = rule.respond
            if last_user is not None:
                text = text.replace("{input}", last_user.text)
            return CompletionResult(text, None, prompt_tokens, count_tokens(text))

        args = dict(rule.tool.arguments)
        if last_user is not None:
            args = {
                k: (v.replace("{input}", last_user.text) if isinstance(v, str) else v)
                for k, v in args.items()
            }
        call = ToolCall(rule.tool.name, args)
        if call.name not in req.available_tools:
            # The scripted table asked for a tool the request did not offer;
            # degrade to text so the invariant on CompletionResult holds.
            text = self.fallback
            return CompletionResult(text, None, prompt_tokens, count_tokens(text))
        return CompletionResult("", call, prompt_tokens, 0)


class RemoteChatProvider:
    """Reference adapter shape for an OpenAI-style HTTP upstream.

    Declared so deployments can slot in a real backend; the evaluation never
    uses it and the test suite never touches the network.
    """

    def __init__(self, base_url: str, api_key: str = "", timeout_s: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout_s = timeout_s

    def complete(self, req: CompletionRequest) -> CompletionResult:
        import httpx

        payload = {
            "model": req.model_id,
            "messages": [{"role": m.role, "content": m.text} for m in req.messages],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        resp = httpx.post(
            f"{self.base_url}/v1/chat/completions", json=payload, headers=headers, timeout=self.timeout_s
        )
        resp.raise_for_status()
        body = resp.json()
        choice = body["choices"][0]["message"]
        usage = body.get("usage", {})
        return CompletionResult(
            text=choice.get("content") or "",
            tool_call=None,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )


# --- scripted rule files -----------------------------------------------------


def rules_from_config(config: dict) -> list[ScriptedRule]:
    entries = config.get("rules")
    if not isinstance(entries, list):
        raise ValidationError("scripted rule config must contain a 'rules' list")
    rules = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "match" not in entry:
            raise ValidationError(f"rules[{i}] must be an object with a 'match' field")
        tool_cfg = entry.get("tool")
        tool = None
        if tool_cfg is not None:
            if not isinstance(tool_cfg, dict) or "name" not in tool_cfg:
                raise ValidationError(f"rules[{i}].tool must be an object with a 'name'")
            tool = ToolCall(tool_cfg["name"], dict(tool_cfg.get("arguments", {})))
        rules.append(
            ScriptedRule(
                match=entry["match"],
                respond=entry.get("respond"),
                tool=tool,
                then=entry.get("then"),
            )
        )
    return rules


def load_scripted_rules(path: str | Path) -> list[ScriptedRule]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read scripted rule file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scripted rule file {path} is not valid JSON: {exc}") from exc
    return rules_from_config(config)


def default_eval_rules() -> list[ScriptedRule]:
    """Rule table used by the evaluation workloads.

    Chat-style prompts built by a client loop carry a "Context:" preamble and
    get a plain answer; anything else triggers a file_search round whose
    result is folded into the final text.
    """
    return [
        ScriptedRule(match="Context:", respond="Answer prepared from the provided context."),
        ScriptedRule(
            match="",
            tool=ToolCall("file_search", {"query": "{input}"}),
            then="Based on the records: {tool_result}",
        ),
    ]
