"""HTTP service boundary: authentication, routing, and the public endpoints.

Authorization is enforced at three levels on the data path:

1. route guard: handlers re-verify every hit they are about to serialize,
2. route table: resource ids resolve to providers only after a policy check,
3. storage filter: gated search applies the predicate at read time.

Each level is independently sufficient to keep unauthorized chunks out of a
gated search response; the config carries per-level kill switches so tests
can demonstrate that redundancy. Ungated experiment endpoints exist under an
explicit ``/v1/unsafe/`` prefix and only when the config opts in.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable

from fastapi import Body, Depends, FastAPI, Request
from fastapi.responses import JSONResponse

from .errors import (
    AuthenticationError,
    AuthorizationError,
    ConfigurationError,
    ConflictError,
    MaxStepsExceededError,
    NotFoundError,
    PolicyViolationError,
    TenantGateError,
    ToolLocusError,
    UnsupportedPolicyError,
    ValidationError,
)
from .orchestration import (
    ConversationStore,
    OrchestratorDeps,
    ResponsesRequest,
    SafetyChecker,
    compact_conversation,
    default_tool_registry,
    run_response,
)
from .policy import (
    PERMIT,
    AccessRule,
    Always,
    PolicySet,
    default_policy,
    evaluate,
    is_permitted,
    load_policy_file,
)
from .providers import Message, CompletionRequest, ScriptedProvider, default_eval_rules, load_scripted_rules
from .retrieval import (
    DEFAULT_DIMENSION,
    Embedding,
    GatingMode,
    SearchRequest,
    SyntheticEmbedder,
    VectorIndex,
    search_gated,
    search_ungated,
)
from .tenancy import (
    AccessAttributes,
    Document,
    OwnershipMetadata,
    Principal,
    ownership_to_record,
    read_corpus,
)

access_log = logging.getLogger("tenantgate.access")

DEFAULT_TENANTS = ("finance", "engineering", "legal")
SHARED_STORE_ID = "vs_main"
SHARED_MODEL_ID = "scripted-model"


@dataclass
class ServerConfig:
    """Startup configuration; loadable from JSON with env overrides."""

    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    policy_path: str | None = None
    scripted_rules_path: str | None = None
    corpus_path: str | None = None
    enable_ungated_endpoints: bool = False
    gating_mode: str = "pushdown"  # default mode for gated search
    overfetch_factor: int = 5
    max_steps: int = 8
    simulated_latency_s: float = 0.05
    embedding_dim: int = DEFAULT_DIMENSION
    seed: int = 0
    tenants: tuple[str, ...] = DEFAULT_TENANTS
    search_k: int = 5
    chunk_target_tokens: int = 512
    # Defense-in-depth kill switches (tests only; all on in any deployment).
    enforce_route_guard: bool = True
    enforce_route_table: bool = True
    enforce_storage_filter: bool = True

    def __post_init__(self) -> None:
        if self.gating_mode not in ("pushdown", "post_filter"):
            raise ValidationError("gating_mode must be 'pushdown' or 'post_filter'")

    def default_search_mode(self) -> GatingMode:
        if self.gating_mode == "pushdown":
            return GatingMode.pushdown()
        return GatingMode.post_filter(self.overfetch_factor)


def load_server_config(path: str | Path) -> ServerConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read server config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"server config {path} is not valid JSON: {exc}") from exc
    known = {f.name for f in fields(ServerConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"server config has unknown fields: {sorted(unknown)}")
    if "tenants" in raw:
        raw["tenants"] = tuple(raw["tenants"])
    return ServerConfig(**raw)


def apply_env_overrides(config: ServerConfig, env: dict | None = None) -> ServerConfig:
    env = env if env is not None else dict(os.environ)
    listen = env.get("TENANTGATE_LISTEN")
    if listen:
        host, _, port = listen.partition(":")
        config = replace(
            config,
            listen_host=host or config.listen_host,
            listen_port=int(port) if port else config.listen_port,
        )
    return config


# --- authentication ----------------------------------------------------------


def parse_token(token: str) -> Principal:
    """Parse the mock bearer scheme ``tenant:user[:cat=v1,v2;cat=...]``."""
    parts = token.split(":", 2)
    if len(parts) < 2 or not parts[0] or not parts[1]:
        raise AuthenticationError("malformed bearer token")
    tenant, user = parts[0], parts[1]
    attrs: dict[str, list[str]] = {}
    if len(parts) == 3 and parts[2]:
        for clause in parts[2].split(";"):
            if not clause:
                continue
            category, eq, values = clause.partition("=")
            if not eq or not category:
                raise AuthenticationError(f"malformed attribute clause {clause!r}")
            attrs[category] = [v for v in values.split(",") if v]
    try:
        attributes = AccessAttributes.from_mapping(attrs)
    except ValidationError as exc:
        raise AuthenticationError(str(exc)) from exc
    return Principal(user_id=user, tenant=tenant, attributes=attributes)


def authenticate(request: Request) -> Principal:
    header = request.headers.get("authorization")
    if not header:
        raise AuthenticationError("missing Authorization header")
    scheme, _, token = header.partition(" ")
    if scheme.lower() != "bearer" or not token:
        raise AuthenticationError("expected 'Authorization: Bearer <token>'")
    principal = parse_token(token.strip())
    request.state.principal = principal
    return principal


# --- routing -----------------------------------------------------------------


@dataclass(frozen=True)
class RouteEntry:
    resource_id: str
    kind: str  # "model" | "vector_store"
    target: object
    ownership: OwnershipMetadata
    policy: PolicySet


class RouteTable:
    """Logical resource ids -> provider instances, authorization included."""

    def __init__(self) -> None:
        self._entries: dict[tuple[str, str], RouteEntry] = {}

    def register(self, entry: RouteEntry) -> None:
        self._entries[(entry.kind, entry.resource_id)] = entry

    def resolve(self, principal: Principal, kind: str, resource_id: str, enforce: bool = True) -> RouteEntry:
        entry = self._entries.get((kind, resource_id))
        if entry is None:
            raise NotFoundError(f"{kind} {resource_id!r} is not routed")
        if enforce:
            decision = evaluate(entry.policy, principal, entry.ownership)
            if not decision.permitted:
                raise AuthorizationError(
                    f"principal {principal.user_id!r} may not use {kind} {resource_id!r} ({decision.reason})"
                )
        return entry

    def ids(self, kind: str) -> list[str]:
        return sorted(rid for (k, rid) in self._entries if k == kind)


def _shared_policy() -> PolicySet:
    return PolicySet.of(AccessRule(PERMIT, Always()))


class GatewayState:
    """Everything the handlers share; one instance per app."""

    def __init__(self, config: ServerConfig, documents: Iterable[Document] | None = None):
        self.config = config
        self.policy = load_policy_file(config.policy_path) if config.policy_path else default_policy()
        rules = (
            load_scripted_rules(config.scripted_rules_path)
            if config.scripted_rules_path
            else default_eval_rules()
        )
        self.provider = ScriptedProvider(rules, latency_s=config.simulated_latency_s)
        self.embedder = SyntheticEmbedder(dim=config.embedding_dim, seed=config.seed)
        self.store = ConversationStore()
        self.tools = default_tool_registry()
        self.routes = RouteTable()
        self._id_lock = threading.Lock()
        self._response_counter = 0
        self._chat_counter = 0

        self.indexes: dict[str, VectorIndex] = {SHARED_STORE_ID: VectorIndex(dim=config.embedding_dim)}
        self.routes.register(
            RouteEntry(
                resource_id=SHARED_STORE_ID,
                kind="vector_store",
                target=self.indexes[SHARED_STORE_ID],
                ownership=OwnershipMetadata(owner_tenant="shared", owner_user="system"),
                policy=_shared_policy(),
            )
        )
        self.routes.register(
            RouteEntry(
                resource_id=SHARED_MODEL_ID,
                kind="model",
                target=self.provider,
                ownership=OwnershipMetadata(owner_tenant="shared", owner_user="system"),
                policy=_shared_policy(),
            )
        )
        for tenant in config.tenants:
            ownership = OwnershipMetadata(
                owner_tenant=tenant,
                owner_user=f"{tenant}:ingest",
                access_attributes=AccessAttributes.of(teams=[f"{tenant}-staff"]),
            )
            index = VectorIndex(dim=config.embedding_dim, resource_ownership=ownership)
            self.indexes[f"vs_{tenant}"] = index
            self.routes.register(
                RouteEntry(f"vs_{tenant}", "vector_store", index, ownership, self.policy)
            )
            self.routes.register(
                RouteEntry(f"model-{tenant}", "model", self.provider, ownership, self.policy)
            )

        docs = documents
        if docs is None and config.corpus_path:
            docs = read_corpus(config.corpus_path)
        if docs is not None:
            for doc in docs:
                self.indexes[SHARED_STORE_ID].ingest(
                    doc, self.embedder, target_tokens=config.chunk_target_tokens
                )

    def next_response_id(self) -> str:
        with self._id_lock:
            self._response_counter += 1
            return f"resp_{self._response_counter:06d}"

    def next_chat_id(self) -> str:
        with self._id_lock:
            self._chat_counter += 1
            return f"chatcmpl_{self._chat_counter:06d}"

    def deps_for(self, index: VectorIndex, mode: GatingMode) -> OrchestratorDeps:
        gated = mode.kind != "ungated"
        safety = SafetyChecker(
            index=index,
            policy=self.policy,
            leak_check_enabled=gated,
        )
        return OrchestratorDeps(
            provider=self.provider,
            index=index,
            policy=self.policy,
            embedder=self.embedder,
            store=self.store,
            safety=safety,
            tools=self.tools,
            retrieval_mode=mode,
            max_steps=self.config.max_steps,
            search_k=self.config.search_k,
        )


# --- wire helpers ------------------------------------------------------------

_STATUS_BY_ERROR = (
    (AuthenticationError, 401, "authentication_error"),
    (AuthorizationError, 403, "authorization_error"),
    (NotFoundError, 404, "not_found"),
    (ConflictError, 409, "conflict"),
    (PolicyViolationError, 400, "policy_violation"),
    (MaxStepsExceededError, 400, "max_steps_exceeded"),
    (ToolLocusError, 400, "tool_locus_error"),
    (UnsupportedPolicyError, 400, "unsupported_policy"),
    (ValidationError, 400, "validation_error"),
    (ConfigurationError, 500, "configuration_error"),
)


def _error_response(exc: TenantGateError) -> JSONResponse:
    for cls, status, kind in _STATUS_BY_ERROR:
        if isinstance(exc, cls):
            body = {"error": {"type": kind, "message": str(exc)}}
            if isinstance(exc, PolicyViolationError) and exc.category:
                body["error"]["category"] = exc.category
            if isinstance(exc, MaxStepsExceededError):
                body["error"]["partial_steps"] = len(exc.partial_steps)
            return JSONResponse(status_code=status, content=body)
    return JSONResponse(status_code=500, content={"error": {"type": "internal", "message": str(exc)}})


def _require(payload: dict, key: str, kind: type, what: str) -> object:
    if key not in payload:
        raise ValidationError(f"{what} requires field {key!r}")
    value = payload[key]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise ValidationError(f"field {key!r} must be {kind.__name__}")
    return value


def _hit_record(hit) -> dict:
    return {
        "chunk_id": hit.chunk_id,
        "doc_id": hit.doc_id,
        "score": hit.score,
        "text": hit.text,
        "ownership": ownership_to_record(hit.ownership),
    }


def _conversation_record(conv) -> dict:
    return {
        "id": conv.conv_id,
        "object": "conversation",
        "owner_tenant": conv.ownership.owner_tenant,
        "turns": [{"role": t.role, "text": t.text, "token_count": t.token_count} for t in conv.turns],
        "total_tokens": conv.total_tokens,
    }


def _parse_query(state: GatewayState, payload: dict) -> Embedding:
    query = payload.get("query")
    if isinstance(query, str):
        if not query.strip():
            raise ValidationError("query text must be non-empty")
        return state.embedder.embed_query(query)
    if isinstance(query, dict):
        if "text" in query:
            return state.embedder.embed_query(str(query["text"]))
        if "vector" in query:
            import numpy as np

            values = np.asarray(query["vector"], dtype=float)
            if values.shape != (state.config.embedding_dim,):
                raise ValidationError(
                    f"query vector must have dimension {state.config.embedding_dim}"
                )
            return Embedding(values)
    raise ValidationError("query must be a string or an object with 'text' or 'vector'")


# --- app factory --------------------------------------------------------------


def build_app(config: ServerConfig | None = None, documents: Iterable[Document] | None = None) -> FastAPI:
    config = config or ServerConfig()
    state = GatewayState(config, documents)
    app = FastAPI(title="tenantgate", docs_url=None, redoc_url=None)
    app.state.gateway = state

    @app.exception_handler(TenantGateError)
    async def _handle_domain_error(request: Request, exc: TenantGateError):
        return _error_response(exc)

    @app.middleware("http")
    async def _access_log(request: Request, call_next):
        started = time.perf_counter()
        response = await call_next(request)
        principal = getattr(request.state, "principal", None)
        decisions = getattr(request.state, "decisions", [])
        access_log.info(
            "%s %s status=%d principal=%s decisions=%s latency_ms=%.2f",
            request.method,
            request.url.path,
            response.status_code,
            f"{principal.tenant}/{principal.user_id}" if principal else "-",
            ",".join(decisions) if decisions else "-",
            (time.perf_counter() - started) * 1000.0,
        )
        return response

    def _note(request: Request, decision: str) -> None:
        if not hasattr(request.state, "decisions"):
            request.state.decisions = []
        request.state.decisions.append(decision)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/v1/system/stats")
    def system_stats(request: Request, principal: Principal = Depends(authenticate)) -> dict:
        return {
            "provider_calls": state.provider.call_count(),
            "indexed_chunks": {sid: len(idx) for sid, idx in sorted(state.indexes.items())},
            "vector_stores": state.routes.ids("vector_store"),
            "models": state.routes.ids("model"),
        }

    # -- search -----------------------------------------------------------

    def _search_body(request: Request, payload: dict, principal: Principal, mode: GatingMode, store_id: str) -> dict:
        entry = state.routes.resolve(
            principal, "vector_store", store_id, enforce=config.enforce_route_table
        )
        _note(request, f"route_table:{store_id}")
        index: VectorIndex = entry.target  # type: ignore[assignment]
        k = payload.get("k", state.config.search_k)
        if isinstance(k, bool) or not isinstance(k, int):
            raise ValidationError("k must be an integer")
        theta = payload.get("theta")
        if theta is not None and not isinstance(theta, (int, float)):
            raise ValidationError("theta must be a number")
        req = SearchRequest(query=_parse_query(state, payload), k=k, theta=theta, mode=mode)
        if mode.kind == "ungated":
            result = search_ungated(index, req)
            _note(request, "storage:ungated")
        elif config.enforce_storage_filter:
            result = search_gated(index, principal, state.policy, req)
            _note(request, f"storage:{mode.kind}")
        else:
            result = search_ungated(index, replace(req, mode=GatingMode.ungated()))
            _note(request, "storage:disabled")
        hits = list(result.hits)
        if mode.kind != "ungated" and config.enforce_route_guard:
            hits = [h for h in hits if is_permitted(state.policy, principal, h.ownership)]
            _note(request, "route_guard:scrubbed")
        return {
            "object": "vector_store.search_results",
            "store_id": store_id,
            "mode": mode.kind,
            "data": [_hit_record(h) for h in hits],
            "latency_us": result.latency_us,
        }

    @app.post("/v1/vector_stores/{store_id}/search")
    def vector_search(
        store_id: str,
        request: Request,
        payload: dict = Body(...),
        principal: Principal = Depends(authenticate),
    ) -> dict:
        mode_name = payload.get("mode", config.gating_mode)
        if mode_name == "pushdown":
            mode = GatingMode.pushdown()
        elif mode_name == "post_filter":
            mode = GatingMode.post_filter(int(payload.get("overfetch_factor", config.overfetch_factor)))
        else:
            raise ValidationError("mode must be 'pushdown' or 'post_filter' on the gated route")
        return _search_body(request, payload, principal, mode, store_id)

    if config.enable_ungated_endpoints:

        @app.post("/v1/unsafe/vector_stores/{store_id}/search")
        def unsafe_vector_search(
            store_id: str,
            request: Request,
            payload: dict = Body(...),
            principal: Principal = Depends(authenticate),
        ) -> dict:
            return _search_body(request, payload, principal, GatingMode.ungated(), store_id)

    # -- responses ---------------------------------------------------------

    def _responses_body(request: Request, payload: dict, principal: Principal, mode: GatingMode) -> dict:
        model_id = payload.get("model", SHARED_MODEL_ID)
        if not isinstance(model_id, str):
            raise ValidationError("model must be a string")
        state.routes.resolve(principal, "model", model_id, enforce=config.enforce_route_table)
        _note(request, f"route_table:{model_id}")
        store_id = payload.get("vector_store_id", SHARED_STORE_ID)
        entry = state.routes.resolve(
            principal, "vector_store", store_id, enforce=config.enforce_route_table
        )
        _note(request, f"route_table:{store_id}")
        input_text = _require(payload, "input", str, "responses request")
        tools = payload.get("tools", ["file_search", "echo"])
        if not isinstance(tools, list) or not all(isinstance(t, str) for t in tools):
            raise ValidationError("tools must be a list of tool names")
        conversation_id = payload.get("conversation")
        if conversation_id is not None and not isinstance(conversation_id, str):
            raise ValidationError("conversation must be a string id")
        deps = state.deps_for(entry.target, mode)  # type: ignore[arg-type]
        result = run_response(
            principal,
            ResponsesRequest(
                input_text=input_text,
                model_id=model_id,
                conversation_id=conversation_id,
                tools=tuple(tools),
            ),
            deps,
        )
        _note(request, f"orchestrated:{len(result.sequence.steps)}steps")
        return {
            "id": state.next_response_id(),
            "object": "response",
            "status": "completed",
            "model": model_id,
            "mode": mode.kind,
            "conversation_id": result.conversation_id,
            "output": list(result.output_items),
            "usage": result.usage,
        }

    @app.post("/v1/responses")
    def responses(
        request: Request, payload: dict = Body(...), principal: Principal = Depends(authenticate)
    ) -> dict:
        return _responses_body(request, payload, principal, config.default_search_mode())

    if config.enable_ungated_endpoints:

        @app.post("/v1/unsafe/responses")
        def unsafe_responses(
            request: Request, payload: dict = Body(...), principal: Principal = Depends(authenticate)
        ) -> dict:
            return _responses_body(request, payload, principal, GatingMode.ungated())

    # -- chat completions ----------------------------------------------------

    @app.post("/v1/chat/completions")
    def chat_completions(
        request: Request, payload: dict = Body(...), principal: Principal = Depends(authenticate)
    ) -> dict:
        model_id = payload.get("model", SHARED_MODEL_ID)
        if not isinstance(model_id, str):
            raise ValidationError("model must be a string")
        entry = state.routes.resolve(principal, "model", model_id, enforce=config.enforce_route_table)
        _note(request, f"route_table:{model_id}")
        messages_raw = _require(payload, "messages", list, "chat request")
        if not messages_raw:
            raise ValidationError("messages must be non-empty")
        messages = []
        for m in messages_raw:
            if not isinstance(m, dict) or "role" not in m or "content" not in m:
                raise ValidationError("each message needs 'role' and 'content'")
            messages.append(Message(str(m["role"]), str(m["content"])))
        tools = tuple(payload.get("tools", []))
        provider = entry.target
        result = provider.complete(CompletionRequest(model_id, tuple(messages), tools))  # type: ignore[union-attr]
        message: dict = {"role": "assistant", "content": result.text}
        finish = "stop"
        if result.tool_call is not None:
            # Client-side orchestration: tool calls are returned, never executed here.
            message["tool_calls"] = [
                {
                    "id": "call_000001",
                    "type": "function",
                    "function": {
                        "name": result.tool_call.name,
                        "arguments": json.dumps(result.tool_call.arguments, sort_keys=True),
                    },
                }
            ]
            message["content"] = None
            finish = "tool_calls"
        return {
            "id": state.next_chat_id(),
            "object": "chat.completion",
            "model": model_id,
            "choices": [{"index": 0, "message": message, "finish_reason": finish}],
            "usage": {
                "prompt_tokens": result.prompt_tokens,
                "completion_tokens": result.completion_tokens,
                "total_tokens": result.prompt_tokens + result.completion_tokens,
            },
        }

    # -- conversations ---------------------------------------------------------

    @app.post("/v1/conversations")
    def create_conversation(request: Request, principal: Principal = Depends(authenticate)) -> dict:
        conv = state.store.create(principal)
        return _conversation_record(conv)

    @app.get("/v1/conversations/{conv_id}")
    def get_conversation(conv_id: str, request: Request, principal: Principal = Depends(authenticate)) -> dict:
        conv = state.store.load(principal, conv_id, state.policy)
        _note(request, f"conversation:{conv_id}")
        return _conversation_record(conv)

    @app.post("/v1/conversations/{conv_id}/turns")
    def append_turn(
        conv_id: str,
        request: Request,
        payload: dict = Body(...),
        principal: Principal = Depends(authenticate),
    ) -> dict:
        role = payload.get("role", "user")
        text = _require(payload, "text", str, "append turn")
        conv = state.store.append_turn(principal, conv_id, role, text, state.policy)
        return _conversation_record(conv)

    @app.post("/v1/conversations/{conv_id}/compact")
    def compact(
        conv_id: str,
        request: Request,
        payload: dict = Body(...),
        principal: Principal = Depends(authenticate),
    ) -> dict:
        threshold = payload.get("threshold_tokens", 4096)
        if isinstance(threshold, bool) or not isinstance(threshold, int):
            raise ValidationError("threshold_tokens must be an integer")
        conv = state.store.load(principal, conv_id, state.policy)
        compacted = compact_conversation(principal, conv, threshold, state.provider, state.policy)
        if compacted is not conv:
            state.store.replace(principal, compacted, state.policy)
        return _conversation_record(compacted)

    return app


def create_app_from_env() -> FastAPI:
    """uvicorn factory entrypoint: ``TENANTGATE_CONFIG`` names the config file."""
    config_path = os.environ.get("TENANTGATE_CONFIG")
    config = load_server_config(config_path) if config_path else ServerConfig()
    return build_app(apply_env_overrides(config))
