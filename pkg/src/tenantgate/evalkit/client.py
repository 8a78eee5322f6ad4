"""Gateway access for the evaluation drivers.

One handle abstraction covers both transports: an in-process app exercised
through the ASGI test client (fast, deterministic, allows oracle access to
the index), and a remote server over plain HTTP.
"""

from __future__ import annotations

from typing import Iterable

import httpx

from ..errors import GatewayUnreachableError
from ..gateway import GatewayState, ServerConfig, build_app
from ..tenancy import Document, Principal
from .workload import principal_token, tenant_principal


def auth_header(principal: Principal) -> dict[str, str]:
    return {"Authorization": f"Bearer {principal_token(principal)}"}


class GatewayHandle:
    """Uniform .post/.get access plus optional in-process state."""

    def __init__(self, client, state: GatewayState | None = None, owns_client: bool = True):
        self.client = client
        self.state = state
        self._owns_client = owns_client

    @classmethod
    def in_process(
        cls, config: ServerConfig | None = None, documents: Iterable[Document] | None = None
    ) -> "GatewayHandle":
        from fastapi.testclient import TestClient

        app = build_app(config, documents)
        return cls(TestClient(app), state=app.state.gateway)

    @classmethod
    def remote(cls, base_url: str, timeout_s: float = 30.0) -> "GatewayHandle":
        client = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout_s)
        try:
            resp = client.get("/health")
            resp.raise_for_status()
        except Exception as exc:
            client.close()
            raise GatewayUnreachableError(f"gateway at {base_url} is unreachable: {exc}") from exc
        return cls(client, state=None)

    def post(self, path: str, principal: Principal, payload: dict) -> httpx.Response:
        return self.client.post(path, json=payload, headers=auth_header(principal))

    def get(self, path: str, principal: Principal) -> httpx.Response:
        return self.client.get(path, headers=auth_header(principal))

    def provider_calls(self) -> int:
        resp = self.get("/v1/system/stats", tenant_principal("finance", "metrics-reader"))
        resp.raise_for_status()
        return int(resp.json()["provider_calls"])

    def close(self) -> None:
        if self._owns_client:
            self.client.close()

    def __enter__(self) -> "GatewayHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
