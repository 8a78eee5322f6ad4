"""Multitenant agentic RAG gateway with ABAC-gated retrieval.

Layered isolation on the data path (ownership stamped at ingestion, gated
vector search, shared inference) plus a server-side orchestration loop on the
control path, and an evaluation kit that measures all of it deterministically.
"""

__version__ = "0.1.0"

from .policy import PolicySet, default_policy, evaluate  # noqa: F401
from .tenancy import (  # noqa: F401
    AccessAttributes,
    Chunk,
    Document,
    OwnershipMetadata,
    Principal,
    attributes_intersect,
    chunk_document,
)
