import warnings

import pytest
from hypothesis import strategies as st

from tenantgate.policy import (
    DENY,
    PERMIT,
    AccessRule,
    Always,
    AttributeMatch,
    OwnerMatch,
    PolicySet,
    TenantEquals,
)
from tenantgate.tenancy import AccessAttributes, Document, OwnershipMetadata, Principal

warnings.filterwarnings("ignore", category=DeprecationWarning)

TENANTS = ("finance", "engineering", "legal")
WORDS = tuple(f"word{i:02d}" for i in range(40))

names = st.text(alphabet="abcdefgh", min_size=1, max_size=6)
attr_values = st.frozensets(st.sampled_from(["red", "green", "blue", "amber"]), max_size=3)


@st.composite
def access_attributes(draw):
    return AccessAttributes(
        roles=draw(attr_values),
        teams=draw(attr_values),
        projects=draw(attr_values),
        namespaces=draw(attr_values),
    )


@st.composite
def principals(draw):
    return Principal(
        user_id=draw(names),
        tenant=draw(st.sampled_from(TENANTS)),
        attributes=draw(access_attributes()),
    )


@st.composite
def ownerships(draw):
    return OwnershipMetadata(
        owner_tenant=draw(st.sampled_from(TENANTS)),
        owner_user=draw(names),
        access_attributes=draw(access_attributes()),
    )


@st.composite
def documents(draw):
    words = draw(st.lists(st.sampled_from(WORDS), min_size=1, max_size=80))
    return Document(
        doc_id=draw(names),
        text=" ".join(words),
        topic=draw(st.sampled_from(["alpha-topic", "beta-topic"])),
        ownership=draw(ownerships()),
    )


conditions = st.one_of(
    st.just(OwnerMatch()),
    st.just(Always()),
    st.builds(TenantEquals, tenant=st.sampled_from(TENANTS)),
    st.builds(
        AttributeMatch,
        categories=st.sets(
            st.sampled_from(["roles", "teams", "projects", "namespaces"]), min_size=1
        ).map(tuple),
    ),
)

access_rules = st.builds(AccessRule, scope=st.sampled_from([PERMIT, DENY]), condition=conditions)
policies = st.lists(access_rules, max_size=5).map(lambda rules: PolicySet(tuple(rules)))


@pytest.fixture()
def finance_principal():
    return Principal(
        "alice", "finance", AccessAttributes.of(roles=["analyst"], teams=["finance-staff"])
    )


@pytest.fixture()
def engineering_principal():
    return Principal(
        "bob", "engineering", AccessAttributes.of(roles=["developer"], teams=["engineering-staff"])
    )
