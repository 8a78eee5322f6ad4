import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tenantgate.errors import ValidationError
from tenantgate.providers import (
    CompletionRequest,
    Message,
    ScriptedProvider,
    ScriptedRule,
    ToolCall,
    default_eval_rules,
    load_scripted_rules,
    rules_from_config,
)


def req(*messages: Message, tools: tuple = ("file_search",)) -> CompletionRequest:
    return CompletionRequest("scripted-model", tuple(messages), tools)


class TestScriptedRules:
    def test_rule_requires_one_action(self):
        with pytest.raises(ValidationError):
            ScriptedRule(match="x")
        with pytest.raises(ValidationError):
            ScriptedRule(match="x", respond="a", tool=ToolCall("t", {}))
        with pytest.raises(ValidationError):
            ScriptedRule(match="x", respond="a", then="b")

    def test_first_matching_rule_wins(self):
        provider = ScriptedProvider(
            [
                ScriptedRule(match="revenue", respond="first"),
                ScriptedRule(match="revenue report", respond="second"),
            ]
        )
        out = provider.complete(req(Message("user", "quarterly revenue report")))
        assert out.text == "first"

    def test_fallback_when_nothing_matches(self):
        provider = ScriptedProvider([ScriptedRule(match="revenue", respond="x")], fallback="dunno")
        assert provider.complete(req(Message("user", "hello"))).text == "dunno"

    def test_tool_rule_emits_tool_call(self):
        provider = ScriptedProvider(
            [ScriptedRule(match="revenue", tool=ToolCall("file_search", {"query": "{input}"}))]
        )
        out = provider.complete(req(Message("user", "find revenue data")))
        assert out.tool_call == ToolCall("file_search", {"query": "find revenue data"})
        assert out.text == ""

    def test_tool_not_offered_degrades_to_text(self):
        provider = ScriptedProvider(
            [ScriptedRule(match="", tool=ToolCall("file_search", {"query": "q"}))]
        )
        out = provider.complete(req(Message("user", "anything"), tools=()))
        assert out.tool_call is None

    def test_then_template_consumes_tool_result(self):
        provider = ScriptedProvider(
            [
                ScriptedRule(
                    match="revenue",
                    tool=ToolCall("file_search", {"query": "{input}"}),
                    then="Summary: {tool_result}",
                )
            ]
        )
        out = provider.complete(
            req(Message("user", "revenue please"), Message("tool", "chunk-a chunk-b"))
        )
        assert out.tool_call is None
        assert out.text == "Summary: chunk-a chunk-b"

    def test_determinism_and_counting(self):
        provider = ScriptedProvider([ScriptedRule(match="", respond="same")])
        r = req(Message("user", "ping"))
        a, b = provider.complete(r), provider.complete(r)
        assert a == b
        assert provider.call_count() == 2
        provider.reset_count()
        assert provider.call_count() == 0

    def test_token_accounting(self):
        provider = ScriptedProvider([ScriptedRule(match="", respond="three word reply")])
        out = provider.complete(req(Message("user", "one two three four")))
        assert out.prompt_tokens == 4
        assert out.completion_tokens == 3

    def test_simulated_latency_respected(self):
        provider = ScriptedProvider([ScriptedRule(match="", respond="x")], latency_s=0.03)
        t0 = time.perf_counter()
        provider.complete(req(Message("user", "hi")))
        assert time.perf_counter() - t0 >= 0.03

    @settings(max_examples=100, deadline=None)
    @given(st.text(alphabet="abcXYZ", min_size=1, max_size=20), st.text(alphabet="abcXYZ", min_size=1, max_size=20))
    def test_stateless_across_requests(self, secret_a, secret_b):
        # content from one request must never surface in another's result
        provider = ScriptedProvider(default_eval_rules())
        provider.complete(req(Message("user", f"CANARYTOKEN_{secret_a} quarterly data")))
        out = provider.complete(req(Message("user", f"Context: {secret_b} Question: q")))
        assert f"CANARYTOKEN_{secret_a}" not in out.text

    def test_empty_messages_rejected(self):
        with pytest.raises(ValidationError):
            CompletionRequest("m", ())


class TestRuleFiles:
    def test_load_round_trip(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(
            '{"rules": ['
            '{"match": "hello", "respond": "hi there"},'
            '{"match": "", "tool": {"name": "file_search", "arguments": {"query": "{input}"}},'
            ' "then": "Found: {tool_result}"}]}'
        )
        rules = load_scripted_rules(path)
        assert len(rules) == 2
        assert rules[0].respond == "hi there"
        assert rules[1].tool.name == "file_search"

    @pytest.mark.parametrize(
        "body",
        [
            "nope",
            '{"rules": 5}',
            '{"rules": [{"respond": "missing match"}]}',
            '{"rules": [{"match": "x", "tool": {"arguments": {}}}]}',
        ],
    )
    def test_malformed_rejected(self, tmp_path, body):
        path = tmp_path / "bad.json"
        path.write_text(body)
        with pytest.raises(ValidationError):
            load_scripted_rules(path)

    def test_rules_from_config_validates(self):
        with pytest.raises(ValidationError):
            rules_from_config({})
