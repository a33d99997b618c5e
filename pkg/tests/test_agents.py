"""Agent layer: prompt rendering, verdict parsing, deterministic mocks."""

import json

import pytest

from telehub.agents import (
    VERDICT_INSTRUCTION,
    AgentSpec,
    BadStatusValue,
    ChatMessage,
    ConfidenceOutOfRange,
    MissingContext,
    NoVerdictFound,
    UnboundPlaceholder,
    UnknownTestId,
    find_json_object,
    invoke_agent,
    levenshtein,
    mock_invoke,
    parse_verdict,
    render_prompt,
)
from telehub.context import make_object
from telehub.flows import FLOW_TABLE


def blob(text, **kw):
    kw.setdefault("source_node_id", "n")
    kw.setdefault("run_id", "r")
    kw.setdefault("created_at_us", 0)
    return make_object("text-blob", {"text": text}, **kw)


# ---------------------------------------------------------------------------
# prompt rendering


class TestRenderPrompt:
    def test_object_payload_path(self):
        out = render_prompt("intent: {{intent.text}}", {"intent": blob("check reg")})
        assert out == "intent: check reg"

    def test_plain_dict_path(self):
        out = render_prompt("step {{step.step_no}}", {"step": {"step_no": 4}})
        assert out == "step 4"

    def test_non_string_values_render_canonical(self):
        out = render_prompt("{{w}}", {"w": {"b": 1, "a": [True, None]}})
        assert out == '{"a":[true,null],"b":1}'

    def test_list_element_projection(self):
        steps = [{"name": "A"}, {"name": "B"}]
        out = render_prompt("{{flow.steps.name}}", {"flow": {"steps": steps}})
        assert out == '["A","B"]'

    def test_unbound_placeholder_raises(self):
        with pytest.raises(UnboundPlaceholder):
            render_prompt("{{missing.path}}", {})

    def test_unclosed_braces_pass_through(self):
        assert render_prompt("literal {{oops", {}) == "literal {{oops"


# ---------------------------------------------------------------------------
# verdict parsing


class TestParseVerdict:
    def test_strict_json(self):
        v = parse_verdict('{"status": "found", "explanation": "ok", "confidence": 0.8}')
        assert (v.status, v.explanation, v.confidence) == ("found", "ok", 0.8)

    def test_embedded_json(self):
        text = 'Sure! Here is my verdict:\n{"status": "not_found", "confidence": 0}\nThanks.'
        v = parse_verdict(text)
        assert v.status == "not_found"
        assert v.explanation == ""

    def test_status_case_and_dash_normalization(self):
        assert parse_verdict('{"status": "Found", "confidence": 1}').status == "found"
        assert parse_verdict('{"status": "NOT-FOUND", "confidence": 0}').status == "not_found"

    def test_no_json_at_all(self):
        with pytest.raises(NoVerdictFound):
            parse_verdict("I could not find anything in the window.")

    def test_missing_status(self):
        with pytest.raises(BadStatusValue):
            parse_verdict('{"confidence": 0.5}')

    def test_unknown_status_value(self):
        with pytest.raises(BadStatusValue):
            parse_verdict('{"status": "maybe", "confidence": 0.5}')

    @pytest.mark.parametrize(
        "confidence", ["1.2", "-0.1", "true", '"high"', "null"]
    )
    def test_bad_confidence_never_clamped(self, confidence):
        with pytest.raises(ConfidenceOutOfRange):
            parse_verdict('{"status": "found", "confidence": %s}' % confidence)

    def test_missing_confidence_rejected(self):
        with pytest.raises(ConfidenceOutOfRange):
            parse_verdict('{"status": "found"}')

    def test_find_json_object_skips_strings_with_braces(self):
        text = 'noise "{not json" more {"a": "}"} tail'
        assert find_json_object(text) == {"a": "}"}


# ---------------------------------------------------------------------------
# edit distance


class TestLevenshtein:
    def test_frozen_vectors(self):
        # computed with an independent DP before this module existed
        assert levenshtein("RegistrationRequest", "RegistrationReject") == 3
        assert levenshtein("AuthenticationResponse", "AuthenticationRequest") == 5
        assert levenshtein("AuthenticationResponse", "RegistrationRequest") == 13

    def test_degenerate_cases(self):
        assert levenshtein("", "") == 0
        assert levenshtein("abc", "") == 3
        assert levenshtein("", "abc") == 3
        assert levenshtein("same", "same") == 0

    def test_symmetry(self):
        assert levenshtein("kitten", "sitting") == levenshtein("sitting", "kitten") == 3


# ---------------------------------------------------------------------------
# mocks


def spec(role, agent_id="a1"):
    return AgentSpec(id=agent_id, role=role)


class TestGenMock:
    def test_known_test_id_returns_flow_payload(self):
        reply = invoke_agent(
            spec("gen"), [ChatMessage("user", "please cover reg-basic today")]
        )
        payload = json.loads(reply.content)
        assert payload == FLOW_TABLE["reg-basic"]
        assert payload["steps"][0]["name"] == "RRCSetupRequest"
        assert [s["step_no"] for s in payload["steps"]] == list(range(1, 11))

    def test_unknown_test_id_raises(self):
        with pytest.raises(UnknownTestId):
            invoke_agent(spec("gen"), [ChatMessage("user", "no such scenario")])

    def test_reply_is_byte_stable(self):
        messages = [ChatMessage("user", "run reg-basic")]
        a = invoke_agent(spec("gen"), messages).content
        b = invoke_agent(spec("gen"), messages).content
        assert a == b


class TestValMock:
    WINDOW = {
        "source_id": "t",
        "start_index": 0,
        "end_index": 2,
        "records": [
            {"protocol": "RRC", "name": "RRCSetup", "direction": "DL", "index": 0,
             "timestamp_us": 1},
            {"protocol": "NAS", "name": "RegistrationRequest", "direction": "UL",
             "index": 1, "timestamp_us": 2},
        ],
    }

    def prompt(self, step, window=None):
        window = window if window is not None else self.WINDOW
        return (
            f"lead text\n\nEXPECTED_STEP: {json.dumps(step)}\n"
            f"WINDOW: {json.dumps(window)}\n\n{VERDICT_INSTRUCTION}"
        )

    def test_match_reports_index(self):
        step = {"step_no": 2, "protocol": "NAS", "name": "RegistrationRequest"}
        reply = invoke_agent(spec("val"), [ChatMessage("user", self.prompt(step))])
        verdict = json.loads(reply.content)
        assert verdict["status"] == "found"
        assert verdict["confidence"] == 1.0
        assert "index 1" in verdict["explanation"]

    def test_direction_constraint_respected(self):
        step = {"step_no": 1, "protocol": "RRC", "name": "RRCSetup", "direction": "UL"}
        reply = invoke_agent(spec("val"), [ChatMessage("user", self.prompt(step))])
        verdict = json.loads(reply.content)
        assert verdict["status"] == "not_found"
        assert "[0,2)" in verdict["explanation"]

    def test_missing_sections_raise(self):
        with pytest.raises(MissingContext):
            invoke_agent(spec("val"), [ChatMessage("user", "just chat")])

    def test_verdict_round_trips_through_parser(self):
        step = {"step_no": 1, "protocol": "RRC", "name": "RRCSetup"}
        reply = invoke_agent(spec("val"), [ChatMessage("user", self.prompt(step))])
        parsed = parse_verdict(reply.content)
        assert parsed.status == "found"


class TestDebugMock:
    def summary(self, per_step, names):
        return json.dumps(
            {
                "aggregate": "fail",
                "windows_examined": 1,
                "per_step": per_step,
                "steps": [
                    {"step_no": 6, "protocol": "NAS", "name": "AuthenticationResponse"}
                ],
                "record_names": names,
            }
        )

    def test_nearest_name_diagnosis(self):
        content = self.summary(
            [{"step_no": 6, "status": "not_found"}],
            ["RRCSetup", "AuthenticationRequest", "RegistrationComplete"],
        )
        reply = invoke_agent(spec("debug"), [ChatMessage("user", content)])
        assert "step 6 (NAS AuthenticationResponse) was not observed" in reply.content
        assert "AuthenticationRequest (5 edits)" in reply.content

    def test_all_found_message(self):
        content = self.summary([{"step_no": 6, "status": "found"}], ["X"])
        reply = invoke_agent(spec("debug"), [ChatMessage("user", content)])
        assert reply.content == "all steps were found; nothing to diagnose"

    def test_needs_summary_json(self):
        with pytest.raises(MissingContext):
            invoke_agent(spec("debug"), [ChatMessage("user", "no json here")])


class TestChatMockAndDispatch:
    def test_chat_role_acknowledges(self):
        reply = invoke_agent(spec("chat"), [ChatMessage("user", "hello there")])
        assert "hello there" in reply.content
        assert reply.content.startswith("[mock-1]")

    def test_force_mock_overrides_endpoint_ref(self):
        live_spec = AgentSpec(id="x", role="chat", endpoint_ref="prod")
        reply = invoke_agent(live_spec, [ChatMessage("user", "hi")], force_mock=True)
        assert reply.latency_ms == 0

    def test_mock_invoke_equals_invoke_agent_mock_path(self):
        messages = [ChatMessage("user", "run reg-basic")]
        assert (
            mock_invoke(spec("gen"), messages).content
            == invoke_agent(spec("gen"), messages).content
        )
