"""Engine behavior: runs, events, approval, branching, builtins, reports."""

import base64
import json
import struct
import time

import pytest

from telehub.engine import (
    ArtifactMissing,
    Binding,
    Engine,
    InvalidFlag,
    InvalidGraph,
    RunNotTerminal,
    RunStatus,
    UnboundInput,
    UnknownScript,
    WrongState,
    export_report,
    normalize_events,
    rank_corpus,
    run_exit_code,
    tokenize,
)
from telehub.graph import parse_graph_document


def make_graph(nodes, edges, name="g"):
    return parse_graph_document(
        {"version": "1.0", "name": name, "nodes": nodes, "edges": edges}
    )


def node(node_id, kind, config=None, **extra):
    doc = {"id": node_id, "kind": kind}
    if config is not None:
        doc["config"] = config
    doc.update(extra)
    return doc


def edge(from_ref, to_ref):
    return {"from": from_ref, "to": to_ref}


VAL_AGENT = {"id": "v1", "role": "val"}

FLOW3 = {
    "test_id": "f3",
    "steps": [
        {"step_no": 1, "protocol": "RRC", "name": "RRCSetupRequest", "direction": "UL"},
        {"step_no": 2, "protocol": "RRC", "name": "RRCSetup", "direction": "DL"},
        {"step_no": 3, "protocol": "NAS", "name": "RegistrationRequest", "direction": "UL"},
    ],
}

TRACE3 = "\n".join(
    json.dumps(r)
    for r in [
        {"timestamp_us": 10, "protocol": "RRC", "name": "RRCSetupRequest", "direction": "UL"},
        {"timestamp_us": 20, "protocol": "RRC", "name": "RRCSetup", "direction": "DL"},
        {"timestamp_us": 30, "protocol": "NAS", "name": "RegistrationRequest", "direction": "UL"},
    ]
)


def validation_graph(params=None, agent=None):
    config = {"builtin": "sliding-window-validation", "agent": agent or VAL_AGENT}
    if params:
        config["params"] = params
    return make_graph(
        [
            node("flow_in", "input", {"media_type": "flow-json"}),
            node("trace_in", "input", {"media_type": "text"}),
            node("mapper", "telemcp", {"mapper": "decoded-trace"}),
            node("val", "logic", config),
            node("out", "output"),
        ],
        [
            edge("flow_in.artifact", "val.flow"),
            edge("trace_in.artifact", "mapper.raw"),
            edge("mapper.objects", "val.trace"),
            edge("val.summary", "out.sink"),
        ],
    )


def run_validation(flow, trace_text, params=None, agent=None, **engine_kw):
    engine = Engine(agent_mode="mock", **engine_kw)
    run = engine.start_run(
        validation_graph(params, agent),
        {
            "flow_in": Binding(text=json.dumps(flow)),
            "trace_in": Binding(text=trace_text),
        },
    )
    return engine, run


def summary_of(run):
    blobs = run.port_objects("val", "summary")
    assert len(blobs) == 1
    return json.loads(blobs[0].payload["text"])


def kinds(run, node_id=None):
    return [
        e.kind for e in run.events if node_id is None or e.node_id == node_id
    ]


# ---------------------------------------------------------------------------
# event log basics


class TestEventLog:
    def test_seq_gapless_from_one(self):
        _, run = run_validation(FLOW3, TRACE3)
        assert [e.seq for e in run.events] == list(range(1, len(run.events) + 1))

    def test_brackets(self):
        _, run = run_validation(FLOW3, TRACE3)
        assert run.events[0].kind == "run_started"
        assert run.events[-1].kind == "run_finished"
        assert run.events[0].detail["graph_name"] == "g"

    def test_jsonl_persistence_mirrors_memory(self, tmp_path):
        engine, run = run_validation(FLOW3, TRACE3, runs_dir=tmp_path)
        lines = (tmp_path / f"{run.run_id}.events.jsonl").read_text().splitlines()
        assert len(lines) == len(run.events)
        for line, event in zip(lines, run.events):
            doc = json.loads(line)
            assert doc == event.to_doc()
            # compact separators, sorted keys
            assert line == json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def test_normalize_events_zeroes_clock_only(self):
        _, run = run_validation(FLOW3, TRACE3)
        docs = normalize_events(run.events)
        assert all(d["at_us"] == 0 for d in docs)
        assert [d["kind"] for d in docs] == [e.kind for e in run.events]

    def test_mock_runs_are_deterministic_up_to_clock(self):
        _, a = run_validation(FLOW3, TRACE3)
        _, b = run_validation(FLOW3, TRACE3)
        assert normalize_events(a.events) == normalize_events(b.events)
        assert set(a.store) == set(b.store)


# ---------------------------------------------------------------------------
# start_run preflight


class TestPreflight:
    def test_invalid_graph_rejected(self):
        bad = make_graph([node("a", "input")], [])  # no output node
        with pytest.raises(InvalidGraph) as exc_info:
            Engine().start_run(bad, {"a": Binding(text="x")})
        assert any(d.code == "NoOutputNode" for d in exc_info.value.diagnostics)

    def test_unbound_input_rejected(self):
        with pytest.raises(UnboundInput) as exc_info:
            Engine().start_run(validation_graph(), {"flow_in": Binding(text="{}")})
        assert exc_info.value.node_id == "trace_in"

    def test_missing_artifact_rejected(self):
        with pytest.raises(ArtifactMissing):
            Engine().start_run(
                validation_graph(),
                {
                    "flow_in": Binding(path="/nonexistent/flow.json"),
                    "trace_in": Binding(text=""),
                },
            )

    def test_no_events_written_when_preflight_fails(self, tmp_path):
        engine = Engine(runs_dir=tmp_path)
        with pytest.raises(UnboundInput):
            engine.start_run(validation_graph(), {})
        assert list(tmp_path.iterdir()) == []


# ---------------------------------------------------------------------------
# input media handling


class TestInputNodes:
    def test_text_binding_becomes_blob(self):
        g = make_graph(
            [node("a", "input", {"media_type": "text"}), node("z", "output")],
            [edge("a.artifact", "z.sink")],
        )
        run = Engine().start_run(g, {"a": Binding(text="hello")})
        (obj,) = run.port_objects("a", "artifact")
        assert obj.schema == "text-blob"
        assert obj.payload == {"text": "hello"}

    def test_pcap_binding_base64_round_trip(self):
        raw = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
        for ts_us, data in [(1000, b"\x01\x02"), (2000, b"\x03")]:
            raw += struct.pack("<IIII", 0, ts_us, len(data), len(data)) + data
        g = make_graph(
            [node("a", "input", {"media_type": "pcap"}), node("z", "output")],
            [edge("a.artifact", "z.sink")],
        )
        run = Engine().start_run(g, {"a": Binding(data=raw)})
        (obj,) = run.port_objects("a", "artifact")
        assert base64.b64decode(obj.payload["text"]) == raw

    def test_flow_json_publishes_procedural_flow(self):
        g = make_graph(
            [node("a", "input", {"media_type": "flow-json"}), node("z", "output")],
            [edge("a.artifact", "z.sink")],
        )
        run = Engine().start_run(g, {"a": Binding(text=json.dumps(FLOW3))})
        (obj,) = run.port_objects("a", "artifact")
        assert obj.schema == "procedural-flow"
        assert obj.payload == FLOW3

    def test_flow_json_with_bad_payload_fails_run(self):
        broken = dict(FLOW3, steps=[dict(FLOW3["steps"][0], step_no=7)])
        g = make_graph(
            [node("a", "input", {"media_type": "flow-json"}), node("z", "output")],
            [edge("a.artifact", "z.sink")],
        )
        run = Engine().start_run(g, {"a": Binding(text=json.dumps(broken))})
        assert run.status is RunStatus.FAILED
        errors = [e for e in run.events if e.kind == "node_error"]
        assert errors[0].detail["error"] == "PayloadInvalid"
        assert run.node_status["a"] == "error"

    def test_flow_json_with_unparseable_text_fails_run(self):
        g = make_graph(
            [node("a", "input", {"media_type": "flow-json"}), node("z", "output")],
            [edge("a.artifact", "z.sink")],
        )
        run = Engine().start_run(g, {"a": Binding(text="not json")})
        assert run.status is RunStatus.FAILED
        errors = [e for e in run.events if e.kind == "node_error"]
        assert errors[0].detail["error"] == "JSONDecodeError"

    def test_path_binding_reads_file(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("from disk")
        g = make_graph(
            [node("a", "input", {"media_type": "text"}), node("z", "output")],
            [edge("a.artifact", "z.sink")],
        )
        run = Engine().start_run(g, {"a": Binding(path=str(p))})
        (obj,) = run.port_objects("a", "artifact")
        assert obj.payload["text"] == "from disk"


# ---------------------------------------------------------------------------
# agent nodes


class TestAgentNodes:
    def gen_graph(self, prompt="{{intent.text}}"):
        return make_graph(
            [
                node("intent", "input", {"media_type": "text"}),
                node(
                    "gen",
                    "agent",
                    {
                        "agent": {"id": "g1", "role": "gen"},
                        "prompt_template": prompt,
                        "output_schema": "procedural-flow",
                    },
                ),
                node("z", "output"),
            ],
            [edge("intent.artifact", "gen.context"), edge("gen.reply", "z.sink")],
        )

    def test_gen_reply_published_under_output_schema(self):
        run = Engine().start_run(
            self.gen_graph(), {"intent": Binding(text="please run reg-basic")}
        )
        assert run.status is RunStatus.SUCCEEDED
        (flow,) = run.port_objects("gen", "reply")
        assert flow.schema == "procedural-flow"
        assert flow.payload["steps"][0]["name"] == "RRCSetupRequest"
        invoked = [e for e in run.events if e.kind == "agent_invoked"]
        assert invoked[0].detail == {"agent_id": "g1", "role": "gen"}

    def test_reply_parents_cover_context(self):
        run = Engine().start_run(
            self.gen_graph(), {"intent": Binding(text="reg-basic")}
        )
        (intent_obj,) = run.port_objects("intent", "artifact")
        (flow,) = run.port_objects("gen", "reply")
        assert flow.provenance.parent_hashes == (intent_obj.hash,)

    def test_unknown_test_id_becomes_node_error(self):
        run = Engine().start_run(
            self.gen_graph(), {"intent": Binding(text="cover nothing known")}
        )
        assert run.status is RunStatus.FAILED
        errors = [e for e in run.events if e.kind == "node_error"]
        assert errors[0].detail["error"] == "UnknownTestId"
        assert run.note.startswith("gen:")

    def test_unbound_template_placeholder_is_node_error(self):
        run = Engine().start_run(
            self.gen_graph(prompt="{{nope.text}}"),
            {"intent": Binding(text="reg-basic")},
        )
        assert run.status is RunStatus.FAILED
        errors = [e for e in run.events if e.kind == "node_error"]
        assert errors[0].detail["error"] == "UnboundPlaceholder"

    def test_templateless_agent_joins_payloads(self):
        g = make_graph(
            [
                node("a", "input", {"media_type": "text"}),
                node("chatty", "agent", {"agent": {"id": "c1", "role": "chat"}}),
                node("z", "output"),
            ],
            [edge("a.artifact", "chatty.context"), edge("chatty.reply", "z.sink")],
        )
        run = Engine().start_run(g, {"a": Binding(text="ping")})
        (reply,) = run.port_objects("chatty", "reply")
        # canonical payload JSON fed straight to the chat mock
        assert reply.payload["text"] == '[mock-1] acknowledged: {"text":"ping"}'


# ---------------------------------------------------------------------------
# validation loop


class TestValidationLoop:
    def test_all_steps_found_single_window(self):
        _, run = run_validation(FLOW3, TRACE3)
        assert run.status is RunStatus.SUCCEEDED
        summary = summary_of(run)
        assert summary["aggregate"] == "pass"
        assert summary["windows_examined"] == 3
        assert [v["status"] for v in summary["per_step"]] == ["found"] * 3
        assert all(v["window_start"] == 0 for v in summary["per_step"])
        assert summary["record_names"] == [
            "RRCSetupRequest", "RRCSetup", "RegistrationRequest"
        ]

    def test_missing_step_walks_stride_until_exhausted(self):
        flow = {
            "test_id": "f",
            "steps": [
                {"step_no": 1, "protocol": "RRC", "name": "RRCSetupRequest"},
                {"step_no": 2, "protocol": "NAS", "name": "NeverSent"},
            ],
        }
        trace = "\n".join(
            json.dumps(
                {"timestamp_us": 10 * (i + 1), "protocol": "RRC",
                 "name": "RRCSetupRequest" if i == 0 else f"Filler{i}",
                 "direction": "UL"}
            )
            for i in range(6)
        )
        _, run = run_validation(flow, trace, params={"window_size": 2, "stride": 2})
        summary = summary_of(run)
        assert summary["aggregate"] == "fail"
        # step 1 found in [0,2); step 2 misses [0,2) [2,4) [4,6) then exhausts
        assert summary["windows_examined"] == 4
        missing = summary["per_step"][1]
        assert missing["status"] == "not_found"
        assert missing["explanation"] == "window exhausted"
        assert missing["confidence"] == 0.0
        assert (missing["window_start"], missing["window_end"]) == (4, 6)

    def test_max_windows_cap_and_cursor_persistence(self):
        flow = {
            "test_id": "f",
            "steps": [
                {"step_no": 1, "protocol": "NAS", "name": "Absent"},
                {"step_no": 2, "protocol": "RRC", "name": "Target"},
            ],
        }
        records = [
            {"timestamp_us": 10 * (i + 1), "protocol": "RRC",
             "name": "Target" if i == 4 else f"Noise{i}", "direction": "DL"}
            for i in range(6)
        ]
        trace = "\n".join(json.dumps(r) for r in records)
        _, run = run_validation(
            flow, trace,
            params={"window_size": 1, "stride": 1, "max_windows_per_step": 3},
        )
        summary = summary_of(run)
        step1, step2 = summary["per_step"]
        # step 1 gives up after three windows [0,1) [1,2) [2,3)
        assert step1["status"] == "not_found"
        assert (step1["window_start"], step1["window_end"]) == (2, 3)
        # the cursor stays at 3: step 2 resumes there and finds index 4
        assert step2["status"] == "found"
        assert (step2["window_start"], step2["window_end"]) == (4, 5)
        assert summary["windows_examined"] == 3 + 2

    def test_empty_trace_one_call_per_step(self):
        _, run = run_validation(FLOW3, "")
        summary = summary_of(run)
        assert summary["aggregate"] == "fail"
        assert summary["windows_examined"] == 3
        assert all(
            (v["status"], v["window_start"], v["window_end"])
            == ("not_found", 0, 0)
            for v in summary["per_step"]
        )
        calls = [
            e for e in run.events
            if e.kind == "agent_invoked" and e.node_id == "val" and "note" not in e.detail
        ]
        assert len(calls) == 3

    def test_agent_invoked_details_carry_window_bounds(self):
        _, run = run_validation(FLOW3, TRACE3)
        calls = [
            e.detail for e in run.events
            if e.kind == "agent_invoked" and e.node_id == "val"
        ]
        assert calls == [
            {"agent_id": "v1", "role": "val", "step_no": n, "window_start": 0,
             "window_end": 3}
            for n in (1, 2, 3)
        ]

    def test_unreadable_reply_counts_as_miss(self):
        # a chat-role agent never produces verdict JSON
        _, run = run_validation(
            FLOW3,
            TRACE3,
            params={"window_size": 3, "stride": 3},
            agent={"id": "c9", "role": "chat"},
        )
        summary = summary_of(run)
        assert summary["aggregate"] == "fail"
        notes = [
            e.detail["note"] for e in run.events
            if e.kind == "agent_invoked" and "note" in e.detail
        ]
        assert len(notes) == 3
        assert all(n.startswith("verdict_parse_error: ") for n in notes)

    def test_verdict_parents_window_then_flow(self):
        _, run = run_validation(FLOW3, TRACE3)
        (flow_obj,) = run.port_objects("flow_in", "artifact")
        verdicts = run.port_objects("val", "verdicts")
        assert len(verdicts) == 3
        for v in verdicts:
            window_hash, flow_hash = v.provenance.parent_hashes
            assert flow_hash == flow_obj.hash
            assert run.store[window_hash].schema == "log-window"

    def test_summary_parents_flow_then_verdicts(self):
        _, run = run_validation(FLOW3, TRACE3)
        (flow_obj,) = run.port_objects("flow_in", "artifact")
        (summary,) = run.port_objects("val", "summary")
        verdict_hashes = tuple(v.hash for v in run.port_objects("val", "verdicts"))
        assert summary.provenance.parent_hashes == (flow_obj.hash,) + verdict_hashes

    def test_windows_stay_off_ports(self):
        _, run = run_validation(FLOW3, TRACE3)
        windows = [o for o in run.store.values() if o.schema == "log-window"]
        assert windows
        # windows live in the store for lineage but never feed edges
        assert run.port_objects("val", "window") == []
        record_hashes = {
            o.hash for o in run.store.values() if o.schema == "message-record"
        }
        for window in windows:
            assert set(window.provenance.parent_hashes) <= record_hashes


# ---------------------------------------------------------------------------
# approval machine


def approval_graph(reject_connected=False):
    nodes = [
        node("a", "input", {"media_type": "text"}),
        node(
            "gate",
            "conditional",
            {"predicate": "human-approval", "branches": ["approve", "reject"]},
        ),
        node("z", "output"),
    ]
    edges = [edge("a.artifact", "gate.subject"), edge("gate.approve", "z.sink")]
    if reject_connected:
        nodes.append(node("rw", "output"))
        edges.append(edge("gate.reject", "rw.sink"))
    return make_graph(nodes, edges)


class TestApproval:
    def start(self, **kw):
        engine = Engine(**kw)
        run = engine.start_run(
            approval_graph(kw.pop("reject_connected", False))
            if "reject_connected" not in kw
            else approval_graph(True),
            {"a": Binding(text="the artifact")},
        )
        return engine, run

    def test_run_parks_awaiting(self):
        engine, run = self.start()
        assert run.status is RunStatus.AWAITING_APPROVAL
        (blob,) = run.port_objects("a", "artifact")
        assert run.pending_approval == {"node_id": "gate", "exposed": [blob.hash]}
        req = [e for e in run.events if e.kind == "approval_requested"]
        assert req[0].detail == {"exposed": [blob.hash]}
        assert run.events[-1].kind == "approval_requested"

    def test_approve_resumes_and_succeeds(self):
        engine, run = self.start()
        engine.resolve_approval(run, approved=True, reviewer="alice", comment="lgtm")
        assert run.status is RunStatus.SUCCEEDED
        assert run.branches == {"gate": "approve"}
        assert run_exit_code(run) == 0
        flags = [o for o in run.store.values() if o.schema == "approval-flag"]
        assert flags[0].payload == {
            "approved": True, "reviewer": "alice", "comment": "lgtm", "decided_at_us": 0,
        }
        (blob,) = run.port_objects("a", "artifact")
        assert flags[0].provenance.parent_hashes == (blob.hash,)
        # the approved subject flows through the approve port to the sink
        finished = [
            e for e in run.events if e.kind == "node_finished" and e.node_id == "z"
        ]
        assert finished[0].detail == {"received": [blob.hash]}

    def test_double_resolve_is_wrong_state(self):
        engine, run = self.start()
        engine.resolve_approval(run, approved=True, reviewer="alice")
        with pytest.raises(WrongState):
            engine.resolve_approval(run, approved=True, reviewer="alice")

    def test_resolve_before_park_is_wrong_state(self):
        engine = Engine()
        g = make_graph(
            [node("a", "input", {"media_type": "text"}), node("z", "output")],
            [edge("a.artifact", "z.sink")],
        )
        run = engine.start_run(g, {"a": Binding(text="x")})
        with pytest.raises(WrongState):
            engine.resolve_approval(run, approved=True, reviewer="r")

    def test_invalid_flag_values(self):
        engine, run = self.start()
        with pytest.raises(InvalidFlag):
            engine.resolve_approval(run, approved=1, reviewer="alice")
        with pytest.raises(InvalidFlag):
            engine.resolve_approval(run, approved=True, reviewer="")
        with pytest.raises(InvalidFlag):
            engine.resolve_approval(run, approved=True, reviewer="two words")
        # the run is still parked after bad attempts
        assert run.status is RunStatus.AWAITING_APPROVAL
        engine.resolve_approval(run, approved=True, reviewer="alice")
        assert run.status is RunStatus.SUCCEEDED

    def test_reject_unconnected_fails_run(self):
        engine, run = self.start()
        engine.resolve_approval(run, approved=False, reviewer="bob", comment="redo")
        assert run.status is RunStatus.FAILED
        assert run.note == "rejected"
        assert run.branches == {"gate": "reject"}
        assert run_exit_code(run) == 3

    def test_reject_connected_emits_rework(self):
        engine = Engine()
        run = engine.start_run(
            approval_graph(reject_connected=True), {"a": Binding(text="the artifact")}
        )
        engine.resolve_approval(run, approved=False, reviewer="bob", comment="redo step 4")
        assert run.status is RunStatus.SUCCEEDED
        assert run_exit_code(run) == 1
        (blob,) = run.port_objects("a", "artifact")
        (rework,) = run.port_objects("gate", "reject")
        assert rework.payload["text"] == (
            f"rework requested by bob: redo step 4\nrejected: {blob.hash}"
        )
        flags = [o for o in run.store.values() if o.schema == "approval-flag"]
        assert rework.provenance.parent_hashes == (blob.hash, flags[0].hash)
        gate_kinds = kinds(run, "gate")
        assert gate_kinds == [
            "node_started", "approval_requested", "object_published",
            "approval_received", "branch_taken", "object_published", "node_finished",
        ]

    def test_reject_empty_comment_placeholder(self):
        engine = Engine()
        run = engine.start_run(
            approval_graph(reject_connected=True), {"a": Binding(text="x")}
        )
        engine.resolve_approval(run, approved=False, reviewer="bob")
        (rework,) = run.port_objects("gate", "reject")
        assert rework.payload["text"].startswith("rework requested by bob: (no comment)")

    def test_cancel_parked_run(self):
        engine, run = self.start()
        engine.cancel(run)
        assert run.status is RunStatus.CANCELLED
        assert run_exit_code(run) == 3
        assert run.events[-1].kind == "run_finished"

    def test_deadline_expiry_cancels(self):
        engine, run = self.start(approval_deadline_s=0.05)
        assert run.status is RunStatus.AWAITING_APPROVAL
        deadline = time.time() + 5.0
        while run.status is RunStatus.AWAITING_APPROVAL and time.time() < deadline:
            time.sleep(0.01)
        assert run.status is RunStatus.CANCELLED
        assert run.note == "approval deadline expired"

    def test_resolution_beats_deadline(self):
        engine, run = self.start(approval_deadline_s=30.0)
        engine.resolve_approval(run, approved=True, reviewer="alice")
        assert run.status is RunStatus.SUCCEEDED
        assert engine._timers.get(run.run_id) is None


# ---------------------------------------------------------------------------
# conditional routing and the skip rule


def gate_graph(aggregate, branches=("pass", "fail"), strict=False, extra_nodes=(),
               extra_edges=()):
    nodes = [
        node("src", "input", {"media_type": "text"}),
        node(
            "gate",
            "conditional",
            {"predicate": "verdict-branch", "branches": list(branches), "strict": strict},
        ),
        node("on_pass", "output"),
        node("on_fail", "output"),
    ]
    edges = [
        edge("src.artifact", "gate.subject"),
        edge("gate.pass", "on_pass.sink"),
        edge("gate.fail", "on_fail.sink"),
    ]
    nodes.extend(extra_nodes)
    edges.extend(extra_edges)
    g = make_graph(nodes, edges)
    binding = {"src": Binding(text=json.dumps({"aggregate": aggregate}))}
    return g, binding


class TestConditionalRouting:
    def test_pass_branch_runs_only_pass_leg(self):
        g, bindings = gate_graph("pass")
        run = Engine().start_run(g, bindings)
        assert run.status is RunStatus.SUCCEEDED
        assert run.branches == {"gate": "pass"}
        assert run.node_status["on_pass"] == "done"
        assert run.node_status["on_fail"] == "skipped"
        assert run_exit_code(run) == 0

    def test_fail_branch_flips_legs_and_exit_code(self):
        g, bindings = gate_graph("fail")
        run = Engine().start_run(g, bindings)
        assert run.node_status["on_pass"] == "skipped"
        assert run.node_status["on_fail"] == "done"
        assert run_exit_code(run) == 1

    def test_branch_event_reports_connectivity(self):
        g, bindings = gate_graph("pass")
        run = Engine().start_run(g, bindings)
        taken = [e for e in run.events if e.kind == "branch_taken"]
        assert taken[0].detail == {"branch": "pass", "connected": True}

    def test_unlisted_branch_lenient_notes_and_skips(self):
        g, bindings = gate_graph("partial")
        run = Engine().start_run(g, bindings)
        assert run.status is RunStatus.SUCCEEDED
        assert run.branches == {"gate": "partial"}
        assert "no port" in run.note
        assert run.node_status["on_pass"] == "skipped"
        assert run.node_status["on_fail"] == "skipped"
        assert run_exit_code(run) == 1
        taken = [e for e in run.events if e.kind == "branch_taken"]
        assert taken[0].detail == {"branch": "partial", "connected": False}

    def test_unlisted_branch_strict_fails_run(self):
        g, bindings = gate_graph("partial", strict=True)
        run = Engine().start_run(g, bindings)
        assert run.status is RunStatus.FAILED
        errors = [e for e in run.events if e.kind == "node_error"]
        assert errors[0].detail["error"] == "MissingBranchPort"

    def test_listed_but_unconnected_branch(self):
        # branch port exists but nothing consumes it
        nodes = [
            node("src", "input", {"media_type": "text"}),
            node(
                "gate",
                "conditional",
                {"predicate": "verdict-branch", "branches": ["pass", "fail"]},
            ),
            node("on_fail", "output"),
        ]
        edges = [edge("src.artifact", "gate.subject"), edge("gate.fail", "on_fail.sink")]
        g = make_graph(nodes, edges)
        run = Engine().start_run(
            g, {"src": Binding(text=json.dumps({"aggregate": "pass"}))}
        )
        assert run.status is RunStatus.SUCCEEDED
        assert "unconnected" in run.note
        taken = [e for e in run.events if e.kind == "branch_taken"]
        assert taken[0].detail == {"branch": "pass", "connected": False}

    def test_verdict_object_routes_directly(self):
        # a validation-verdict used as the subject: found means pass
        g = make_graph(
            [
                node("src", "input", {"media_type": "flow-json"}),
                node(
                    "gate",
                    "conditional",
                    {"predicate": "verdict-branch", "branches": ["pass", "fail"]},
                    ports={
                        "in": [
                            {"name": "subject", "direction": "in", "accepts": ["any"]}
                        ]
                    },
                ),
                node("on_pass", "output"),
                node("on_fail", "output"),
            ],
            [
                edge("src.artifact", "gate.subject"),
                edge("gate.pass", "on_pass.sink"),
                edge("gate.fail", "on_fail.sink"),
            ],
        )
        # flow-json input cannot carry a verdict; use text-blob JSON instead
        run = Engine().start_run(
            g,
            {"src": Binding(text=json.dumps({
                "test_id": "f",
                "steps": [{"step_no": 1, "protocol": "RRC", "name": "X"}],
            }))},
        )
        # a procedural flow is not a summary: the gate cannot route it
        assert run.status is RunStatus.FAILED
        errors = [e for e in run.events if e.kind == "node_error"]
        assert errors[0].detail["error"] == "EngineError"


class TestSkipRule:
    def test_diamond_rejoin_executes(self):
        extra_nodes = [node("join", "output")]
        extra_edges = [edge("gate.pass", "join.sink"), edge("gate.fail", "join.sink")]
        g, bindings = gate_graph("pass", extra_nodes=extra_nodes, extra_edges=extra_edges)
        run = Engine().start_run(g, bindings)
        # one live edge into join.sink keeps it eligible
        assert run.node_status["join"] == "done"
        subject_hash = run.port_objects("src", "artifact")[0].hash
        finished = [
            e for e in run.events if e.kind == "node_finished" and e.node_id == "join"
        ]
        assert finished[0].detail == {"received": [subject_hash]}

    def test_skip_propagates_down_dead_leg(self):
        extra_nodes = [
            node(
                "fn",
                "logic",
                {"builtin": "custom", "script_ref": "noop"},
                ports={
                    "in": [{"name": "in", "direction": "in", "accepts": ["any"]}],
                    "out": [{"name": "out", "direction": "out", "accepts": ["any"]}],
                },
            ),
            node("tail", "output"),
        ]
        extra_edges = [edge("gate.fail", "fn.in"), edge("fn.out", "tail.sink")]
        g, bindings = gate_graph("pass", extra_nodes=extra_nodes, extra_edges=extra_edges)
        engine = Engine(scripts={"noop": lambda inputs: {}})
        run = engine.start_run(g, bindings)
        assert run.node_status["fn"] == "skipped"
        assert run.node_status["tail"] == "skipped"
        started = {e.node_id for e in run.events if e.kind == "node_started"}
        assert "fn" not in started and "tail" not in started

    def test_one_starved_port_skips_whole_node(self):
        # fn has two wired in-ports; "b" is fed only by the dead branch
        extra_nodes = [
            node(
                "fn",
                "logic",
                {"builtin": "custom", "script_ref": "noop"},
                ports={
                    "in": [
                        {"name": "a", "direction": "in", "accepts": ["any"]},
                        {"name": "b", "direction": "in", "accepts": ["any"]},
                    ],
                    "out": [{"name": "out", "direction": "out", "accepts": ["any"]}],
                },
            ),
            node("tail", "output"),
        ]
        extra_edges = [
            edge("gate.pass", "fn.a"),
            edge("gate.fail", "fn.b"),
            edge("fn.out", "tail.sink"),
        ]
        g, bindings = gate_graph("pass", extra_nodes=extra_nodes, extra_edges=extra_edges)
        engine = Engine(scripts={"noop": lambda inputs: {}})
        run = engine.start_run(g, bindings)
        assert run.node_status["fn"] == "skipped"
        assert run.node_status["tail"] == "skipped"


# ---------------------------------------------------------------------------
# custom scripts and retrieval


class TestCustomScripts:
    def graph(self):
        return make_graph(
            [
                node("a", "input", {"media_type": "text"}),
                node(
                    "fn",
                    "logic",
                    {"builtin": "custom", "script_ref": "shout"},
                    ports={
                        "in": [{"name": "in", "direction": "in", "accepts": ["any"]}],
                        "out": [
                            {"name": "out", "direction": "out", "accepts": ["text-blob"]}
                        ],
                    },
                ),
                node("z", "output"),
            ],
            [edge("a.artifact", "fn.in"), edge("fn.out", "z.sink")],
        )

    def test_script_output_published(self):
        def shout(inputs):
            text = inputs["in"][0].payload["text"]
            return {"out": [("text-blob", {"text": text.upper()})]}

        engine = Engine(scripts={"shout": shout})
        run = engine.start_run(self.graph(), {"a": Binding(text="quiet")})
        assert run.status is RunStatus.SUCCEEDED
        (obj,) = run.port_objects("fn", "out")
        assert obj.payload == {"text": "QUIET"}

    def test_unknown_script_fails_run(self):
        engine = Engine()  # no scripts registered
        run = engine.start_run(self.graph(), {"a": Binding(text="x")})
        assert run.status is RunStatus.FAILED
        errors = [e for e in run.events if e.kind == "node_error"]
        assert errors[0].detail["error"] == "UnknownScript"
        assert "shout" in errors[0].detail["message"]


class TestRetrieval:
    DOCS = ["alpha beta gamma delta", "alpha alpha beta", "alpha beta"]

    def test_tokenize(self):
        assert tokenize("Alpha-Beta_9 gamma") == ["alpha", "beta", "9", "gamma"]
        assert tokenize("") == []

    def test_rank_corpus_frozen_scores(self):
        # frozen from an independent tf/(1+len) computation
        ranked = rank_corpus("alpha alpha beta", self.DOCS, 5)
        assert ranked == [(1, 1.25), (2, 1.0), (0, 0.6000000000000001)]

    def test_rank_corpus_top_k_truncates(self):
        ranked = rank_corpus("alpha alpha beta", self.DOCS, 2)
        assert [i for i, _ in ranked] == [1, 2]

    def test_tie_breaks_by_corpus_order(self):
        ranked = rank_corpus("alpha", ["alpha x", "alpha y"], 5)
        assert [i for i, _ in ranked] == [0, 1]

    def test_retrieval_node_emits_ranked_snippets(self):
        nodes = [
            node("q", "input", {"media_type": "text"}),
            node("d0", "input", {"media_type": "text"}),
            node("d1", "input", {"media_type": "text"}),
            node("d2", "input", {"media_type": "text"}),
            node("ret", "logic", {"builtin": "keyword-retrieval", "params": {"top_k": 2}}),
            node("z", "output"),
        ]
        edges = [
            edge("q.artifact", "ret.query"),
            edge("d0.artifact", "ret.docs"),
            edge("d1.artifact", "ret.docs"),
            edge("d2.artifact", "ret.docs"),
            edge("ret.snippets", "z.sink"),
        ]
        g = make_graph(nodes, edges)
        run = Engine().start_run(
            g,
            {
                "q": Binding(text="alpha alpha beta"),
                "d0": Binding(text=self.DOCS[0]),
                "d1": Binding(text=self.DOCS[1]),
                "d2": Binding(text=self.DOCS[2]),
            },
        )
        snippets = run.port_objects("ret", "snippets")
        assert [s.payload["text"] for s in snippets] == [self.DOCS[1], self.DOCS[2]]
        (query_obj,) = run.port_objects("q", "artifact")
        (d1_obj,) = run.port_objects("d1", "artifact")
        assert snippets[0].provenance.parent_hashes == (query_obj.hash, d1_obj.hash)


# ---------------------------------------------------------------------------
# exit codes and reports


class TestExitCodes:
    def test_mapping(self):
        g, bindings = gate_graph("pass")
        run = Engine().start_run(g, bindings)
        assert run_exit_code(run) == 0

        g, bindings = gate_graph("fail")
        assert run_exit_code(Engine().start_run(g, bindings)) == 1

        engine, parked = Engine(), None
        parked = engine.start_run(approval_graph(), {"a": Binding(text="x")})
        engine.cancel(parked)
        assert run_exit_code(parked) == 3


class TestReports:
    def test_report_requires_terminal_run(self):
        engine = Engine()
        run = engine.start_run(approval_graph(), {"a": Binding(text="x")})
        with pytest.raises(RunNotTerminal):
            export_report(run)
        engine.resolve_approval(run, approved=True, reviewer="r")
        report = export_report(run)
        assert report["status"] == "succeeded"

    def test_validation_report_content(self):
        _, run = run_validation(FLOW3, TRACE3)
        report = export_report(run)
        assert report["run_id"] == run.run_id
        assert report["graph"]["name"] == "g"
        assert report["validation"]["aggregate"] == "pass"
        assert report["validation"]["windows_examined"] == 3
        assert report["node_status"]["val"] == "done"
        assert report["event_count"] == len(run.events)
        hashes = {o["hash"] for o in report["objects"]}
        assert hashes == set(run.store)
        assert "# Run report: g" in report["markdown"]

    def test_report_deterministic_for_fixed_run_id(self):
        def one():
            engine = Engine()
            return engine.start_run(
                validation_graph(),
                {
                    "flow_in": Binding(text=json.dumps(FLOW3)),
                    "trace_in": Binding(text=TRACE3),
                },
                run_id="fixed",
            )

        assert export_report(one()) == export_report(one())

    def test_failed_run_report_carries_note(self):
        g = make_graph(
            [node("a", "input", {"media_type": "flow-json"}), node("z", "output")],
            [edge("a.artifact", "z.sink")],
        )
        run = Engine().start_run(g, {"a": Binding(text="broken")})
        report = export_report(run)
        assert report["status"] == "failed"
        assert report["note"].startswith("a:")
