"""Release gate: one test per shipping requirement, run with -v for the list.

Each test here states an externally visible promise of the package and
checks it end to end, mostly through the same entry points a user would
hit (CLI, HTTP API, public functions). Unit-level details live in the
other test modules; this file is intentionally coarse.
"""

import json
import struct
import time

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

import test_context_properties as properties
from telehub.cli import main
from telehub.engine import Engine, normalize_events, rank_corpus
from telehub.graph import parse_graph_document, topo_order, validate_graph
from telehub.ingest import TruncatedRecord, parse_pcap, write_pcap
from telehub.prebuilt import default_bindings, fixture_bytes, get_prebuilt, load_graph
from telehub.service import ServiceConfig, create_app

runner = CliRunner()


def run_demo_cli(tmp_path, *extra_args):
    report_path = tmp_path / "report.json"
    started = time.monotonic()
    result = runner.invoke(
        main,
        ["prebuilt", "run", "ai5gtest", "--report", str(report_path), *extra_args],
    )
    elapsed = time.monotonic() - started
    report = json.loads(report_path.read_text()) if report_path.exists() else None
    return result, report, elapsed


def test_01_end_to_end_pass(tmp_path):
    """Demo run on the clean trace: exit 0, 10/10 steps found, under 2 s."""
    result, report, elapsed = run_demo_cli(tmp_path)
    assert result.exit_code == 0, result.output
    assert report["status"] == "succeeded"
    assert report["validation"]["aggregate"] == "pass"
    per_step = report["validation"]["per_step"]
    assert len(per_step) == 10
    assert all(v["status"] == "found" for v in per_step)
    assert elapsed < 2.0, f"took {elapsed:.2f}s"


def test_02_end_to_end_fail_with_diagnosis(tmp_path):
    """Thinned trace: exit 1, exactly one miss, debug agent diagnoses it."""
    result, report, _ = run_demo_cli(tmp_path, "--variant", "missing-auth")
    assert result.exit_code == 1, result.output
    assert report["validation"]["aggregate"] == "fail"
    misses = [
        v for v in report["validation"]["per_step"] if v["status"] == "not_found"
    ]
    assert len(misses) == 1
    flow_steps = {v["step_no"]: v for v in report["validation"]["per_step"]}
    assert misses[0]["step_no"] in flow_steps
    assert len(report["debug"]) == 1
    diagnosis = report["debug"][0]["text"]
    assert "AuthenticationResponse" in diagnosis
    assert "AuthenticationRequest" in diagnosis  # nearest name by edit distance


def test_03_mock_runs_deterministic():
    """Two consecutive mock runs: byte-identical normalized event logs."""
    entry = get_prebuilt("ai5gtest")

    def one_log():
        engine = Engine(agent_mode="mock")
        run = engine.start_run(load_graph(entry), default_bindings(entry))
        engine.resolve_approval(run, approved=True, reviewer="gate", comment="go")
        return b"\n".join(
            json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
            for doc in normalize_events(run.events)
        )

    assert one_log() == one_log()


def test_04_approval_state_machine(tmp_path):
    """Deny leaves a rework artifact and exit 1; the API rejects a second
    decision with 409; an approve resumes into the validation node."""
    # deny path through the CLI
    result, report, _ = run_demo_cli(tmp_path, "--reject", "--comment", "not yet")
    assert result.exit_code == 1, result.output
    assert report["rework"] is not None
    assert "not yet" in report["rework"]
    assert report["node_status"]["validation"] == "skipped"

    # approve path plus double-decision through the API
    app = create_app(ServiceConfig(data_dir=tmp_path / "svc"))
    with TestClient(app) as client:
        bindings = client.post("/prebuilt/ai5gtest/instantiate").json()["bindings"]
        run_id = client.post(
            "/runs", json={"graph": "ai5gtest", "bindings": bindings}
        ).json()["run_id"]
        deadline = time.time() + 10
        while time.time() < deadline:
            status = client.get(f"/runs/{run_id}").json()
            if status["status"] == "awaiting_approval":
                break
            time.sleep(0.02)
        assert status["status"] == "awaiting_approval"

        first = client.post(
            f"/runs/{run_id}/approval", json={"approved": True, "reviewer": "gate"}
        )
        assert first.status_code == 200
        second = client.post(
            f"/runs/{run_id}/approval", json={"approved": True, "reviewer": "gate"}
        )
        assert second.status_code == 409
        assert second.json()["error"]["code"] == "wrong_state"

        final = client.get(f"/runs/{run_id}").json()
        assert final["status"] == "succeeded"
        assert final["node_status"]["validation"] == "done"

        # execution resumed past the gate: validation started after approval
        events = client.get(f"/runs/{run_id}/events").json()["events"]
        order = {
            (e["kind"], e.get("node_id")): e["seq"]
            for e in events
            if (e["kind"], e.get("node_id"))
            in {("approval_received", "approval"), ("node_started", "validation")}
        }
        assert (
            order[("approval_received", "approval")]
            < order[("node_started", "validation")]
        )


def test_05_pcap_conformance():
    """All four header flavors of the bundled capture parse to the same
    logical packets; truncation is named; write+parse round-trips."""
    bundled = fixture_bytes("fixtures/tiny.pcap")
    reference = parse_pcap(bundled)
    logical = reference.logical_packets()
    assert len(logical) == 3

    def repack(magic_kind, byte_order):
        order = "<" if byte_order == "little" else ">"
        magic = 0xA1B2C3D4 if magic_kind == "usec" else 0xA1B23C4D
        scale = 1_000 if magic_kind == "usec" else 1
        out = struct.pack(
            f"{order}IHHiIII", magic, 2, 4, 0, 0,
            reference.snaplen, reference.linktype,
        )
        for ts_ns, incl_len, orig_len, data in logical:
            sec, sub = divmod(ts_ns, 1_000_000_000)
            out += struct.pack(
                f"{order}IIII", sec, sub // scale, incl_len, orig_len
            ) + data
        return out

    for magic_kind in ("usec", "nsec"):
        for byte_order in ("little", "big"):
            variant = parse_pcap(repack(magic_kind, byte_order))
            assert variant.magic_kind == magic_kind
            assert variant.byte_order == byte_order
            assert variant.logical_packets() == logical

    # cut inside the last record header
    with pytest.raises(TruncatedRecord):
        parse_pcap(bundled[: reference.packets[-1].offset + 8])

    assert write_pcap(reference) == bundled


def test_06_context_object_properties():
    """Four generative properties at a thousand cases each: canonical JSON
    fixpoint, hash equals canonical content, projections stay inside their
    source with lineage, and every single-field mutation is reported."""
    properties.test_canonicalize_decode_fixpoint()
    properties.test_hash_tracks_canonical_bytes_exactly()
    properties.test_projection_is_contained_and_linked()
    properties.test_single_field_corruption_is_always_reported()


def test_07_graph_model_guarantees():
    """The validator names structural defects; demo graph order is frozen."""
    def diag_codes(doc):
        return {d.code for d in validate_graph(parse_graph_document(doc))}

    def doc(nodes, edges):
        return {"version": "1.0", "name": "g", "nodes": nodes, "edges": edges}

    cycle = doc(
        [
            {"id": "a", "kind": "input", "config": {"media_type": "text"}},
            {"id": "b", "kind": "logic", "config": {"builtin": "custom", "script_ref": "s"}},
            {"id": "c", "kind": "logic", "config": {"builtin": "custom", "script_ref": "s"}},
            {"id": "z", "kind": "output"},
        ],
        [
            {"from": "a.artifact", "to": "b.in"},
            {"from": "b.out", "to": "c.in"},
            {"from": "c.out", "to": "b.in"},
            {"from": "c.out", "to": "z.sink"},
        ],
    )
    assert "CycleDetected" in diag_codes(cycle)

    mismatch = doc(
        [
            {
                "id": "a",
                "kind": "input",
                "config": {"media_type": "text"},
                "ports": {
                    "out": [
                        {"name": "artifact", "direction": "out",
                         "accepts": ["text-blob"]}
                    ]
                },
            },
            {
                "id": "v",
                "kind": "logic",
                "config": {
                    "builtin": "sliding-window-validation",
                    "agent": {"id": "v1", "role": "val"},
                },
            },
            {"id": "z", "kind": "output"},
        ],
        [
            {"from": "a.artifact", "to": "v.flow"},  # text-blob into a flow port
            {"from": "v.summary", "to": "z.sink"},
        ],
    )
    assert "SchemaIncompatible" in diag_codes(mismatch)

    from telehub.graph import GraphDocumentError

    dup = doc(
        [
            {"id": "a", "kind": "input", "config": {"media_type": "text"}},
            {"id": "a", "kind": "output"},
        ],
        [],
    )
    with pytest.raises(GraphDocumentError) as exc_info:
        parse_graph_document(dup)
    assert any(e.code == "DuplicateNodeId" for e in exc_info.value.errors)

    demo = load_graph(get_prebuilt("ai5gtest"))
    assert topo_order(demo) == [
        "ran_log", "raw_trace", "pcap_proc", "test_intent", "gen_llm",
        "approval", "rework_sink", "validation", "verdict_gate",
        "debug_llm", "report",
    ]


def test_08_retrieval_ranking_frozen():
    """The committed three-document ranking comes straight from the
    term-frequency over length-plus-one scoring rule."""
    docs = ["alpha beta gamma delta", "alpha alpha beta", "alpha beta"]
    assert rank_corpus("alpha alpha beta", docs, 5) == [
        (1, 1.25),
        (2, 1.0),
        (0, 0.6000000000000001),
    ]
