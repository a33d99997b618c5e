"""Command line entry points.

Exit code contract for `run` (and `prebuilt run`): 0 for a clean pass, 1
when the run finished but took a fail, reject or partial branch, 3 when the
run itself failed or was cancelled. Usage errors exit 2 (click's default),
so scripts can tell "your invocation was wrong" from "your network test
failed".
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import prebuilt as prebuilt_catalog
from .agents import EndpointConfig
from .engine import (
    Binding,
    Engine,
    EngineError,
    RunStatus,
    export_report,
    run_exit_code,
)
from .graph import GraphDocumentError, parse_graph_document, validate_graph
from .ingest import (
    RECORD_HEADER_LEN,
    IngestError,
    MessageRecord,
    extract_message_records,
    parse_pcap,
    parse_srsran_log,
)


@click.group()
@click.version_option(package_name="telehub")
def main() -> None:
    """Typed-context workflow runner for network test validation."""


# ---------------------------------------------------------------------------
# validate


@main.command()
@click.argument("graph_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def validate(graph_file: Path) -> None:
    """Parse and validate a graph document; list every diagnostic."""
    try:
        graph = parse_graph_document(graph_file.read_text(encoding="utf-8"))
    except GraphDocumentError as exc:
        for diag in exc.errors:
            click.echo(f"parse: {diag}", err=True)
        sys.exit(1)
    diags = validate_graph(graph)
    for diag in diags:
        click.echo(f"validate: {diag}", err=True)
    if diags:
        sys.exit(1)
    click.echo(f"{graph.name}: ok ({len(graph.nodes)} nodes, {len(graph.edges)} edges)")


# ---------------------------------------------------------------------------
# run


def _parse_bind(pairs: tuple[str, ...]) -> dict[str, Binding]:
    bindings: dict[str, Binding] = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.UsageError(f"--bind expects node_id=path, got {pair!r}")
        node_id, path = pair.split("=", 1)
        bindings[node_id] = Binding(path=path)
    return bindings


def _parse_endpoints(pairs: tuple[str, ...]) -> dict[str, EndpointConfig]:
    endpoints: dict[str, EndpointConfig] = {}
    for pair in pairs:
        parts = pair.split("=", 2)
        if len(parts) < 2:
            raise click.UsageError(f"--endpoint expects id=base_url[=api_key], got {pair!r}")
        endpoint_id, base_url = parts[0], parts[1]
        api_key = parts[2] if len(parts) == 3 else None
        endpoints[endpoint_id] = EndpointConfig(id=endpoint_id, base_url=base_url, api_key=api_key)
    return endpoints


def _finish_run(engine: Engine, run, approve: bool, reviewer: str, comment: str) -> None:
    if run.status is RunStatus.AWAITING_APPROVAL:
        node_id = run.pending_approval["node_id"]
        word = "approving" if approve else "rejecting"
        click.echo(f"{word} at {node_id} as {reviewer}")
        engine.resolve_approval(run, approved=approve, reviewer=reviewer, comment=comment)


def _report_run(run, report_path: Path | None, events_path: Path | None) -> None:
    for node_id, status in run.node_status.items():
        click.echo(f"  {node_id}: {status}")
    note = f" ({run.note})" if run.note else ""
    click.echo(f"run {run.run_id}: {run.status.value}{note}")
    if events_path is not None:
        with events_path.open("w", encoding="utf-8") as fh:
            for event in run.events:
                fh.write(json.dumps(event.to_doc(), sort_keys=True, separators=(",", ":")))
                fh.write("\n")
        click.echo(f"events written to {events_path}")
    if report_path is not None and run.status in (
        RunStatus.SUCCEEDED,
        RunStatus.FAILED,
        RunStatus.CANCELLED,
    ):
        report = export_report(run)
        report_path.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
        click.echo(f"report written to {report_path}")


@main.command()
@click.argument("graph_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--bind", "binds", multiple=True, metavar="NODE=PATH", help="Bind an input node.")
@click.option("--agents", type=click.Choice(["mock", "live"]), default="mock", show_default=True)
@click.option("--endpoint", "endpoints", multiple=True, metavar="ID=URL[=KEY]")
@click.option("--approve/--reject", default=True, help="Decision for a human-approval pause.")
@click.option("--reviewer", default="cli", show_default=True)
@click.option("--comment", default="")
@click.option("--report", "report_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--events", "events_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--run-id", default=None, help="Fix the run id instead of generating one.")
def run(
    graph_file: Path,
    binds: tuple[str, ...],
    agents: str,
    endpoints: tuple[str, ...],
    approve: bool,
    reviewer: str,
    comment: str,
    report_path: Path | None,
    events_path: Path | None,
    run_id: str | None,
) -> None:
    """Execute a graph document with artifacts bound from files."""
    try:
        graph = parse_graph_document(graph_file.read_text(encoding="utf-8"))
    except GraphDocumentError as exc:
        raise click.UsageError("graph document invalid:\n" + "\n".join(str(e) for e in exc.errors))
    diags = validate_graph(graph)
    if diags:
        raise click.UsageError("graph invalid:\n" + "\n".join(str(d) for d in diags))

    engine = Engine(agent_mode=agents, endpoints=_parse_endpoints(endpoints))
    try:
        run_obj = engine.start_run(graph, _parse_bind(binds), run_id=run_id)
        _finish_run(engine, run_obj, approve, reviewer, comment)
    except EngineError as exc:
        raise click.UsageError(str(exc))
    _report_run(run_obj, report_path, events_path)
    sys.exit(run_exit_code(run_obj))


# ---------------------------------------------------------------------------
# prebuilt


@main.group()
def prebuilt() -> None:
    """Prebuilt workflow catalog."""


@prebuilt.command("list")
def prebuilt_list() -> None:
    for entry in prebuilt_catalog.list_prebuilt():
        click.echo(f"{entry.id}: {entry.title}")
        variants = ", ".join(sorted(entry.variants)) or "-"
        click.echo(f"  inputs: {', '.join(sorted(entry.bindings))} | variants: {variants}")


@prebuilt.command("show")
@click.argument("prebuilt_id")
def prebuilt_show(prebuilt_id: str) -> None:
    try:
        entry = prebuilt_catalog.get_prebuilt(prebuilt_id)
    except prebuilt_catalog.UnknownPrebuilt as exc:
        raise click.UsageError(str(exc))
    doc = prebuilt_catalog.graph_document(entry)
    click.echo(json.dumps(doc, indent=2, sort_keys=True))


@prebuilt.command("export")
@click.argument("prebuilt_id")
@click.option(
    "--dest",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Directory to write the graph document and fixture files into.",
)
def prebuilt_export(prebuilt_id: str, dest: Path) -> None:
    """Write a prebuilt graph and its fixtures to disk for editing."""
    try:
        entry = prebuilt_catalog.get_prebuilt(prebuilt_id)
    except prebuilt_catalog.UnknownPrebuilt as exc:
        raise click.UsageError(str(exc))
    dest.mkdir(parents=True, exist_ok=True)
    graph_path = dest / entry.graph_file
    graph_path.write_text(
        json.dumps(prebuilt_catalog.graph_document(entry), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    written = [graph_path]
    fixture_rels = set(entry.bindings.values())
    for overrides in entry.variants.values():
        fixture_rels.update(overrides.values())
    for rel in sorted(fixture_rels):
        out = dest / rel
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(prebuilt_catalog.fixture_bytes(rel))
        written.append(out)
    for path in written:
        click.echo(f"wrote {path}")


@prebuilt.command("run")
@click.argument("prebuilt_id")
@click.option("--variant", default=None, help="Named fixture variant from the catalog.")
@click.option("--agents", type=click.Choice(["mock", "live"]), default="mock", show_default=True)
@click.option("--endpoint", "endpoints", multiple=True, metavar="ID=URL[=KEY]")
@click.option("--approve/--reject", default=True)
@click.option("--reviewer", default="cli", show_default=True)
@click.option("--comment", default="")
@click.option("--report", "report_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--events", "events_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--run-id", default=None)
def prebuilt_run(
    prebuilt_id: str,
    variant: str | None,
    agents: str,
    endpoints: tuple[str, ...],
    approve: bool,
    reviewer: str,
    comment: str,
    report_path: Path | None,
    events_path: Path | None,
    run_id: str | None,
) -> None:
    """Run a prebuilt workflow on its shipped fixtures."""
    try:
        entry = prebuilt_catalog.get_prebuilt(prebuilt_id)
        bindings = prebuilt_catalog.default_bindings(entry, variant=variant)
    except (prebuilt_catalog.UnknownPrebuilt, KeyError) as exc:
        raise click.UsageError(str(exc))
    graph = prebuilt_catalog.load_graph(entry)
    engine = Engine(agent_mode=agents, endpoints=_parse_endpoints(endpoints))
    try:
        run_obj = engine.start_run(graph, bindings, run_id=run_id)
        _finish_run(engine, run_obj, approve, reviewer, comment)
    except EngineError as exc:
        raise click.UsageError(str(exc))
    _report_run(run_obj, report_path, events_path)
    sys.exit(run_exit_code(run_obj))


# ---------------------------------------------------------------------------
# ingest


@main.group()
def ingest() -> None:
    """Turn raw capture artifacts into decoded-trace JSONL."""


@ingest.command("pcap")
@click.argument("pcap_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def ingest_pcap(pcap_file: Path, out: Path | None) -> None:
    """Index packets of a classic capture file as message records."""
    try:
        capture = parse_pcap(pcap_file.read_bytes())
    except IngestError as exc:
        raise click.ClickException(f"{pcap_file}: {exc}")
    lines = []
    for i, packet in enumerate(capture.packets):
        record = MessageRecord(
            protocol="PCAP",
            name=f"pkt{i}",
            timestamp_us=packet.timestamp_ns(capture.magic_kind) // 1000,
            direction="internal",
            index=i,
            # raw_ref slices the captured bytes, which sit after the 16-byte
            # record header.
            raw_ref=(packet.offset + RECORD_HEADER_LEN, packet.incl_len),
        )
        lines.append(json.dumps(record.to_payload(), sort_keys=True, separators=(",", ":")))
    text = "\n".join(lines) + ("\n" if lines else "")
    if out is None:
        click.echo(text, nl=False)
    else:
        out.write_text(text, encoding="utf-8")
        click.echo(f"{len(lines)} records written to {out}")


@ingest.command("log")
@click.argument("log_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--invert-direction", is_flag=True, help="Swap Tx/Rx mapping (UE perspective).")
def ingest_log(log_file: Path, out: Path | None, invert_direction: bool) -> None:
    """Lift Tx/Rx message lines out of a RAN text log."""
    parsed = parse_srsran_log(log_file.read_text(encoding="utf-8"))
    records = extract_message_records(parsed, invert_direction=invert_direction)
    lines = [
        json.dumps(r.to_payload(), sort_keys=True, separators=(",", ":")) for r in records
    ]
    text = "\n".join(lines) + ("\n" if lines else "")
    if out is None:
        click.echo(text, nl=False)
    else:
        out.write_text(text, encoding="utf-8")
        click.echo(f"{len(lines)} records written to {out} ({parsed.skipped} lines skipped)")


# ---------------------------------------------------------------------------
# serve


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8473, show_default=True)
@click.option(
    "--data-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("./telehub-data"),
    show_default=True,
)
@click.option("--token", default=None, help="Require this bearer token on every API call.")
@click.option("--agents", type=click.Choice(["mock", "live"]), default="mock", show_default=True)
@click.option("--endpoint", "endpoints", multiple=True, metavar="ID=URL[=KEY]")
@click.option("--approval-deadline", type=float, default=None, metavar="SECONDS")
@click.option("--ui", "ui_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
def serve(
    host: str,
    port: int,
    data_dir: Path,
    token: str | None,
    agents: str,
    endpoints: tuple[str, ...],
    approval_deadline: float | None,
    ui_dir: Path | None,
) -> None:
    """Serve the HTTP API (and, when --ui points at a build, the canvas)."""
    import uvicorn

    from .service import ServiceConfig, create_app

    app = create_app(
        ServiceConfig(
            data_dir=data_dir,
            auth_token=token,
            agent_mode=agents,
            endpoints=_parse_endpoints(endpoints),
            approval_deadline_s=approval_deadline,
            ui_dir=ui_dir,
        )
    )
    uvicorn.run(app, host=host, port=port, log_level="info")
