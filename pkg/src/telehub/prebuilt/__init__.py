"""Prebuilt workflow catalog.

Ships ready-to-run graphs plus the fixture artifacts their input nodes
expect, so a fresh install can execute a meaningful run without authoring
anything. Entries are data (JSON documents under data/), not code; the
catalog here only loads, indexes and binds them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from ..engine import Binding
from ..graph import WorkflowGraph, parse_graph_document


class UnknownPrebuilt(KeyError):
    def __init__(self, prebuilt_id: str):
        super().__init__(prebuilt_id)
        self.prebuilt_id = prebuilt_id

    def __str__(self) -> str:
        return f"no prebuilt workflow {self.prebuilt_id!r}"


@dataclass(frozen=True)
class PrebuiltEntry:
    id: str
    title: str
    description: str
    graph_file: str
    bindings: dict  # input node id -> data-relative fixture path
    variants: dict  # variant name -> {input node id -> fixture path}

    def describe(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "description": self.description,
            "inputs": sorted(self.bindings),
            "variants": sorted(self.variants),
        }


def _data_root():
    return resources.files(__package__) / "data"


def _load_manifest() -> list[PrebuiltEntry]:
    doc = json.loads((_data_root() / "manifest.json").read_text(encoding="utf-8"))
    entries = []
    for raw in doc["entries"]:
        entries.append(
            PrebuiltEntry(
                id=raw["id"],
                title=raw["title"],
                description=raw["description"],
                graph_file=raw["graph"],
                bindings=dict(raw.get("bindings", {})),
                variants={k: dict(v) for k, v in raw.get("variants", {}).items()},
            )
        )
    return entries


def list_prebuilt() -> list[PrebuiltEntry]:
    return _load_manifest()


def get_prebuilt(prebuilt_id: str) -> PrebuiltEntry:
    for entry in _load_manifest():
        if entry.id == prebuilt_id:
            return entry
    raise UnknownPrebuilt(prebuilt_id)


def load_graph(entry: PrebuiltEntry) -> WorkflowGraph:
    text = (_data_root() / entry.graph_file).read_text(encoding="utf-8")
    return parse_graph_document(text)


def graph_document(entry: PrebuiltEntry) -> dict:
    return json.loads((_data_root() / entry.graph_file).read_text(encoding="utf-8"))


def fixture_text(rel_path: str) -> str:
    return (_data_root() / rel_path).read_text(encoding="utf-8")


def fixture_bytes(rel_path: str) -> bytes:
    return (_data_root() / rel_path).read_bytes()


def default_bindings(entry: PrebuiltEntry, variant: str | None = None) -> dict[str, Binding]:
    """Bindings for a run of this entry, fixtures loaded into memory.

    A variant overrides individual inputs; unknown variant names raise
    KeyError so a typo cannot silently run the default artifacts.
    """
    paths = dict(entry.bindings)
    if variant is not None:
        paths.update(entry.variants[variant])
    bindings: dict[str, Binding] = {}
    for node_id, rel_path in paths.items():
        raw = fixture_bytes(rel_path)
        try:
            bindings[node_id] = Binding(text=raw.decode("utf-8"))
        except UnicodeDecodeError:
            bindings[node_id] = Binding(data=raw)
    return bindings
