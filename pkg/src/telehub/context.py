"""Typed context objects exchanged between workflow nodes.

Every artifact that moves through a workflow (a parsed message trace, a
generated test flow, a validation verdict, an approval decision) is wrapped
in a ContextObject: a schema-tagged payload plus provenance describing where
it came from. Objects are immutable once built and content-addressed, so a
run's output can be audited after the fact and reproduced bit for bit.

The schema registry is fixed and versioned ("telemcp-schemas-1.0"). Seven
schemas cover the current node vocabulary; adding one means revving the
registry document, not patching payloads in place.

Content identity is the SHA-256 of the canonical encoding of
{payload, schema, schema_version}. Provenance fields (who made it, when,
in which run) deliberately stay out of the hashed region: the same payload
produced by two different runs hashes identically, which is what makes
mock-mode runs byte-comparable across invocations.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

SCHEMA_VERSION = "1.0"
REGISTRY_ID = "telemcp-schemas-1.0"

DIRECTIONS = ("UL", "DL", "internal")
VERDICT_STATUSES = ("found", "not_found")


# ---------------------------------------------------------------------------
# errors and violation reporting


class ContextError(Exception):
    """Base class for context-object failures."""


class UnregisteredSchema(ContextError):
    def __init__(self, schema: str, version: str):
        super().__init__(f"unregistered schema {schema!r} version {version!r}")
        self.schema = schema
        self.version = version


class PayloadInvalid(ContextError):
    """Raised when a payload fails schema validation at construction time."""

    def __init__(self, schema: str, violations: list[Violation]):
        detail = "; ".join(str(v) for v in violations[:4])
        super().__init__(f"invalid {schema} payload: {detail}")
        self.schema = schema
        self.violations = violations


class SchemaMismatch(ContextError):
    def __init__(self, expected: str, got: str):
        super().__init__(f"selector schema {expected!r} does not match object schema {got!r}")
        self.expected = expected
        self.got = got


class UnresolvablePath(ContextError):
    def __init__(self, schema: str, path: str):
        super().__init__(f"path {path!r} does not resolve against schema {schema!r}")
        self.schema = schema
        self.path = path


class BadSelector(ContextError):
    pass


class LineageUnknown(ContextError):
    """A parent hash references an object the store has never seen."""

    def __init__(self, parent_hash: str):
        super().__init__(f"parent hash not in store: {parent_hash}")
        self.parent_hash = parent_hash


@dataclass(frozen=True)
class Violation:
    """One schema violation, addressed by a dotted payload path."""

    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}" if self.path else self.message


# ---------------------------------------------------------------------------
# schema registry
#
# Field kinds: token (non-empty str, no whitespace), text (any str), int,
# real (int or float, finite), bool, enum, list, record. Lists and records
# nest via `item` / `children`. `required` governs strict validation only;
# projected payloads are validated with presence optional.


@dataclass(frozen=True)
class Field:
    kind: str
    required: bool = True
    values: tuple[str, ...] = ()
    children: dict[str, Field] | None = None
    item: dict[str, Field] | None = None
    min_value: float | None = None
    max_value: float | None = None


_RAW_REF_FIELDS: dict[str, Field] = {
    "offset": Field("int", min_value=0),
    "length": Field("int", min_value=0),
}

MESSAGE_RECORD_FIELDS: dict[str, Field] = {
    "protocol": Field("token"),
    "name": Field("token"),
    "timestamp_us": Field("int"),
    "direction": Field("enum", values=DIRECTIONS),
    "index": Field("int", min_value=0),
    "raw_ref": Field("record", required=False, children=_RAW_REF_FIELDS),
}

_EXPECTED_STEP_FIELDS: dict[str, Field] = {
    "step_no": Field("int", min_value=1),
    "protocol": Field("token"),
    "name": Field("token"),
    "direction": Field("enum", required=False, values=DIRECTIONS),
    "description": Field("text", required=False),
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "message-record": MESSAGE_RECORD_FIELDS,
    "log-window": {
        "source_id": Field("text"),
        "start_index": Field("int", min_value=0),
        "end_index": Field("int", min_value=0),
        "records": Field("list", item=MESSAGE_RECORD_FIELDS),
    },
    "procedural-flow": {
        "test_id": Field("token"),
        "steps": Field("list", item=_EXPECTED_STEP_FIELDS),
    },
    "validation-verdict": {
        "status": Field("enum", values=VERDICT_STATUSES),
        "explanation": Field("text"),
        "confidence": Field("real", min_value=0.0, max_value=1.0),
        "step_no": Field("int", min_value=1),
        "window_start": Field("int", min_value=0),
        "window_end": Field("int", min_value=0),
    },
    "approval-flag": {
        "approved": Field("bool"),
        "reviewer": Field("token"),
        "comment": Field("text", required=False),
        "decided_at_us": Field("int"),
    },
    "kpi-sample": {
        "key": Field("token"),
        "value": Field("real"),
        "unit": Field("text", required=False),
        "timestamp_us": Field("int"),
    },
    "text-blob": {
        "text": Field("text"),
    },
}


def registry_document() -> dict:
    """The shipped schema registry as a plain JSON document."""

    def describe(fields: dict[str, Field]) -> dict:
        out = {}
        for name, f in fields.items():
            entry: dict = {"kind": f.kind, "required": f.required}
            if f.values:
                entry["values"] = list(f.values)
            if f.min_value is not None:
                entry["min"] = f.min_value
            if f.max_value is not None:
                entry["max"] = f.max_value
            if f.children:
                entry["fields"] = describe(f.children)
            if f.item:
                entry["item"] = describe(f.item)
            out[name] = entry
        return out

    return {
        "id": REGISTRY_ID,
        "schema_version": SCHEMA_VERSION,
        "schemas": {name: describe(fields) for name, fields in SCHEMAS.items()},
    }


# ---------------------------------------------------------------------------
# payload validation


def _is_token(value) -> bool:
    return isinstance(value, str) and value != "" and not any(c.isspace() for c in value)


def _check_scalar(f: Field, value, path: str, out: list[Violation]) -> None:
    if f.kind == "token":
        if not _is_token(value):
            out.append(Violation(path, "must be a non-empty string without whitespace"))
    elif f.kind == "text":
        if not isinstance(value, str):
            out.append(Violation(path, "must be a string"))
    elif f.kind == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            out.append(Violation(path, "must be an integer"))
        elif f.min_value is not None and value < f.min_value:
            out.append(Violation(path, f"must be >= {int(f.min_value)}"))
    elif f.kind == "real":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            out.append(Violation(path, "must be a number"))
        elif not math.isfinite(value):
            out.append(Violation(path, "must be finite"))
        elif (f.min_value is not None and value < f.min_value) or (
            f.max_value is not None and value > f.max_value
        ):
            lo = f.min_value if f.min_value is not None else "-inf"
            hi = f.max_value if f.max_value is not None else "inf"
            out.append(Violation(path, f"out of [{lo}, {hi}]"))
    elif f.kind == "bool":
        if not isinstance(value, bool):
            out.append(Violation(path, "must be a boolean"))
    elif f.kind == "enum":
        if value not in f.values:
            out.append(Violation(path, f"must be one of {list(f.values)}"))


def _check_fields(
    fields: dict[str, Field], payload, path: str, partial: bool, out: list[Violation]
) -> None:
    if not isinstance(payload, dict):
        out.append(Violation(path, "must be an object"))
        return
    for key in payload:
        if key not in fields:
            out.append(Violation(f"{path}{key}", "unknown field"))
    for key, f in fields.items():
        if key not in payload:
            if f.required and not partial:
                out.append(Violation(f"{path}{key}", "missing required field"))
            continue
        value = payload[key]
        p = f"{path}{key}"
        if f.kind == "record":
            _check_fields(f.children or {}, value, p + ".", partial, out)
        elif f.kind == "list":
            if not isinstance(value, list):
                out.append(Violation(p, "must be a list"))
            else:
                for i, el in enumerate(value):
                    _check_fields(f.item or {}, el, f"{p}[{i}].", partial, out)
        else:
            _check_scalar(f, value, p, out)


def _cross_checks(schema: str, payload: dict, out: list[Violation]) -> None:
    # Cross-field invariants only fire when every operand is present, so that
    # projected payloads stay checkable.
    if schema == "log-window":
        start = payload.get("start_index")
        end = payload.get("end_index")
        records = payload.get("records")
        if isinstance(start, int) and isinstance(end, int) and not isinstance(start, bool):
            if start > end:
                out.append(Violation("start_index", f"start_index {start} > end_index {end}"))
            if isinstance(records, list) and len(records) != end - start:
                out.append(
                    Violation(
                        "records",
                        f"record count {len(records)} does not equal "
                        f"end_index - start_index = {end - start}",
                    )
                )
        if isinstance(records, list):
            indices = [
                r.get("index")
                for r in records
                if isinstance(r, dict) and isinstance(r.get("index"), int)
            ]
            if indices != sorted(indices):
                out.append(Violation("records", "record indices must be ascending"))
            if isinstance(start, int) and isinstance(end, int):
                for i in indices:
                    if not (start <= i < end):
                        out.append(
                            Violation("records", f"record index {i} outside [{start}, {end})")
                        )
                        break
    elif schema == "procedural-flow":
        steps = payload.get("steps")
        if isinstance(steps, list):
            if not steps:
                out.append(Violation("steps", "must not be empty"))
            nos = [s.get("step_no") for s in steps if isinstance(s, dict)]
            if all(isinstance(n, int) for n in nos) and nos != list(range(1, len(nos) + 1)):
                out.append(Violation("steps", "step_no values must be exactly 1..N ascending"))
    elif schema == "validation-verdict":
        ws = payload.get("window_start")
        we = payload.get("window_end")
        if isinstance(ws, int) and isinstance(we, int) and ws > we:
            out.append(Violation("window_start", f"window_start {ws} > window_end {we}"))


def validate_payload(
    schema: str, payload: dict, *, version: str = SCHEMA_VERSION, partial: bool = False
) -> list[Violation]:
    """Validate a payload dict against the registry. Empty list means ok.

    partial=True relaxes required-field presence (projected payloads); every
    field that is present is still fully type- and range-checked.
    """
    if version != SCHEMA_VERSION or schema not in SCHEMAS:
        return [Violation("", f"unregistered schema {schema!r} version {version!r}")]
    out: list[Violation] = []
    _check_fields(SCHEMAS[schema], payload, "", partial, out)
    if isinstance(payload, dict):
        _cross_checks(schema, payload, out)
    return out


def validate_object(obj: ContextObject, *, partial: bool = False) -> list[Violation]:
    """Every violation in an object: schema registration, fields, invariants."""
    return validate_payload(obj.schema, obj.payload, version=obj.schema_version, partial=partial)


# ---------------------------------------------------------------------------
# canonical encoding and hashing


def canonical_json_bytes(value) -> bytes:
    """Canonical JSON: keys sorted, no insignificant whitespace, UTF-8.

    Integers print in minimal decimal form, reals via shortest round-trip
    repr. NaN and infinities are rejected rather than smuggled through.
    """
    try:
        return json.dumps(
            value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
        ).encode("utf-8")
    except ValueError as exc:
        raise ContextError(f"value is not canonically encodable: {exc}") from exc


def compute_hash(data: bytes) -> str:
    """SHA-256 of the given bytes as 64 lowercase hex characters."""
    return hashlib.sha256(data).hexdigest()


def canonicalize(obj: ContextObject) -> bytes:
    """Canonical bytes of the hashed region: payload plus schema tag.

    Provenance is excluded on purpose; see the module docstring. The object
    must validate (projected payloads validate with presence optional).
    """
    violations = validate_object(obj, partial=True)
    if violations:
        raise PayloadInvalid(obj.schema, violations)
    region = {"payload": obj.payload, "schema": obj.schema, "schema_version": obj.schema_version}
    return canonical_json_bytes(region)


def decode_canonical(data: bytes) -> ContextObject:
    """Rebuild an object from canonical bytes. Inverse of canonicalize.

    The result carries fresh, empty provenance; content_hash is recomputed,
    so canonicalize(decode_canonical(b)) == b holds for any canonical b.
    """
    try:
        region = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContextError(f"not canonical object bytes: {exc}") from exc
    if not isinstance(region, dict) or set(region) != {"payload", "schema", "schema_version"}:
        raise ContextError("not canonical object bytes: wrong envelope keys")
    return make_object(
        region["schema"],
        region["payload"],
        source_node_id="",
        run_id="",
        created_at_us=0,
        version=region["schema_version"],
        partial=True,
    )


# ---------------------------------------------------------------------------
# objects and provenance


@dataclass(frozen=True)
class Provenance:
    """Where an object came from. content_hash is derived, never assigned."""

    source_node_id: str
    run_id: str
    created_at_us: int
    content_hash: str
    parent_hashes: tuple[str, ...] = ()


@dataclass(frozen=True)
class ContextObject:
    schema: str
    schema_version: str
    payload: dict
    provenance: Provenance

    @property
    def hash(self) -> str:
        return self.provenance.content_hash

    def to_wire(self) -> dict:
        """Full wire-format dict, provenance included."""
        return {
            "schema": self.schema,
            "schema_version": self.schema_version,
            "payload": copy.deepcopy(self.payload),
            "provenance": {
                "source_node_id": self.provenance.source_node_id,
                "run_id": self.provenance.run_id,
                "created_at_us": self.provenance.created_at_us,
                "content_hash": self.provenance.content_hash,
                "parent_hashes": list(self.provenance.parent_hashes),
            },
        }


def object_from_wire(doc: dict) -> ContextObject:
    prov = doc.get("provenance") or {}
    return make_object(
        doc["schema"],
        doc["payload"],
        source_node_id=prov.get("source_node_id", ""),
        run_id=prov.get("run_id", ""),
        created_at_us=int(prov.get("created_at_us", 0)),
        parents=tuple(prov.get("parent_hashes", ())),
        version=doc.get("schema_version", SCHEMA_VERSION),
        partial=True,
    )


def make_object(
    schema: str,
    payload: dict,
    *,
    source_node_id: str,
    run_id: str,
    created_at_us: int,
    parents: tuple[str, ...] | list[str] = (),
    version: str = SCHEMA_VERSION,
    partial: bool = False,
) -> ContextObject:
    """Validate, hash and freeze a payload into a ContextObject.

    Raises UnregisteredSchema or PayloadInvalid; lineage (parents actually
    existing) is the store's job at publish time, not construction's.
    """
    if version != SCHEMA_VERSION or schema not in SCHEMAS:
        raise UnregisteredSchema(schema, version)
    violations = validate_payload(schema, payload, version=version, partial=partial)
    if violations:
        raise PayloadInvalid(schema, violations)
    payload = copy.deepcopy(payload)
    region = {"payload": payload, "schema": schema, "schema_version": version}
    digest = compute_hash(canonical_json_bytes(region))
    prov = Provenance(
        source_node_id=source_node_id,
        run_id=run_id,
        created_at_us=created_at_us,
        content_hash=digest,
        parent_hashes=tuple(parents),
    )
    return ContextObject(schema=schema, schema_version=version, payload=payload, provenance=prov)


# ---------------------------------------------------------------------------
# field selectors and projection


@dataclass(frozen=True)
class FieldSelector:
    """Selects a subset of payload paths for downstream exposure.

    Paths are dot-separated against the schema's field tree; a path naming a
    list field applies to every element ("records.name" keeps each record's
    name and nothing else).
    """

    schema: str
    include_paths: tuple[str, ...]

    def __post_init__(self):
        if not self.include_paths:
            raise BadSelector("include_paths must not be empty")
        object.__setattr__(self, "include_paths", tuple(self.include_paths))


def _resolve_path(fields: dict[str, Field], segments: list[str], schema: str, path: str) -> None:
    head, rest = segments[0], segments[1:]
    f = fields.get(head)
    if f is None:
        raise UnresolvablePath(schema, path)
    if not rest:
        return
    if f.kind == "record" and f.children:
        _resolve_path(f.children, rest, schema, path)
    elif f.kind == "list" and f.item:
        _resolve_path(f.item, rest, schema, path)
    else:
        raise UnresolvablePath(schema, path)


def validate_selector(selector: FieldSelector) -> None:
    """Raise unless every include path resolves against the selector schema."""
    if selector.schema not in SCHEMAS:
        raise UnregisteredSchema(selector.schema, SCHEMA_VERSION)
    fields = SCHEMAS[selector.schema]
    for path in selector.include_paths:
        segments = [s for s in path.split(".") if s]
        if not segments:
            raise UnresolvablePath(selector.schema, path)
        _resolve_path(fields, segments, selector.schema, path)


def _build_trie(paths: tuple[str, ...]) -> dict:
    trie: dict = {}
    for path in paths:
        node = trie
        for seg in path.split("."):
            node = node.setdefault(seg, {})
    return trie


def _apply_trie(fields: dict[str, Field], payload: dict, trie: dict) -> dict:
    out = {}
    for key, sub in trie.items():
        if key not in payload:
            continue  # optional field absent: nothing to project
        value = payload[key]
        f = fields[key]
        if not sub:
            out[key] = copy.deepcopy(value)
        elif f.kind == "record" and f.children:
            out[key] = _apply_trie(f.children, value, sub)
        elif f.kind == "list" and f.item:
            out[key] = [_apply_trie(f.item, el, sub) for el in value]
    return out


def project(
    obj: ContextObject,
    selector: FieldSelector,
    *,
    source_node_id: str | None = None,
    run_id: str | None = None,
    created_at_us: int | None = None,
) -> ContextObject:
    """Reduce an object to the selected paths.

    The result is a new object whose parent is the original: projections show
    up in lineage rather than silently replacing their source.
    """
    if selector.schema != obj.schema:
        raise SchemaMismatch(selector.schema, obj.schema)
    validate_selector(selector)
    trie = _build_trie(selector.include_paths)
    projected = _apply_trie(SCHEMAS[obj.schema], obj.payload, trie)
    return make_object(
        obj.schema,
        projected,
        source_node_id=obj.provenance.source_node_id if source_node_id is None else source_node_id,
        run_id=obj.provenance.run_id if run_id is None else run_id,
        created_at_us=obj.provenance.created_at_us if created_at_us is None else created_at_us,
        parents=(obj.hash,),
        partial=True,
    )
