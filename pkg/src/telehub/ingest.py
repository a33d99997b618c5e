"""Raw capture and log ingestion.

Three source formats feed the engine:

* classic libpcap captures (both byte orders, microsecond 0xa1b2c3d4 and
  nanosecond 0xa1b23c4d magics),
* decoded traces, one JSON message per line,
* gNB text logs in the common srsRAN shape
  `<ISO-8601 timestamp> [<LAYER>] [<LEVEL>] <message>`.

Everything normalizes to MessageRecord, which is also the message-record
context-object payload. Directions follow the gNB perspective: a line the
gNB transmits ("Tx ...") is DL, a received one ("Rx ...") is UL; captures
taken on the UE side can flip this with invert_direction.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from datetime import datetime, timezone

from .context import DIRECTIONS

# libpcap framing: 24-byte global header, 16-byte record headers.
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D

LOG_LAYERS = ("PHY", "MAC", "RLC", "PDCP", "RRC", "NAS", "NGAP", "GTPU")
LOG_LEVELS = ("D", "I", "W", "E")


class IngestError(Exception):
    pass


class BadMagic(IngestError):
    def __init__(self, magic: int):
        super().__init__(f"not a pcap file: magic 0x{magic:08x}")
        self.magic = magic


class TruncatedHeader(IngestError):
    def __init__(self, have: int):
        super().__init__(f"truncated global header: {have} of {GLOBAL_HEADER_LEN} bytes")
        self.have = have


class TruncatedRecord(IngestError):
    def __init__(self, index: int):
        super().__init__(f"truncated record header at packet {index}")
        self.index = index


class InclLenExceedsRemaining(IngestError):
    def __init__(self, index: int, incl_len: int, remaining: int):
        super().__init__(
            f"packet {index} claims {incl_len} bytes, only {remaining} remain in file"
        )
        self.index = index


class InclLenExceedsOrigLen(IngestError):
    # incl_len > orig_len can never be produced by a correct capturer.
    def __init__(self, index: int, incl_len: int, orig_len: int):
        super().__init__(f"packet {index}: incl_len {incl_len} > orig_len {orig_len}")
        self.index = index


class MalformedLine(IngestError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateIndex(IngestError):
    def __init__(self, line_no: int, index: int):
        super().__init__(f"line {line_no}: duplicate record index {index}")
        self.line_no = line_no
        self.index = index


class StartOutOfRange(IngestError):
    def __init__(self, start: int, count: int):
        super().__init__(f"window start {start} outside [0, {count}]")
        self.start = start


# ---------------------------------------------------------------------------
# pcap


@dataclass(frozen=True)
class PcapPacket:
    ts_sec: int
    ts_subsec: int  # microseconds or nanoseconds, per capture magic
    incl_len: int
    orig_len: int
    data: bytes
    offset: int  # byte offset of the record header in the file

    def timestamp_ns(self, magic_kind: str) -> int:
        scale = 1 if magic_kind == "nsec" else 1000
        return self.ts_sec * 1_000_000_000 + self.ts_subsec * scale


@dataclass(frozen=True)
class PcapCapture:
    magic_kind: str  # "usec" | "nsec"
    byte_order: str  # "little" | "big"
    version: tuple[int, int]
    snaplen: int
    linktype: int
    packets: tuple[PcapPacket, ...]

    def logical_packets(self) -> list[tuple[int, int, int, bytes]]:
        """(timestamp_ns, incl_len, orig_len, data) per packet; this is the
        representation under which the four header variants compare equal."""
        return [
            (p.timestamp_ns(self.magic_kind), p.incl_len, p.orig_len, p.data)
            for p in self.packets
        ]


def parse_pcap(data: bytes) -> PcapCapture:
    """Parse a classic libpcap byte string.

    Rejects bad magics, truncated headers and records, and packets whose
    captured length exceeds either the file remainder or the original length.
    """
    if len(data) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(len(data))
    (magic,) = struct.unpack("<I", data[:4])
    if magic in (MAGIC_USEC, MAGIC_NSEC):
        order = "<"
        byte_order = "little"
    else:
        (magic,) = struct.unpack(">I", data[:4])
        if magic in (MAGIC_USEC, MAGIC_NSEC):
            order = ">"
            byte_order = "big"
        else:
            raise BadMagic(magic)
    magic_kind = "usec" if magic == MAGIC_USEC else "nsec"

    v_major, v_minor, _thiszone, _sigfigs, snaplen, linktype = struct.unpack(
        order + "HHiIII", data[4:GLOBAL_HEADER_LEN]
    )

    packets: list[PcapPacket] = []
    pos = GLOBAL_HEADER_LEN
    index = 0
    while pos < len(data):
        if len(data) - pos < RECORD_HEADER_LEN:
            raise TruncatedRecord(index)
        ts_sec, ts_subsec, incl_len, orig_len = struct.unpack(
            order + "IIII", data[pos : pos + RECORD_HEADER_LEN]
        )
        if incl_len > orig_len:
            raise InclLenExceedsOrigLen(index, incl_len, orig_len)
        body_start = pos + RECORD_HEADER_LEN
        if incl_len > len(data) - body_start:
            raise InclLenExceedsRemaining(index, incl_len, len(data) - body_start)
        packets.append(
            PcapPacket(
                ts_sec=ts_sec,
                ts_subsec=ts_subsec,
                incl_len=incl_len,
                orig_len=orig_len,
                data=data[body_start : body_start + incl_len],
                offset=pos,
            )
        )
        pos = body_start + incl_len
        index += 1

    return PcapCapture(
        magic_kind=magic_kind,
        byte_order=byte_order,
        version=(v_major, v_minor),
        snaplen=snaplen,
        linktype=linktype,
        packets=tuple(packets),
    )


def write_pcap(capture: PcapCapture) -> bytes:
    """Serialize a capture back to bytes in its own magic and byte order."""
    order = "<" if capture.byte_order == "little" else ">"
    magic = MAGIC_USEC if capture.magic_kind == "usec" else MAGIC_NSEC
    out = bytearray()
    out += struct.pack(
        order + "IHHiIII",
        magic,
        capture.version[0],
        capture.version[1],
        0,  # thiszone, always written as 0
        0,  # sigfigs, always written as 0
        capture.snaplen,
        capture.linktype,
    )
    for p in capture.packets:
        out += struct.pack(order + "IIII", p.ts_sec, p.ts_subsec, p.incl_len, p.orig_len)
        out += p.data
    return bytes(out)


# ---------------------------------------------------------------------------
# message records


@dataclass(frozen=True)
class MessageRecord:
    protocol: str
    name: str
    timestamp_us: int
    direction: str
    index: int
    raw_ref: tuple[int, int] | None = None  # (offset, length) into the source

    def to_payload(self) -> dict:
        payload: dict = {
            "protocol": self.protocol,
            "name": self.name,
            "timestamp_us": self.timestamp_us,
            "direction": self.direction,
            "index": self.index,
        }
        if self.raw_ref is not None:
            payload["raw_ref"] = {"offset": self.raw_ref[0], "length": self.raw_ref[1]}
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> MessageRecord:
        raw_ref = payload.get("raw_ref")
        return cls(
            protocol=payload["protocol"],
            name=payload["name"],
            timestamp_us=payload["timestamp_us"],
            direction=payload["direction"],
            index=payload["index"],
            raw_ref=(raw_ref["offset"], raw_ref["length"]) if raw_ref else None,
        )

    def to_trace_line(self) -> str:
        doc = {
            "protocol": self.protocol,
            "name": self.name,
            "timestamp_us": self.timestamp_us,
            "direction": self.direction,
            "index": self.index,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _is_token(value) -> bool:
    return isinstance(value, str) and value != "" and not any(c.isspace() for c in value)


def parse_decoded_trace(text: str) -> list[MessageRecord]:
    """Parse a line-delimited JSON trace into records sorted by index.

    Lines without an explicit index take their 0-based position in the file;
    any collision between explicit and implicit indices is an error, not a
    silent reorder. Blank lines are permitted and skipped.
    """
    records: list[MessageRecord] = []
    seen: set[int] = set()
    position = 0
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise MalformedLine(line_no, "line must be a JSON object")
        for key in ("protocol", "name"):
            if not _is_token(doc.get(key)):
                raise MalformedLine(line_no, f"{key} must be a non-empty token")
        ts = doc.get("timestamp_us")
        if not isinstance(ts, int) or isinstance(ts, bool):
            raise MalformedLine(line_no, "timestamp_us must be an integer")
        direction = doc.get("direction")
        if direction not in DIRECTIONS:
            raise MalformedLine(line_no, f"direction must be one of {list(DIRECTIONS)}")
        index = doc.get("index", position)
        if not isinstance(index, int) or isinstance(index, bool) or index < 0:
            raise MalformedLine(line_no, "index must be a non-negative integer")
        if index in seen:
            raise DuplicateIndex(line_no, index)
        seen.add(index)
        records.append(
            MessageRecord(
                protocol=doc["protocol"],
                name=doc["name"],
                timestamp_us=ts,
                direction=direction,
                index=index,
            )
        )
        position += 1
    records.sort(key=lambda r: r.index)
    return records


# ---------------------------------------------------------------------------
# srsRAN-style text logs


@dataclass(frozen=True)
class LogLine:
    timestamp_us: int
    layer: str
    level: str
    message: str
    line_no: int


@dataclass(frozen=True)
class ParsedLog:
    lines: tuple[LogLine, ...]
    skipped: int  # lines that did not match the grammar


def _parse_log_timestamp(token: str) -> int | None:
    # ISO-8601 with fractional seconds; naive timestamps are taken as UTC.
    try:
        dt = datetime.fromisoformat(token)
    except ValueError:
        return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    # Integer arithmetic; float seconds would wobble in the last digit.
    whole = int(dt.replace(microsecond=0).timestamp())
    return whole * 1_000_000 + dt.microsecond


def parse_srsran_log(text: str) -> ParsedLog:
    """Parse `<timestamp> [<LAYER>] [<LEVEL>] <message>` lines.

    Anything that does not match the grammar (startup banners, continuation
    dumps) is skipped and counted rather than failing the whole file.
    """
    lines: list[LogLine] = []
    skipped = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            skipped += 1
            continue
        ts = _parse_log_timestamp(parts[0])
        rest = parts[1]
        if ts is None or not rest.startswith("["):
            skipped += 1
            continue
        try:
            layer_end = rest.index("]")
            layer = rest[1:layer_end]
            rest2 = rest[layer_end + 1 :].lstrip()
            if not rest2.startswith("["):
                skipped += 1
                continue
            level_end = rest2.index("]")
            level = rest2[1:level_end]
            message = rest2[level_end + 1 :].strip()
        except ValueError:
            skipped += 1
            continue
        if layer not in LOG_LAYERS or level not in LOG_LEVELS or not message:
            skipped += 1
            continue
        lines.append(
            LogLine(timestamp_us=ts, layer=layer, level=level, message=message, line_no=line_no)
        )
    return ParsedLog(lines=tuple(lines), skipped=skipped)


def extract_message_records(
    log: ParsedLog, *, invert_direction: bool = False
) -> list[MessageRecord]:
    """Lift protocol messages out of parsed log lines.

    Only lines whose message starts with "Tx " or "Rx " carry a message
    event. gNB perspective: Tx is DL and Rx is UL, unless inverted.
    """
    records: list[MessageRecord] = []
    for line in log.lines:
        if line.message.startswith("Tx "):
            direction = "DL"
        elif line.message.startswith("Rx "):
            direction = "UL"
        else:
            continue
        name = line.message[3:].split()[0] if line.message[3:].strip() else ""
        if not name:
            continue
        if invert_direction:
            direction = "UL" if direction == "DL" else "DL"
        records.append(
            MessageRecord(
                protocol=line.layer,
                name=name,
                timestamp_us=line.timestamp_us,
                direction=direction,
                index=len(records),
            )
        )
    return records


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class LogWindow:
    source_id: str
    start_index: int
    end_index: int
    records: tuple[MessageRecord, ...]

    def to_payload(self) -> dict:
        return {
            "source_id": self.source_id,
            "start_index": self.start_index,
            "end_index": self.end_index,
            "records": [r.to_payload() for r in self.records],
        }


def make_window(
    records: list[MessageRecord] | tuple[MessageRecord, ...],
    window_size: int,
    start_index: int,
    *,
    source_id: str = "trace",
) -> LogWindow:
    """Slice [start, start + window_size) out of a record list.

    The records are expected to be positionally indexed (record i has
    index i), which is what the trace mappers produce after a merge.
    """
    if window_size < 1:
        raise IngestError(f"window_size must be >= 1, got {window_size}")
    if not (0 <= start_index <= len(records)):
        raise StartOutOfRange(start_index, len(records))
    end = min(start_index + window_size, len(records))
    return LogWindow(
        source_id=source_id,
        start_index=start_index,
        end_index=end,
        records=tuple(records[start_index:end]),
    )
