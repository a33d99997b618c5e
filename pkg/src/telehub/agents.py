"""Agent specs, prompt rendering, transport, and the deterministic mocks.

An agent is a named LLM configuration (system prompt, decoding settings,
endpoint binding). The transport speaks the common chat-completions wire
shape, so any compatible serving stack works unmodified. Specs whose
endpoint_ref is "mock" never touch the network: the mock implementations
below are pure functions of (spec, messages), which is what makes whole
runs replayable byte for byte.

Verdict replies are requested as strict JSON. parse_verdict tolerates
chatter around the object (models love to explain themselves) by falling
back to the first balanced JSON object embedded in the reply, but it never
invents or clamps values.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass

from .context import canonical_json_bytes
from .flows import FLOW_TABLE

logger = logging.getLogger(__name__)

# Markers the validation loop embeds in val prompts. The mock relies on
# them; live models get the same machine-readable sections.
EXPECTED_STEP_MARKER = "EXPECTED_STEP:"
WINDOW_MARKER = "WINDOW:"

VERDICT_INSTRUCTION = (
    'Respond with a single JSON object of the form {"status": "found" | "not_found", '
    '"explanation": string, "confidence": number between 0 and 1} and nothing else.'
)


class AgentError(Exception):
    pass


class UnknownEndpoint(AgentError):
    def __init__(self, ref: str):
        super().__init__(f"no endpoint configured for {ref!r}")
        self.ref = ref


class Timeout(AgentError):
    def __init__(self, ref: str, timeout_ms: int):
        super().__init__(f"endpoint {ref!r} timed out after {timeout_ms} ms")
        self.ref = ref


class EndpointError(AgentError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"endpoint returned status {status}")
        self.status = status
        self.body = body


class MalformedResponse(AgentError):
    pass


class UnboundPlaceholder(AgentError):
    def __init__(self, placeholder: str):
        super().__init__(f"prompt placeholder {{{{{placeholder}}}}} does not resolve")
        self.placeholder = placeholder


class UnknownTestId(AgentError):
    def __init__(self):
        super().__init__(f"no known test_id in prompt; known: {sorted(FLOW_TABLE)}")


class MissingContext(AgentError):
    pass


class VerdictParseError(AgentError):
    pass


class NoVerdictFound(VerdictParseError):
    pass


class BadStatusValue(VerdictParseError):
    def __init__(self, value):
        super().__init__(f"verdict status {value!r} is not found/not_found")
        self.value = value


class ConfidenceOutOfRange(VerdictParseError):
    def __init__(self, value):
        super().__init__(f"verdict confidence {value!r} is not a number in [0, 1]")
        self.value = value


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class AgentSpec:
    """An LLM agent: identity, decoding settings and transport binding.

    endpoint_ref "mock" selects the deterministic offline implementation;
    anything else must name a configured completion endpoint.
    """

    id: str
    role: str  # gen | val | debug | chat
    system_prompt: str = ""
    model_id: str = "mock-1"
    temperature: float = 0.0
    max_tokens: int = 1024
    top_p: float = 1.0
    stop: tuple[str, ...] = ()
    endpoint_ref: str = "mock"
    seed: int | None = None

    def to_doc(self) -> dict:
        doc = {
            "id": self.id,
            "role": self.role,
            "system_prompt": self.system_prompt,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "top_p": self.top_p,
            "stop": list(self.stop),
            "endpoint_ref": self.endpoint_ref,
        }
        if self.seed is not None:
            doc["seed"] = self.seed
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> AgentSpec:
        return cls(
            id=doc["id"],
            role=doc.get("role", "chat"),
            system_prompt=doc.get("system_prompt", ""),
            model_id=doc.get("model_id", "mock-1"),
            temperature=float(doc.get("temperature", 0.0)),
            max_tokens=int(doc.get("max_tokens", 1024)),
            top_p=float(doc.get("top_p", 1.0)),
            stop=tuple(doc.get("stop", ())),
            endpoint_ref=doc.get("endpoint_ref", "mock"),
            seed=doc.get("seed"),
        )


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def to_doc(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class AgentReply:
    content: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0


@dataclass(frozen=True)
class EndpointConfig:
    id: str
    base_url: str
    api_key: str | None = None
    timeout_ms: int = 30_000


@dataclass(frozen=True)
class ParsedVerdict:
    status: str
    explanation: str
    confidence: float


# ---------------------------------------------------------------------------
# prompt rendering


def _value_to_text(value) -> str:
    if isinstance(value, str):
        return value
    return canonical_json_bytes(value).decode("utf-8")


def _resolve_placeholder(name: str, context: dict) -> str:
    segments = name.split(".")
    head = segments[0]
    if head not in context:
        raise UnboundPlaceholder(name)
    value = context[head]
    # ContextObjects address into their payload; bare dicts and lists are
    # addressed directly, which is how the validation loop binds steps.
    if hasattr(value, "payload"):
        value = value.payload
    for seg in segments[1:]:
        if isinstance(value, dict) and seg in value:
            value = value[seg]
        elif isinstance(value, list):
            collected = []
            for el in value:
                el_payload = el.payload if hasattr(el, "payload") else el
                if not isinstance(el_payload, dict) or seg not in el_payload:
                    raise UnboundPlaceholder(name)
                collected.append(el_payload[seg])
            value = collected
        else:
            raise UnboundPlaceholder(name)
    if isinstance(value, list):
        value = [el.payload if hasattr(el, "payload") else el for el in value]
    return _value_to_text(value)


def render_prompt(template: str, context: dict) -> str:
    """Substitute {{name.path}} placeholders with canonical field text.

    Context keys are chosen by the caller (the engine uses upstream node
    ids). String fields substitute verbatim, everything else as canonical
    JSON. Unresolvable placeholders raise; silent empty substitutions would
    poison prompts in ways nobody can debug later.
    """
    out = []
    pos = 0
    while True:
        start = template.find("{{", pos)
        if start < 0:
            out.append(template[pos:])
            break
        end = template.find("}}", start + 2)
        if end < 0:
            out.append(template[pos:])
            break
        out.append(template[pos:start])
        name = template[start + 2 : end].strip()
        out.append(_resolve_placeholder(name, context))
        pos = end + 2
    return "".join(out)


# ---------------------------------------------------------------------------
# verdict parsing


def find_json_object(text: str, start: int = 0) -> dict | None:
    """First balanced {...} in text from `start` that parses as JSON."""
    pos = text.find("{", start)
    while pos >= 0:
        depth = 0
        in_string = False
        escaped = False
        for i in range(pos, len(text)):
            c = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
            elif c == '"':
                in_string = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    try:
                        doc = json.loads(text[pos : i + 1])
                        if isinstance(doc, dict):
                            return doc
                    except json.JSONDecodeError:
                        pass
                    break
        pos = text.find("{", pos + 1)
    return None


def parse_verdict(text: str) -> ParsedVerdict:
    """Extract a validation verdict from an agent reply.

    Strict parse first, then the first embedded balanced JSON object.
    Status is matched case-insensitively; confidence is never clamped.
    """
    doc = None
    try:
        loaded = json.loads(text.strip())
        if isinstance(loaded, dict):
            doc = loaded
    except json.JSONDecodeError:
        pass
    if doc is None:
        doc = find_json_object(text)
    if doc is None:
        raise NoVerdictFound(f"no JSON object in reply ({text[:80]!r})")

    raw_status = doc.get("status")
    if not isinstance(raw_status, str):
        raise BadStatusValue(raw_status)
    status = raw_status.strip().lower().replace("-", "_")
    if status not in ("found", "not_found"):
        raise BadStatusValue(raw_status)

    confidence = doc.get("confidence")
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise ConfidenceOutOfRange(confidence)
    if not (0 <= confidence <= 1):
        raise ConfidenceOutOfRange(confidence)

    explanation = doc.get("explanation", "")
    if not isinstance(explanation, str):
        explanation = _value_to_text(explanation)

    return ParsedVerdict(status=status, explanation=explanation, confidence=float(confidence))


# ---------------------------------------------------------------------------
# transport


def invoke_agent(
    spec: AgentSpec,
    messages: list[ChatMessage],
    *,
    endpoints: dict[str, EndpointConfig] | None = None,
    force_mock: bool = False,
) -> AgentReply:
    """Send a chat to the agent's endpoint, or to the mock implementation.

    No retries here: the engine records failures as events and decides what
    a failed window attempt means. Silent retry loops would skew attempt
    accounting.
    """
    if force_mock or spec.endpoint_ref == "mock":
        return mock_invoke(spec, messages)

    endpoint = (endpoints or {}).get(spec.endpoint_ref)
    if endpoint is None:
        raise UnknownEndpoint(spec.endpoint_ref)

    import httpx  # deferred so mock-only deployments never need it loaded

    body: dict = {
        "model": spec.model_id,
        "messages": [m.to_doc() for m in messages],
        "temperature": spec.temperature,
        "max_tokens": spec.max_tokens,
        "top_p": spec.top_p,
    }
    if spec.stop:
        body["stop"] = list(spec.stop)
    if spec.seed is not None:
        body["seed"] = spec.seed

    headers = {"Content-Type": "application/json"}
    if endpoint.api_key:
        headers["Authorization"] = f"Bearer {endpoint.api_key}"

    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    started = time.monotonic()
    try:
        response = httpx.post(url, json=body, headers=headers, timeout=endpoint.timeout_ms / 1000)
    except httpx.TimeoutException as exc:
        raise Timeout(spec.endpoint_ref, endpoint.timeout_ms) from exc
    except httpx.HTTPError as exc:
        raise EndpointError(0, str(exc)) from exc
    latency_ms = int((time.monotonic() - started) * 1000)

    if response.status_code < 200 or response.status_code >= 300:
        raise EndpointError(response.status_code, response.text[:500])
    try:
        payload = response.json()
        content = payload["choices"][0]["message"]["content"]
    except (ValueError, LookupError, TypeError) as exc:
        raise MalformedResponse(f"no choices[0].message.content in reply: {exc}") from exc
    if not isinstance(content, str):
        raise MalformedResponse("content is not a string")

    usage = payload.get("usage") or {}
    return AgentReply(
        content=content,
        prompt_tokens=int(usage.get("prompt_tokens", 0)),
        completion_tokens=int(usage.get("completion_tokens", 0)),
        latency_ms=latency_ms,
    )


# ---------------------------------------------------------------------------
# mocks


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance; small inputs only, no need for bands."""
    if a == b:
        return 0
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _last_user_content(messages: list[ChatMessage]) -> str:
    for m in reversed(messages):
        if m.role == "user":
            return m.content
    return messages[-1].content if messages else ""


def _json_after_marker(text: str, marker: str) -> dict | None:
    pos = text.find(marker)
    if pos < 0:
        return None
    return find_json_object(text, pos + len(marker))


def _mock_gen(messages: list[ChatMessage]) -> str:
    prompt = "\n".join(m.content for m in messages)
    for test_id in sorted(FLOW_TABLE):
        if test_id in prompt:
            return canonical_json_bytes(FLOW_TABLE[test_id]).decode("utf-8")
    raise UnknownTestId()


def _mock_val(messages: list[ChatMessage]) -> str:
    content = _last_user_content(messages)
    step = _json_after_marker(content, EXPECTED_STEP_MARKER)
    window = _json_after_marker(content, WINDOW_MARKER)
    if step is None or window is None:
        raise MissingContext("val mock needs EXPECTED_STEP and WINDOW sections in the prompt")
    records = window.get("records", [])
    want_direction = step.get("direction")
    match = None
    for record in records:
        if record.get("protocol") != step.get("protocol"):
            continue
        if record.get("name") != step.get("name"):
            continue
        if want_direction and record.get("direction") != want_direction:
            continue
        match = record
        break
    if match is not None:
        verdict = {
            "status": "found",
            "explanation": f"matched at index {match.get('index')}",
            "confidence": 1.0,
        }
    else:
        start = window.get("start_index")
        end = window.get("end_index")
        verdict = {
            "status": "not_found",
            "explanation": f"no match in window [{start},{end})",
            "confidence": 0.0,
        }
    return canonical_json_bytes(verdict).decode("utf-8")


def _mock_debug(messages: list[ChatMessage]) -> str:
    content = _last_user_content(messages)
    summary = find_json_object(content)
    if summary is None:
        raise MissingContext("debug mock needs the validation summary JSON in the prompt")
    steps = {s.get("step_no"): s for s in summary.get("steps", [])}
    names = list(dict.fromkeys(summary.get("record_names", [])))  # dedupe, keep order
    lines = []
    for verdict in summary.get("per_step", []):
        if verdict.get("status") != "not_found":
            continue
        step = steps.get(verdict.get("step_no"), {})
        expected = step.get("name", "?")
        if names:
            best = min(names, key=lambda n: (levenshtein(expected, n), names.index(n)))
            distance = levenshtein(expected, best)
            lines.append(
                f"step {verdict.get('step_no')} ({step.get('protocol', '?')} {expected}) was not "
                f"observed; nearest message in the trace by edit distance is "
                f"{best} ({distance} edits)"
            )
        else:
            lines.append(
                f"step {verdict.get('step_no')} ({expected}) was not observed; trace is empty"
            )
    if not lines:
        return "all steps were found; nothing to diagnose"
    return "\n".join(lines)


def mock_invoke(spec: AgentSpec, messages: list[ChatMessage]) -> AgentReply:
    """Deterministic offline agent. Identical input, identical reply bytes."""
    if spec.role == "gen":
        content = _mock_gen(messages)
    elif spec.role == "val":
        content = _mock_val(messages)
    elif spec.role == "debug":
        content = _mock_debug(messages)
    else:
        content = f"[{spec.model_id}] acknowledged: {_last_user_content(messages)[:200]}"
    return AgentReply(content=content, latency_ms=0)
