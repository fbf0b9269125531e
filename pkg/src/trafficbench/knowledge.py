"""Class-level knowledge base: file loading, validation and optional LLM authoring."""

from __future__ import annotations

import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass
from pathlib import Path

import yaml

ENV_URL = "TRAFFICBENCH_LLM_URL"
ENV_MODEL = "TRAFFICBENCH_LLM_MODEL"
ENV_KEY = "TRAFFICBENCH_LLM_API_KEY"

FIELDS = ("class_name", "protocol_hint", "behavioral_characteristics", "security_context")


class SchemaViolation(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class MissingClass(KeyError):
    pass


class LLMUnavailable(RuntimeError):
    pass


class TransportFailure(RuntimeError):
    pass


class MalformedResponse(ValueError):
    pass


@dataclass(frozen=True)
class KnowledgeEntry:
    class_name: str
    protocol_hint: str
    behavioral_characteristics: tuple[str, ...]
    security_context: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["behavioral_characteristics"] = list(self.behavioral_characteristics)
        return d


def validate_entry(raw, path: str = "entry") -> KnowledgeEntry:
    if not isinstance(raw, dict):
        raise SchemaViolation(path, "expected a mapping")
    for name in FIELDS:
        if name not in raw:
            raise SchemaViolation(f"{path}.{name}", "missing")
    unknown = set(raw) - set(FIELDS)
    if unknown:
        raise SchemaViolation(f"{path}.{sorted(unknown)[0]}", "unknown field")
    for name in ("class_name", "protocol_hint", "security_context"):
        if not isinstance(raw[name], str) or not raw[name].strip():
            raise SchemaViolation(f"{path}.{name}", "must be a non-empty string")
    chars = raw["behavioral_characteristics"]
    if not isinstance(chars, list):
        raise SchemaViolation(f"{path}.behavioral_characteristics", "must be a list")
    if not 3 <= len(chars) <= 5:
        raise SchemaViolation(f"{path}.behavioral_characteristics", f"needs 3 to 5 items, got {len(chars)}")
    for i, c in enumerate(chars):
        if not isinstance(c, str) or not c.strip():
            raise SchemaViolation(f"{path}.behavioral_characteristics[{i}]", "must be a non-empty string")
    return KnowledgeEntry(
        raw["class_name"].strip(),
        raw["protocol_hint"].strip(),
        tuple(c.strip() for c in chars),
        raw["security_context"].strip(),
    )


def parse_knowledge_base(data) -> dict[str, KnowledgeEntry]:
    """Validate a decoded KB document: ``{"classes": [...]}`` or a bare list."""
    if isinstance(data, dict) and "classes" in data:
        items, prefix = data["classes"], "classes"
    else:
        items, prefix = data, ""
    if not isinstance(items, list):
        raise SchemaViolation(prefix or "$", "expected a list of entries")
    kb: dict[str, KnowledgeEntry] = {}
    for i, raw in enumerate(items):
        entry = validate_entry(raw, f"{prefix}[{i}]")
        if entry.class_name in kb:
            raise SchemaViolation(f"{prefix}[{i}].class_name", f"duplicate class {entry.class_name!r}")
        kb[entry.class_name] = entry
    return kb


def load_knowledge_base(path: str | Path) -> dict[str, KnowledgeEntry]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return parse_knowledge_base(data)


def dump_knowledge_base(kb: dict[str, KnowledgeEntry], path: str | Path) -> None:
    doc = {"classes": [kb[k].to_dict() for k in sorted(kb)]}
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def lookup(kb: dict[str, KnowledgeEntry], class_name: str) -> KnowledgeEntry:
    try:
        return kb[class_name]
    except KeyError:
        raise MissingClass(class_name) from None


# --------------------------------------------------------------------------
# offline authoring


class LLMClient:
    """Tiny JSON-over-HTTP chat client.

    Posts ``{"model", "messages": [{"role": "user", "content": prompt}]}``
    and accepts OpenAI-style (``choices[0].message.content``),
    Anthropic-style (``content[0].text``) or ``{"text": ...}`` replies.
    """

    def __init__(self, url: str, model: str = "", api_key: str = "", timeout: float = 60.0):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    @classmethod
    def from_env(cls, env=None) -> "LLMClient":
        env = os.environ if env is None else env
        url = env.get(ENV_URL, "").strip()
        if not url:
            raise LLMUnavailable(f"{ENV_URL} is not set; use a file knowledge base")
        return cls(url, env.get(ENV_MODEL, ""), env.get(ENV_KEY, ""))

    def complete(self, prompt: str) -> str:
        body = json.dumps({"model": self.model, "messages": [{"role": "user", "content": prompt}]}).encode()
        req = urllib.request.Request(self.url, data=body, method="POST")
        req.add_header("Content-Type", "application/json")
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
            req.add_header("x-api-key", self.api_key)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise TransportFailure(str(exc)) from exc
        return _reply_text(payload)


def _reply_text(payload) -> str:
    try:
        if "choices" in payload:
            return payload["choices"][0]["message"]["content"]
        if "content" in payload and isinstance(payload["content"], list):
            return "".join(part.get("text", "") for part in payload["content"])
        if "text" in payload:
            return payload["text"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected reply shape: {exc}") from exc
    raise MalformedResponse("reply carries no text")


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def parse_entry_response(class_name: str, text: str) -> KnowledgeEntry:
    m = _FENCE.search(text)
    if m:
        text = m.group(1)
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise MalformedResponse("no JSON object in reply")
    try:
        raw = json.loads(text[start : end + 1])
    except json.JSONDecodeError as exc:
        raise MalformedResponse(f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedResponse("reply is not a JSON object")
    raw = {k: raw.get(k) for k in FIELDS[1:] if k in raw}
    raw["class_name"] = class_name
    try:
        return validate_entry(raw, class_name)
    except SchemaViolation as exc:
        raise MalformedResponse(str(exc)) from exc


def default_prompt_template() -> str:
    return (Path(__file__).parent / "data" / "kb_prompt.txt").read_text(encoding="utf-8")


def author_knowledge_entry(class_name: str, prompt_template: str | None = None, llm_client=None) -> KnowledgeEntry:
    """Ask an LLM for one class's entry. Raises on any failure; callers keep the file KB."""
    if llm_client is None:
        llm_client = LLMClient.from_env()
    template = prompt_template if prompt_template is not None else default_prompt_template()
    reply = llm_client.complete(template.replace("{class_name}", class_name))
    return parse_entry_response(class_name, reply)
