import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
import yaml

from trafficbench.knowledge import (
    LLMClient,
    LLMUnavailable,
    MalformedResponse,
    MissingClass,
    SchemaViolation,
    TransportFailure,
    author_knowledge_entry,
    default_prompt_template,
    dump_knowledge_base,
    load_knowledge_base,
    lookup,
    parse_entry_response,
    parse_knowledge_base,
)
from trafficbench.synth import MINICORPUS_KB


def entry(name="CHAT", n_chars=3, **over):
    d = {
        "class_name": name,
        "protocol_hint": "Instant messaging over TLS",
        "behavioral_characteristics": [f"trait {i}" for i in range(n_chars)],
        "security_context": "Watch for data exfiltration. Second sentence.",
    }
    d.update(over)
    return d


def test_valid_entry_accepted():
    kb = parse_knowledge_base({"classes": [entry()]})
    assert kb["CHAT"].behavioral_characteristics == ("trait 0", "trait 1", "trait 2")


@pytest.mark.parametrize("n", [2, 6, 0])
def test_characteristic_cardinality(n):
    with pytest.raises(SchemaViolation, match="behavioral_characteristics"):
        parse_knowledge_base([entry(n_chars=n)])


def test_duplicate_class_named():
    with pytest.raises(SchemaViolation, match="CHAT"):
        parse_knowledge_base([entry(), entry()])


@pytest.mark.parametrize(
    "bad",
    [
        {"protocol_hint": ""},
        {"security_context": None},
        {"behavioral_characteristics": "a, b, c"},
        {"behavioral_characteristics": ["a", "", "c"]},
        {"extra": 1},
    ],
)
def test_schema_violations(bad):
    with pytest.raises(SchemaViolation):
        parse_knowledge_base([entry(**bad)])


def test_missing_field_path():
    raw = entry()
    del raw["security_context"]
    with pytest.raises(SchemaViolation) as exc:
        parse_knowledge_base({"classes": [raw]})
    assert exc.value.path == "classes[0].security_context"


def test_json_and_yaml_files(tmp_path):
    (tmp_path / "kb.json").write_text(json.dumps(MINICORPUS_KB))
    (tmp_path / "kb.yaml").write_text(yaml.safe_dump(MINICORPUS_KB))
    a = load_knowledge_base(tmp_path / "kb.json")
    b = load_knowledge_base(tmp_path / "kb.yaml")
    assert a == b and set(a) == {"TLS_WEB", "HTTP_PLAIN", "DNS_LOOKUP"}
    dump_knowledge_base(a, tmp_path / "out.json")
    assert load_knowledge_base(tmp_path / "out.json") == a


def test_lookup_missing():
    with pytest.raises(MissingClass):
        lookup({}, "NOPE")


# ---- authoring path


class FakeClient:
    def __init__(self, reply):
        self.reply = reply
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return self.reply


def test_client_disabled_without_env(monkeypatch):
    monkeypatch.delenv("TRAFFICBENCH_LLM_URL", raising=False)
    with pytest.raises(LLMUnavailable):
        LLMClient.from_env()
    with pytest.raises(LLMUnavailable):
        author_knowledge_entry("CHAT")


def test_client_from_env():
    c = LLMClient.from_env({"TRAFFICBENCH_LLM_URL": "http://h/x", "TRAFFICBENCH_LLM_MODEL": "m"})
    assert (c.url, c.model, c.api_key) == ("http://h/x", "m", "")


def test_missing_security_context_is_malformed():
    body = {k: v for k, v in entry().items() if k not in ("class_name", "security_context")}
    with pytest.raises(MalformedResponse):
        author_knowledge_entry("CHAT", llm_client=FakeClient(json.dumps(body)))


def test_valid_reply_in_fence():
    body = {k: v for k, v in entry(n_chars=4).items() if k != "class_name"}
    client = FakeClient("Sure:\n```json\n" + json.dumps(body) + "\n```")
    e = author_knowledge_entry("CHAT", "Describe {class_name}.", client)
    assert e.class_name == "CHAT" and 3 <= len(e.behavioral_characteristics) <= 5
    assert client.prompts == ["Describe CHAT."]


@pytest.mark.parametrize("reply", ["no json here", "{not json}", "[1, 2]"])
def test_unparseable_replies(reply):
    with pytest.raises(MalformedResponse):
        parse_entry_response("X", reply)


def test_default_prompt_has_slot():
    assert "{class_name}" in default_prompt_template()


@pytest.fixture
def llm_server():
    replies = []
    seen = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            seen.append(json.loads(self.rfile.read(int(self.headers["Content-Length"]))))
            seen[-1]["auth"] = self.headers.get("Authorization")
            data = json.dumps(replies.pop(0)).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat", replies, seen
    server.shutdown()


def test_http_client_reply_shapes(llm_server):
    url, replies, seen = llm_server
    body = json.dumps({k: v for k, v in entry().items() if k != "class_name"})
    replies.extend([
        {"choices": [{"message": {"content": body}}]},
        {"content": [{"type": "text", "text": body}]},
        {"text": body},
        {"unexpected": True},
    ])
    client = LLMClient(url, model="m", api_key="k")
    for _ in range(3):
        assert author_knowledge_entry("CHAT", llm_client=client).protocol_hint == "Instant messaging over TLS"
    with pytest.raises(MalformedResponse):
        client.complete("x")
    assert seen[0]["model"] == "m" and seen[0]["auth"] == "Bearer k"
    assert seen[0]["messages"][0]["role"] == "user"


def test_transport_failure():
    with pytest.raises(TransportFailure):
        LLMClient("http://127.0.0.1:9/none", timeout=2).complete("x")
