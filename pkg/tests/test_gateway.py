import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from claimlens.errors import AuthError, EmptySplit, RateLimited, ReplayMiss, TransportError
from claimlens.gateway import (
    ChatRequest,
    ChatResponse,
    HttpBackend,
    LlmGateway,
    ReplayBackend,
    RetryPolicy,
    ScriptedBackend,
    export_finetune_file,
    finetune_record,
    request_digest,
)


def _request(content="hello", temperature=0.0, max_tokens=64):
    return ChatRequest(
        model_id="test-model",
        messages=(("user", content),),
        temperature=temperature,
        max_output_tokens=max_tokens,
    )


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(model_id="m", messages=(("system", "x"),))
    with pytest.raises(ValueError):
        ChatRequest(model_id="m", messages=(("user", "x"),), temperature=-0.1)


def test_digest_ignores_non_semantic_fields():
    a = _request(max_tokens=64)
    b = _request(max_tokens=2048)
    assert request_digest(a) == request_digest(b)
    assert request_digest(_request("hello")) != request_digest(_request("other"))
    assert request_digest(_request(temperature=0.0)) != request_digest(
        _request(temperature=0.5)
    )


def test_record_then_replay_round_trip(tmp_path):
    transcript = tmp_path / "transcript.jsonl"
    gateway = LlmGateway(
        ScriptedBackend(lambda req: f"echo:{req.messages[-1][1]}"),
        record_path=transcript,
    )
    first = gateway.complete(_request("one"))
    second = gateway.complete(_request("two"))
    assert transcript.read_text().count("\n") == 2

    replay = LlmGateway(ReplayBackend(transcript))
    assert replay.complete(_request("one")) == first
    assert replay.complete(_request("two")) == second
    with pytest.raises(ReplayMiss):
        replay.complete(_request("never seen"))


def test_replay_duplicate_digest_last_write_wins(tmp_path, caplog):
    transcript = tmp_path / "transcript.jsonl"
    request = _request("same")
    entries = [
        {"digest": request_digest(request), "request": request.to_json_dict(),
         "response": ChatResponse(content=c).to_json_dict()}
        for c in ("first", "second")
    ]
    transcript.write_text(
        "".join(json.dumps(e) + "\n" for e in entries), encoding="utf-8"
    )
    with caplog.at_level("WARNING"):
        backend = ReplayBackend(transcript)
    assert backend.complete(request).content == "second"
    assert any("duplicate digest" in r.message for r in caplog.records)


def test_gateway_bounds_concurrency():
    in_flight = 0
    peak = 0
    lock = threading.Lock()
    release = threading.Event()

    def script(request):
        nonlocal in_flight, peak
        with lock:
            in_flight += 1
            peak = max(peak, in_flight)
        release.wait(timeout=1.0)
        with lock:
            in_flight -= 1
        return "ok"

    gateway = LlmGateway(ScriptedBackend(script), max_concurrency=2)
    threads = [
        threading.Thread(target=gateway.complete, args=(_request(f"r{i}"),))
        for i in range(6)
    ]
    for t in threads:
        t.start()
    release.set()
    for t in threads:
        t.join()
    assert peak <= 2


class _StubHandler(BaseHTTPRequestHandler):
    statuses: list[int] = []
    calls: int = 0
    auth_headers: list[str] = []

    def do_POST(self):
        cls = type(self)
        cls.auth_headers.append(self.headers.get("Authorization", ""))
        status = cls.statuses[min(cls.calls, len(cls.statuses) - 1)]
        cls.calls += 1
        length = int(self.headers.get("Content-Length", 0))
        self.rfile.read(length)
        if status != 200:
            self.send_response(status)
            self.end_headers()
            return
        body = json.dumps(
            {
                "choices": [{"message": {"content": "1"}, "finish_reason": "stop"}],
                "usage": {"prompt_tokens": 7, "completion_tokens": 1},
            }
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.calls = 0
    _StubHandler.auth_headers = []
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    server.shutdown()


def _backend(endpoint, max_attempts=5):
    return HttpBackend(
        endpoint,
        retry=RetryPolicy(max_attempts=max_attempts, backoff_base_s=0.001, backoff_cap_s=0.01),
        sleep=lambda s: None,
    )


def test_live_backend_retries_429_then_succeeds(stub_server, monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "test-key")
    _StubHandler.statuses = [429, 429, 429, 200]
    response = _backend(stub_server).complete(_request())
    assert response.content == "1"
    assert response.attempts == 4
    assert _StubHandler.auth_headers[0] == "Bearer test-key"


def test_live_backend_rate_limited_after_exhaustion(stub_server, monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "test-key")
    _StubHandler.statuses = [429]
    with pytest.raises(RateLimited):
        _backend(stub_server, max_attempts=3).complete(_request())
    assert _StubHandler.calls == 3


def test_live_backend_transport_error_on_5xx(stub_server, monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "test-key")
    _StubHandler.statuses = [500]
    with pytest.raises(TransportError):
        _backend(stub_server, max_attempts=2).complete(_request())


def test_live_backend_auth_errors(stub_server, monkeypatch):
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    with pytest.raises(AuthError):
        _backend(stub_server).complete(_request())
    monkeypatch.setenv("LLM_API_KEY", "bad-key")
    _StubHandler.statuses = [401]
    with pytest.raises(AuthError):
        _backend(stub_server).complete(_request())
    assert _StubHandler.calls == 1  # no retry on auth failures


def test_live_backend_respects_wallclock_budget(stub_server, monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "test-key")
    _StubHandler.statuses = [429]
    backend = HttpBackend(
        stub_server,
        retry=RetryPolicy(max_attempts=50, backoff_base_s=10.0, wallclock_budget_s=0.5),
        sleep=lambda s: None,
    )
    with pytest.raises(RateLimited):
        backend.complete(_request())
    assert _StubHandler.calls == 1  # first backoff would blow the budget


class _Instance:
    def __init__(self, n, label):
        self.n = n
        self.label = label


def _builder(instance):
    return ChatRequest(
        model_id="m",
        messages=(("system", "task"), ("user", f"classify {instance.n}")),
    )


def test_finetune_record_shape():
    record = finetune_record(_builder(_Instance(1, True)), True)
    assert record["messages"][-1] == {"role": "assistant", "content": "1"}
    assert finetune_record(_builder(_Instance(1, False)), False)["messages"][-1][
        "content"
    ] == "0"


def test_export_finetune_file_counts_and_contents(tmp_path):
    instances = [_Instance(i, i % 3 == 0) for i in range(10)]
    out = tmp_path / "train.jsonl"
    count = export_finetune_file(instances, _builder, out)
    assert count == 10
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 10
    for i, line in enumerate(lines):
        record = json.loads(line)
        assert record["messages"][-1]["role"] == "assistant"
        assert record["messages"][-1]["content"] == ("1" if i % 3 == 0 else "0")
        # the serialized prompt is exactly the inference prompt
        assert record["messages"][:-1] == [
            {"role": "system", "content": "task"},
            {"role": "user", "content": f"classify {i}"},
        ]


def test_export_finetune_empty_split(tmp_path):
    with pytest.raises(EmptySplit):
        export_finetune_file([], _builder, tmp_path / "x.jsonl")
