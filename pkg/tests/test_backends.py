import httpx
import orjson
import pytest

from opinionbench.backends import (
    HttpChatBackend,
    RecordingBackend,
    ScriptedBackend,
    build_payload,
    complete,
    digest_messages,
    fixture_from_responses,
    load_fixture,
    scripted_complete,
)
from opinionbench.errors import (
    AuthMissing,
    BackendTimeout,
    EmptyCompletion,
    FixtureExhausted,
    HttpStatusError,
    NoMatch,
)
from opinionbench.models import BackendConfig, ChatMessage, Fixture, FixtureEntry

MESSAGES = [
    ChatMessage(role="system", content="You are Shopper-GPT."),
    ChatMessage(role="human", content="Determine which next command to use"),
]


def ok_body(content="ok"):
    return {"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}


@pytest.fixture
def cfg(monkeypatch) -> BackendConfig:
    monkeypatch.setenv("TEST_LLM_KEY", "sk-test")
    return BackendConfig(endpoint="http://llm.test/v1/chat/completions", api_key_env="TEST_LLM_KEY", max_retries=3)


class SleepRecorder:
    def __init__(self):
        self.delays = []

    async def __call__(self, delay: float) -> None:
        self.delays.append(delay)


@pytest.mark.asyncio
async def test_echo_and_payload_shape(cfg):
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["body"] = orjson.loads(request.content)
        seen["auth"] = request.headers["Authorization"]
        return httpx.Response(200, json=ok_body())

    async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
        assert await complete(MESSAGES, cfg, client=client) == "ok"

    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"] == {
        "model": "gpt-4",
        "messages": [
            {"role": "system", "content": "You are Shopper-GPT."},
            {"role": "user", "content": "Determine which next command to use"},
        ],
        "temperature": 0.01,
    }


@pytest.mark.asyncio
async def test_retries_429_with_backoff(cfg):
    calls = 0

    def handler(request: httpx.Request) -> httpx.Response:
        nonlocal calls
        calls += 1
        if calls <= 2:
            return httpx.Response(429, json={"error": {"message": "rate limited"}})
        return httpx.Response(200, json=ok_body())

    sleep = SleepRecorder()
    async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
        assert await complete(MESSAGES, cfg, client=client, sleep=sleep) == "ok"
    assert calls == 3
    assert len(sleep.delays) == 2
    assert 1.0 <= sleep.delays[0] <= 1.25
    assert 2.0 <= sleep.delays[1] <= 2.25
    assert sum(sleep.delays) >= 3.0


@pytest.mark.asyncio
async def test_attempts_are_retries_plus_one(cfg):
    calls = 0

    def handler(request: httpx.Request) -> httpx.Response:
        nonlocal calls
        calls += 1
        return httpx.Response(503)

    async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
        with pytest.raises(HttpStatusError) as exc:
            await complete(MESSAGES, cfg, client=client, sleep=SleepRecorder())
    assert exc.value.code == 503
    assert calls == cfg.max_retries + 1


@pytest.mark.asyncio
async def test_client_error_is_not_retried(cfg):
    calls = 0

    def handler(request: httpx.Request) -> httpx.Response:
        nonlocal calls
        calls += 1
        return httpx.Response(400)

    async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
        with pytest.raises(HttpStatusError):
            await complete(MESSAGES, cfg, client=client, sleep=SleepRecorder())
    assert calls == 1


@pytest.mark.asyncio
async def test_timeouts_exhaust_to_backend_timeout(cfg):
    def handler(request: httpx.Request) -> httpx.Response:
        raise httpx.ReadTimeout("slow", request=request)

    sleep = SleepRecorder()
    async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
        with pytest.raises(BackendTimeout):
            await complete(MESSAGES, cfg, client=client, sleep=sleep)
    assert len(sleep.delays) == cfg.max_retries


@pytest.mark.asyncio
async def test_empty_choices(cfg):
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json={"choices": []})

    async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
        with pytest.raises(EmptyCompletion):
            await complete(MESSAGES, cfg, client=client)


@pytest.mark.asyncio
async def test_missing_key(monkeypatch):
    monkeypatch.delenv("NOT_SET_ANYWHERE", raising=False)
    cfg = BackendConfig(api_key_env="NOT_SET_ANYWHERE")
    with pytest.raises(AuthMissing):
        await complete(MESSAGES, cfg)


def test_payload_role_map():
    cfg = BackendConfig(role_map={"system": "system", "human": "user", "assistant": "model"})
    payload = build_payload([ChatMessage(role="assistant", content="x")], cfg)
    assert payload["messages"] == [{"role": "model", "content": "x"}]


@pytest.mark.asyncio
async def test_http_backend_shares_client(cfg):
    calls = 0

    def handler(request: httpx.Request) -> httpx.Response:
        nonlocal calls
        calls += 1
        return httpx.Response(200, json=ok_body(f"r{calls}"))

    backend = HttpChatBackend(cfg, client=httpx.AsyncClient(transport=httpx.MockTransport(handler)))
    assert await backend.complete(MESSAGES) == "r1"
    assert await backend.complete(MESSAGES) == "r2"
    await backend.aclose()


# --- scripted -----------------------------------------------------------------

def test_index_fixture_in_order_then_exhausted():
    fixture = fixture_from_responses(["A", "B"])
    assert scripted_complete(MESSAGES, fixture) == "A"
    assert scripted_complete(MESSAGES, fixture) == "B"
    with pytest.raises(FixtureExhausted):
        scripted_complete(MESSAGES, fixture)


def test_digest_fixture_is_stable():
    fixture = Fixture(entries=[FixtureEntry(match=digest_messages(MESSAGES), response="same")])
    assert scripted_complete(MESSAGES, fixture) == "same"
    assert scripted_complete(MESSAGES, fixture) == "same"
    other = [ChatMessage(role="human", content="different")]
    with pytest.raises(NoMatch):
        scripted_complete(other, fixture)


def test_digest_covers_every_message():
    changed = [ChatMessage(role="system", content="You are Butler-GPT."), MESSAGES[1]]
    assert digest_messages(changed) != digest_messages(MESSAGES)


@pytest.mark.asyncio
async def test_recording_then_replay(tmp_path):
    sink = str(tmp_path / "fx" / "episode.jsonl")
    live = ScriptedBackend.from_responses(["first", "second"])
    recorder = RecordingBackend(live, sink)
    prompt2 = MESSAGES + [ChatMessage(role="assistant", content="first")]
    assert await recorder.complete(MESSAGES) == "first"
    with open(sink, "rb") as f:
        assert len(f.read().splitlines()) == 1
    assert await recorder.complete(prompt2) == "second"

    replay = ScriptedBackend.from_file(sink)
    assert await replay.complete(MESSAGES) == "first"
    assert await replay.complete(prompt2) == "second"


def test_empty_recording_is_valid_fixture(tmp_path):
    sink = str(tmp_path / "empty.jsonl")
    RecordingBackend(ScriptedBackend.from_responses([]), sink)
    assert load_fixture(sink) == Fixture()
