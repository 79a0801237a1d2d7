"""Language model backends: OpenAI-compatible HTTP, scripted fixtures, recording, policies."""
import asyncio
import logging
import os
import random
from typing import Awaitable, Callable, Dict, List, Optional, Sequence, Union

import aiofiles
import httpx
import orjson
from pydantic import ValidationError

from .errors import (
    AuthMissing,
    BackendError,
    BackendTimeout,
    DataFileError,
    EmptyCompletion,
    FixtureExhausted,
    HttpStatusError,
    NoMatch,
)
from .models import BackendConfig, ChatMessage, CommandRequest, Fixture, FixtureEntry, ThoughtRecord
from .prompts import render_response
from .utils import dumps_line, iter_jsonl, prompt_digest

logger = logging.getLogger(__name__)

Sleep = Callable[[float], Awaitable[None]]


def digest_messages(messages: Sequence[ChatMessage]) -> str:
    return prompt_digest((m.role, m.content) for m in messages)


def build_payload(messages: Sequence[ChatMessage], cfg: BackendConfig) -> Dict:
    return {
        "model": cfg.model,
        "messages": [{"role": cfg.role_map.get(m.role, m.role), "content": m.content} for m in messages],
        "temperature": cfg.temperature,
    }


def extract_content(data, cfg: BackendConfig) -> str:
    node = data
    for key in cfg.content_path:
        try:
            node = node[int(key)] if isinstance(node, list) else node[key]
        except (KeyError, IndexError, TypeError, ValueError):
            raise EmptyCompletion() from None
    if not isinstance(node, str) or not node:
        raise EmptyCompletion()
    return node


def is_retryable(status: int) -> bool:
    return status == 429 or 500 <= status < 600


def backoff_delay(attempt: int, cfg: BackendConfig, rng: random.Random) -> float:
    return cfg.backoff_base * cfg.backoff_factor ** attempt + rng.uniform(0, cfg.jitter)


async def complete(
    messages: Sequence[ChatMessage],
    cfg: BackendConfig,
    client: Optional[httpx.AsyncClient] = None,
    sleep: Sleep = asyncio.sleep,
    rng: Optional[random.Random] = None,
) -> str:
    """One chat completion with bounded retries on timeouts, 429 and 5xx."""
    if not messages:
        raise ValueError("complete() needs at least one message")
    headers = {"Content-Type": "application/json"}
    if cfg.api_key_env:
        key = os.environ.get(cfg.api_key_env)
        if not key:
            raise AuthMissing(cfg.api_key_env)
        headers["Authorization"] = f"Bearer {key}"
    body = orjson.dumps(build_payload(messages, cfg))
    rng = rng or random.Random()

    owned = client is None
    if owned:
        client = httpx.AsyncClient(timeout=httpx.Timeout(cfg.timeout))
    try:
        for attempt in range(cfg.max_retries + 1):
            last = attempt == cfg.max_retries
            try:
                r = await client.post(cfg.endpoint, headers=headers, content=body)
            except httpx.TimeoutException as exc:
                if last:
                    raise BackendTimeout(f"no response from {cfg.endpoint} after {attempt + 1} attempts") from exc
                reason = "timeout"
            else:
                if r.is_success:
                    try:
                        data = orjson.loads(r.content)
                    except orjson.JSONDecodeError as exc:
                        raise BackendError(f"completion body is not JSON: {exc}") from exc
                    return extract_content(data, cfg)
                if not is_retryable(r.status_code) or last:
                    raise HttpStatusError(r.status_code)
                reason = f"status {r.status_code}"
            delay = backoff_delay(attempt, cfg, rng)
            logger.warning("chat completion %s, retry %d/%d in %.2fs", reason, attempt + 1, cfg.max_retries, delay)
            await sleep(delay)
    finally:
        if owned:
            await client.aclose()
    raise BackendError("retry loop ended without a result")  # unreachable


class HttpChatBackend:
    """Shared by all episodes of a run; at most `concurrency` requests are in flight."""

    serial = False

    def __init__(
        self,
        cfg: BackendConfig,
        client: Optional[httpx.AsyncClient] = None,
        sleep: Sleep = asyncio.sleep,
    ) -> None:
        self.cfg = cfg
        self._sleep = sleep
        self._client = client or httpx.AsyncClient(
            timeout=httpx.Timeout(cfg.timeout),
            limits=httpx.Limits(max_connections=cfg.concurrency),
        )
        self._sem = asyncio.Semaphore(cfg.concurrency)

    async def complete(self, messages: Sequence[ChatMessage]) -> str:
        async with self._sem:
            return await complete(messages, self.cfg, client=self._client, sleep=self._sleep)

    async def aclose(self) -> None:
        await self._client.aclose()


# --- fixtures -----------------------------------------------------------------

def scripted_complete(messages: Sequence[ChatMessage], fixture: Fixture) -> str:
    """Next scripted response: an entry for the current call index wins over a digest match."""
    cursor = fixture.cursor
    fixture.cursor += 1
    for entry in fixture.entries:
        if isinstance(entry.match, int) and entry.match == cursor:
            return entry.response
    digest = digest_messages(messages)
    for entry in fixture.entries:
        if isinstance(entry.match, str) and entry.match == digest:
            return entry.response
    indexed = [e.match for e in fixture.entries if isinstance(e.match, int)]
    if indexed and cursor > max(indexed):
        raise FixtureExhausted(cursor)
    raise NoMatch(digest)


def fixture_from_responses(responses: Sequence[str]) -> Fixture:
    return Fixture(entries=[FixtureEntry(match=i, response=r) for i, r in enumerate(responses)])


def load_fixture(path: str) -> Fixture:
    entries: List[FixtureEntry] = []
    for n, obj in iter_jsonl(path):
        try:
            entries.append(FixtureEntry.model_validate(obj))
        except ValidationError as exc:
            raise DataFileError(n, str(exc)) from exc
    return Fixture(entries=entries)


class ScriptedBackend:
    """Fixture-driven; one instance per episode since the cursor is per-episode state."""

    serial = True

    def __init__(self, fixture: Fixture) -> None:
        self.fixture = fixture

    @classmethod
    def from_file(cls, path: str) -> "ScriptedBackend":
        return cls(load_fixture(path))

    @classmethod
    def from_responses(cls, responses: Sequence[str]) -> "ScriptedBackend":
        return cls(fixture_from_responses(responses))

    async def complete(self, messages: Sequence[ChatMessage]) -> str:
        return scripted_complete(messages, self.fixture)


class RecordingBackend:
    """Passes calls to a live backend and appends digest-keyed fixture entries to `sink`."""

    def __init__(self, inner, sink: str) -> None:
        self.inner = inner
        self.sink = sink
        parent = os.path.dirname(sink)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(sink, "wb"):
            pass

    @property
    def serial(self) -> bool:
        return getattr(self.inner, "serial", False)

    async def complete(self, messages: Sequence[ChatMessage]) -> str:
        response = await self.inner.complete(messages)
        line = dumps_line({"match": digest_messages(messages), "response": response})
        async with aiofiles.open(self.sink, "ab") as f:
            await f.write(line)
        return response


def record_fixture(live, sink: str) -> RecordingBackend:
    return RecordingBackend(live, sink)


Policy = Callable[[Sequence[ChatMessage]], Union[CommandRequest, str]]

POLICY_THOUGHT = ThoughtRecord(
    text="I will take the next action.",
    reasoning="It moves the task forward.",
    plan="- act\n- observe\n- repeat",
    criticism="None.",
)


class PolicyBackend:
    """Wraps a prompt -> command policy; plain strings are returned as-is."""

    serial = True

    def __init__(self, policy: Policy, thought: ThoughtRecord = POLICY_THOUGHT) -> None:
        self.policy = policy
        self.thought = thought
        self.calls = 0

    async def complete(self, messages: Sequence[ChatMessage]) -> str:
        self.calls += 1
        out = self.policy(messages)
        if isinstance(out, str):
            return out
        return render_response(self.thought, out)
