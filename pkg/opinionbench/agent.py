"""Auto-GPT styled step loop with optional additional opinions."""
import json
import logging
from typing import Any, List, Optional, Protocol, Sequence, Tuple

from .config import settings
from .errors import ConfigurationError, EpisodeOver, MissingField, NoJsonFound, ParseError, UnknownTool
from .models import (
    AgentConfig,
    AgentStep,
    ChatMessage,
    CommandRequest,
    EpisodeTrace,
    Opinion,
    ThoughtRecord,
    ToolSpec,
)
from .opinions import ExpertProvider, judge, render_opinion_prompt, sample_topk
from .prompts import PARSE_RETRY, TRIGGER, render_observation, render_system_prompt

logger = logging.getLogger(__name__)

THOUGHT_KEYS = ("text", "reasoning", "plan", "criticism")

_decoder = json.JSONDecoder(strict=False)


class Environment(Protocol):
    kind: str
    commit_label: str
    agent_name: str
    fallback_action: str
    tools: List[ToolSpec]

    @property
    def task_id(self) -> str: ...

    @property
    def instruction(self) -> str: ...

    @property
    def done(self) -> bool: ...

    @property
    def observation(self) -> str: ...

    def observe(self) -> Any: ...

    def step(self, command: CommandRequest) -> str: ...

    def execute(self, action: str) -> Any: ...

    def action_of(self, command: CommandRequest) -> str: ...

    def command_of(self, action: str) -> CommandRequest: ...

    def listed_actions(self, text: str) -> List[str]: ...

    def solve(self) -> List[str]: ...

    def outcome(self) -> Tuple[bool, float, bool]:
        """(success, reward, committed)."""
        ...


class LLMBackend(Protocol):
    async def complete(self, messages: Sequence[ChatMessage]) -> str: ...


class ContextBuffer:
    """Character-budgeted message history; the first message is pinned."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ConfigurationError("context capacity must be positive")
        self.capacity = capacity
        self._messages: List[ChatMessage] = []

    @property
    def messages(self) -> List[ChatMessage]:
        return list(self._messages)

    def size(self) -> int:
        return sum(len(m.content) for m in self._messages)

    def __len__(self) -> int:
        return len(self._messages)

    def append(self, message: ChatMessage) -> None:
        if not self._messages and len(message.content) > self.capacity:
            raise ConfigurationError(
                f"initial message ({len(message.content)} chars) exceeds context capacity {self.capacity}"
            )
        self._messages.append(message)
        while self.size() > self.capacity and len(self._messages) > 2:
            del self._messages[1]
        overflow = self.size() - self.capacity
        if overflow > 0:
            # only the pinned message and the newest one are left: keep the newest tail
            last = self._messages[-1]
            self._messages[-1] = ChatMessage(role=last.role, content=last.content[overflow:])


def build_prompt(
    config: AgentConfig,
    ctx: ContextBuffer,
    opinions: Optional[Sequence[Opinion]] = None,
    agent_name: str = "Auto-GPT",
) -> List[ChatMessage]:
    if len(ctx) == 0:
        raise ConfigurationError("context is empty: the goal message must be added first")
    system = ChatMessage(role="system", content=render_system_prompt(config.goal, config.tools, agent_name))
    if opinions is None:
        final = TRIGGER
    else:
        if not opinions or len(opinions) > config.opinion_k:
            raise ConfigurationError(f"expected 1..{config.opinion_k} opinions, got {len(opinions)}")
        final = render_opinion_prompt(opinions).rendered + " " + TRIGGER
    return [system, *ctx.messages, ChatMessage(role="human", content=final)]


def _records(obj: dict) -> Tuple[ThoughtRecord, CommandRequest]:
    thoughts = obj.get("thoughts")
    if not isinstance(thoughts, dict):
        raise MissingField("thoughts")
    values = {}
    for key in THOUGHT_KEYS:
        v = thoughts.get(key)
        if v is None:
            raise MissingField(f"thoughts.{key}")
        values[key] = v if isinstance(v, str) else json.dumps(v)
    command = obj.get("command")
    if not isinstance(command, dict):
        raise MissingField("command")
    name = command.get("name")
    if not isinstance(name, str) or not name.strip():
        raise MissingField("command.name")
    args = command.get("args")
    if not isinstance(args, dict):
        raise MissingField("command.args")
    tool_input = args.get("tool_input")
    if tool_input is None:
        raise MissingField("command.args.tool_input")
    if not isinstance(tool_input, str):
        tool_input = json.dumps(tool_input)
    return ThoughtRecord(**values), CommandRequest(name=name.strip(), tool_input=tool_input)


def parse_response(raw: str) -> Tuple[ThoughtRecord, CommandRequest]:
    """Pull the first JSON object carrying both `thoughts` and `command` out of raw model text.

    At most `settings.max_json_candidates` opening braces are tried.
    """
    raw = raw or ""
    partial: Optional[dict] = None
    idx = raw.find("{")
    for _ in range(settings.max_json_candidates):
        if idx == -1:
            break
        try:
            obj = _decoder.raw_decode(raw, idx)[0]
        except (ValueError, RecursionError):
            obj = None
        if isinstance(obj, dict):
            if "thoughts" in obj and "command" in obj:
                return _records(obj)
            if partial is None and ("thoughts" in obj or "command" in obj):
                partial = obj
        idx = raw.find("{", idx + 1)
    if partial is not None:
        _records(partial)
    raise NoJsonFound()


async def run_step(
    env: Environment,
    backend: LLMBackend,
    config: AgentConfig,
    ctx: ContextBuffer,
    opinion_provider: Optional[ExpertProvider] = None,
    index: int = 0,
) -> AgentStep:
    if env.done:
        raise EpisodeOver()
    if index >= config.max_steps:
        raise ConfigurationError(f"step {index} is beyond max_steps={config.max_steps}")

    opinions: List[Opinion] = []
    if opinion_provider is not None and config.opinion_k > 0:
        opinions = sample_topk(opinion_provider, env.observe(), config.opinion_k)
    prompt = build_prompt(config, ctx, opinions or None, env.agent_name)
    logger.debug("step %d prompt: %d messages, %d chars", index, len(prompt), sum(len(m.content) for m in prompt))

    raw = await backend.complete(prompt)
    try:
        thought, command = parse_response(raw)
    except ParseError as first:
        logger.debug("step %d unparseable response (%s), re-prompting", index, first)
        retry = [
            *prompt,
            ChatMessage(role="assistant", content=raw),
            ChatMessage(role="human", content=PARSE_RETRY.format(error=first)),
        ]
        raw = await backend.complete(retry)
        try:
            thought, command = parse_response(raw)
        except ParseError as second:
            observation = f"Could not parse your response: {second}"
            ctx.append(ChatMessage(role="assistant", content=raw))
            ctx.append(ChatMessage(role="human", content=observation))
            return AgentStep(
                index=index,
                prompt=prompt,
                observation=observation,
                opinions=opinions,
                error=str(second),
            )

    error = None
    if config.tool(command.name) is None:
        error = str(UnknownTool(command.name))
        names = ", ".join(t.name for t in config.tools)
        observation = f"Unknown command '{command.name}'. Available commands: {names}."
    else:
        observation = env.step(command)

    agreement = None
    if opinions:
        agreement = judge(index, env.action_of(command), [o.action for o in opinions], config.agreement_mode)

    ctx.append(ChatMessage(role="assistant", content=raw))
    ctx.append(ChatMessage(role="human", content=render_observation(command, observation)))
    return AgentStep(
        index=index,
        prompt=prompt,
        thought=thought,
        command=command,
        observation=observation,
        opinions=opinions,
        agreed=agreement.agreed if agreement else None,
        error=error,
        agreement=agreement,
    )


async def run_episode(
    env: Environment,
    backend: LLMBackend,
    config: AgentConfig,
    opinion_provider: Optional[ExpertProvider] = None,
) -> EpisodeTrace:
    ctx = ContextBuffer(config.context_capacity)
    ctx.append(ChatMessage(role="human", content=env.observation))
    logger.info("episode %s: start (cap %d, k=%d)", env.task_id, config.max_steps, config.opinion_k)

    steps: List[AgentStep] = []
    while not env.done and len(steps) < config.max_steps:
        steps.append(await run_step(env, backend, config, ctx, opinion_provider, index=len(steps)))

    success, reward, committed = env.outcome()
    if committed:
        terminal = env.commit_label
    elif steps and all(s.command is None for s in steps):
        terminal = "parse-dead"
    else:
        terminal = "step-cap"
    logger.info("episode %s: %s after %d steps, success=%s reward=%.3f", env.task_id, terminal, len(steps), success, reward)
    return EpisodeTrace(task_id=env.task_id, steps=steps, terminal=terminal, success=success, reward=reward)
