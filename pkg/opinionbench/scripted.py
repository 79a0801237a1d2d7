"""Deterministic stand-ins for a language model, built around an environment instance."""
from typing import List, Sequence

from .backends import PolicyBackend, ScriptedBackend
from .models import ChatMessage, CommandRequest, ThoughtRecord
from .opinions import parse_suggestions
from .prompts import render_response
from .utils import normalize_action

ORACLE_THOUGHT = ThoughtRecord(
    text="I know the route to the goal.",
    reasoning="Following the precomputed solution.",
    plan="- take the next step of the solution",
    criticism="None.",
)

PROSE = "I think the best next move is to look around a bit more before acting."

# an action string no environment lists
IDLE_ACTION = "wait"


def latest_observation(messages: Sequence[ChatMessage]) -> str:
    """Most recent environment text in a prompt; the last message is always the trigger."""
    for m in reversed(messages[:-1]):
        if m.role == "human":
            return m.content
    return ""


def _shown(messages: Sequence[ChatMessage]) -> List[str]:
    return parse_suggestions(messages[-1].content) if messages else []


def oracle_backend(env) -> ScriptedBackend:
    return ScriptedBackend.from_responses([render_response(ORACLE_THOUGHT, env.command_of(a)) for a in env.solve()])


def follower_backend(env) -> PolicyBackend:
    """Always takes the top suggestion; without one, the first action listed on the page."""

    def policy(messages: Sequence[ChatMessage]) -> CommandRequest:
        shown = _shown(messages)
        if shown:
            return env.command_of(shown[0])
        listed = env.listed_actions(latest_observation(messages))
        return env.command_of(listed[0] if listed else env.fallback_action)

    return PolicyBackend(policy)


def contrarian_backend(env) -> PolicyBackend:
    """Never takes a suggested action."""

    def policy(messages: Sequence[ChatMessage]) -> CommandRequest:
        shown = {normalize_action(s) for s in _shown(messages)}
        for action in env.listed_actions(latest_observation(messages)):
            if normalize_action(action) not in shown:
                return env.command_of(action)
        return env.command_of(IDLE_ACTION)

    return PolicyBackend(policy)


def prose_backend() -> PolicyBackend:
    return PolicyBackend(lambda messages: PROSE)


def constant_backend(command: CommandRequest) -> PolicyBackend:
    return PolicyBackend(lambda messages: command)


def build_scripted_backend(kind: str, env):
    if kind == "oracle":
        return oracle_backend(env)
    if kind == "follower":
        return follower_backend(env)
    if kind == "contrarian":
        return contrarian_backend(env)
    if kind == "prose":
        return prose_backend()
    raise ValueError(f"not a scripted backend kind: {kind}")
