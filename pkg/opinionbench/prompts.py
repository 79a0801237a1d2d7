from typing import Sequence

import orjson
from jinja2 import Environment

from .models import CommandRequest, ThoughtRecord, ToolSpec

TRIGGER = "Determine which next command to use, and respond using the JSON format specified above:"

PARSE_RETRY = "Could not parse your response: {error}. " + TRIGGER

_jinja = Environment(trim_blocks=True, lstrip_blocks=True, autoescape=False)

SYSTEM_TEMPLATE = _jinja.from_string(
    """You are {{ agent_name }}, an autonomous agent that completes online decision-making tasks.
Your decisions must always be made independently without seeking user assistance.

GOAL:
{{ goal }}

CONSTRAINTS:
1. Exclusively use the commands listed below, e.g. "{{ tools[0].name }}".
2. Issue exactly one command per response.
3. Every command has a cost; complete the goal in as few steps as possible.

COMMANDS:
{% for tool in tools %}
{{ loop.index }}. {{ tool.name }}: {{ tool.description }} args: "tool_input": "<input>"
{% for demo in tool.demos %}
   Example {{ loop.index }}:
   Observation: {{ demo.observation }}
   Command: {{ demo.command }}
{% endfor %}
{% endfor %}

PERFORMANCE EVALUATION:
1. Continuously review and analyze your actions to ensure you are performing to the best of your abilities.
2. Constructively self-criticize your big-picture behavior constantly.
3. Reflect on past decisions and strategies to refine your approach.

You should only respond in JSON format as described below
RESPONSE FORMAT:
{% raw %}
{
    "thoughts": {
        "text": "thought",
        "reasoning": "reasoning",
        "plan": "- short bulleted\\n- list that conveys\\n- long-term plan",
        "criticism": "constructive self-criticism"
    },
    "command": {
        "name": "command name",
        "args": {
            "tool_input": "value"
        }
    }
}
{% endraw %}
Ensure the response can be parsed by Python json.loads"""
)


def render_system_prompt(goal: str, tools: Sequence[ToolSpec], agent_name: str = "Auto-GPT") -> str:
    return SYSTEM_TEMPLATE.render(goal=goal, tools=list(tools), agent_name=agent_name)


def render_command(command: CommandRequest) -> str:
    """Compact JSON of a command object, the form used in tool demos."""
    return orjson.dumps({"name": command.name, "args": {"tool_input": command.tool_input}}).decode()


def render_response(thought: ThoughtRecord, command: CommandRequest) -> str:
    payload = {
        "thoughts": thought.model_dump(),
        "command": {"name": command.name, "args": {"tool_input": command.tool_input}},
    }
    return orjson.dumps(payload, option=orjson.OPT_INDENT_2).decode()


def render_observation(command: CommandRequest, observation: str) -> str:
    return f"Command {command.name} returned: {observation}"
