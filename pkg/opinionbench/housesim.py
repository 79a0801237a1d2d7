"""Desk-scale household text world with six task families and a plan-based solver."""
import itertools
import logging
import random
import re
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigurationError, DataFileError, EpisodeOver, UnknownTool, UnsolvableTask
from .models import (
    CommandRequest,
    HouseEpisode,
    HouseFamily,
    HouseTask,
    ObjectSpec,
    ReceptacleSpec,
    ToolDemo,
    ToolSpec,
    WorldSpec,
    class_of,
)
from .prompts import render_command
from .utils import iter_jsonl, normalize_action, write_jsonl

logger = logging.getLogger(__name__)

NOTHING = "Nothing happens."
START = "start"

FAMILIES: Tuple[HouseFamily, ...] = (
    "pick_and_place_simple",
    "pick_clean_then_place_in_recep",
    "pick_heat_then_place_in_recep",
    "pick_cool_then_place_in_recep",
    "look_at_obj_in_light",
    "pick_two_obj_and_place",
)

# family -> (flag set on the object, appliance class that sets it, verb)
TREATMENTS = {
    "pick_clean_then_place_in_recep": ("clean", "sinkbasin", "clean"),
    "pick_heat_then_place_in_recep": ("hot", "microwave", "heat"),
    "pick_cool_then_place_in_recep": ("cold", "fridge", "cool"),
}
VERB_FLAGS = {"clean": "clean", "heat": "hot", "cool": "cold"}
VERB_APPLIANCE = {"clean": "sinkbasin", "heat": "microwave", "cool": "fridge"}

_ACTION_RE = re.compile(r"\[action\] (.+?) \[action_\]")


class HouseState(BaseModel):
    location: str = START
    inventory: Optional[str] = None
    contents: Dict[str, List[str]] = Field(default_factory=dict)
    opened: Dict[str, bool] = Field(default_factory=dict)
    flags: Dict[str, List[str]] = Field(default_factory=dict)
    lamps_on: List[str] = Field(default_factory=list)
    steps_used: int = 0

    def location_of(self, obj: str) -> Optional[str]:
        for rid, items in self.contents.items():
            if obj in items:
                return rid
        return None


class HouseObservation(BaseModel):
    text: str
    feedback: str
    available_actions: List[str]
    location: str
    inventory: Optional[str] = None
    steps_used: int = 0
    task: HouseTask
    world: WorldSpec = Field(exclude=True)
    state: HouseState = Field(exclude=True)


# --- world mechanics ------------------------------------------------------------

def initial_state(world: WorldSpec) -> HouseState:
    contents: Dict[str, List[str]] = {r.id: [] for r in world.receptacles}
    for o in world.objects:
        contents[o.location].append(o.id)
    return HouseState(
        contents=contents,
        opened={r.id: False for r in world.receptacles if r.openable},
        flags={o.id: [] for o in world.objects},
    )


def _openable(world: WorldSpec, rid: str) -> bool:
    return any(r.id == rid and r.openable for r in world.receptacles)


def _accessible(world: WorldSpec, state: HouseState, rid: str) -> bool:
    return not _openable(world, rid) or state.opened.get(rid, False)


def available_actions(world: WorldSpec, state: HouseState) -> List[str]:
    loc = state.location
    acts = ["look", "inventory"]
    acts += [f"go to {r.id}" for r in world.receptacles if r.id != loc]
    if loc != START:
        acts.append(f"examine {loc}")
        if _openable(world, loc):
            acts.append(f"{'close' if state.opened[loc] else 'open'} {loc}")
        here = class_of(loc)
        if state.inventory is None:
            if _accessible(world, state, loc):
                acts += [f"take {o} from {loc}" for o in state.contents[loc]]
        else:
            held = state.inventory
            if _accessible(world, state, loc) and here != "desklamp":
                acts.append(f"put {held} in/on {loc}")
            for verb, appliance in VERB_APPLIANCE.items():
                if here == appliance:
                    acts.append(f"{verb} {held} with {loc}")
        if here == "desklamp":
            acts.append(f"use {loc}")
    return sorted(acts)


def _listing(items: Sequence[str]) -> str:
    if not items:
        return "nothing"
    named = [f"a {i}" for i in items]
    if len(named) == 1:
        return named[0]
    return ", ".join(named[:-1]) + f", and {named[-1]}"


def describe_room(world: WorldSpec) -> str:
    rids = [r.id for r in world.receptacles]
    return f"You are in the middle of a room. Looking quickly around you, you see {_listing(rids)}."


def describe_receptacle(world: WorldSpec, state: HouseState, rid: str) -> str:
    if _openable(world, rid):
        if not state.opened[rid]:
            return f"The {rid} is closed."
        return f"The {rid} is open. In it, you see {_listing(state.contents[rid])}."
    return f"On the {rid}, you see {_listing(state.contents[rid])}."


def task_sentence(task: HouseTask) -> str:
    obj, target = task.object_class, task.target
    return {
        "pick_and_place_simple": f"put some {obj} on {target}.",
        "pick_clean_then_place_in_recep": f"clean some {obj} and put it in {target}.",
        "pick_heat_then_place_in_recep": f"heat some {obj} and put it in {target}.",
        "pick_cool_then_place_in_recep": f"cool some {obj} and put it in {target}.",
        "look_at_obj_in_light": f"look at {obj} under the {target}.",
        "pick_two_obj_and_place": f"find two {obj} and put them in {target}.",
    }[task.family]


def apply_action(world: WorldSpec, state: HouseState, action: str) -> str:
    """Mutate `state` for an action taken from available_actions(); returns the feedback line."""
    loc = state.location
    if action == "look":
        if loc == START:
            return describe_room(world)
        return f"You are facing the {loc}. Next to it, you see nothing."
    if action == "inventory":
        return f"You are carrying: a {state.inventory}." if state.inventory else "You are not carrying anything."
    m = re.match(r"^take (.+) from (.+)$", action)
    if m:
        obj, rid = m.groups()
        state.contents[rid].remove(obj)
        state.inventory = obj
        return f"You pick up the {obj} from the {rid}."
    m = re.match(r"^put (.+) in/on (.+)$", action)
    if m:
        obj, rid = m.groups()
        state.contents[rid].append(obj)
        state.inventory = None
        return f"You put the {obj} in/on the {rid}."
    m = re.match(r"^(clean|heat|cool) (.+) with (.+)$", action)
    if m:
        verb, obj, rid = m.groups()
        flags = state.flags[obj]
        flag = VERB_FLAGS[verb]
        opposite = {"hot": "cold", "cold": "hot"}.get(flag)
        if opposite in flags:
            flags.remove(opposite)
        if flag not in flags:
            flags.append(flag)
            flags.sort()
        return f"You {verb} the {obj} using the {rid}."
    if action.startswith("go to "):
        rid = action[len("go to "):]
        state.location = rid
        return describe_receptacle(world, state, rid)
    if action.startswith("open "):
        rid = action[len("open "):]
        state.opened[rid] = True
        return f"You open the {rid}. " + describe_receptacle(world, state, rid)
    if action.startswith("close "):
        rid = action[len("close "):]
        state.opened[rid] = False
        return f"You close the {rid}."
    if action.startswith("examine "):
        return describe_receptacle(world, state, action[len("examine "):])
    if action.startswith("use "):
        rid = action[len("use "):]
        if rid not in state.lamps_on:
            state.lamps_on.append(rid)
        return f"You turn on the {rid}."
    return NOTHING


def check_goal(world: WorldSpec, state: HouseState, task: HouseTask) -> bool:
    members = [o.id for o in world.objects if o.object_class == task.object_class]

    def placed(obj: str) -> bool:
        rid = state.location_of(obj)
        return rid is not None and class_of(rid) == task.target

    if task.family == "pick_and_place_simple":
        return any(placed(o) for o in members)
    if task.family in TREATMENTS:
        flag = TREATMENTS[task.family][0]
        return any(placed(o) and flag in state.flags[o] for o in members)
    if task.family == "look_at_obj_in_light":
        return (
            class_of(state.location) == task.target
            and state.location in state.lamps_on
            and state.inventory in members
        )
    # pick_two_obj_and_place
    for rid, items in state.contents.items():
        if class_of(rid) == task.target and sum(1 for o in items if o in members) >= 2:
            return True
    return False


# --- planner ------------------------------------------------------------------

def _do(world: WorldSpec, state: HouseState, action: str, acts: List[str]) -> bool:
    if action not in available_actions(world, state):
        return False
    apply_action(world, state, action)
    acts.append(action)
    return True


def _go(world: WorldSpec, state: HouseState, rid: str, acts: List[str]) -> bool:
    return state.location == rid or _do(world, state, f"go to {rid}", acts)


def _open_if_closed(world: WorldSpec, state: HouseState, rid: str, acts: List[str]) -> bool:
    if _accessible(world, state, rid):
        return True
    return _do(world, state, f"open {rid}", acts)


def _deliver(world: WorldSpec, state: HouseState, task: HouseTask, obj: str, dest: str, acts: List[str]) -> bool:
    treatment = TREATMENTS.get(task.family)
    src = state.location_of(obj)
    if src == dest and (treatment is None or treatment[0] in state.flags[obj]):
        return True

    if state.inventory not in (None, obj):
        held = state.inventory
        drop = next(
            (r.id for r in world.receptacles
             if not r.openable and class_of(r.id) not in ("desklamp", task.target)),
            None,
        )
        if drop is None or not _go(world, state, drop, acts) or not _do(world, state, f"put {held} in/on {drop}", acts):
            return False

    if state.inventory != obj:
        if not _go(world, state, src, acts) or not _open_if_closed(world, state, src, acts):
            return False
        if not _do(world, state, f"take {obj} from {src}", acts):
            return False

    if treatment and treatment[0] not in state.flags[obj]:
        flag, appliance_class, verb = treatment
        appliance = next((r.id for r in world.receptacles if class_of(r.id) == appliance_class), None)
        if appliance is None or not _go(world, state, appliance, acts):
            return False
        if not _do(world, state, f"{verb} {obj} with {appliance}", acts):
            return False

    if task.family == "look_at_obj_in_light":
        if not _go(world, state, dest, acts):
            return False
        return dest in state.lamps_on or _do(world, state, f"use {dest}", acts)

    return (
        _go(world, state, dest, acts)
        and _open_if_closed(world, state, dest, acts)
        and _do(world, state, f"put {obj} in/on {dest}", acts)
    )


def _candidates(world: WorldSpec, state: HouseState, task: HouseTask) -> Iterator[List[str]]:
    members = sorted(o.id for o in world.objects if o.object_class == task.object_class)
    targets = sorted(r.id for r in world.receptacles if class_of(r.id) == task.target)
    for dest in targets:
        if task.family == "pick_two_obj_and_place":
            orders: List[Tuple[str, ...]] = list(itertools.permutations(members, 2)) + [(m,) for m in members]
        else:
            orders = [(m,) for m in members]
        for order in orders:
            sim = state.model_copy(deep=True)
            acts: List[str] = []
            if all(_deliver(world, sim, task, obj, dest, acts) for obj in order) and check_goal(world, sim, task):
                yield acts


def plan(world: WorldSpec, state: HouseState, task: HouseTask) -> Optional[List[str]]:
    """Shortest template plan from `state`; [] when the goal already holds, None when no template works."""
    if check_goal(world, state, task):
        return []
    best: Optional[List[str]] = None
    for acts in _candidates(world, state, task):
        if best is None or len(acts) < len(best):
            best = acts
    return best


# --- environment --------------------------------------------------------------

HOUSE_TOOLS = [
    ToolSpec(
        name="alfworld_action",
        description="Carry out one of the listed available actions in the room, written exactly as listed.",
        demos=[
            ToolDemo(
                observation="You are in the middle of a room. Looking quickly around you, you see a countertop 1, "
                "and a sinkbasin 1. Your task is to: clean some cloth and put it in countertop. "
                "Available Actions are: [action] go to countertop 1 [action_] [action] go to sinkbasin 1 [action_]",
                command=render_command(CommandRequest(name="alfworld_action", tool_input="go to countertop 1")),
            ),
            ToolDemo(
                observation="On the countertop 1, you see a cloth 1. Available Actions are: "
                "[action] take cloth 1 from countertop 1 [action_] [action] go to sinkbasin 1 [action_]",
                command=render_command(CommandRequest(name="alfworld_action", tool_input="take cloth 1 from countertop 1")),
            ),
        ],
    ),
    ToolSpec(
        name="finish",
        description="Declare the task complete. The episode ends whether or not the goal holds.",
        demos=[
            ToolDemo(
                observation="You put the cloth 1 in/on the countertop 1.",
                command=render_command(CommandRequest(name="finish", tool_input="")),
            )
        ],
    ),
]


class HouseEnv:
    kind = "house"
    commit_label = "completed"
    agent_name = "Butler-GPT"
    fallback_action = "look"
    tools = HOUSE_TOOLS

    def __init__(self, episode: HouseEpisode, max_steps: int = 35) -> None:
        if max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")
        self.world = episode.world
        self.task = episode.task
        self.max_steps = max_steps
        if plan(self.world, initial_state(self.world), self.task) is None:
            raise UnsolvableTask(f"task {self.task.task_id} has no solution in world {self.world.name}")
        self.reset()

    @property
    def task_id(self) -> str:
        return self.task.task_id

    @property
    def instruction(self) -> str:
        return f"Your task is to: {task_sentence(self.task)}"

    @property
    def done(self) -> bool:
        return self.goal_met or self.declared or self.state.steps_used >= self.max_steps

    @property
    def observation(self) -> str:
        return self._last.text

    def reset(self) -> HouseObservation:
        self.state = initial_state(self.world)
        self.goal_met = False
        self.declared = False
        intro = f"Instruction:\n{describe_room(self.world)}\n{self.instruction}"
        self._last = self._observe(intro)
        return self._last

    def _observe(self, feedback: str) -> HouseObservation:
        actions = available_actions(self.world, self.state)
        listing = "\n".join(f"[action] {a} [action_]" for a in actions)
        return HouseObservation(
            text=f"{feedback}\nAvailable Actions are:\n{listing}",
            feedback=feedback,
            available_actions=actions,
            location=self.state.location,
            inventory=self.state.inventory,
            steps_used=self.state.steps_used,
            task=self.task,
            world=self.world,
            state=self.state.model_copy(deep=True),
        )

    def observe(self) -> HouseObservation:
        return self._last

    def available_actions(self) -> List[str]:
        return self._last.available_actions

    def execute(self, action: str) -> HouseObservation:
        if self.done:
            raise EpisodeOver()
        self.state.steps_used += 1
        wanted = normalize_action(action)
        if wanted in available_actions(self.world, self.state):
            feedback = apply_action(self.world, self.state, wanted)
        else:
            feedback = NOTHING
        if check_goal(self.world, self.state, self.task):
            self.goal_met = True
            logger.debug("task %s: goal met after %d steps", self.task_id, self.state.steps_used)
        self._last = self._observe(feedback)
        return self._last

    def finish(self) -> HouseObservation:
        if self.done:
            raise EpisodeOver()
        self.state.steps_used += 1
        self.declared = True
        self._last = self._observe("You declared the task complete.")
        return self._last

    def step(self, command: CommandRequest) -> str:
        if command.name == "alfworld_action":
            return self.execute(command.tool_input).text
        if command.name == "finish":
            return self.finish().text
        raise UnknownTool(command.name)

    def action_of(self, command: CommandRequest) -> str:
        if command.name == "alfworld_action":
            return command.tool_input
        return f"{command.name} {command.tool_input}".strip()

    def command_of(self, action: str) -> CommandRequest:
        if normalize_action(action) == "finish":
            return CommandRequest(name="finish", tool_input="")
        return CommandRequest(name="alfworld_action", tool_input=action)

    @staticmethod
    def listed_actions(text: str) -> List[str]:
        return _ACTION_RE.findall(text or "")

    def outcome(self) -> Tuple[bool, float, bool]:
        committed = self.goal_met or self.declared
        success = committed and check_goal(self.world, self.state, self.task)
        return success, 1.0 if success else 0.0, committed

    def solve(self) -> List[str]:
        steps = plan(self.world, initial_state(self.world), self.task)
        if steps is None:
            raise UnsolvableTask(f"task {self.task_id} has no solution")
        return steps


# --- task files ---------------------------------------------------------------

ROOMS = {
    "bathroom": {
        "receptacles": [
            ("cabinet 1", True), ("cabinet 2", True), ("cabinet 3", True), ("cabinet 4", True),
            ("countertop 1", False), ("garbagecan 1", False), ("handtowelholder 1", False),
            ("handtowelholder 2", False), ("sinkbasin 1", False), ("toilet 1", False),
            ("toiletpaperhanger 1", False), ("towelholder 1", False),
        ],
        "objects": ["soapbar", "spraybottle", "cloth", "handtowel", "toiletpaper", "candle", "soapbottle"],
        "targets": {
            "pick_and_place_simple": ["countertop", "cabinet", "toilet", "garbagecan"],
            "pick_clean_then_place_in_recep": ["countertop", "cabinet", "toilet"],
            "pick_two_obj_and_place": ["countertop", "cabinet", "garbagecan"],
        },
    },
    "kitchen": {
        "receptacles": [
            ("cabinet 1", True), ("cabinet 2", True), ("cabinet 3", True), ("countertop 1", False),
            ("countertop 2", False), ("countertop 3", False), ("diningtable 1", False), ("drawer 1", True),
            ("drawer 2", True), ("fridge 1", True), ("microwave 1", True), ("sinkbasin 1", False),
        ],
        "objects": ["mug", "pan", "apple", "potato", "spatula", "egg", "cup", "tomato", "plate"],
        "targets": {
            "pick_and_place_simple": ["countertop", "diningtable", "cabinet", "drawer"],
            "pick_clean_then_place_in_recep": ["countertop", "diningtable", "cabinet", "drawer"],
            "pick_heat_then_place_in_recep": ["countertop", "diningtable", "cabinet"],
            "pick_cool_then_place_in_recep": ["countertop", "diningtable", "cabinet"],
            "pick_two_obj_and_place": ["countertop", "diningtable", "cabinet"],
        },
    },
    "bedroom": {
        "receptacles": [
            ("bed 1", False), ("desk 1", False), ("desk 2", False), ("desklamp 1", False),
            ("drawer 1", True), ("drawer 2", True), ("drawer 3", True), ("garbagecan 1", False),
            ("laundryhamper 1", False), ("safe 1", True), ("shelf 1", False), ("shelf 2", False),
        ],
        "objects": ["mug", "pen", "creditcard", "book", "cd", "watch", "keychain", "pencil"],
        "targets": {
            "pick_and_place_simple": ["desk", "shelf", "drawer", "safe"],
            "look_at_obj_in_light": ["desklamp"],
            "pick_two_obj_and_place": ["desk", "shelf", "bed"],
        },
    },
}

CAMEL = {
    "soapbar": "SoapBar", "spraybottle": "SprayBottle", "cloth": "Cloth", "handtowel": "HandTowel",
    "toiletpaper": "ToiletPaper", "candle": "Candle", "soapbottle": "SoapBottle", "mug": "Mug", "pan": "Pan",
    "apple": "Apple", "potato": "Potato", "spatula": "Spatula", "egg": "Egg", "cup": "Cup", "tomato": "Tomato",
    "plate": "Plate", "pen": "Pen", "creditcard": "CreditCard", "book": "Book", "cd": "CD", "watch": "Watch",
    "keychain": "KeyChain", "pencil": "Pencil", "countertop": "CounterTop", "cabinet": "Cabinet",
    "toilet": "Toilet", "garbagecan": "GarbageCan", "diningtable": "DiningTable", "drawer": "Drawer",
    "desk": "Desk", "shelf": "Shelf", "safe": "Safe", "bed": "Bed", "desklamp": "DeskLamp",
}


def _gen_episode(rng: random.Random, family: HouseFamily) -> HouseEpisode:
    room = rng.choice(sorted(name for name, spec in ROOMS.items() if family in spec["targets"]))
    spec = ROOMS[room]
    receptacles = [ReceptacleSpec(id=rid, openable=op) for rid, op in spec["receptacles"]]
    target = rng.choice(spec["targets"][family])
    obj_class = rng.choice(spec["objects"])
    holders = [
        r.id for r in receptacles
        if class_of(r.id) not in ("sinkbasin", "microwave", "fridge", "desklamp")
    ]
    task_holders = [rid for rid in holders if class_of(rid) != target]

    objects = []
    count = 2 if family == "pick_two_obj_and_place" else rng.randint(1, 2)
    for i in range(1, count + 1):
        objects.append(ObjectSpec(id=f"{obj_class} {i}", object_class=obj_class, location=rng.choice(task_holders)))
    for cls in rng.sample([c for c in spec["objects"] if c != obj_class], k=3):
        objects.append(ObjectSpec(id=f"{cls} 1", object_class=cls, location=rng.choice(holders)))

    task_id = f"{family}-{CAMEL[obj_class]}-None-{CAMEL[target]}-{rng.randint(1, 400)}"
    return HouseEpisode(
        world=WorldSpec(name=room, receptacles=receptacles, objects=objects),
        task=HouseTask(task_id=task_id, family=family, object_class=obj_class, target=target),
    )


def gen_house_tasks(seed: int, n: int) -> List[HouseEpisode]:
    """Families cycle in a fixed order, so any n covers them evenly."""
    if n < 1:
        raise ConfigurationError("task count must be >= 1")
    rng = random.Random(seed)
    episodes: List[HouseEpisode] = []
    used = set()
    for i in range(n):
        family = FAMILIES[i % len(FAMILIES)]
        while True:
            ep = _gen_episode(rng, family)
            if ep.task.task_id in used:
                continue
            if plan(ep.world, initial_state(ep.world), ep.task) is not None:
                break
            logger.debug("discarding unsolvable draw %s", ep.task.task_id)
        used.add(ep.task.task_id)
        episodes.append(ep)
    return episodes


def load_house_tasks(path: str) -> List[HouseEpisode]:
    """Rejects the whole file when a line is malformed or its task cannot be solved."""
    episodes = []
    for n, obj in iter_jsonl(path):
        try:
            ep = HouseEpisode.model_validate(obj)
        except ValidationError as exc:
            raise DataFileError(n, str(exc)) from exc
        if plan(ep.world, initial_state(ep.world), ep.task) is None:
            raise DataFileError(n, f"task {ep.task.task_id} has no solution in world {ep.world.name}")
        episodes.append(ep)
    return episodes


def save_house_tasks(episodes: Sequence[HouseEpisode], path: str) -> str:
    return write_jsonl(path, [ep.model_dump(mode="json") for ep in episodes])
