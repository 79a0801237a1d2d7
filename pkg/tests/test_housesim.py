import random
from collections import Counter, deque

import pytest
from hypothesis import settings as hyp_settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, initialize, invariant, rule
from pydantic import ValidationError

from opinionbench.errors import DataFileError, EpisodeOver, UnknownTool, UnsolvableTask
from opinionbench.housesim import (
    FAMILIES,
    NOTHING,
    HouseEnv,
    apply_action,
    available_actions,
    check_goal,
    gen_house_tasks,
    initial_state,
    load_house_tasks,
    plan,
    save_house_tasks,
)
from opinionbench.models import (
    CommandRequest,
    HouseEpisode,
    HouseTask,
    ObjectSpec,
    ReceptacleSpec,
    WorldSpec,
)
from opinionbench.utils import normalize_action


def kitchen(obj="apple 1", where="countertop 1") -> WorldSpec:
    return WorldSpec(
        name="kitchen",
        receptacles=[
            ReceptacleSpec(id="countertop 1"),
            ReceptacleSpec(id="fridge 1", openable=True),
            ReceptacleSpec(id="microwave 1", openable=True),
            ReceptacleSpec(id="sinkbasin 1"),
        ],
        objects=[ObjectSpec(id=obj, object_class=obj.split()[0], location=where)],
    )


def state_key(state):
    return (
        state.location,
        state.inventory,
        tuple(sorted((k, tuple(sorted(v))) for k, v in state.contents.items())),
        tuple(sorted(state.opened.items())),
        tuple(sorted((k, tuple(v)) for k, v in state.flags.items())),
        tuple(sorted(state.lamps_on)),
    )


def bfs_distance(world, task, limit=12):
    start = initial_state(world)
    seen = {state_key(start)}
    queue = deque([(start, 0)])
    while queue:
        state, depth = queue.popleft()
        if check_goal(world, state, task):
            return depth
        if depth == limit:
            continue
        for action in available_actions(world, state):
            nxt = state.model_copy(deep=True)
            apply_action(world, nxt, action)
            key = state_key(nxt)
            if key not in seen:
                seen.add(key)
                queue.append((nxt, depth + 1))
    return None


def test_movement_and_containers(small_world_episode):
    env = HouseEnv(small_world_episode)
    assert env.execute("go to countertop 1").feedback == "On the countertop 1, you see a cloth 1."
    assert env.execute("go to cabinet 1").feedback == "The cabinet 1 is closed."
    assert "take cloth 1 from countertop 1" not in env.available_actions()
    assert env.execute("open cabinet 1").feedback == "You open the cabinet 1. The cabinet 1 is open. In it, you see nothing."
    assert env.execute("inventory").feedback == "You are not carrying anything."
    assert env.state.steps_used == 4


def test_unlisted_action_does_nothing(small_world_episode):
    env = HouseEnv(small_world_episode)
    obs = env.execute("fly to the moon")
    assert obs.feedback == NOTHING
    assert obs.steps_used == 1
    assert obs.location == "start"
    # closed receptacles hide their contents from take
    env.execute("go to cabinet 1")
    assert env.execute("take cloth 1 from cabinet 1").feedback == NOTHING


def test_actions_are_normalized(small_world_episode):
    env = HouseEnv(small_world_episode)
    assert env.execute("  Go To   Countertop 1 ").location == "countertop 1"


def test_heat_then_cool_swaps_flags():
    world = kitchen()
    state = initial_state(world)
    for a in ["go to countertop 1", "take apple 1 from countertop 1", "go to microwave 1",
              "heat apple 1 with microwave 1"]:
        assert a in available_actions(world, state)
        apply_action(world, state, a)
    assert state.flags["apple 1"] == ["hot"]
    apply_action(world, state, "go to fridge 1")
    assert apply_action(world, state, "cool apple 1 with fridge 1") == "You cool the apple 1 using the fridge 1."
    assert state.flags["apple 1"] == ["cold"]


def test_goal_needs_treatment():
    world = kitchen()
    task = HouseTask(
        task_id="pick_heat_then_place_in_recep-Apple-None-CounterTop-3",
        family="pick_heat_then_place_in_recep",
        object_class="apple",
        target="countertop",
    )
    state = initial_state(world)
    assert not check_goal(world, state, task)
    state.flags["apple 1"] = ["hot"]
    assert check_goal(world, state, task)
    assert plan(world, state, task) == []


def test_look_in_light():
    world = WorldSpec(
        name="bedroom",
        receptacles=[ReceptacleSpec(id="desk 1"), ReceptacleSpec(id="desklamp 1")],
        objects=[ObjectSpec(id="book 1", object_class="book", location="desk 1")],
    )
    task = HouseTask(
        task_id="look_at_obj_in_light-Book-None-DeskLamp-9",
        family="look_at_obj_in_light",
        object_class="book",
        target="desklamp",
    )
    assert plan(world, initial_state(world), task) == [
        "go to desk 1", "take book 1 from desk 1", "go to desklamp 1", "use desklamp 1",
    ]


def test_pick_two():
    world = WorldSpec(
        name="bedroom",
        receptacles=[ReceptacleSpec(id="shelf 1"), ReceptacleSpec(id="desk 1"), ReceptacleSpec(id="bed 1")],
        objects=[
            ObjectSpec(id="cd 1", object_class="cd", location="desk 1"),
            ObjectSpec(id="cd 2", object_class="cd", location="bed 1"),
        ],
    )
    task = HouseTask(
        task_id="pick_two_obj_and_place-CD-None-Shelf-2",
        family="pick_two_obj_and_place",
        object_class="cd",
        target="shelf",
    )
    steps = plan(world, initial_state(world), task)
    assert len(steps) == 8
    assert bfs_distance(world, task) == 8


def test_plan_matches_bfs_on_small_world(small_world_episode):
    world, task = small_world_episode.world, small_world_episode.task
    steps = plan(world, initial_state(world), task)
    assert steps == [
        "go to countertop 1",
        "take cloth 1 from countertop 1",
        "go to sinkbasin 1",
        "clean cloth 1 with sinkbasin 1",
        "go to cabinet 1",
        "open cabinet 1",
        "put cloth 1 in/on cabinet 1",
    ]
    assert bfs_distance(world, task) == len(steps)


def test_oracle_completes_generated_tasks(house_episodes):
    for ep in house_episodes:
        env = HouseEnv(ep)
        for action in env.solve():
            env.execute(action)
        assert env.done
        assert env.outcome() == (True, 1.0, True)


def test_generated_families_cycle(house_episodes):
    counts = Counter(ep.task.family for ep in house_episodes)
    assert set(counts) == set(FAMILIES)
    assert set(counts.values()) == {2}
    assert len({ep.task.task_id for ep in house_episodes}) == len(house_episodes)


def test_generation_is_deterministic():
    assert gen_house_tasks(seed=8, n=6) == gen_house_tasks(seed=8, n=6)


def test_initial_observation(small_world_episode):
    env = HouseEnv(small_world_episode)
    text = env.observation
    assert text.startswith("Instruction:\nYou are in the middle of a room.")
    assert "Your task is to: clean some cloth and put it in cabinet." in text
    assert "Available Actions are:\n[action] go to cabinet 1 [action_]" in text
    assert HouseEnv.listed_actions(text) == env.available_actions()


def test_finish_ends_without_success(small_world_episode):
    env = HouseEnv(small_world_episode)
    env.step(CommandRequest(name="alfworld_action", tool_input="go to countertop 1"))
    env.step(CommandRequest(name="finish"))
    assert env.done
    assert env.outcome() == (False, 0.0, True)
    with pytest.raises(EpisodeOver):
        env.execute("look")


def test_step_cap(small_world_episode):
    env = HouseEnv(small_world_episode, max_steps=3)
    for _ in range(3):
        env.execute("look")
    assert env.done
    assert env.outcome() == (False, 0.0, False)


def test_unknown_tool(small_world_episode):
    env = HouseEnv(small_world_episode)
    with pytest.raises(UnknownTool):
        env.step(CommandRequest(name="teleport", tool_input="cabinet 1"))


def test_command_strings(small_world_episode):
    env = HouseEnv(small_world_episode)
    assert env.command_of("finish") == CommandRequest(name="finish", tool_input="")
    cmd = env.command_of("go to sinkbasin 1")
    assert cmd == CommandRequest(name="alfworld_action", tool_input="go to sinkbasin 1")
    assert env.action_of(cmd) == "go to sinkbasin 1"


def test_unsolvable_task_is_rejected(small_world_episode):
    task = small_world_episode.task.model_copy(update={"target": "fridge"})
    with pytest.raises(UnsolvableTask):
        HouseEnv(HouseEpisode(world=small_world_episode.world, task=task))


def test_task_id_format_is_checked():
    with pytest.raises(ValidationError):
        HouseTask(task_id="clean-the-cloth", family="pick_clean_then_place_in_recep",
                  object_class="cloth", target="cabinet")


def test_task_file_round_trip(house_file, house_episodes, tmp_path):
    assert load_house_tasks(house_file) == house_episodes
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"world": {"receptacles": []}, "task": {}}\n', encoding="utf-8")
    with pytest.raises(DataFileError) as exc:
        load_house_tasks(str(bad))
    assert exc.value.line == 1


def test_task_file_with_unsolvable_line_is_rejected(small_world_episode, tmp_path):
    empty_room = WorldSpec(name="empty", receptacles=[ReceptacleSpec(id="shelf 1")])
    stray = HouseEpisode(
        world=empty_room,
        task=HouseTask(task_id="pick_and_place_simple-Apple-None-Shelf-1", family="pick_and_place_simple",
                       object_class="apple", target="shelf"),
    )
    path = save_house_tasks([small_world_episode, stray], str(tmp_path / "tasks.jsonl"))
    with pytest.raises(DataFileError) as exc:
        load_house_tasks(path)
    assert exc.value.line == 2
    assert "pick_and_place_simple-Apple-None-Shelf-1" in str(exc.value)


def test_mixed_case_world_is_playable():
    world = WorldSpec(
        name="Pantry",
        receptacles=[ReceptacleSpec(id="CounterTop 1"), ReceptacleSpec(id="Shelf  1")],
        objects=[ObjectSpec(id="Apple 1", object_class="Apple", location="CounterTop 1")],
    )
    assert [r.id for r in world.receptacles] == ["countertop 1", "shelf 1"]
    assert world.objects[0] == ObjectSpec(id="apple 1", object_class="apple", location="countertop 1")

    task = HouseTask(task_id="pick_and_place_simple-Apple-None-Shelf-1", family="pick_and_place_simple",
                     object_class="Apple", target="Shelf")
    env = HouseEnv(HouseEpisode(world=world, task=task))
    assert env.execute("go to CounterTop 1").feedback == "On the countertop 1, you see a apple 1."
    for action in plan(world, env.state, task):
        assert env.execute(action).feedback != NOTHING
    assert env.outcome() == (True, 1.0, True)


def assert_conserved(world, state):
    placed = [o for items in state.contents.values() for o in items]
    if state.inventory:
        placed.append(state.inventory)
    assert sorted(placed) == sorted(o.id for o in world.objects)


def test_random_walk_conserves_objects(house_episodes):
    rng = random.Random(2024)
    ep = house_episodes[0]
    state = initial_state(ep.world)
    for i in range(10_000):
        if i % 500 == 0:
            ep = house_episodes[(i // 500) % len(house_episodes)]
            state = initial_state(ep.world)
        apply_action(ep.world, state, rng.choice(available_actions(ep.world, state)))
        assert_conserved(ep.world, state)


class HouseMachine(RuleBasedStateMachine):
    episodes = gen_house_tasks(seed=13, n=6)

    @initialize(which=st.integers(min_value=0, max_value=5))
    def start(self, which):
        self.env = HouseEnv(self.episodes[which], max_steps=10_000)

    @rule(pick=st.integers(min_value=0, max_value=10_000))
    def listed_action(self, pick):
        if self.env.done:
            return
        acts = self.env.available_actions()
        before = self.env.state.steps_used
        obs = self.env.execute(acts[pick % len(acts)])
        assert obs.feedback != NOTHING
        assert obs.steps_used == before + 1

    @rule(junk=st.text(max_size=20))
    def junk_action(self, junk):
        if self.env.done:
            return
        snapshot = self.env.state.model_dump(exclude={"steps_used"})
        if normalize_action(junk) in self.env.available_actions():
            return
        assert self.env.execute(junk).feedback == NOTHING
        assert self.env.state.model_dump(exclude={"steps_used"}) == snapshot

    @invariant()
    def objects_conserved(self):
        assert_conserved(self.env.world, self.env.state)

    @invariant()
    def listing_matches_state(self):
        assert self.env.available_actions() == available_actions(self.env.world, self.env.state)


HouseMachine.TestCase.settings = hyp_settings(max_examples=30, stateful_step_count=40, deadline=None)
TestHouseMachine = HouseMachine.TestCase
