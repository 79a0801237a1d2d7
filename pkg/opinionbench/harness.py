"""Benchmark runner: task selection, per-episode wiring, traces, results and reports."""
import asyncio
import contextlib
import glob
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import aiofiles
import orjson
import yaml
from pydantic import ValidationError

from .agent import run_episode
from .backends import HttpChatBackend, RecordingBackend, ScriptedBackend
from .errors import ConfigurationError, DataFileError, TaskSelectionError
from .experts import build_expert
from .exporters import emit_agreement_csv, emit_report
from .housesim import HouseEnv, load_house_tasks
from .metrics import average_runs, compute_metrics
from .models import (
    AgentConfig,
    AgentStep,
    CommandRequest,
    EnvKind,
    EpisodeResult,
    EpisodeTrace,
    MetricsReport,
    RunConfig,
    ThoughtRecord,
)
from .opinions import sample_topk
from .prompts import render_response
from .scripted import ORACLE_THOUGHT, PROSE, build_scripted_backend
from .shopsim import Catalog, ShopEnv, load_catalog, load_goals
from .utils import derive_seed, dumps_line, iter_jsonl, write_jsonl

logger = logging.getLogger(__name__)

REPORT_FILES = {"markdown": "report.md", "csv": "report.csv"}


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        return RunConfig.model_validate(raw)
    except (OSError, yaml.YAMLError, ValidationError) as exc:
        raise ConfigurationError(f"bad run config {path}: {exc}") from exc


def save_run_config(config: RunConfig, path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False, allow_unicode=True)
    return path


def select_tasks(path: str, n: int, environment: EnvKind) -> list:
    """First n tasks of the file, in file order."""
    tasks = load_goals(path) if environment == "shop" else load_house_tasks(path)
    if len(tasks) < n:
        raise TaskSelectionError(f"{path} has {len(tasks)} tasks, {n} requested")
    return tasks[:n]


def make_env(config: RunConfig, task, catalog: Optional[Catalog]):
    cap = config.step_cap()
    if config.environment == "shop":
        return ShopEnv(catalog, task, max_steps=cap)
    return HouseEnv(task, max_steps=cap)


def model_label(config: RunConfig) -> str:
    kind = config.backend.kind
    base = config.backend.http.model if kind in ("http", "replay") else kind
    if kind == "expert" and config.expert is not None:
        base = config.expert.kind
    elif config.opinion_k > 0 and config.expert is not None:
        base = f"{base}+{config.expert.kind}" + (f"(top{config.opinion_k})" if config.opinion_k > 1 else "")
    return base


# --- one episode --------------------------------------------------------------

async def run_expert_episode(env, provider) -> EpisodeTrace:
    """Expert-only rollout: the top suggestion is executed directly."""
    steps: List[AgentStep] = []
    while not env.done:
        ranked = sample_topk(provider, env.observe(), 1)
        if not ranked:
            break
        action = ranked[0].action
        obs = env.execute(action)
        steps.append(AgentStep(index=len(steps), prompt=[], command=env.command_of(action), observation=obs.text))
    success, reward, committed = env.outcome()
    terminal = env.commit_label if committed else "step-cap"
    return EpisodeTrace(task_id=env.task_id, steps=steps, terminal=terminal, success=success, reward=reward)


def make_backend(config: RunConfig, env, run_dir: str, http: Optional[HttpChatBackend]):
    kind = config.backend.kind
    if kind == "replay":
        return ScriptedBackend.from_file(os.path.join(config.backend.fixture_dir, f"{env.task_id}.jsonl"))
    live = http if kind == "http" else build_scripted_backend(kind, env)
    if config.backend.record:
        return RecordingBackend(live, os.path.join(run_dir, "fixtures", f"{env.task_id}.jsonl"))
    return live


async def play(
    config: RunConfig,
    task,
    index: int,
    run_index: int,
    catalog: Optional[Catalog],
    run_dir: str,
    http: Optional[HttpChatBackend] = None,
    backend=None,
    serial_lock: Optional[asyncio.Lock] = None,
) -> Tuple[EpisodeResult, EpisodeTrace]:
    """Plays one task. `backend` overrides the configured one (replay verification uses it).

    Episodes whose backend declares `serial` run one at a time under `serial_lock`.
    """
    seed = derive_seed(config.seed, index, run_index)
    env = make_env(config, task, catalog)
    provider = build_expert(config.expert, env, seed) if config.expert is not None else None
    if config.backend.kind == "expert" and backend is None:
        trace = await run_expert_episode(env, provider)
    else:
        agent_cfg = AgentConfig(
            goal=env.instruction,
            tools=env.tools,
            max_steps=config.step_cap(),
            opinion_k=config.opinion_k,
            agreement_mode=config.agreement_mode,
            backend_id=config.backend.kind,
            seed=seed,
            context_capacity=config.context_capacity,
        )
        backend = backend or make_backend(config, env, run_dir, http)
        guard = serial_lock if serial_lock is not None and backend.serial else contextlib.nullcontext()
        async with guard:
            trace = await run_episode(env, backend, agent_cfg, provider if config.opinion_k > 0 else None)
    result = EpisodeResult(
        task_id=trace.task_id,
        success=trace.success,
        reward=trace.reward,
        steps=len(trace.steps),
        terminal=trace.terminal,
        agreements=trace.agreements,
    )
    return result, trace


async def write_trace(trace: EpisodeTrace, path: str) -> str:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    async with aiofiles.open(path, "wb") as f:
        await f.write(b"".join(dumps_line(s.model_dump(mode="json")) for s in trace.steps))
    return path


def task_id_of(task) -> str:
    return task.goal_id if hasattr(task, "goal_id") else task.task.task_id


async def _play_safely(config, task, index, run_index, catalog, run_dir, http, serial_lock) -> EpisodeResult:
    try:
        result, trace = await play(config, task, index, run_index, catalog, run_dir, http, serial_lock=serial_lock)
    except Exception as exc:
        # the suite goes on; the episode counts as a failure
        logger.exception("episode %s failed", task_id_of(task))
        result = EpisodeResult(
            task_id=task_id_of(task), success=False, reward=0.0, steps=0, terminal="parse-dead", error=str(exc)
        )
        trace = EpisodeTrace(task_id=result.task_id, terminal="parse-dead", success=False, reward=0.0)
    await write_trace(trace, os.path.join(run_dir, "traces", f"{result.task_id}.jsonl"))
    return result


# --- suite --------------------------------------------------------------------

def _load_inputs(config: RunConfig) -> Tuple[list, Optional[Catalog]]:
    catalog = load_catalog(config.catalog_file) if config.environment == "shop" else None
    tasks = select_tasks(config.task_file, config.first_n, config.environment)
    return tasks, catalog


async def run_benchmark(config: RunConfig) -> List[List[EpisodeResult]]:
    tasks, catalog = _load_inputs(config)
    os.makedirs(config.output_dir, exist_ok=True)
    save_run_config(config, os.path.join(config.output_dir, "run.yaml"))
    label = model_label(config)
    logger.info("%s: %d %s tasks x %d runs", label, len(tasks), config.environment, config.runs_to_average)

    http = HttpChatBackend(config.backend.http) if config.backend.kind == "http" else None
    sem = asyncio.Semaphore(config.workers)
    serial_lock = asyncio.Lock()
    all_runs: List[List[EpisodeResult]] = []
    reports: List[MetricsReport] = []
    try:
        for run_index in range(config.runs_to_average):
            run_dir = os.path.join(config.output_dir, f"run-{run_index}")

            async def one(i: int, task) -> EpisodeResult:
                async with sem:
                    return await _play_safely(config, task, i, run_index, catalog, run_dir, http, serial_lock)

            results = list(await asyncio.gather(*(one(i, t) for i, t in enumerate(tasks))))
            write_jsonl(os.path.join(run_dir, "results.jsonl"), [r.model_dump(mode="json") for r in results])
            report = compute_metrics(results, config.environment, label, config.opinion_k)
            with open(os.path.join(run_dir, "metrics.json"), "wb") as f:
                f.write(orjson.dumps(report.model_dump(mode="json"), option=orjson.OPT_INDENT_2))
            logger.info("run %d: success %.3f, reward %.3f", run_index, report.success_rate, report.avg_reward)
            reports.append(report)
            all_runs.append(results)
    finally:
        if http is not None:
            await http.aclose()

    write_reports(average_runs(reports), config.output_dir)
    return all_runs


def write_reports(report: MetricsReport, out_dir: str) -> Dict[str, str]:
    paths = {fmt: emit_report([report], fmt, os.path.join(out_dir, name)) for fmt, name in REPORT_FILES.items()}
    paths["agreement"] = emit_agreement_csv([report], os.path.join(out_dir, "agreement.csv"))
    return paths


def _run_dirs(out_dir: str) -> List[str]:
    dirs = sorted(glob.glob(os.path.join(out_dir, "run-*")), key=lambda d: int(d.rsplit("-", 1)[1]))
    if not dirs:
        raise ConfigurationError(f"no run-* directories under {out_dir}")
    return dirs


def load_results(path: str) -> List[EpisodeResult]:
    results = []
    for n, obj in iter_jsonl(path):
        try:
            results.append(EpisodeResult.model_validate(obj))
        except ValidationError as exc:
            raise DataFileError(n, str(exc)) from exc
    return results


def report(out_dir: str, fmt: str = "markdown") -> str:
    """Re-render the averaged report of a finished run directory."""
    if fmt not in REPORT_FILES:
        raise ValueError("unsupported report format: " + fmt)
    config = load_run_config(os.path.join(out_dir, "run.yaml"))
    label = model_label(config)
    reports = [
        compute_metrics(load_results(os.path.join(d, "results.jsonl")), config.environment, label, config.opinion_k)
        for d in _run_dirs(out_dir)
    ]
    merged = average_runs(reports)
    emit_agreement_csv([merged], os.path.join(out_dir, "agreement.csv"))
    return emit_report([merged], fmt, os.path.join(out_dir, REPORT_FILES[fmt]))


# --- replay verification ------------------------------------------------------

def load_trace(path: str) -> List[AgentStep]:
    steps = []
    for n, obj in iter_jsonl(path):
        try:
            steps.append(AgentStep.model_validate(obj))
        except ValidationError as exc:
            raise DataFileError(n, str(exc)) from exc
    return steps


def failing_response(error: Optional[str]) -> str:
    """A response that fails to parse with the same error as the recorded one."""
    prefix = "missing field: "
    if not error or not error.startswith(prefix):
        return PROSE
    body = {
        "thoughts": ORACLE_THOUGHT.model_dump(),
        "command": {"name": "x", "args": {"tool_input": ""}},
    }
    *parents, leaf = error[len(prefix):].split(".")
    node = body
    for key in parents:
        node = node[key]
    node.pop(leaf, None)
    return orjson.dumps(body).decode()


def responses_for(steps: Sequence[AgentStep]) -> List[str]:
    out = []
    for s in steps:
        if s.command is None:
            bad = failing_response(s.error)
            out += [bad, bad]
        else:
            out.append(render_response(s.thought or ThoughtRecord(), s.command))
    return out


async def replay(out_dir: str) -> Dict[str, bool]:
    """Re-run every recorded trace against a fresh environment; task id (per run) -> observations matched."""
    config = load_run_config(os.path.join(out_dir, "run.yaml"))
    tasks, catalog = _load_inputs(config)
    verdicts: Dict[str, bool] = {}
    for run_dir in _run_dirs(out_dir):
        run_index = int(run_dir.rsplit("-", 1)[1])
        errored = {r.task_id for r in load_results(os.path.join(run_dir, "results.jsonl")) if r.error}
        for i, task in enumerate(tasks):
            tid = task_id_of(task)
            if tid in errored:
                continue
            recorded = load_trace(os.path.join(run_dir, "traces", f"{tid}.jsonl"))
            key = f"run-{run_index}/{tid}"
            if config.backend.kind == "expert":
                env = make_env(config, task, catalog)
                observed = []
                for s in recorded:
                    observed.append(env.execute(env.action_of(s.command)).text)
            else:
                backend = ScriptedBackend.from_responses(responses_for(recorded))
                _, trace = await play(config, task, i, run_index, catalog, run_dir, backend=backend)
                observed = [s.observation for s in trace.steps]
            verdicts[key] = observed == [s.observation for s in recorded]
            if not verdicts[key]:
                logger.warning("replay mismatch for %s", key)
    return verdicts
