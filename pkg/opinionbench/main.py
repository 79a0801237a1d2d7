import uuid
from functools import partial
from typing import List, Optional

from cachetools import TTLCache, cached
from cachetools.keys import hashkey
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import ORJSONResponse
from pydantic import BaseModel, Field

from .config import settings
from .errors import EpisodeOver, OpinionBenchError, UnknownTool
from .housesim import HouseEnv, load_house_tasks
from .models import CommandRequest, EnvKind, ToolSpec
from .shopsim import ShopEnv, load_catalog, load_goals

app = FastAPI(title=settings.app_name, default_response_class=ORJSONResponse)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"]
)

sessions: TTLCache = TTLCache(maxsize=settings.max_sessions, ttl=settings.session_ttl_sec)
_data_cache: TTLCache = TTLCache(maxsize=8, ttl=settings.session_ttl_sec)


class SessionCreate(BaseModel):
    environment: EnvKind
    task_index: int = Field(0, ge=0)
    max_steps: Optional[int] = Field(None, ge=1)


class StepRequest(BaseModel):
    tool: str
    tool_input: str = ""


class SessionView(BaseModel):
    session_id: str
    environment: EnvKind
    task_id: str
    instruction: str
    observation: str
    available_actions: List[str]
    tools: List[ToolSpec]
    steps_used: int
    done: bool
    committed: bool
    success: bool
    reward: float


@cached(_data_cache, key=partial(hashkey, "catalog"))
def _catalog(path: str):
    return load_catalog(path)


@cached(_data_cache, key=partial(hashkey, "shop_goals"))
def _shop_goals(path: str):
    return load_goals(path)


@cached(_data_cache, key=partial(hashkey, "house_tasks"))
def _house_tasks(path: str):
    return load_house_tasks(path)


def _view(session_id: str, env) -> SessionView:
    success, reward, committed = env.outcome()
    return SessionView(
        session_id=session_id,
        environment=env.kind,
        task_id=env.task_id,
        instruction=env.instruction,
        observation=env.observation,
        available_actions=[] if env.done else env.available_actions(),
        tools=env.tools,
        steps_used=env.state.steps_used,
        done=env.done,
        committed=committed,
        success=success,
        reward=reward,
    )


def _session(session_id: str):
    env = sessions.get(session_id)
    if env is None:
        raise HTTPException(status_code=404, detail=f"unknown or expired session {session_id}")
    return env


@app.get("/health")
async def health():
    return {"ok": True}


@app.post("/sessions", response_model=SessionView)
async def create_session(req: SessionCreate):
    try:
        if req.environment == "shop":
            goals = _shop_goals(settings.shop_goal_file)
            if req.task_index >= len(goals):
                raise HTTPException(status_code=404, detail=f"no shop goal #{req.task_index}")
            env = ShopEnv(_catalog(settings.shop_catalog_file), goals[req.task_index], max_steps=req.max_steps or 20)
        else:
            tasks = _house_tasks(settings.house_task_file)
            if req.task_index >= len(tasks):
                raise HTTPException(status_code=404, detail=f"no house task #{req.task_index}")
            env = HouseEnv(tasks[req.task_index], max_steps=req.max_steps or 35)
    except (OpinionBenchError, OSError) as exc:
        raise HTTPException(status_code=500, detail=str(exc))
    session_id = uuid.uuid4().hex
    sessions[session_id] = env
    return _view(session_id, env)


@app.post("/sessions/{session_id}/step", response_model=SessionView)
async def step_session(session_id: str, req: StepRequest):
    env = _session(session_id)
    try:
        env.step(CommandRequest(name=req.tool, tool_input=req.tool_input))
    except UnknownTool as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    except EpisodeOver as exc:
        raise HTTPException(status_code=409, detail=str(exc))
    return _view(session_id, env)


@app.get("/sessions/{session_id}", response_model=SessionView)
async def get_session(session_id: str):
    return _view(session_id, _session(session_id))
