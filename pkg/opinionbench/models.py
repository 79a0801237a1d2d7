import math
import re
from decimal import Decimal
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from .config import settings
from .utils import normalize_action

Role = Literal["system", "human", "assistant"]
AgreementMode = Literal["any-match", "exact-top1"]
Terminal = Literal["purchased", "completed", "step-cap", "parse-dead"]
EnvKind = Literal["shop", "house"]
HouseFamily = Literal[
    "pick_and_place_simple",
    "pick_clean_then_place_in_recep",
    "pick_heat_then_place_in_recep",
    "pick_cool_then_place_in_recep",
    "look_at_obj_in_light",
    "pick_two_obj_and_place",
]
ExpertName = Literal["rule_shop", "heuristic_shop", "heuristic_house", "random", "repeater"]
QualityTier = Literal["with-image-analog", "without-image-analog", "full-plan", "greedy"]
BackendKind = Literal["http", "replay", "oracle", "follower", "contrarian", "prose", "expert"]


# --- agent core ---------------------------------------------------------------

class ChatMessage(BaseModel):
    role: Role
    content: str


class ToolDemo(BaseModel):
    observation: str
    command: str


class ToolSpec(BaseModel):
    name: str
    description: str
    demos: List[ToolDemo] = Field(min_length=1, max_length=3)

    @field_validator("name")
    @classmethod
    def _name_is_identifier(cls, v: str) -> str:
        if not v or any(ch.isspace() for ch in v):
            raise ValueError("tool name must be nonempty and contain no whitespace")
        return v


class ThoughtRecord(BaseModel):
    text: str = ""
    reasoning: str = ""
    plan: str = ""
    criticism: str = ""


class CommandRequest(BaseModel):
    name: str
    tool_input: str = ""


class AgentConfig(BaseModel):
    goal: str = Field(min_length=1)
    tools: List[ToolSpec] = Field(min_length=1)
    max_steps: int = Field(ge=1)
    opinion_k: int = Field(0, ge=0)
    agreement_mode: AgreementMode = "any-match"
    backend_id: str = "scripted"
    seed: int = Field(0, ge=0, lt=2**64)
    context_capacity: int = Field(12000, ge=256)

    @model_validator(mode="after")
    def _unique_tools(self) -> "AgentConfig":
        names = [t.name for t in self.tools]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate tool names: {names}")
        return self

    def tool(self, name: str) -> Optional[ToolSpec]:
        for t in self.tools:
            if t.name == name:
                return t
        return None


# --- opinions -----------------------------------------------------------------

class Opinion(BaseModel):
    action: str = Field(min_length=1)
    score: Optional[float] = None


class OpinionPrompt(BaseModel):
    rendered: str
    k: int = Field(ge=1)


class AgreementRecord(BaseModel):
    step: int
    chosen: str
    shown: List[str]
    mode: AgreementMode
    agreed: bool


class ScoredAction(BaseModel):
    action: str = Field(min_length=1)
    score: float

    @field_validator("score")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("score must be finite")
        return v


class AgentStep(BaseModel):
    # serialized field set is the trace line format
    index: int = Field(ge=0)
    prompt: List[ChatMessage]
    thought: Optional[ThoughtRecord] = None
    command: Optional[CommandRequest] = None
    observation: str
    opinions: List[Opinion] = Field(default_factory=list)
    agreed: Optional[bool] = None
    error: Optional[str] = None
    agreement: Optional[AgreementRecord] = Field(default=None, exclude=True)


class EpisodeTrace(BaseModel):
    task_id: str
    steps: List[AgentStep] = Field(default_factory=list)
    terminal: Terminal
    success: bool
    reward: float

    @property
    def agreements(self) -> List[AgreementRecord]:
        return [s.agreement for s in self.steps if s.agreement is not None]


# --- backends -----------------------------------------------------------------

class BackendConfig(BaseModel):
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4"
    temperature: float = Field(0.01, ge=0.0, le=2.0)
    timeout: float = Field(default_factory=lambda: settings.default_timeout, gt=0)
    max_retries: int = Field(3, ge=0)
    api_key_env: Optional[str] = "OPENAI_API_KEY"
    concurrency: int = Field(3, ge=1)
    backoff_base: float = Field(1.0, ge=0.0)
    backoff_factor: float = Field(2.0, ge=1.0)
    jitter: float = Field(0.25, ge=0.0)
    role_map: Dict[str, str] = Field(
        default_factory=lambda: {"system": "system", "human": "user", "assistant": "assistant"}
    )
    content_path: List[str] = Field(default_factory=lambda: ["choices", "0", "message", "content"])


class FixtureEntry(BaseModel):
    match: int | str
    response: str


class Fixture(BaseModel):
    entries: List[FixtureEntry] = Field(default_factory=list)
    cursor: int = Field(0, ge=0)


# --- shop ---------------------------------------------------------------------

class Product(BaseModel):
    id: str = Field(min_length=1)
    title: str
    description: str = ""
    features: str = ""
    reviews: str = ""
    price: Decimal = Field(gt=0)
    options: Dict[str, List[str]] = Field(default_factory=dict)
    attributes: Tuple[str, ...] = ()
    product_type: str

    @field_validator("options")
    @classmethod
    def _options_nonempty(cls, v: Dict[str, List[str]]) -> Dict[str, List[str]]:
        for name, values in v.items():
            if not values:
                raise ValueError(f"option {name!r} has no values")
        return v

    @field_validator("attributes")
    @classmethod
    def _attributes_as_set(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        return tuple(sorted(set(v)))


class ShoppingGoal(BaseModel):
    goal_id: str
    instruction: str = Field(min_length=1)
    required_attributes: Tuple[str, ...] = ()
    required_options: Dict[str, str] = Field(default_factory=dict)
    price_cap: Decimal = Field(gt=0)
    target_type: str

    @field_validator("required_attributes")
    @classmethod
    def _attributes_as_set(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        return tuple(sorted(set(v)))


# --- house --------------------------------------------------------------------

# Ids are stored in the form actions are matched in: lowercase, single spaces.

class ReceptacleSpec(BaseModel):
    id: str = Field(min_length=1)
    openable: bool = False

    @field_validator("id")
    @classmethod
    def _canonical(cls, v: str) -> str:
        return normalize_action(v)


class ObjectSpec(BaseModel):
    id: str = Field(min_length=1)
    object_class: str
    location: str

    @field_validator("id", "object_class", "location")
    @classmethod
    def _canonical(cls, v: str) -> str:
        return normalize_action(v)


APPLIANCE_CLASSES = ("sinkbasin", "microwave", "fridge", "desklamp")


def class_of(entity_id: str) -> str:
    """'countertop 1' -> 'countertop'."""
    return entity_id.rsplit(" ", 1)[0]


class WorldSpec(BaseModel):
    name: str = "room"
    receptacles: List[ReceptacleSpec] = Field(min_length=1)
    objects: List[ObjectSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _consistent(self) -> "WorldSpec":
        rids = [r.id for r in self.receptacles]
        oids = [o.id for o in self.objects]
        if len(set(rids)) != len(rids) or len(set(oids)) != len(oids) or set(rids) & set(oids):
            raise ValueError("receptacle and object ids must be unique")
        for o in self.objects:
            if o.location not in rids:
                raise ValueError(f"{o.id} is placed in undeclared receptacle {o.location!r}")
        return self

    @property
    def appliances(self) -> List[str]:
        return [r.id for r in self.receptacles if class_of(r.id) in APPLIANCE_CLASSES]


TASK_ID_RE = re.compile(r"^(?P<family>[a-z_]+)-[A-Za-z]+-None-[A-Za-z]+-\d+$")


class HouseTask(BaseModel):
    task_id: str
    family: HouseFamily
    object_class: str
    target: str

    @field_validator("object_class", "target")
    @classmethod
    def _canonical(cls, v: str) -> str:
        return normalize_action(v)

    @model_validator(mode="after")
    def _task_id_format(self) -> "HouseTask":
        m = TASK_ID_RE.match(self.task_id)
        if not m or m.group("family") != self.family:
            raise ValueError(f"task id {self.task_id!r} does not follow <family>-<Object>-None-<Receptacle>-<n>")
        return self


class HouseEpisode(BaseModel):
    """One line of a house task file: the world and the task played in it."""
    world: WorldSpec
    task: HouseTask


# --- harness ------------------------------------------------------------------

class EpisodeResult(BaseModel):
    task_id: str
    success: bool
    reward: float
    steps: int = Field(ge=0)
    terminal: Terminal
    agreements: List[AgreementRecord] = Field(default_factory=list)
    error: Optional[str] = None

    @model_validator(mode="after")
    def _success_needs_commit(self) -> "EpisodeResult":
        if self.success and self.terminal not in ("purchased", "completed"):
            raise ValueError("a successful episode must end purchased or completed")
        return self


class MetricsReport(BaseModel):
    model: str = ""
    environment: EnvKind
    opinion_k: int = 0
    n_episodes: int = Field(ge=1)
    success_rate: float = Field(ge=0.0, le=1.0)
    avg_reward: float
    suite_reward: float = 0.0
    precision: Optional[float] = Field(None, ge=0.0, le=1.0)
    purchase_or_completion_rate: float = Field(ge=0.0, le=1.0)
    considered_ratio: Optional[float] = Field(None, ge=0.0, le=1.0)
    disagreed_ratio: Optional[float] = Field(None, ge=0.0, le=1.0)


# expert kind -> tiers it accepts, the first is its default
EXPERT_TIERS: Dict[str, Tuple[str, ...]] = {
    "heuristic_shop": ("with-image-analog", "without-image-analog"),
    "heuristic_house": ("full-plan", "greedy"),
    "repeater": ("full-plan", "greedy"),
}


class ExpertSpec(BaseModel):
    kind: ExpertName
    tier: Optional[QualityTier] = None
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _tier_fits_kind(self) -> "ExpertSpec":
        tiers = EXPERT_TIERS.get(self.kind, ())
        if self.tier is None:
            self.tier = tiers[0] if tiers else None
        elif self.tier not in tiers:
            raise ValueError(f"expert {self.kind} has no {self.tier} tier")
        return self


class BackendSpec(BaseModel):
    kind: BackendKind = "oracle"
    http: BackendConfig = Field(default_factory=BackendConfig)
    fixture_dir: Optional[str] = None
    record: bool = False


class RunConfig(BaseModel):
    name: str = "run"
    environment: EnvKind
    task_file: str
    catalog_file: Optional[str] = None
    first_n: int = Field(50, ge=1)
    backend: BackendSpec = Field(default_factory=BackendSpec)
    expert: Optional[ExpertSpec] = None
    opinion_k: int = Field(0, ge=0)
    agreement_mode: AgreementMode = "any-match"
    max_steps: Optional[int] = Field(None, ge=1)
    context_capacity: int = Field(12000, ge=256)
    runs_to_average: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    output_dir: str = Field(default_factory=lambda: f"{settings.runs_dir}/run")
    workers: int = Field(default_factory=lambda: settings.default_workers, ge=1)

    @model_validator(mode="after")
    def _coherent(self) -> "RunConfig":
        if self.environment == "shop" and not self.catalog_file:
            raise ValueError("shop runs need catalog_file")
        if (self.opinion_k > 0 or self.backend.kind == "expert") and self.expert is None:
            raise ValueError("opinions and expert rollouts need an expert")
        if self.backend.kind == "replay" and not self.backend.fixture_dir:
            raise ValueError("replay backend needs fixture_dir")
        if self.backend.record and self.backend.kind in ("replay", "expert"):
            raise ValueError(f"{self.backend.kind} runs make no backend calls to record")
        return self

    def step_cap(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        expert_only = self.backend.kind == "expert"
        if self.environment == "shop":
            return 100 if expert_only else 20
        return 50 if expert_only else 35
