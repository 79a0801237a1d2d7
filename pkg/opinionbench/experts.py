"""Expert policies that produce scored action suggestions for the agent."""
import logging
import random
from typing import Any, Dict, List, Optional

import yaml

from .config import settings
from .errors import ConfigurationError, EpisodeOver
from .housesim import HouseObservation, plan
from .models import ExpertSpec, QualityTier, ScoredAction, ShoppingGoal, class_of
from .shopsim import BACK, BUY, TABS, Catalog, ShopObservation
from .utils import derive_seed, normalize_action, tokenize

logger = logging.getLogger(__name__)

DEFAULT_RULES = {
    "stopwords": [
        "i", "a", "an", "the", "am", "is", "are", "want", "looking", "for", "that", "with", "and",
        "of", "to", "in", "me", "my", "need", "lower", "than", "price", "dollars", "under",
    ],
    "shop": {
        "image_bonus": 0.5,
        "option_match": 1.0,
        "option_other": 0.0,
        "tab": 0.1,
        "buy_ready": 1.0,
        "buy_early": 0.2,
        "back": 0.1,
    },
    "house": {
        "plan_step": 1.0,
        "target_go": 0.3,
        "look": 0.1,
        "other": 0.0,
        "greedy_follow": 0.7,
        "greedy_detour": 0.1,
    },
    "repeater": {"warmup_steps": 3},
}


def load_rules(path: Optional[str] = None) -> Dict[str, Any]:
    try:
        with open(path or settings.expert_rules_file, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
    except Exception:
        logger.debug("expert rules file unavailable, using built-in defaults")
        return DEFAULT_RULES
    rules = {}
    for key, default in DEFAULT_RULES.items():
        value = loaded.get(key, default)
        rules[key] = {**default, **value} if isinstance(default, dict) and isinstance(value, dict) else value
    return rules


# --- shop ---------------------------------------------------------------------

def rule_shop_act(obs: ShopObservation) -> str:
    """Search the instruction, take the first hit, buy it as-is."""
    if obs.phase == "search":
        return f"search {obs.instruction}"
    if obs.phase == "results":
        return f"click {obs.page_items[0]}" if obs.page_items else f"click {BACK}"
    if obs.phase == "item":
        return f"click {BUY}"
    raise EpisodeOver()


class RuleShopPolicy:
    def score(self, observation: ShopObservation) -> List[ScoredAction]:
        if observation.phase == "terminal":
            return []
        return [ScoredAction(action=rule_shop_act(observation), score=1.0)]


class HeuristicShopExpert:
    """Scores shop pages against the goal; the image tier also sees hidden attributes."""

    def __init__(
        self,
        goal: ShoppingGoal,
        catalog: Catalog,
        tier: QualityTier = "with-image-analog",
        rules: Optional[Dict[str, Any]] = None,
    ) -> None:
        self.goal = goal
        self.catalog = catalog
        self.tier = tier
        self.rules = rules or load_rules()
        self.stopwords = set(self.rules["stopwords"])
        self.goal_tokens = {
            t for t in tokenize(goal.instruction + " " + " ".join(goal.required_attributes))
            if t not in self.stopwords
        }

    def query(self) -> str:
        words = [t for t in tokenize(self.goal.instruction) if t not in self.stopwords]
        return " ".join(words) or self.goal.instruction

    def item_score(self, item_id: str) -> float:
        p = self.catalog.get(item_id)
        if p is None:
            return 0.0
        s = float(len(set(tokenize(p.title)) & self.goal_tokens))
        if self.tier == "with-image-analog" and set(self.goal.required_attributes) <= set(p.attributes):
            s += self.rules["shop"]["image_bonus"]
        return s

    def score(self, observation: ShopObservation) -> List[ScoredAction]:
        w = self.rules["shop"]
        if observation.phase == "search":
            return [ScoredAction(action=f"search {self.query()}", score=1.0)]
        if observation.phase == "results":
            if not observation.page_items:
                return [ScoredAction(action=f"click {BACK}", score=w["back"])]
            return [ScoredAction(action=f"click {i}", score=self.item_score(i)) for i in observation.page_items]
        if observation.phase != "item":
            return []

        p = self.catalog.get(observation.item_id)
        wanted = self.goal.required_options
        out: List[ScoredAction] = []
        for name, values in p.options.items():
            for v in values:
                matches = name in wanted and normalize_action(v) == normalize_action(wanted[name])
                if matches and observation.selected.get(name) == v:
                    continue
                out.append(ScoredAction(action=f"click {v}", score=w["option_match"] if matches else w["option_other"]))
        out += [ScoredAction(action=f"click {t}", score=w["tab"]) for t in TABS]
        ready = all(
            normalize_action(observation.selected.get(name, "")) == normalize_action(value)
            for name, value in wanted.items()
            if name in p.options
        )
        out.append(ScoredAction(action=f"click {BUY}", score=w["buy_ready"] if ready else w["buy_early"]))
        return out


# --- house --------------------------------------------------------------------

class HeuristicHouseExpert:
    """Puts the next step of the shortest plan first; [] once the goal holds.

    The greedy tier only keeps to the plan on a seeded share of steps (`greedy_follow`);
    on the others it ranks one of the remaining listed actions above the plan step.
    """

    def __init__(
        self,
        rules: Optional[Dict[str, Any]] = None,
        tier: QualityTier = "full-plan",
        seed: int = 0,
    ) -> None:
        self.rules = rules or load_rules()
        self.tier = tier
        self.seed = seed

    def score(self, observation: HouseObservation) -> List[ScoredAction]:
        steps = plan(observation.world, observation.state, observation.task)
        if not steps:
            return []
        w = self.rules["house"]
        nxt = steps[0]
        out = [ScoredAction(action=nxt, score=w["plan_step"])]
        for a in observation.available_actions:
            if a == nxt:
                continue
            if a.startswith("go to ") and class_of(a[len("go to "):]) == observation.task.target:
                s = w["target_go"]
            elif a == "look":
                s = w["look"]
            else:
                s = w["other"]
            out.append(ScoredAction(action=a, score=s))
        if self.tier == "greedy" and len(out) > 1:
            rng = random.Random(derive_seed(self.seed, observation.steps_used))
            if rng.random() >= w["greedy_follow"]:
                detour = rng.randrange(1, len(out))
                out[detour] = ScoredAction(action=out[detour].action, score=w["plan_step"] + w["greedy_detour"])
        return out


class RepeaterExpert:
    """Helpful for a few steps, then suggests walking to the same receptacle forever."""

    def __init__(self, seed: int, inner: Optional[HeuristicHouseExpert] = None, warmup: Optional[int] = None) -> None:
        self.seed = seed
        self.inner = inner or HeuristicHouseExpert()
        self.warmup = warmup if warmup is not None else int(self.inner.rules["repeater"]["warmup_steps"])
        self.calls = 0
        self.fixed: Optional[str] = None

    def score(self, observation: HouseObservation) -> List[ScoredAction]:
        self.calls += 1
        if self.calls <= self.warmup:
            return self.inner.score(observation)
        if self.fixed is None:
            rids = sorted(r.id for r in observation.world.receptacles)
            self.fixed = f"go to {random.Random(self.seed).choice(rids)}"
        return [ScoredAction(action=self.fixed, score=1.0)]


# --- either environment -------------------------------------------------------

def random_suggest(observation: Any, seed: int) -> List[ScoredAction]:
    actions = list(observation.available_actions)
    if not actions:
        return []
    rng = random.Random(derive_seed(seed, observation.steps_used))
    return [ScoredAction(action=rng.choice(actions), score=1.0)]


class RandomExpert:
    def __init__(self, seed: int) -> None:
        self.seed = seed

    def score(self, observation: Any) -> List[ScoredAction]:
        return random_suggest(observation, self.seed)


SHOP_EXPERTS = ("rule_shop", "heuristic_shop", "random")
HOUSE_EXPERTS = ("heuristic_house", "repeater", "random")


def build_expert(spec: ExpertSpec, env: Any, seed: int, rules: Optional[Dict[str, Any]] = None):
    allowed = SHOP_EXPERTS if env.kind == "shop" else HOUSE_EXPERTS
    if spec.kind not in allowed:
        raise ConfigurationError(f"expert {spec.kind} does not run in the {env.kind} environment")
    seed = spec.seed if spec.seed is not None else seed
    if spec.kind == "rule_shop":
        return RuleShopPolicy()
    if spec.kind == "heuristic_shop":
        return HeuristicShopExpert(env.goal, env.catalog, spec.tier, rules)
    if spec.kind == "heuristic_house":
        return HeuristicHouseExpert(rules, spec.tier, seed)
    if spec.kind == "repeater":
        return RepeaterExpert(seed, HeuristicHouseExpert(rules, spec.tier, seed))
    return RandomExpert(seed)
