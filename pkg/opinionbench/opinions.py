"""Additional opinions: expert sampling, the suggestion prompt, agreement bookkeeping."""
import re
from typing import Any, Dict, List, Optional, Protocol, Sequence

from .errors import UndefinedRatio
from .models import AgreementMode, AgreementRecord, Opinion, OpinionPrompt, ScoredAction
from .utils import normalize_action

SINGLE_TEMPLATE = (
    "Here's one suggestion for the command: {actions}.\n"
    "Please use this suggestion as a reference and make your own judgement."
)
PLURAL_TEMPLATE = (
    "Here's a few suggestions for the command: {actions}.\n"
    "Please use these suggestions as a reference and make your own judgement."
)
MARKER = "suggestion for the command"

_BLOCK_RE = re.compile(
    r"suggestions? for the command: \[(?P<body>.*)\]\.\nPlease use th(?:is|ese) suggestions?",
    re.DOTALL,
)


class ExpertProvider(Protocol):
    def score(self, observation: Any) -> List[ScoredAction]: ...


def sample_topk(provider: ExpertProvider, observation: Any, k: int) -> List[Opinion]:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    best: Dict[str, float] = {}
    for sa in provider.score(observation):
        if sa.action not in best or sa.score > best[sa.action]:
            best[sa.action] = sa.score
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return [Opinion(action=a, score=s) for a, s in ranked[:k]]


_QUOTED_RE = re.compile(r"'((?:[^'\\]|\\.)*)'", re.DOTALL)
_ESCAPE_RE = re.compile(r"\\(.)", re.DOTALL)


def _quote(action: str) -> str:
    return "'" + action.replace("\\", "\\\\").replace("'", "\\'") + "'"


def _bracket(actions: Sequence[str]) -> str:
    return "[" + "; ".join(_quote(a) for a in actions) + "]"


def render_opinion_prompt(opinions: Sequence[Opinion]) -> OpinionPrompt:
    if not opinions:
        raise ValueError("render_opinion_prompt needs at least one opinion")
    actions = [o.action for o in opinions]
    template = SINGLE_TEMPLATE if len(actions) == 1 else PLURAL_TEMPLATE
    return OpinionPrompt(rendered=template.format(actions=_bracket(actions)), k=len(actions))


def parse_suggestions(text: str) -> List[str]:
    """Recover the suggested actions from a rendered opinion block, if any."""
    m = _BLOCK_RE.search(text or "")
    if not m:
        return []
    body = m.group("body")
    actions: List[str] = []
    pos = 0
    while True:
        q = _QUOTED_RE.match(body, pos)
        if not q:
            return []
        actions.append(_ESCAPE_RE.sub(r"\1", q.group(1)))
        pos = q.end()
        if pos == len(body):
            return actions
        if not body.startswith("; ", pos):
            return []
        pos += 2


def detect_agreement(chosen: str, shown: Sequence[str], mode: AgreementMode) -> bool:
    if not shown:
        return False
    target = normalize_action(chosen)
    candidates = shown[:1] if mode == "exact-top1" else shown
    return any(normalize_action(s) == target for s in candidates)


def judge(step: int, chosen: str, shown: Sequence[str], mode: AgreementMode) -> AgreementRecord:
    return AgreementRecord(
        step=step,
        chosen=chosen,
        shown=list(shown),
        mode=mode,
        agreed=detect_agreement(chosen, shown, mode),
    )


def agreement_ratio(records: Sequence[AgreementRecord]) -> float:
    if not records:
        raise UndefinedRatio()
    return sum(1 for r in records if r.agreed) / len(records)


def disagreement_ratio(records: Sequence[AgreementRecord]) -> float:
    return 1.0 - agreement_ratio(records)


def agreement_summary(records: Sequence[AgreementRecord]) -> tuple[Optional[float], Optional[float]]:
    """(considered, disagreed), both None when no opinion was ever shown."""
    if not records:
        return None, None
    considered = agreement_ratio(records)
    return considered, 1.0 - considered
