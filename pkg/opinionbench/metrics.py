from statistics import fmean
from typing import List, Optional, Sequence

from .errors import MetricsError
from .models import EnvKind, EpisodeResult, MetricsReport
from .opinions import agreement_summary

COMMITTED = ("purchased", "completed")


def compute_metrics(
    results: Sequence[EpisodeResult],
    environment: EnvKind,
    model: str = "",
    opinion_k: int = 0,
) -> MetricsReport:
    if not results:
        raise MetricsError("no episode results to score")
    n = len(results)
    successes = sum(1 for r in results if r.success)
    committed = sum(1 for r in results if r.terminal in COMMITTED)
    considered, disagreed = agreement_summary([a for r in results for a in r.agreements])
    return MetricsReport(
        model=model,
        environment=environment,
        opinion_k=opinion_k,
        n_episodes=n,
        success_rate=successes / n,
        avg_reward=fmean(r.reward for r in results),
        suite_reward=float(successes),
        precision=successes / committed if committed else None,
        purchase_or_completion_rate=committed / n,
        considered_ratio=considered,
        disagreed_ratio=disagreed,
    )


def _mean_defined(values: List[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return fmean(defined) if defined else None


def average_runs(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Field-wise mean of repeated runs over the same task list."""
    if not reports:
        raise MetricsError("no reports to average")
    first = reports[0]
    for r in reports[1:]:
        if r.n_episodes != first.n_episodes or r.environment != first.environment:
            raise MetricsError(
                f"runs disagree: {r.n_episodes} {r.environment} episodes vs {first.n_episodes} {first.environment}"
            )
    return MetricsReport(
        model=first.model,
        environment=first.environment,
        opinion_k=first.opinion_k,
        n_episodes=first.n_episodes,
        success_rate=fmean(r.success_rate for r in reports),
        avg_reward=fmean(r.avg_reward for r in reports),
        suite_reward=fmean(r.suite_reward for r in reports),
        precision=_mean_defined([r.precision for r in reports]),
        purchase_or_completion_rate=fmean(r.purchase_or_completion_rate for r in reports),
        considered_ratio=_mean_defined([r.considered_ratio for r in reports]),
        disagreed_ratio=_mean_defined([r.disagreed_ratio for r in reports]),
    )
