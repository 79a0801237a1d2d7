import csv
import os
from typing import Dict, List, Optional, Sequence

from .models import MetricsReport

RATE_LABELS = {"shop": "Purchase Rate", "house": "Completion Rate"}

HEADERS = {
    "model": "Model",
    "success_rate": "Success Rate",
    "reward": "Reward",
    "precision": "Precision",
    "rate": None,  # per environment, see rate_label()
}

AGREEMENT_COLUMNS = ["model", "k", "considered", "disagreed"]


def rate_label(reports: Sequence[MetricsReport]) -> str:
    kinds = {r.environment for r in reports}
    if len(kinds) == 1:
        return RATE_LABELS[kinds.pop()]
    return "Purchase/Completion Rate"


def fmt_ratio(value: Optional[float]) -> str:
    return "N/A" if value is None else f"{value:.3f}"


def fmt_reward(report: MetricsReport) -> str:
    if report.environment == "shop":
        return f"{report.avg_reward:.3f}"
    # house reward is a count of solved tasks
    r = report.suite_reward
    return str(int(r)) if r == int(r) else f"{r:.1f}"


def to_records(reports: Sequence[MetricsReport]) -> List[Dict[str, str]]:
    rows = []
    for r in reports:
        rows.append({
            "model": r.model,
            "success_rate": fmt_ratio(r.success_rate),
            "reward": fmt_reward(r),
            "precision": fmt_ratio(r.precision),
            "rate": fmt_ratio(r.purchase_or_completion_rate),
        })
    return rows


def _headers(reports: Sequence[MetricsReport]) -> Dict[str, str]:
    return {k: (v if v is not None else rate_label(reports)) for k, v in HEADERS.items()}


def render_markdown(reports: Sequence[MetricsReport]) -> str:
    headers = _headers(reports)
    columns = list(headers)
    lines = [
        "| " + " | ".join(headers[c] for c in columns) + " |",
        "|" + "|".join("---" for _ in columns) + "|",
    ]
    for row in to_records(reports):
        lines.append("| " + " | ".join(row[c] for c in columns) + " |")
    return "\n".join(lines) + "\n"


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def emit_report(reports: Sequence[MetricsReport], fmt: str, path: str) -> str:
    if not reports:
        raise ValueError("no reports to emit")
    _ensure_parent(path)
    if fmt == "markdown":
        with open(path, "w", encoding="utf-8") as f:
            f.write(render_markdown(reports))
        return path
    if fmt == "csv":
        headers = _headers(reports)
        columns = list(headers)
        # Excel-friendly CSV
        with open(path, "w", encoding="utf-8-sig", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=[headers[c] for c in columns])
            writer.writeheader()
            for row in to_records(reports):
                writer.writerow({headers[k]: row[k] for k in columns})
        return path
    raise ValueError("unsupported report format: " + fmt)


def emit_agreement_csv(reports: Sequence[MetricsReport], path: str) -> str:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8-sig", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=AGREEMENT_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow({
                "model": r.model,
                "k": r.opinion_k,
                "considered": fmt_ratio(r.considered_ratio),
                "disagreed": fmt_ratio(r.disagreed_ratio),
            })
    return path
