"""Aggregate per-item results into per-model metric tables.

The table layout mirrors the evaluation protocol: three fact-metric
percentages, rubric means on the 1-5 scale, an overall average of those
six columns (a mixed-scale mean kept for comparability, not a recommended
statistic), and length-adherence percentages. Best scores per column are
bolded, second-best underlined; ties all receive the higher marker.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

FINESURE_KEYS = ("faithfulness", "completeness", "conciseness")

# Canonical rubric ordering for table columns; extras follow alphabetically.
_PREFERRED_RUBRIC_ORDER = ("FACTUAL_VALIDITY", "HONESTY", "COMPLETENESS")


def table_average(values: Sequence[float]) -> float:
    """Plain mean of the metric columns (percentages and Likert means mixed)."""
    if not values:
        raise ValueError("no metric values to average")
    return sum(values) / len(values)


@dataclass
class ModelReport:
    model_name: str
    mixture_flags: tuple[bool, bool, bool] | None = None
    finesure: dict[str, float] = field(default_factory=dict)  # percentages 0..100
    rubric_means: dict[str, float] = field(default_factory=dict)  # 1..5
    length_adherence: dict[str, float] = field(default_factory=dict)  # label -> pct
    avg: float | None = None
    item_counts: dict = field(default_factory=dict)

    @classmethod
    def from_metrics(
        cls,
        model_name: str,
        *,
        finesure: dict[str, float] | None = None,
        rubric_means: dict[str, float] | None = None,
        mixture_flags: tuple[bool, bool, bool] | None = None,
        length_adherence: dict[str, float] | None = None,
        item_counts: dict | None = None,
    ) -> "ModelReport":
        finesure = dict(finesure or {})
        rubric_means = dict(rubric_means or {})
        metric_values = [finesure[k] for k in FINESURE_KEYS if k in finesure]
        metric_values += list(rubric_means.values())
        return cls(
            model_name=model_name,
            mixture_flags=mixture_flags,
            finesure=finesure,
            rubric_means=rubric_means,
            length_adherence=dict(length_adherence or {}),
            avg=table_average(metric_values) if metric_values else None,
            item_counts=dict(item_counts or {}),
        )

    def to_json_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "mixture_flags": list(self.mixture_flags) if self.mixture_flags else None,
            "finesure": dict(self.finesure),
            "rubric_means": dict(self.rubric_means),
            "length_adherence": dict(self.length_adherence),
            "avg": self.avg,
            "item_counts": dict(self.item_counts),
        }


def aggregate(
    results: Iterable[dict],
    model_name: str,
    flags: tuple[bool, bool, bool] | None = None,
) -> ModelReport:
    """Fold per-item result rows into one ModelReport.

    Items missing a metric (judge failure) are excluded from that metric's
    mean and counted, never averaged as zero. Metrics with zero included
    items are absent from the report.
    """
    rows = list(results)
    total = len(rows)

    finesure_sums = {k: 0.0 for k in FINESURE_KEYS}
    finesure_n = 0
    rubric_sums: dict[str, float] = {}
    rubric_ns: dict[str, int] = {}
    length_adherent: dict[str, int] = {}
    length_n: dict[str, int] = {}

    for row in rows:
        fs = row.get("finesure")
        if fs is not None:
            finesure_n += 1
            for k in FINESURE_KEYS:
                finesure_sums[k] += float(fs[k])
        for name, verdict in (row.get("rubrics") or {}).items():
            rubric_sums[name] = rubric_sums.get(name, 0.0) + float(verdict["score"])
            rubric_ns[name] = rubric_ns.get(name, 0) + 1
        length = row.get("length")
        if length is not None:
            label = f"{length['target']} {length['unit']}"
            length_n[label] = length_n.get(label, 0) + 1
            length_adherent[label] = length_adherent.get(label, 0) + (1 if length["adherent"] else 0)

    finesure = (
        {k: 100.0 * finesure_sums[k] / finesure_n for k in FINESURE_KEYS}
        if finesure_n
        else {}
    )
    rubric_means = {name: rubric_sums[name] / rubric_ns[name] for name in rubric_sums}
    adherence = {
        label: 100.0 * length_adherent[label] / length_n[label] for label in length_n
    }
    included = {"finesure": finesure_n}
    excluded = {"finesure": total - finesure_n}
    for name, n in rubric_ns.items():
        included[f"rubric:{name}"] = n
        excluded[f"rubric:{name}"] = total - n
    for label, n in length_n.items():
        included[f"length:{label}"] = n
        excluded[f"length:{label}"] = total - n

    return ModelReport.from_metrics(
        model_name,
        finesure=finesure,
        rubric_means=rubric_means,
        mixture_flags=flags,
        length_adherence=adherence,
        item_counts={"total": total, "included": included, "excluded": excluded},
    )


# --- rendering --------------------------------------------------------------


@dataclass(frozen=True)
class _Column:
    key: str        # "finesure.faithfulness", "rubric.HONESTY", "avg", "length.50 words"
    title: str

    def value(self, report: ModelReport) -> float | None:
        kind, _, rest = self.key.partition(".")
        if kind == "finesure":
            return report.finesure.get(rest)
        if kind == "rubric":
            return report.rubric_means.get(rest)
        if kind == "avg":
            return report.avg
        if kind == "length":
            return report.length_adherence.get(rest)
        raise KeyError(self.key)


def _prettify(name: str) -> str:
    return " ".join(w.capitalize() for w in name.replace("_", " ").split())


def _columns_for(reports: Sequence[ModelReport]) -> list[_Column]:
    columns = [
        _Column(f"finesure.{k}", _prettify(k))
        for k in FINESURE_KEYS
        if any(k in r.finesure for r in reports)
    ]
    seen_rubrics: list[str] = []
    for name in _PREFERRED_RUBRIC_ORDER:
        if any(name in r.rubric_means for r in reports):
            seen_rubrics.append(name)
    extras = sorted(
        {n for r in reports for n in r.rubric_means} - set(seen_rubrics)
    )
    seen_rubrics += extras
    for name in seen_rubrics:
        title = _prettify(name)
        if name == "COMPLETENESS" and any("completeness" in r.finesure for r in reports):
            title = "Completeness (Rubric)"
        columns.append(_Column(f"rubric.{name}", title))
    if any(r.avg is not None for r in reports):
        columns.append(_Column("avg", "Avg."))
    for label in sorted({lbl for r in reports for lbl in r.length_adherence}):
        columns.append(_Column(f"length.{label}", label))
    return columns


def _ranks(reports: Sequence[ModelReport], column: _Column) -> dict[int, str]:
    """Index -> "best" | "second"; ties all take the higher marker."""
    values = [(i, column.value(r)) for i, r in enumerate(reports)]
    values = [(i, v) for i, v in values if v is not None]
    if not values:
        return {}
    best = max(v for _, v in values)
    ranks = {i: "best" for i, v in values if v == best}
    rest = [v for _, v in values if v < best]
    if rest:
        second = max(rest)
        ranks.update({i: "second" for i, v in values if v == second})
    return ranks


_FLAG_TITLES = ("Default", "General", "Length")


def render_report(reports: Sequence[ModelReport], format: str = "markdown") -> str:
    if not reports:
        raise ValueError("no reports to render")
    if format not in ("markdown", "csv", "json"):
        raise ValueError(f"unknown report format {format!r}")
    columns = _columns_for(reports)
    ranks = {col.key: _ranks(reports, col) for col in columns}
    show_flags = any(r.mixture_flags is not None for r in reports)

    if format == "markdown":
        header = ["Model"] + (list(_FLAG_TITLES) if show_flags else []) + [c.title for c in columns]
        lines = ["| " + " | ".join(header) + " |",
                 "|" + "|".join(" --- " for _ in header) + "|"]
        for i, report in enumerate(reports):
            cells = [report.model_name]
            if show_flags:
                flags = report.mixture_flags or (None, None, None)
                cells += ["x" if f else "" if f is not None else "n/a" for f in flags]
            for col in columns:
                v = col.value(report)
                if v is None:
                    cells.append("-")
                    continue
                text = f"{v:.2f}"
                mark = ranks[col.key].get(i)
                if mark == "best":
                    text = f"**{text}**"
                elif mark == "second":
                    text = f"_{text}_"
                cells.append(text)
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["model"] + (["default", "general", "length"] if show_flags else [])
        for col in columns:
            header += [col.key, f"{col.key}:rank"]
        writer.writerow(header)
        for i, report in enumerate(reports):
            row: list[str] = [report.model_name]
            if show_flags:
                flags = report.mixture_flags or (None, None, None)
                row += ["" if f is None else str(bool(f)).lower() for f in flags]
            for col in columns:
                v = col.value(report)
                row.append("" if v is None else f"{v:.2f}")
                row.append(ranks[col.key].get(i, ""))
            writer.writerow(row)
        return buf.getvalue()

    payload = []
    for i, report in enumerate(reports):
        entry = report.to_json_dict()
        entry["metrics"] = {
            col.key: {
                "value": None if col.value(report) is None else round(col.value(report), 2),
                "rank": ranks[col.key].get(i),
            }
            for col in columns
        }
        payload.append(entry)
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
