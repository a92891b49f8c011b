"""Judge-score ingestion and benchmark aggregates (Overall, Weighted)."""

from __future__ import annotations

import json
import statistics
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DomainError, EmptyInputError

METRIC_VERSION = "1"
DIMENSIONS = ("target", "consistency", "quality", "effect")
DEFAULT_EFFECT_DIVISOR = 5.0

# Published sample counts per category; they double as the label vocabularies.
REFERRING_COUNTS = {
    "Visual": 90,
    "Structural": 87,
    "Content": 92,
    "Feature": 135,
    "Spatial": 152,
    "Knowledge": 111,
    "Understanding": 136,
}
TASK_COUNTS = {
    "Add": 10,
    "Delete": 27,
    "Replacement": 41,
    "Attribute": 59,
    "Parts Modification": 38,
    "State Modification": 32,
    "Modify Human Animal": 18,
    "Interaction": 32,
    "Prediction": 120,
    "Physics Reasoning": 53,
    "Scenario Reasoning": 54,
    "Open-Ended Reasoning": 6,
    "Knowledge Reasoning": 44,
    "Text Content Edit": 122,
    "Text Style Edit": 70,
    "Text Reasoning Edit": 77,
}
REFERRING_TYPES = tuple(REFERRING_COUNTS)
TASK_TYPES = tuple(TASK_COUNTS)


def _canonical(label, vocab: Sequence[str], kind: str):
    if label is None:
        return None
    key = str(label).strip().lower().replace("_", " ").replace("-", " ")
    for name in vocab:
        if name.lower().replace("-", " ") == key:
            return name
    raise DomainError(f"unknown {kind} {label!r}")


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    target: float
    consistency: float
    quality: float
    effect: float
    referring_type: str | None = None
    task_type: str | None = None
    region_count: int | None = None

    def __post_init__(self):
        for dim in DIMENSIONS:
            value = getattr(self, dim)
            if not 1.0 <= value <= 5.0:
                raise DomainError(f"{self.sample_id}: {dim} rating {value} outside [1, 5]")
        object.__setattr__(self, "referring_type", _canonical(self.referring_type, REFERRING_TYPES, "referring type"))
        object.__setattr__(self, "task_type", _canonical(self.task_type, TASK_TYPES, "task type"))

    @classmethod
    def from_dict(cls, doc: dict) -> "ScoreRecord":
        return cls(
            sample_id=str(doc["sample_id"]),
            target=float(doc["target"]),
            consistency=float(doc["consistency"]),
            quality=float(doc["quality"]),
            effect=float(doc["effect"]),
            referring_type=doc.get("referring_type"),
            task_type=doc.get("task_type"),
            region_count=None if doc.get("region_count") is None else int(doc["region_count"]),
        )

    def overall(self) -> float:
        return (self.target + self.consistency + self.quality + self.effect) / 4.0

    def weighted(self, effect_divisor: float = DEFAULT_EFFECT_DIVISOR) -> float:
        return (self.target + self.quality + self.effect + (self.effect / effect_divisor) * self.consistency) / 4.0


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def load_records(path) -> list[ScoreRecord]:
    return [ScoreRecord.from_dict(d) for d in read_jsonl(path)]


def overall_score(records: Sequence[ScoreRecord]) -> float:
    if not records:
        raise EmptyInputError("no score records")
    return statistics.fmean(r.overall() for r in records)


def weighted_score(records: Sequence[ScoreRecord], effect_divisor: float = DEFAULT_EFFECT_DIVISOR) -> float:
    """Mean of (T + Q + E + (E / divisor) * C) / 4 over samples."""
    if not records:
        raise EmptyInputError("no score records")
    return statistics.fmean(r.weighted(effect_divisor) for r in records)


def dimension_means(records: Sequence[ScoreRecord]) -> dict[str, float]:
    if not records:
        raise EmptyInputError("no score records")
    return {dim: statistics.fmean(getattr(r, dim) for r in records) for dim in DIMENSIONS}


@dataclass
class BenchmarkSummary:
    overall: float
    weighted: float
    dimensions: dict[str, float]
    n: int
    by_referring_type: dict[str, dict] = field(default_factory=dict)
    by_task_type: dict[str, dict] = field(default_factory=dict)
    effect_divisor: float = DEFAULT_EFFECT_DIVISOR
    metric_version: str = METRIC_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weighted_normalization"] = f"consistency scaled by effect/{self.effect_divisor:g}"
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchmarkSummary":
        return cls(
            overall=float(doc["overall"]),
            weighted=float(doc["weighted"]),
            dimensions={k: float(v) for k, v in doc.get("dimensions", {}).items()},
            n=int(doc.get("n", 0)),
            by_referring_type=doc.get("by_referring_type", {}),
            by_task_type=doc.get("by_task_type", {}),
            effect_divisor=float(doc.get("effect_divisor", DEFAULT_EFFECT_DIVISOR)),
            metric_version=str(doc.get("metric_version", METRIC_VERSION)),
        )


def _breakdown(records, key: str, divisor: float) -> dict[str, dict]:
    groups: dict[str, list[ScoreRecord]] = defaultdict(list)
    for r in records:
        label = getattr(r, key)
        if label is not None:
            groups[label].append(r)
    return {
        label: {
            "n": len(rs),
            "overall": overall_score(rs),
            "weighted": weighted_score(rs, divisor),
            **dimension_means(rs),
        }
        for label, rs in sorted(groups.items())
    }


def summarize(records: Sequence[ScoreRecord], effect_divisor: float = DEFAULT_EFFECT_DIVISOR) -> BenchmarkSummary:
    return BenchmarkSummary(
        overall=overall_score(records),
        weighted=weighted_score(records, effect_divisor),
        dimensions=dimension_means(records),
        n=len(records),
        by_referring_type=_breakdown(records, "referring_type", effect_divisor),
        by_task_type=_breakdown(records, "task_type", effect_divisor),
        effect_divisor=effect_divisor,
    )


def dataset_stats(records: Iterable, instructions: Iterable[str] | None = None) -> dict:
    """Instruction length, multi-region count and per-category counts.

    ``records`` may be ScoreRecords or metadata dicts carrying
    ``instruction``, ``referring_type``, ``task_type`` and ``region_count``.
    """
    records = list(records)
    texts = list(instructions) if instructions is not None else []
    referring: Counter = Counter()
    tasks: Counter = Counter()
    region_counts: Counter = Counter()
    for r in records:
        get = r.get if isinstance(r, dict) else (lambda k, _r=r: getattr(_r, k, None))
        if instructions is None and get("instruction") is not None:
            texts.append(get("instruction"))
        ref = _canonical(get("referring_type"), REFERRING_TYPES, "referring type")
        task = _canonical(get("task_type"), TASK_TYPES, "task type")
        if ref:
            referring[ref] += 1
        if task:
            tasks[task] += 1
        if get("region_count") is not None:
            region_counts[int(get("region_count"))] += 1
    lengths = [len(t.split()) for t in texts]
    return {
        "samples": len(records),
        "instructions": len(lengths),
        "mean_words": statistics.fmean(lengths) if lengths else 0.0,
        "word_histogram": dict(sorted(Counter(lengths).items())),
        "multi_region": sum(c for k, c in region_counts.items() if k >= 2),
        "region_count_histogram": dict(sorted(region_counts.items())),
        "referring_types": {k: referring.get(k, 0) for k in REFERRING_TYPES},
        "task_types": {k: tasks.get(k, 0) for k in TASK_TYPES},
    }


def compare_runs(a: BenchmarkSummary, b: BenchmarkSummary) -> dict[str, float]:
    """Signed deltas ``b - a`` for every aggregate field."""
    deltas = {"overall": b.overall - a.overall, "weighted": b.weighted - a.weighted}
    for dim in DIMENSIONS:
        if dim in a.dimensions and dim in b.dimensions:
            deltas[dim] = b.dimensions[dim] - a.dimensions[dim]
    return deltas


def load_table1() -> list[dict]:
    """Published per-model dimension means and aggregates (shipped fixture)."""
    text = resources.files("regionedit").joinpath("data/table1.json").read_text(encoding="utf-8")
    return json.loads(text)["rows"]


def write_summary(summary: BenchmarkSummary, path) -> None:
    Path(path).write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
