"""Two-stage planner rewards and group-relative advantages."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .errors import DomainError
from .plan_format import PlanParseReport

ADVANTAGE_EPS = 1e-8
DEFAULT_LAMBDA = 0.1


@dataclass(frozen=True)
class Stage1Config:
    tag_reward_value: float = 1.0
    region_reward_value: float = 1.0
    reasoning_cap_words: int = 128
    reasoning_max_value: float = 1.0

    def __post_init__(self):
        if min(self.tag_reward_value, self.region_reward_value, self.reasoning_max_value) < 0:
            raise ValueError("reward values must be >= 0")
        if self.reasoning_cap_words < 1:
            raise ValueError("reasoning_cap_words must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "Stage1Config":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


def normalize_rating(score: float) -> float:
    """Map a 1..5 judge rating onto [0, 1]."""
    if not 1.0 <= score <= 5.0:
        raise DomainError(f"rating {score} outside [1, 5]")
    return (score - 1.0) / 4.0


@dataclass(frozen=True)
class JudgeScores:
    target: float
    effect: float
    consistency: float

    def __post_init__(self):
        for name in ("target", "effect", "consistency"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{name} score {value} outside [0, 1]")

    @classmethod
    def from_ratings(cls, target: float, effect: float, consistency: float) -> "JudgeScores":
        return cls(normalize_rating(target), normalize_rating(effect), normalize_rating(consistency))


@dataclass(frozen=True)
class RewardBreakdown:
    r_tag: float = 0.0
    r_region: float = 0.0
    r_reasoning: float = 0.0
    r1_total: float = 0.0
    r_target: float | None = None
    r_effect: float | None = None
    r_consistency: float | None = None
    r_consistency_weighted: float | None = None
    lambda_: float | None = None
    r2_total: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d


def stage1_reward(report: PlanParseReport, cfg: Stage1Config | None = None) -> RewardBreakdown:
    cfg = cfg or Stage1Config()
    r_tag = cfg.tag_reward_value if report.tag_ok else 0.0
    r_region = cfg.region_reward_value if report.region_json_ok else 0.0
    r_reasoning = cfg.reasoning_max_value * min(report.reasoning_word_count / cfg.reasoning_cap_words, 1.0)
    return RewardBreakdown(r_tag, r_region, r_reasoning, r_tag + r_region + r_reasoning)


def stage2_reward(
    scores: JudgeScores, r1: float | RewardBreakdown, lam: float = DEFAULT_LAMBDA
) -> RewardBreakdown:
    """R2 = target + effect + consistency * effect + lam * R1."""
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    if not isinstance(scores, JudgeScores):
        scores = JudgeScores(*scores)
    base = r1 if isinstance(r1, RewardBreakdown) else RewardBreakdown(r1_total=float(r1))
    rcw = scores.consistency * scores.effect
    total = scores.target + scores.effect + rcw + lam * base.r1_total
    return RewardBreakdown(
        base.r_tag,
        base.r_region,
        base.r_reasoning,
        base.r1_total,
        scores.target,
        scores.effect,
        scores.consistency,
        rcw,
        lam,
        total,
    )


def group_advantages(rewards: Sequence[float], eps: float = ADVANTAGE_EPS) -> list[float]:
    """Standardize rewards within one rollout group (population std).

    Groups whose spread is below ``eps`` carry no relative signal and get
    all-zero advantages; otherwise advantages have mean 0 and std 1.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        return []
    std = r.std()
    if np.all(r == r[0]) or std < eps:
        return [0.0] * r.size
    return ((r - r.mean()) / std).tolist()
