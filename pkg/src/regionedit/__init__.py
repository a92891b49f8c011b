"""Region-hint edit plans, region attention masks, reward math and benchmark scoring."""

__version__ = "0.1.0"

from .attention_mask import AttentionMask, RuleSet, build_mask, mask_stats, verify_mask
from .bench_eval import ScoreRecord, compare_runs, dataset_stats, overall_score, summarize, weighted_score
from .plan_format import EditPlan, RegionHint, inspect_plan, parse_plan, serialize_plan
from .region_grid import ImageGeometry, TokenLayout, build_layout, map_bbox_to_patches, perturb_bbox
from .rl_rewards import JudgeScores, Stage1Config, group_advantages, stage1_reward, stage2_reward

__all__ = [
    "AttentionMask",
    "EditPlan",
    "ImageGeometry",
    "JudgeScores",
    "RegionHint",
    "RuleSet",
    "ScoreRecord",
    "Stage1Config",
    "TokenLayout",
    "build_layout",
    "build_mask",
    "compare_runs",
    "dataset_stats",
    "group_advantages",
    "inspect_plan",
    "map_bbox_to_patches",
    "mask_stats",
    "overall_score",
    "parse_plan",
    "perturb_bbox",
    "serialize_plan",
    "stage1_reward",
    "stage2_reward",
    "summarize",
    "verify_mask",
    "weighted_score",
]
