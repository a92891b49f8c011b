"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 I/O or format error.
Option precedence: command-line flag > ``--config`` JSON file > built-in default.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attention_mask import RULESETS, AttentionMask, RuleSet, build_mask, mask_stats, verify_mask
from .bench_eval import (
    BenchmarkSummary,
    compare_runs,
    dataset_stats,
    read_jsonl,
    ScoreRecord,
    summarize,
)
from .errors import DegenerateBoxError, EmptyInputError, RegionEditError
from .plan_format import EditPlan, hint_token_counts, inspect_plan, parse_plan
from .region_grid import ImageGeometry, TokenLayout, build_layout, layout_from_bboxes, perturb_bbox
from .rl_rewards import DEFAULT_LAMBDA, JudgeScores, Stage1Config, group_advantages, stage1_reward, stage2_reward
from .toy_mmdit import ToyModelConfig, denoise

log = logging.getLogger("regionedit")

DEFAULT_RATIOS = (0.0, 0.1, 0.2, 0.5, 0.7)
MAX_PERTURB_RETRIES = 10

DEFAULTS = {
    "patch_size": 16,
    "ruleset": "standard",
    "region": None,
    "seed": 0,
    "lambda": DEFAULT_LAMBDA,
    "steps": 8,
    "mask": "standard",
    "effect_divisor": 5.0,
}


class CliError(Exception):
    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


def _geometry(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"geometry must look like WxH, got {text!r}") from None


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from None


def _read_json(path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}") from None


def _write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Run:
    """Resolves options and records the single manifest each command emits."""

    def __init__(self, args):
        self.args = args
        self.config = _read_json(args.config) if getattr(args, "config", None) else {}
        if not isinstance(self.config, dict):
            raise CliError("--config must hold a JSON object")
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.resolved: dict = {}
        self.exit_code: int | None = None
        self.started = time.perf_counter()

    def opt(self, name: str, default=None):
        value = getattr(self.args, name.replace("-", "_"), None)
        if value is None:
            value = self.config.get(name, self.config.get(name.replace("_", "-")))
        if value is None:
            value = DEFAULTS.get(name, default)
        self.resolved[name] = value
        return value

    def manifest(self) -> dict:
        digest = hashlib.sha256(json.dumps(self.resolved, sort_keys=True, default=str).encode()).hexdigest()
        return {
            "subcommand": self.args.command,
            "inputs": self.inputs,
            "config_digest": digest,
            "config": self.resolved,
            "outputs": self.outputs,
            "duration_s": round(time.perf_counter() - self.started, 6),
            "exit_code": self.exit_code,
            "version": __version__,
        }

    def emit_manifest(self) -> None:
        target = getattr(self.args, "manifest", None)
        out = getattr(self.args, "out", None)
        if target is None and out:
            out = Path(out)
            target = out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")
        doc = self.manifest()
        if target is None:
            print(json.dumps(doc, sort_keys=True), file=sys.stderr)
        else:
            _write_json(target, doc)


def _load_plan(run: Run, path, size: tuple[int, int]) -> EditPlan:
    run.inputs.append(str(path))
    text = _read_text(path)
    if str(path).endswith(".json"):
        return EditPlan.from_dict(json.loads(text))
    try:
        return parse_plan(text, size)
    except RegionEditError as exc:
        raise CliError(f"{path}: {exc}", code=1) from None


# ---- subcommands -------------------------------------------------------


def cmd_plan_validate(run: Run) -> int:
    args = run.args
    run.inputs.append(args.plan)
    text = _read_text(args.plan)
    cfg = Stage1Config.from_dict(run.config.get("stage1", run.config))
    report = inspect_plan(text)
    breakdown = stage1_reward(report, cfg)
    doc = {"report": report.to_dict(), "stage1": breakdown.to_dict()}
    ok = report.ok
    if args.geometry is not None:
        try:
            doc["plan"] = parse_plan(text, args.geometry).to_dict()
        except RegionEditError as exc:
            doc["parse_error"] = f"{type(exc).__name__}: {exc}"
            ok = False
    doc["valid"] = ok
    print(json.dumps(doc, indent=2))
    if args.out:
        _write_json(args.out, doc)
        run.outputs.append(args.out)
    for v in report.violations:
        log.warning("violation: %s", v)
    return 0 if ok else 1


def _layout_for(run: Run) -> tuple[TokenLayout, EditPlan | None]:
    args = run.args
    if getattr(args, "layout", None):
        run.inputs.append(args.layout)
        try:
            return TokenLayout.from_dict(_read_json(args.layout)), None
        except RegionEditError as exc:
            raise CliError(f"{args.layout}: {exc}") from None
    if not args.plan or args.geometry is None:
        raise CliError("need --layout, or --plan with --geometry")
    geom = ImageGeometry(*args.geometry, patch_size=run.opt("patch_size"))
    plan = _load_plan(run, args.plan, args.geometry)
    return build_layout(plan, geom, hint_token_counts(plan)), plan


def _ruleset(run: Run) -> RuleSet:
    return RuleSet(run.opt("ruleset"), run.opt("region"), symmetric=not run.args.asymmetric)


def cmd_mask_build(run: Run) -> int:
    args = run.args
    layout, _ = _layout_for(run)
    rules = _ruleset(run)
    mask = build_mask(layout, rules)
    stats = mask_stats(mask, layout)
    stats["ruleset"] = rules.to_dict()
    stats["sha256"] = mask.sha256()
    code = 0
    if args.verify:
        report = verify_mask(layout, mask, rules)
        stats["verification"] = report.to_dict()
        if not report.ok:
            log.error("mask disagrees with the pairwise rules at %d entries", report.mismatches)
            code = 1
    if args.out:
        mask.save(args.out)
        run.outputs.append(args.out)
        stats_path = args.out + ".stats.json"
        _write_json(stats_path, stats)
        run.outputs.append(stats_path)
    if args.layout_out:
        _write_json(args.layout_out, layout.to_dict())
        run.outputs.append(args.layout_out)
    if args.figure:
        from .plots import plot_mask

        run.outputs.append(str(plot_mask(mask, layout, args.figure, title=f"{rules.name} mask")))
    print(json.dumps(stats, indent=2))
    return code


def cmd_mask_verify(run: Run) -> int:
    """Check an existing mask file against a layout."""
    args = run.args
    layout, _ = _layout_for(run)
    run.inputs.append(args.mask)
    try:
        mask = AttentionMask.load(args.mask)
    except (OSError, RegionEditError) as exc:
        raise CliError(f"{args.mask}: {exc}") from None
    report = verify_mask(layout, mask, _ruleset(run))
    print(json.dumps(report.to_dict(), indent=2))
    return 0 if report.ok else 1


def _load_score_records(run: Run, path) -> list[ScoreRecord]:
    run.inputs.append(str(path))
    try:
        return [ScoreRecord.from_dict(d) for d in read_jsonl(path)]
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: malformed score record: {exc}") from None


def cmd_bench_score(run: Run) -> int:
    args = run.args
    records = _load_score_records(run, args.records)
    if not records:
        raise CliError(f"{args.records}: no score records", code=1)
    summary = summarize(records, float(run.opt("effect_divisor")))
    doc = summary.to_dict()
    if args.metadata:
        run.inputs.append(args.metadata)
        doc["dataset"] = dataset_stats(read_jsonl(args.metadata))
    if args.compare:
        run.inputs.append(args.compare)
        baseline = BenchmarkSummary.from_dict(_read_json(args.compare))
        doc["deltas_vs_baseline"] = compare_runs(baseline, summary)
    print(json.dumps(doc, indent=2, sort_keys=True))
    if args.out:
        _write_json(args.out, doc)
        run.outputs.append(args.out)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "label", "n", "overall", "weighted", "target", "consistency", "quality", "effect"])
            w.writerow(["all", "all", summary.n, summary.overall, summary.weighted,
                        *(summary.dimensions[d] for d in ("target", "consistency", "quality", "effect"))])
            for group, table in (("referring_type", summary.by_referring_type), ("task_type", summary.by_task_type)):
                for label, row in table.items():
                    w.writerow([group, label, row["n"], row["overall"], row["weighted"],
                                row["target"], row["consistency"], row["quality"], row["effect"]])
        run.outputs.append(args.csv)
    if args.figure:
        from .plots import plot_scores

        rows = [{"label": Path(args.records).stem, **summary.dimensions, "overall": summary.overall,
                 "weighted": summary.weighted}]
        run.outputs.append(str(plot_scores(rows, args.figure)))
    return 0


def _perturb_inputs(run: Run) -> list[tuple[str, EditPlan, tuple[int, int]]]:
    args = run.args
    items = []
    if args.plans:
        run.inputs.append(args.plans)
        try:
            docs = read_jsonl(args.plans)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"{args.plans}: {exc}") from None
        for n, doc in enumerate(docs):
            try:
                size = tuple(int(v) for v in doc["image_size"])
                plan = doc["plan"]
                plan = parse_plan(plan, size) if isinstance(plan, str) else EditPlan.from_dict(plan)
            except (KeyError, TypeError, ValueError) as exc:
                raise CliError(f"{args.plans} line {n + 1}: {exc}") from None
            items.append((str(doc.get("sample_id", n)), plan, size))
    elif args.plan and args.geometry is not None:
        items.append((Path(args.plan).stem, _load_plan(run, args.plan, args.geometry), args.geometry))
    else:
        raise CliError("need --plans JSONL, or --plan with --geometry")
    return items


def cmd_bench_perturb(run: Run) -> int:
    args = run.args
    ratios = args.ratio if args.ratio else run.config.get("ratios", list(DEFAULT_RATIOS))
    run.resolved["ratios"] = ratios
    seed = int(run.opt("seed"))
    patch = int(run.opt("patch_size"))
    rules = _ruleset(run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for s_idx, (sid, plan, size) in enumerate(_perturb_inputs(run)):
        geom = ImageGeometry(*size, patch_size=patch)
        sizes = hint_token_counts(plan)
        base = build_mask(layout_from_bboxes([r.bbox for r in plan.regions], geom, sizes), rules)
        base_dense = base.dense()
        for r_idx, ratio in enumerate(ratios):
            boxes, skipped = [], 0
            for k, region in enumerate(plan.regions):
                ss = np.random.SeedSequence([seed, s_idx, k, r_idx])
                new = None
                for attempt, child in enumerate(ss.spawn(MAX_PERTURB_RETRIES)):
                    try:
                        new = perturb_bbox(region.bbox, float(ratio), geom, child)
                        break
                    except DegenerateBoxError:
                        continue
                if new is None:
                    skipped += 1
                    new = region.bbox
                boxes.append(new)
            layout = layout_from_bboxes(boxes, geom, sizes)
            mask = build_mask(layout, rules)
            sub = out / f"ratio_{float(ratio):.2f}"
            sub.mkdir(exist_ok=True)
            mask_path = sub / f"{sid}.mask.bin"
            mask.save(mask_path)
            _write_json(sub / f"{sid}.layout.json", layout.to_dict())
            run.outputs.append(str(mask_path))
            rows.append({
                "sample_id": sid,
                "ratio": float(ratio),
                "regions": len(boxes),
                "bboxes": json.dumps([list(b) for b in boxes]),
                "skipped_regions": skipped,
                "changed_bits": int(np.sum(mask.dense() != base_dense)),
                "density": mask_stats(mask)["density"],
                "mask_sha256": mask.sha256(),
            })
    index = out / "perturb.csv"
    with open(index, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["sample_id"])
        w.writeheader()
        w.writerows(rows)
    run.outputs.append(str(index))
    if args.figure:
        from .plots import plot_perturbation

        run.outputs.append(str(plot_perturbation(rows, args.figure)))
    print(json.dumps({"ratios": ratios, "samples": len(rows) // max(len(ratios), 1), "index": str(index)}))
    return 0


def cmd_toy_denoise(run: Run) -> int:
    args = run.args
    if not args.plan or args.geometry is None:
        raise CliError("need --plan and --geometry")
    geom = ImageGeometry(*args.geometry, patch_size=int(run.opt("patch_size")))
    plan = _load_plan(run, args.plan, args.geometry)
    layout = build_layout(plan, geom, hint_token_counts(plan))
    model_cfg = run.config.get("model", {})
    config = ToyModelConfig(**model_cfg)
    run.resolved["model"] = config.to_dict()
    kind = run.opt("mask")
    if kind in ("all-ones", "full"):
        mask = AttentionMask.full(layout.total)
    else:
        mask = build_mask(layout, RuleSet(kind, run.opt("region")))
    steps = int(run.opt("steps"))
    result = denoise(plan, layout, mask, config, steps=steps, noise_seed=int(run.opt("seed")))
    report = {
        "config": config.to_dict(),
        "mask": kind,
        "steps": steps,
        "seed": int(run.opt("seed")),
        "tokens": layout.total,
        "norms": result.norms,
        "checksum": result.checksum,
    }
    print(json.dumps(report, indent=2))
    if args.out:
        _write_json(args.out, report)
        run.outputs.append(args.out)
    if args.figure:
        from .plots import plot_norms

        run.outputs.append(str(plot_norms({kind: result.norms}, args.figure)))
    return 0


def cmd_rewards(run: Run) -> int:
    """Stage-1/Stage-2 breakdowns plus group advantages for judged rollouts."""
    args = run.args
    run.inputs.append(args.input)
    try:
        docs = read_jsonl(args.input)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"{args.input}: {exc}") from None
    cfg = Stage1Config.from_dict(run.config.get("stage1", {}))
    lam = float(run.opt("lambda"))
    out_rows = []
    try:
        for doc in docs:
            b1 = stage1_reward(inspect_plan(doc.get("plan", "")), cfg)
            if all(k in doc for k in ("target", "effect", "consistency")):
                scores = JudgeScores.from_ratings(doc["target"], doc["effect"], doc["consistency"])
                b = stage2_reward(scores, b1, lam)
                reward = b.r2_total
            else:
                b, reward = b1, b1.r1_total
            out_rows.append({"sample_id": doc.get("sample_id"), "group": doc.get("group"), **b.to_dict(),
                             "reward": reward})
    except RegionEditError as exc:
        raise CliError(str(exc), code=1) from None
    groups: dict = {}
    for i, row in enumerate(out_rows):
        groups.setdefault(row["group"], []).append(i)
    for idx in groups.values():
        for i, a in zip(idx, group_advantages([out_rows[i]["reward"] for i in idx])):
            out_rows[i]["advantage"] = a
    lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in out_rows)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
        run.outputs.append(args.out)
    else:
        sys.stdout.write(lines)
    return 0


# ---- parser ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regionedit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output path"):
        sp.add_argument("--config", help="JSON file with option defaults")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--manifest", help="manifest path (default: next to --out, else stderr)")
        return sp

    def plan_geom(sp):
        sp.add_argument("--plan", help="planner output text (or .json plan document)")
        sp.add_argument("--geometry", type=_geometry, help="image size WxH in pixels")
        sp.add_argument("--patch-size", type=int, dest="patch_size")

    def rules(sp):
        sp.add_argument("--ruleset", choices=RULESETS)
        sp.add_argument("--region", type=int, help="reference region for latent_region_reference")
        sp.add_argument("--asymmetric", action="store_true", help="leave text->image attention unmasked")

    sp = common(sub.add_parser("plan-validate", help="grade planner output, print stage-1 reward"), "report JSON")
    sp.add_argument("--plan", required=True)
    sp.add_argument("--geometry", type=_geometry, help="also parse and bound-check boxes for WxH")
    sp.set_defaults(func=cmd_plan_validate)

    sp = common(sub.add_parser("mask-build", help="build a region attention mask"), "mask file (.bin)")
    sp.add_argument("--layout", help="layout JSON document")
    plan_geom(sp)
    rules(sp)
    sp.add_argument("--verify", action="store_true", help="check every pair against the rules")
    sp.add_argument("--layout-out", dest="layout_out")
    sp.add_argument("--figure", help="write a mask heatmap PNG")
    sp.set_defaults(func=cmd_mask_build)

    sp = common(sub.add_parser("mask-verify", help="check a mask file against a layout"))
    sp.add_argument("--mask", required=True)
    sp.add_argument("--layout")
    plan_geom(sp)
    rules(sp)
    sp.set_defaults(func=cmd_mask_verify)

    sp = common(sub.add_parser("bench-score", help="aggregate judge score records"), "summary JSON")
    sp.add_argument("--records", required=True, help="score records JSONL")
    sp.add_argument("--metadata", help="instruction metadata JSONL for dataset statistics")
    sp.add_argument("--compare", help="baseline summary JSON; report deltas against it")
    sp.add_argument("--effect-divisor", type=float, dest="effect_divisor")
    sp.add_argument("--csv", help="per-category table (CSV)")
    sp.add_argument("--figure", help="write a score bar chart PNG")
    sp.set_defaults(func=cmd_bench_score)

    sp = common(sub.add_parser("bench-perturb", help="bbox corner-noise sweep with rebuilt masks"), "output dir")
    sp.add_argument("--plans", help="JSONL of {sample_id, image_size, plan}")
    plan_geom(sp)
    rules(sp)
    sp.add_argument("--ratio", type=float, action="append", help="repeatable; default 0,0.1,0.2,0.5,0.7")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--figure", help="write changed-bits vs ratio PNG")
    sp.set_defaults(func=cmd_bench_perturb)

    sp = common(sub.add_parser("toy-denoise", help="run the toy masked transformer sampler"), "report JSON")
    plan_geom(sp)
    sp.add_argument("--mask", help="standard, all-ones, or any ruleset name")
    sp.add_argument("--region", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int, help="latent noise seed")
    sp.add_argument("--figure", help="write per-step norm PNG")
    sp.set_defaults(func=cmd_toy_denoise)

    sp = common(sub.add_parser("rewards", help="reward breakdowns and group advantages"), "breakdown JSONL")
    sp.add_argument("--input", required=True, help="JSONL of {sample_id, group, plan, target, effect, consistency}")
    sp.add_argument("--lambda", type=float, dest="lambda")
    sp.set_defaults(func=cmd_rewards)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    run = None
    try:
        run = Run(args)
        code = args.func(run)
    except CliError as exc:
        log.error("%s", exc)
        code = exc.code
    except EmptyInputError as exc:
        log.error("%s", exc)
        code = 1
    except (RegionEditError, OSError) as exc:
        log.error("%s", exc)
        code = 2
    if run is not None:
        run.exit_code = code
        try:
            run.emit_manifest()
        except OSError as exc:
            log.error("cannot write manifest: %s", exc)
    return code


if __name__ == "__main__":
    sys.exit(main())
