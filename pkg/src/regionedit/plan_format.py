"""Planner output: parse, inspect and serialize region-hint edit plans.

The text grammar is three blocks in fixed order::

    <think>free-form reasoning</think>
    <global>instruction for the whole image</global>
    <region>[{"bbox": [x1, y1, x2, y2], "hint": "..."}, ...]</region>

Whitespace between blocks is ignored. Bounding boxes are absolute pixel
coordinates; they are clamped to the image before validation.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from .errors import BboxError, RegionPayloadError, TagStructureError

TAGS = ("think", "global", "region")
NEGATIVE_MARKERS = ("keep",)
# Some grounding models emit "bbox_2d"; accepted on input, never emitted.
BBOX_KEYS = ("bbox", "bbox_2d")

_TAG_RE = re.compile(r"<(/?)(think|global|region)>")
_CANONICAL_RE = re.compile(
    r"\A\s*<think>(?P<think>.*?)</think>"
    r"\s*<global>(?P<global>.*?)</global>"
    r"\s*<region>(?P<region>.*?)</region>\s*\Z",
    re.DOTALL,
)


@dataclass(frozen=True)
class RegionHint:
    bbox: tuple[int, int, int, int]
    hint: str
    negative: bool = False


@dataclass(frozen=True)
class EditPlan:
    reasoning: str
    global_hint: str
    regions: tuple[RegionHint, ...] = ()

    @property
    def hints(self) -> list[str]:
        """Hint texts in group order: global first, then regions."""
        return [self.global_hint] + [r.hint for r in self.regions]

    def to_dict(self) -> dict:
        return {
            "reasoning": self.reasoning,
            "global_hint": self.global_hint,
            "regions": [
                {"bbox": list(r.bbox), "hint": r.hint, "negative": r.negative}
                for r in self.regions
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EditPlan":
        regions = []
        for item in doc.get("regions", []):
            hint = str(item["hint"]).strip()
            regions.append(
                RegionHint(
                    bbox=tuple(int(v) for v in item["bbox"]),
                    hint=hint,
                    negative=bool(item.get("negative", is_negative_hint(hint))),
                )
            )
        return cls(
            reasoning=str(doc.get("reasoning", "")),
            global_hint=str(doc.get("global_hint", "")),
            regions=tuple(regions),
        )


@dataclass
class PlanParseReport:
    tag_ok: bool
    region_json_ok: bool
    reasoning_word_count: int
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.tag_ok and self.region_json_ok

    def to_dict(self) -> dict:
        return {
            "tag_ok": self.tag_ok,
            "region_json_ok": self.region_json_ok,
            "reasoning_word_count": self.reasoning_word_count,
            "violations": list(self.violations),
        }


def is_negative_hint(hint: str, markers=NEGATIVE_MARKERS) -> bool:
    """True when the hint opens with a keep-unchanged marker."""
    head = hint.lstrip()
    for marker in markers:
        if re.match(rf"{re.escape(marker)}\b", head, re.IGNORECASE):
            return True
    return False


def _tag_findings(text: str) -> list[str]:
    """Return a list of tag-structure problems; empty means canonical."""
    findings = []
    seen = [(m.group(1) == "/", m.group(2)) for m in _TAG_RE.finditer(text)]
    for name in TAGS:
        opens = sum(1 for closing, n in seen if n == name and not closing)
        closes = sum(1 for closing, n in seen if n == name and closing)
        if opens == 0:
            findings.append(f"missing <{name}> tag")
        elif opens > 1:
            findings.append(f"duplicated <{name}> tag ({opens} occurrences)")
        if closes == 0:
            findings.append(f"missing </{name}> tag")
        elif closes > 1:
            findings.append(f"duplicated </{name}> tag ({closes} occurrences)")
    if not findings:
        expected = [(c, n) for n in TAGS for c in (False, True)]
        if seen != expected:
            order = " ".join(f"<{'/' if c else ''}{n}>" for c, n in seen)
            findings.append(f"tags out of order: {order}")
        elif _CANONICAL_RE.match(text) is None:
            findings.append("unexpected text outside the tag blocks")
    return findings


def _block(text: str, name: str) -> str | None:
    """Contents of the single <name> block, or None if not exactly one."""
    matches = re.findall(rf"<{name}>(.*?)</{name}>", text, re.DOTALL)
    if len(matches) != 1:
        return None
    return matches[0]


def _coerce_coord(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RegionPayloadError(f"{what}: bbox coordinates must be numbers, got {value!r}")
    if isinstance(value, float):
        if not math.isfinite(value):
            raise RegionPayloadError(f"{what}: non-finite bbox coordinate")
        return int(round(value))
    return value


def _region_objects(payload: str) -> list[tuple[list[int], str]]:
    """Decode the region block into (raw bbox, hint) pairs."""
    try:
        items = json.loads(payload)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise RegionPayloadError(f"region block is not valid JSON: {exc}") from None
    if not isinstance(items, list):
        raise RegionPayloadError("region block must be a JSON list")
    out = []
    for k, item in enumerate(items, start=1):
        what = f"region {k}"
        if not isinstance(item, dict):
            raise RegionPayloadError(f"{what}: expected an object")
        key = next((b for b in BBOX_KEYS if b in item), None)
        if key is None:
            raise RegionPayloadError(f"{what}: missing 'bbox'")
        if "hint" not in item:
            raise RegionPayloadError(f"{what}: missing 'hint'")
        bbox = item[key]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise RegionPayloadError(f"{what}: bbox must be a list of 4 numbers")
        coords = [_coerce_coord(v, what) for v in bbox]
        hint = item["hint"]
        if not isinstance(hint, str) or not hint.strip():
            raise RegionPayloadError(f"{what}: hint must be non-empty text")
        out.append((coords, hint.strip()))
    return out


def clamp_bbox(bbox, width: int, height: int) -> tuple[int, int, int, int]:
    x1, y1, x2, y2 = bbox
    return (
        min(max(x1, 0), width),
        min(max(y1, 0), height),
        min(max(x2, 0), width),
        min(max(y2, 0), height),
    )


def parse_plan(text: str, image_size: tuple[int, int]) -> EditPlan:
    """Parse planner output into an :class:`EditPlan`.

    Raises TagStructureError, RegionPayloadError or BboxError.
    """
    width, height = image_size
    if width <= 0 or height <= 0:
        raise ValueError(f"image size must be positive, got {image_size}")
    findings = _tag_findings(text)
    if findings:
        raise TagStructureError("; ".join(findings))
    m = _CANONICAL_RE.match(text)
    regions = []
    for k, (raw, hint) in enumerate(_region_objects(m.group("region")), start=1):
        bbox = clamp_bbox(raw, width, height)
        x1, y1, x2, y2 = bbox
        if x1 >= x2 or y1 >= y2:
            raise BboxError(f"region {k}: degenerate bbox {raw} -> {list(bbox)} after clamping")
        regions.append(RegionHint(bbox=bbox, hint=hint, negative=is_negative_hint(hint)))
    return EditPlan(
        reasoning=m.group("think").strip(),
        global_hint=m.group("global").strip(),
        regions=tuple(regions),
    )


def inspect_plan(text) -> PlanParseReport:
    """Grade planner output without raising. Accepts str or bytes."""
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    elif not isinstance(text, str):
        text = str(text)

    violations = _tag_findings(text)
    tag_ok = not violations

    think = _block(text, "think")
    words = len(think.split()) if think is not None else 0

    region = _block(text, "region")
    region_ok = False
    if region is None:
        violations.append("no single <region> block to decode")
    else:
        try:
            _region_objects(region)
            region_ok = True
        except RegionPayloadError as exc:
            violations.append(str(exc))
    return PlanParseReport(tag_ok, region_ok, words, violations)


def serialize_plan(plan: EditPlan) -> str:
    regions = [{"bbox": list(r.bbox), "hint": r.hint} for r in plan.regions]
    # "<" escaped so hint text can never forge a closing tag.
    payload = json.dumps(regions, ensure_ascii=False).replace("<", "\\u003c")
    return (
        f"<think>\n{plan.reasoning}\n</think>\n"
        f"<global>{plan.global_hint}</global>\n"
        f"<region>{payload}</region>\n"
    )


def hint_token_counts(plan: EditPlan) -> list[int]:
    """Whitespace-word token count per hint group (global first), at least 1 each."""
    return [max(1, len(h.split())) for h in plan.hints]
