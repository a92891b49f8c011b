import json

import pytest
from hypothesis import given, settings, strategies as st

from regionedit.errors import BboxError, RegionPayloadError, TagStructureError
from regionedit.plan_format import (
    EditPlan,
    RegionHint,
    hint_token_counts,
    inspect_plan,
    is_negative_hint,
    parse_plan,
    serialize_plan,
)

GOOD = """<think>
Two mugs sit on the table; the user means the one near the laptop.
</think>
<global>Recolor the mug next to the laptop.</global>
<region>[{"bbox": [10, 20, 60, 80], "hint": "make this mug red"},
         {"bbox": [70, 20, 95, 60], "hint": "Keep this mug unchanged"}]</region>
"""


def make_text(think="some reasoning", global_hint="do it", region='[]'):
    return f"<think>{think}</think><global>{global_hint}</global><region>{region}</region>"


def test_parse_well_formed_two_regions():
    plan = parse_plan(GOOD, (100, 100))
    assert len(plan.regions) == 2
    assert plan.regions[0].bbox == (10, 20, 60, 80)
    assert plan.regions[1].hint == "Keep this mug unchanged"
    assert plan.global_hint == "Recolor the mug next to the laptop."
    assert plan.reasoning.startswith("Two mugs")


def test_negative_flag_detected_lexically():
    plan = parse_plan(GOOD, (100, 100))
    assert [r.negative for r in plan.regions] == [False, True]
    assert is_negative_hint("KEEP the sky")
    assert not is_negative_hint("keeper of the gate")
    assert not is_negative_hint("please keep it")


def test_missing_closing_region_tag():
    with pytest.raises(TagStructureError, match="</region>"):
        parse_plan(GOOD.replace("</region>", ""), (100, 100))


@pytest.mark.parametrize(
    "text",
    [
        "<global>a</global><think>b</think><region>[]</region>",
        "<think>a</think><think>b</think><global>c</global><region>[]</region>",
        "<think>a</think><region>[]</region>",
        "junk <think>a</think><global>c</global><region>[]</region>",
    ],
)
def test_tag_structure_errors(text):
    with pytest.raises(TagStructureError):
        parse_plan(text, (10, 10))


def test_inverted_corners_bbox_error():
    text = make_text(region='[{"bbox":[50,50,10,10],"hint":"x"}]')
    with pytest.raises(BboxError):
        parse_plan(text, (100, 100))


def test_bbox_clamped_to_image():
    text = make_text(region='[{"bbox":[-3,5,101,100.4],"hint":"x"}]')
    assert parse_plan(text, (100, 100)).regions[0].bbox == (0, 5, 100, 100)


def test_bbox_entirely_outside_is_degenerate():
    text = make_text(region='[{"bbox":[120,10,140,20],"hint":"x"}]')
    with pytest.raises(BboxError):
        parse_plan(text, (100, 100))


@pytest.mark.parametrize(
    "payload",
    [
        "{not json",
        '{"bbox":[0,0,1,1],"hint":"x"}',
        '[{"bbox":[0,0,1],"hint":"x"}]',
        '[{"bbox":[0,0,1,1]}]',
        '[{"bbox":[0,0,1,1],"hint":"   "}]',
        '[{"bbox":["a",0,1,1],"hint":"x"}]',
        '[{"bbox":[true,0,1,1],"hint":"x"}]',
        '[3]',
    ],
)
def test_region_payload_errors(payload):
    with pytest.raises(RegionPayloadError):
        parse_plan(make_text(region=payload), (100, 100))


def test_bbox_2d_alias_accepted():
    text = make_text(region='[{"bbox_2d":[0,0,5,5],"hint":"x","point_2d":[2,2]}]')
    assert parse_plan(text, (10, 10)).regions[0].bbox == (0, 0, 5, 5)


def test_inspect_valid_plan_word_count():
    think = " ".join(["word"] * 150)
    report = inspect_plan(make_text(think=think, region='[{"bbox":[0,0,5,5],"hint":"x"}]'))
    assert (report.tag_ok, report.region_json_ok, report.reasoning_word_count) == (True, True, 150)
    assert report.violations == []


def test_inspect_broken_region_json():
    report = inspect_plan(make_text(think="a b c", region="{not json"))
    assert report.tag_ok and not report.region_json_ok
    assert report.reasoning_word_count == 3
    assert len(report.violations) == 1


def test_inspect_empty_string():
    report = inspect_plan("")
    assert (report.tag_ok, report.region_json_ok, report.reasoning_word_count) == (False, False, 0)
    assert len(report.violations) >= 1


def test_inspect_accepts_bytes():
    report = inspect_plan(b"\xff\xfe<think>x</think>")
    assert not report.tag_ok and report.reasoning_word_count == 1


def test_serialize_empty_region_list():
    text = serialize_plan(EditPlan("why", "global"))
    assert "<region>[]</region>" in text


def test_serialize_three_regions_in_order():
    plan = EditPlan(
        "r",
        "g",
        (
            RegionHint((0, 0, 5, 5), "first"),
            RegionHint((5, 5, 9, 9), "second"),
            RegionHint((1, 2, 3, 4), "third"),
        ),
    )
    text = serialize_plan(plan)
    payload = json.loads(text.split("<region>")[1].split("</region>")[0])
    # independent parse-back: raw JSON objects, not parse_plan
    assert [o["hint"] for o in payload] == ["first", "second", "third"]
    assert [tuple(o["bbox"]) for o in payload] == [r.bbox for r in plan.regions]
    assert parse_plan(text, (10, 10)) == plan


def test_serialize_escapes_tag_lookalikes_in_hints():
    plan = EditPlan("r", "g", (RegionHint((0, 0, 5, 5), "write </region> on the sign"),))
    assert parse_plan(serialize_plan(plan), (10, 10)) == plan


def test_dict_round_trip():
    plan = parse_plan(GOOD, (100, 100))
    assert EditPlan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan


def test_hint_token_counts():
    plan = parse_plan(GOOD, (100, 100))
    assert hint_token_counts(plan) == [7, 4, 4]


_word = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Zs", "Zl", "Zp", "Cc"), blacklist_characters="<>"),
                min_size=1, max_size=8)
_sentence = st.lists(_word, min_size=0, max_size=6).map(" ".join)


@st.composite
def plans(draw):
    w = draw(st.integers(1, 2000))
    h = draw(st.integers(1, 2000))
    regions = []
    for _ in range(draw(st.integers(0, 4))):
        x1 = draw(st.integers(0, w - 1))
        x2 = draw(st.integers(x1 + 1, w))
        y1 = draw(st.integers(0, h - 1))
        y2 = draw(st.integers(y1 + 1, h))
        hint = draw(st.lists(_word, min_size=1, max_size=6).map(" ".join))
        regions.append(RegionHint((x1, y1, x2, y2), hint, is_negative_hint(hint)))
    return EditPlan(draw(_sentence), draw(_sentence), tuple(regions)), (w, h)


@settings(max_examples=300)
@given(plans())
def test_round_trip_property(case):
    plan, size = case
    text = serialize_plan(plan)
    assert parse_plan(text, size) == plan
    report = inspect_plan(text)
    assert report.tag_ok and report.region_json_ok


@settings(max_examples=500)
@given(st.binary(max_size=300))
def test_inspect_total_on_bytes(data):
    report = inspect_plan(data)
    if not report.tag_ok:
        assert report.violations


@settings(max_examples=300)
@given(st.text(alphabet="<>/thinkgloabrego{}[]\":, 0123x", max_size=120))
def test_accepted_text_is_graded_valid(text):
    try:
        parse_plan(text, (50, 50))
    except (TagStructureError, RegionPayloadError, BboxError):
        return
    report = inspect_plan(text)
    assert report.tag_ok and report.region_json_ok
