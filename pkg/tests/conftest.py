import random

import numpy as np
import pytest

from regionedit.plan_format import EditPlan, RegionHint, is_negative_hint
from regionedit.region_grid import ImageGeometry, layout_from_bboxes

WORDS = "make the cup red blue keep unchanged left right sign text replace remove add table lamp".split()


def random_layout(rng: random.Random, max_tokens: int = 64, max_regions: int = 4):
    """Random layout within a token budget; boxes may overlap."""
    while True:
        patch = rng.choice([1, 4, 8, 16])
        rows, cols = rng.randint(1, 4), rng.randint(1, 4)
        width = cols * patch - rng.randint(0, patch - 1)
        height = rows * patch - rng.randint(0, patch - 1)
        geom = ImageGeometry(width, height, patch)
        k = rng.randint(0, max_regions)
        sizes = [rng.randint(1, 3) for _ in range(k + 1)]
        if sum(sizes) + 2 * geom.num_patches > max_tokens:
            continue
        boxes = []
        for _ in range(k):
            x1, x2 = sorted(rng.sample(range(width + 1), 2))
            y1, y2 = sorted(rng.sample(range(height + 1), 2))
            boxes.append((x1, y1, x2, y2))
        return layout_from_bboxes(boxes, geom, sizes)


def random_plan(rng: random.Random, width: int = 512, height: int = 384, max_regions: int = 5) -> EditPlan:
    def sentence(lo, hi):
        return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))

    regions = []
    for _ in range(rng.randint(0, max_regions)):
        x1, x2 = sorted(rng.sample(range(width + 1), 2))
        y1, y2 = sorted(rng.sample(range(height + 1), 2))
        hint = sentence(1, 8)
        regions.append(RegionHint((x1, y1, x2, y2), hint, is_negative_hint(hint)))
    return EditPlan(sentence(0, 40), sentence(0, 10), tuple(regions))


def records_with_means(means: dict, n: int = 100):
    """Integer 1..5 ratings whose per-dimension means equal ``means`` exactly (2 decimals, n=100)."""
    from regionedit.bench_eval import ScoreRecord

    cols = {}
    for dim, mean in means.items():
        total = round(mean * n)
        base, extra = divmod(total, n)
        col = [base + 1] * extra + [base] * (n - extra)
        assert sum(col) == total and all(1 <= v <= 5 for v in col)
        cols[dim] = col
    return [ScoreRecord(f"s{i}", **{d: float(cols[d][i]) for d in cols}) for i in range(n)]


@pytest.fixture
def example_layout():
    """3 single-token text groups, 2x2 grid, region 1 = (0,0), region 2 = (1,1): 11 tokens."""
    return layout_from_bboxes([(0, 0, 1, 1), (1, 1, 2, 2)], ImageGeometry(2, 2, 1), [1, 1, 1])


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in nodeid and rep.when in ("call", "setup"):
                if outcome == "passed" and rep.when != "call":
                    continue
                name = nodeid.split("::", 1)[1]
                lines.append((name, "PASS" if outcome == "passed" else "FAIL", rep.duration))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status, dur in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}  ({dur:.2f}s)")
