"""Pixel boxes to patch-grid token groups, and bbox corner perturbation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateBoxError, GeometryError, LayoutError
from .plan_format import EditPlan

Patch = tuple[int, int]


@dataclass(frozen=True)
class ImageGeometry:
    width: int
    height: int
    patch_size: int = 16

    def __post_init__(self):
        if self.patch_size < 1:
            raise GeometryError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"image must be at least 1x1, got {self.width}x{self.height}")

    @property
    def rows(self) -> int:
        return math.ceil(self.height / self.patch_size)

    @property
    def cols(self) -> int:
        return math.ceil(self.width / self.patch_size)

    @property
    def grid(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    def patch_rect(self, i: int, j: int) -> tuple[int, int, int, int]:
        p = self.patch_size
        return (j * p, i * p, min((j + 1) * p, self.width), min((i + 1) * p, self.height))

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "patch_size": self.patch_size}


def map_bbox_to_patches(bbox, geom: ImageGeometry) -> set[Patch]:
    """Every patch whose pixel rectangle overlaps ``bbox`` with positive area."""
    x1, y1, x2, y2 = bbox
    if not (0 <= x1 < x2 <= geom.width and 0 <= y1 < y2 <= geom.height):
        raise GeometryError(f"bbox {tuple(bbox)} outside {geom.width}x{geom.height} image or degenerate")
    p = geom.patch_size
    rows = range(int(y1 // p), math.ceil(y2 / p))
    cols = range(int(x1 // p), math.ceil(x2 / p))
    return {(i, j) for i in rows for j in cols}


@dataclass(frozen=True)
class TokenLayout:
    """Index universe of the joint sequence ``text || image || latent``.

    ``membership[p]`` is the frozenset of region ids (1-based) covering
    row-major patch ``p``; an empty set marks a background patch. Latent
    tokens share the image membership patch for patch.
    """

    geometry: ImageGeometry
    text_group_sizes: tuple[int, ...]
    membership: tuple[frozenset, ...]
    bboxes: tuple[tuple[int, int, int, int], ...] = ()

    def __post_init__(self):
        if not self.text_group_sizes or any(s < 1 for s in self.text_group_sizes):
            raise LayoutError(f"text group sizes must be positive, got {self.text_group_sizes}")
        if len(self.membership) != self.geometry.num_patches:
            raise LayoutError(
                f"membership covers {len(self.membership)} patches, grid has {self.geometry.num_patches}"
            )
        k = self.num_regions
        for s in self.membership:
            if any(not 1 <= r <= k for r in s):
                raise LayoutError(f"membership {set(s)} references a region outside 1..{k}")

    @property
    def num_regions(self) -> int:
        return len(self.text_group_sizes) - 1

    @property
    def num_text(self) -> int:
        return sum(self.text_group_sizes)

    @property
    def num_patches(self) -> int:
        return self.geometry.num_patches

    @property
    def offsets(self) -> dict[str, int]:
        t = self.num_text
        return {"text": 0, "image": t, "latent": t + self.num_patches}

    @property
    def total(self) -> int:
        return self.num_text + 2 * self.num_patches

    def text_ranges(self) -> list[range]:
        out, start = [], 0
        for size in self.text_group_sizes:
            out.append(range(start, start + size))
            start += size
        return out

    def image_index(self, i: int, j: int) -> int:
        return self.offsets["image"] + i * self.geometry.cols + j

    def latent_index(self, i: int, j: int) -> int:
        return self.offsets["latent"] + i * self.geometry.cols + j

    def region_patches(self, k: int) -> set[Patch]:
        cols = self.geometry.cols
        return {divmod(p, cols) for p, s in enumerate(self.membership) if k in s}

    def background(self) -> set[Patch]:
        cols = self.geometry.cols
        return {divmod(p, cols) for p, s in enumerate(self.membership) if not s}

    def locate(self, u: int) -> tuple[str, int]:
        """``("text", group)``, ``("image", patch)`` or ``("latent", patch)`` for token ``u``."""
        if not 0 <= u < self.total:
            raise IndexError(u)
        off = self.offsets
        if u < off["image"]:
            acc = 0
            for g, size in enumerate(self.text_group_sizes):
                acc += size
                if u < acc:
                    return "text", g
        if u < off["latent"]:
            return "image", u - off["image"]
        return "latent", u - off["latent"]

    def to_dict(self) -> dict:
        cols = self.geometry.cols
        rows = []
        for i in range(self.geometry.rows):
            runs: list[list] = []
            for j in range(cols):
                ids = sorted(self.membership[i * cols + j])
                if runs and runs[-1][1] == ids:
                    runs[-1][0] += 1
                else:
                    runs.append([1, ids])
            rows.append(runs)
        doc = {
            "geometry": self.geometry.to_dict(),
            "text_group_sizes": list(self.text_group_sizes),
            "membership_rle": rows,
            "offsets": self.offsets,
            "total": self.total,
        }
        if self.bboxes:
            doc["bboxes"] = [list(b) for b in self.bboxes]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TokenLayout":
        try:
            geom = ImageGeometry(**doc["geometry"])
            membership = []
            for runs in doc["membership_rle"]:
                row = []
                for count, ids in runs:
                    row.extend([frozenset(int(r) for r in ids)] * int(count))
                if len(row) != geom.cols:
                    raise LayoutError(f"RLE row expands to {len(row)} patches, expected {geom.cols}")
                membership.extend(row)
            layout = cls(
                geometry=geom,
                text_group_sizes=tuple(int(s) for s in doc["text_group_sizes"]),
                membership=tuple(membership),
                bboxes=tuple(tuple(int(v) for v in b) for b in doc.get("bboxes", ())),
            )
        except (KeyError, TypeError) as exc:
            raise LayoutError(f"malformed layout document: {exc!r}") from None
        if "total" in doc and doc["total"] != layout.total:
            raise LayoutError(f"declared total {doc['total']} != computed {layout.total}")
        if "offsets" in doc and dict(doc["offsets"]) != layout.offsets:
            raise LayoutError(f"declared offsets {doc['offsets']} != computed {layout.offsets}")
        return layout


def layout_from_bboxes(
    bboxes: Sequence, geom: ImageGeometry, text_group_sizes: Sequence[int]
) -> TokenLayout:
    """Layout for region boxes ``bboxes`` (region k = ``bboxes[k-1]``)."""
    if len(text_group_sizes) != len(bboxes) + 1:
        raise LayoutError(
            f"need {len(bboxes) + 1} text group sizes (global + {len(bboxes)} regions), got {len(text_group_sizes)}"
        )
    sets: list[set[int]] = [set() for _ in range(geom.num_patches)]
    for k, bbox in enumerate(bboxes, start=1):
        for i, j in map_bbox_to_patches(bbox, geom):
            sets[i * geom.cols + j].add(k)
    return TokenLayout(
        geometry=geom,
        text_group_sizes=tuple(int(s) for s in text_group_sizes),
        membership=tuple(frozenset(s) for s in sets),
        bboxes=tuple(tuple(b) for b in bboxes),
    )


def build_layout(plan: EditPlan, geom: ImageGeometry, text_group_sizes: Sequence[int]) -> TokenLayout:
    return layout_from_bboxes([r.bbox for r in plan.regions], geom, text_group_sizes)


def perturb_bbox(bbox, ratio: float, geom: ImageGeometry, seed) -> tuple[int, int, int, int]:
    """Shift every corner coordinate by ``ratio`` of the box side, random sign.

    x coordinates move by ``floor(ratio * width)`` pixels, y coordinates by
    ``floor(ratio * height)``, each with an independent random sign. The
    result is re-ordered and clamped to the image.
    """
    if ratio < 0:
        raise ValueError(f"ratio must be >= 0, got {ratio}")
    x1, y1, x2, y2 = (int(v) for v in bbox)
    dx = math.floor(ratio * (x2 - x1))
    dy = math.floor(ratio * (y2 - y1))
    signs = np.random.default_rng(seed).choice((-1, 1), size=4)
    nx1, nx2 = x1 + int(signs[0]) * dx, x2 + int(signs[2]) * dx
    ny1, ny2 = y1 + int(signs[1]) * dy, y2 + int(signs[3]) * dy
    nx1, nx2 = sorted((nx1, nx2))
    ny1, ny2 = sorted((ny1, ny2))
    out = (
        min(max(nx1, 0), geom.width),
        min(max(ny1, 0), geom.height),
        min(max(nx2, 0), geom.width),
        min(max(ny2, 0), geom.height),
    )
    if out[0] >= out[2] or out[1] >= out[3]:
        raise DegenerateBoxError(f"bbox {tuple(bbox)} collapsed to {out} at ratio {ratio}")
    return out


def coverage_partition_ok(layout: TokenLayout) -> bool:
    """Region groups plus background cover the grid with no gaps."""
    covered: set[Patch] = set(layout.background())
    for k in range(1, layout.num_regions + 1):
        covered |= layout.region_patches(k)
    rows, cols = layout.geometry.grid
    everything = {(i, j) for i in range(rows) for j in range(cols)}
    return covered == everything and not (layout.background() & set().union(
        *(layout.region_patches(k) for k in range(1, layout.num_regions + 1))
    ))


def iter_patches(geom: ImageGeometry) -> Iterable[Patch]:
    for i in range(geom.rows):
        for j in range(geom.cols):
            yield i, j
