"""Region attention masks over the joint ``text || image || latent`` sequence.

Standard rules, for query ``u`` and key ``v``:

* text group a -> text group b: allowed iff a == b
* image/latent -> image/latent: always allowed
* image/latent patch with region set s -> text group g: allowed iff g == 0 or g in s
* text group g -> image/latent patch with region set s: the mirror of the above

Three ablation variants change one piece each; see :class:`RuleSet`.

Construction works on token classes (a text group, or a modality plus
region set) and emits maximal rectangles. :func:`verify_mask` re-derives
every pair straight from the rules and shares no code with the builder.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LayoutError, MaskError
from .region_grid import TokenLayout

RULESETS = ("standard", "cut_region_bg_image", "latent_region_reference", "no_text_for_background")

MAGIC = b"RAMK"
VERSION = 1
_HEADER = struct.Struct("<4sHQH")  # magic, version, |X|, flags -> 16 bytes
FLAG_ASYMMETRIC = 0x100


@dataclass(frozen=True)
class RuleSet:
    """Named attention predicate.

    ``cut_region_bg_image``: image/latent patches only see image/latent
    patches sharing a region (background sees background).
    ``latent_region_reference``: image<->latent attention survives only
    where the image patch lies in ``region``.
    ``no_text_for_background``: background patch queries lose the global text.
    ``symmetric=False`` leaves text queries free to read every image/latent key.
    """

    name: str = "standard"
    region: int | None = None
    symmetric: bool = True

    def __post_init__(self):
        if self.name not in RULESETS:
            raise ValueError(f"unknown ruleset {self.name!r}; choose from {RULESETS}")
        if self.name == "latent_region_reference" and self.region is None:
            object.__setattr__(self, "region", 1)

    @property
    def flags(self) -> int:
        return RULESETS.index(self.name) | (0 if self.symmetric else FLAG_ASYMMETRIC)

    def to_dict(self) -> dict:
        return {"name": self.name, "region": self.region, "symmetric": self.symmetric}


@dataclass
class AttentionMask:
    """Boolean permission matrix stored as ``(q0, q1, k0, k1)`` allow-rectangles."""

    size: int
    blocks: list[tuple[int, int, int, int]]
    flags: int = 0
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def full(cls, size: int) -> "AttentionMask":
        return cls(size, [(0, size, 0, size)])

    @classmethod
    def identity(cls, size: int) -> "AttentionMask":
        return cls(size, [(u, u + 1, u, u + 1) for u in range(size)])

    @classmethod
    def from_dense(cls, dense: np.ndarray, flags: int = 0) -> "AttentionMask":
        dense = np.asarray(dense, dtype=bool)
        n = dense.shape[0]
        if dense.shape != (n, n):
            raise MaskError(f"mask must be square, got {dense.shape}")
        blocks = _row_blocks(n, lambda u: _runs(np.flatnonzero(dense[u])))
        mask = cls(n, blocks, flags)
        mask._dense = dense.copy()
        return mask

    def dense(self) -> np.ndarray:
        if self._dense is None:
            out = np.zeros((self.size, self.size), dtype=bool)
            for q0, q1, k0, k1 in self.blocks:
                out[q0:q1, k0:k1] = True
            self._dense = out
        return self._dense

    def bitmap(self) -> bytes:
        """Row-major bits, most significant bit first, zero-padded to a byte."""
        return np.packbits(self.dense().ravel(), bitorder="big").tobytes()

    def to_bytes(self) -> bytes:
        return _HEADER.pack(MAGIC, VERSION, self.size, self.flags) + self.bitmap()

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttentionMask":
        if len(data) < _HEADER.size:
            raise MaskError("mask file shorter than its 16-byte header")
        magic, version, size, flags = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise MaskError(f"bad magic {magic!r}")
        if version != VERSION:
            raise MaskError(f"unsupported mask version {version}")
        nbits = size * size
        body = data[_HEADER.size:]
        if len(body) != (nbits + 7) // 8:
            raise MaskError(f"bitmap has {len(body)} bytes, expected {(nbits + 7) // 8}")
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=nbits, bitorder="big")
        return cls.from_dense(bits.reshape(size, size).astype(bool), flags)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "AttentionMask":
        return cls.from_bytes(Path(path).read_bytes())

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def _runs(indices) -> list[tuple[int, int]]:
    """Sorted integer indices -> half-open contiguous runs."""
    runs: list[tuple[int, int]] = []
    for x in indices:
        x = int(x)
        if runs and runs[-1][1] == x:
            runs[-1] = (runs[-1][0], x + 1)
        else:
            runs.append((x, x + 1))
    return runs


def _row_blocks(n: int, row_runs) -> list[tuple[int, int, int, int]]:
    """Merge consecutive query rows with identical key runs into rectangles."""
    blocks = []
    start, current = 0, None
    for u in range(n + 1):
        runs = row_runs(u) if u < n else None
        if u > 0 and runs != current:
            blocks.extend((start, u, k0, k1) for k0, k1 in current)
            start = u
        current = runs
    return blocks


def _token_classes(layout: TokenLayout) -> list[tuple]:
    classes: list[tuple] = []
    for g, size in enumerate(layout.text_group_sizes):
        classes.extend([("text", g)] * size)
    for kind in ("image", "latent"):
        classes.extend((kind, s) for s in layout.membership)
    return classes


def _class_allowed(q: tuple, k: tuple, rules: RuleSet) -> bool:
    qkind, qval = q
    kkind, kval = k
    if qkind == "text" and kkind == "text":
        return qval == kval
    if qkind != "text" and kkind != "text":
        if rules.name == "cut_region_bg_image":
            return bool(qval & kval) or (not qval and not kval)
        if rules.name == "latent_region_reference" and qkind != kkind:
            image_side = qval if qkind == "image" else kval
            return rules.region in image_side
        return True
    if qkind != "text":
        if rules.name == "no_text_for_background" and not qval and kval == 0:
            return False
        return kval == 0 or kval in qval
    if not rules.symmetric:
        return True
    return qval == 0 or qval in kval


def _check_layout(layout: TokenLayout) -> None:
    off = layout.offsets
    if not (0 == off["text"] < off["image"] <= off["latent"] <= layout.total):
        raise LayoutError(f"segments overlap or are out of order: {off}")
    if off["latent"] - off["image"] != layout.num_patches or layout.total - off["latent"] != layout.num_patches:
        raise LayoutError("image and latent segments must each hold one token per patch")


def build_mask(layout: TokenLayout, rules: RuleSet | None = None) -> AttentionMask:
    rules = rules or RuleSet()
    _check_layout(layout)
    if rules.name == "latent_region_reference" and not 1 <= rules.region <= max(layout.num_regions, 0):
        raise LayoutError(f"reference region {rules.region} not in layout with {layout.num_regions} regions")
    classes = _token_classes(layout)
    n = len(classes)
    if n != layout.total:
        raise LayoutError(f"class table has {n} tokens, layout declares {layout.total}")

    positions: dict[tuple, list[int]] = {}
    for idx, c in enumerate(classes):
        positions.setdefault(c, []).append(idx)
    row_cache: dict[tuple, list[tuple[int, int]]] = {}
    for qc in positions:
        keys = sorted(i for kc, idx in positions.items() if _class_allowed(qc, kc, rules) for i in idx)
        row_cache[qc] = _runs(keys)

    blocks = _row_blocks(n, lambda u: row_cache[classes[u]])
    return AttentionMask(n, blocks, rules.flags)


def allowed_pair(layout: TokenLayout, rules: RuleSet, u: int, v: int) -> bool:
    """Reference predicate for a single (query, key) pair."""
    qa, qi = layout.locate(u)
    ka, ki = layout.locate(v)
    q_text, k_text = qa == "text", ka == "text"

    if q_text and k_text:
        return qi == ki
    if not q_text and not k_text:
        qs, ks = layout.membership[qi], layout.membership[ki]
        if rules.name == "cut_region_bg_image":
            if not qs and not ks:
                return True
            return len(qs.intersection(ks)) > 0
        if rules.name == "latent_region_reference" and qa != ka:
            img_patch = qi if qa == "image" else ki
            return rules.region in layout.membership[img_patch]
        return True
    if not q_text:
        regions = layout.membership[qi]
        if ki == 0:
            return not (rules.name == "no_text_for_background" and len(regions) == 0)
        return ki in regions
    if not rules.symmetric:
        return True
    if qi == 0:
        return True
    return qi in layout.membership[ki]


@dataclass
class VerificationReport:
    size: int
    mismatches: int
    first_mismatch: tuple[int, int, bool, bool] | None
    locations: list[tuple[int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.mismatches == 0

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "mismatches": self.mismatches,
            "first_mismatch": None
            if self.first_mismatch is None
            else dict(zip(("query", "key", "mask", "expected"), self.first_mismatch)),
            "ok": self.ok,
        }


def verify_mask(
    layout: TokenLayout, mask: AttentionMask, rules: RuleSet | None = None, max_locations: int = 32
) -> VerificationReport:
    """Compare ``mask`` against the pairwise predicate for every (u, v)."""
    rules = rules or RuleSet()
    n = layout.total
    if mask.size != n:
        return VerificationReport(n, n * n, None)
    dense = mask.dense()
    count, first, locs = 0, None, []
    for u in range(n):
        row = dense[u]
        for v in range(n):
            expected = allowed_pair(layout, rules, u, v)
            if bool(row[v]) != expected:
                count += 1
                if first is None:
                    first = (u, v, bool(row[v]), expected)
                if len(locs) < max_locations:
                    locs.append((u, v))
    return VerificationReport(n, count, first, locs)


def mask_stats(mask: AttentionMask, layout: TokenLayout | None = None) -> dict:
    """Allowed-pair count, density, and per segment-pair counts when a layout is given."""
    dense = mask.dense()
    allowed = int(dense.sum())
    stats = {
        "size": mask.size,
        "allowed": allowed,
        "density": allowed / float(mask.size * mask.size) if mask.size else 0.0,
        "blocks": len(mask.blocks),
        "diagonal_ok": bool(np.all(np.diag(dense))),
        "empty_rows": int(np.sum(~dense.any(axis=1))),
    }
    if layout is not None:
        off = layout.offsets
        seg = {
            "text": slice(0, off["image"]),
            "image": slice(off["image"], off["latent"]),
            "latent": slice(off["latent"], layout.total),
        }
        stats["segments"] = {
            f"{a}->{b}": int(dense[seg[a], seg[b]].sum()) for a in seg for b in seg
        }
    return stats
