import random
import struct

import numpy as np
import pytest

from regionedit.attention_mask import (
    RULESETS,
    AttentionMask,
    RuleSet,
    build_mask,
    mask_stats,
    verify_mask,
)
from regionedit.errors import LayoutError, MaskError
from regionedit.region_grid import ImageGeometry, layout_from_bboxes

from conftest import random_layout

# token indices in the 11-token example layout
GLOBAL, H1, H2 = 0, 1, 2
IMG = {(0, 0): 3, (0, 1): 4, (1, 0): 5, (1, 1): 6}
LAT = {(0, 0): 7, (0, 1): 8, (1, 0): 9, (1, 1): 10}


def test_example_entries(example_layout):
    M = build_mask(example_layout).dense()
    assert M[H1, H2] == 0
    assert M[IMG[0, 0], H1] == 1
    assert M[IMG[0, 1], H1] == 0
    assert M[LAT[1, 1], H2] == 1
    assert M[IMG[0, 0], H2] == 0
    assert M[H1, IMG[0, 0]] == 1 and M[H1, IMG[1, 1]] == 0  # mirrored text->image
    assert M[GLOBAL, IMG[0, 1]] == 1


def test_example_hand_counts(example_layout):
    # text-text: 3 diagonal; image->text: 4 global + 1 + 1; same for latent;
    # mirrored text->image/latent: 6 + 6; image/latent block 8x8 = 64.
    stats = mask_stats(build_mask(example_layout), example_layout)
    assert stats["allowed"] == 3 + 6 + 6 + 6 + 6 + 64 == 91
    assert stats["segments"]["text->text"] == 3
    assert stats["segments"]["image->text"] == 6
    assert stats["segments"]["latent->image"] == 16
    assert stats["density"] == pytest.approx(91 / 121)
    assert stats["diagonal_ok"] and stats["empty_rows"] == 0


def test_no_regions_image_latent_all_ones():
    layout = layout_from_bboxes([], ImageGeometry(3, 2, 1), [2])
    M = build_mask(layout).dense()
    off = layout.offsets["image"]
    assert M[off:, off:].all()
    assert M[off:, :off].all()  # every patch sees the single text group


def test_no_text_for_background_diff(example_layout):
    std = build_mask(example_layout).dense()
    abl = build_mask(example_layout, RuleSet("no_text_for_background")).dense()
    assert abl[IMG[0, 1], GLOBAL] == 0
    diff = set(zip(*np.nonzero(std != abl)))
    bg_queries = {IMG[0, 1], IMG[1, 0], LAT[0, 1], LAT[1, 0]}
    assert diff == {(q, GLOBAL) for q in bg_queries}


def test_cut_region_ablation(example_layout):
    M = build_mask(example_layout, RuleSet("cut_region_bg_image")).dense()
    assert M[IMG[0, 0], IMG[0, 1]] == 0
    assert M[IMG[0, 0], LAT[0, 0]] == 1
    assert M[IMG[0, 1], LAT[1, 0]] == 1  # background to background
    assert M[IMG[0, 0], IMG[1, 1]] == 0


def test_latent_region_reference_ablation(example_layout):
    M = build_mask(example_layout, RuleSet("latent_region_reference", region=1)).dense()
    assert M[LAT[1, 1], IMG[0, 0]] == 1
    assert M[LAT[0, 0], IMG[1, 1]] == 0
    assert M[IMG[1, 1], LAT[0, 0]] == 0
    assert M[IMG[0, 0], LAT[1, 1]] == 1
    assert M[IMG[0, 1], IMG[1, 1]] == 1 and M[LAT[0, 1], LAT[1, 0]] == 1


def test_latent_region_reference_bad_region(example_layout):
    with pytest.raises(LayoutError):
        build_mask(example_layout, RuleSet("latent_region_reference", region=3))


def test_asymmetric_variant(example_layout):
    M = build_mask(example_layout, RuleSet(symmetric=False)).dense()
    assert M[H1, IMG[1, 1]] == 1
    assert M[IMG[1, 1], H1] == 0


def test_unknown_ruleset():
    with pytest.raises(ValueError):
        RuleSet("bogus")


def test_verify_self_consistent(example_layout):
    for name in RULESETS:
        rules = RuleSet(name)
        assert verify_mask(example_layout, build_mask(example_layout, rules), rules).ok


def test_verify_locates_flipped_bit(example_layout):
    dense = build_mask(example_layout).dense().copy()
    dense[IMG[0, 1], H2] ^= True
    report = verify_mask(example_layout, AttentionMask.from_dense(dense))
    assert report.mismatches == 1
    assert report.first_mismatch == (IMG[0, 1], H2, True, False)


def test_verify_size_mismatch(example_layout):
    assert not verify_mask(example_layout, AttentionMask.full(5)).ok


@pytest.mark.parametrize("name", RULESETS)
def test_random_layouts_all_rulesets(name):
    rng = random.Random(100 + RULESETS.index(name))
    for _ in range(150):
        layout = random_layout(rng, max_tokens=48)
        region = rng.randint(1, layout.num_regions) if layout.num_regions else None
        if name == "latent_region_reference" and region is None:
            continue
        rules = RuleSet(name, region)
        mask = build_mask(layout, rules)
        assert verify_mask(layout, mask, rules).ok
        dense = mask.dense()
        assert dense.diagonal().all()
        assert dense.any(axis=1).all()


def test_block_expansion_matches_bitmap(rng):
    for _ in range(100):
        layout = random_layout(rng)
        mask = build_mask(layout)
        blocks = np.zeros((mask.size, mask.size), dtype=bool)
        for q0, q1, k0, k1 in mask.blocks:
            assert not blocks[q0:q1, k0:k1].any(), "blocks must not overlap"
            blocks[q0:q1, k0:k1] = True
        bits = np.unpackbits(np.frombuffer(mask.bitmap(), np.uint8), count=mask.size ** 2)
        assert np.array_equal(bits.reshape(mask.size, mask.size).astype(bool), blocks)


def test_blocks_are_compact():
    # one 64x64 image, one box: image+latent rows collapse to a handful of rectangles
    layout = layout_from_bboxes([(16, 16, 48, 48)], ImageGeometry(64, 64, 16), [4, 4])
    mask = build_mask(layout)
    assert len(mask.blocks) < 40


def test_density_trivial_masks():
    assert mask_stats(AttentionMask.full(4))["density"] == 1.0
    assert mask_stats(AttentionMask.identity(4))["density"] == 0.25


def test_binary_format_layout():
    data = AttentionMask.identity(3).to_bytes()
    assert len(data) == 16 + 2
    assert data[:4] == b"RAMK"
    assert struct.unpack("<H", data[4:6]) == (1,)
    assert struct.unpack("<Q", data[6:14]) == (3,)
    assert struct.unpack("<H", data[14:16]) == (0,)
    assert data[16:] == bytes([0b10001000, 0b10000000])


def test_binary_round_trip(rng, tmp_path):
    for n in range(5):
        layout = random_layout(rng)
        rules = RuleSet("standard", symmetric=bool(n % 2))
        mask = build_mask(layout, rules)
        path = tmp_path / f"m{n}.bin"
        mask.save(path)
        back = AttentionMask.load(path)
        assert back.flags == rules.flags
        assert np.array_equal(back.dense(), mask.dense())
        assert back.to_bytes() == mask.to_bytes()


@pytest.mark.parametrize(
    "data",
    [b"", b"XXXX" + bytes(12), b"RAMK" + struct.pack("<HQH", 9, 1, 0) + b"\x80",
     b"RAMK" + struct.pack("<HQH", 1, 4, 0) + b"\x00"],
)
def test_binary_rejects_malformed(data):
    with pytest.raises(MaskError):
        AttentionMask.from_bytes(data)
