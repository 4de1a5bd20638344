"""Core types: wire codes, flip algebra, box geometry, setting contract."""

from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from util import across_pair, load_predicate_vectors, make_object, within_pair
from vrd25.model import (
    Box,
    Depth,
    ImageRecord,
    ObjectInstance,
    Occlusion,
    PairLabel,
    PredictionSet,
    Setting,
    Split,
    ValidationError,
    clamped_box,
    flip_depth,
    flip_occlusion,
    iou,
    overlap_extent,
    pair_id_for,
    validate_pair_predicates,
)


def test_wire_codes_are_pinned():
    assert [int(d) for d in Depth] == [0, 1, 2, 3]
    assert Depth.A_CLOSER == 0
    assert Depth.B_CLOSER == 1
    assert Depth.SAME_DEPTH == 2
    assert Depth.UNSURE == 3
    assert [int(o) for o in Occlusion] == [0, 1, 2, 3]
    assert Occlusion.NO_OCCLUSION == 0
    assert Occlusion.A_OCCLUDES_B == 1
    assert Occlusion.B_OCCLUDES_A == 2
    assert Occlusion.MUTUAL == 3
    assert Setting.WITHIN.value == "within"
    assert Setting.ACROSS.value == "across"
    assert [s.value for s in Split] == ["train", "validation", "test"]


def test_flip_depth_swaps_directional_codes():
    assert flip_depth(Depth.A_CLOSER) == Depth.B_CLOSER
    assert flip_depth(Depth.B_CLOSER) == Depth.A_CLOSER
    assert flip_depth(Depth.SAME_DEPTH) == Depth.SAME_DEPTH
    assert flip_depth(Depth.UNSURE) == Depth.UNSURE


def test_flip_occlusion_swaps_directional_codes():
    assert flip_occlusion(Occlusion.A_OCCLUDES_B) == Occlusion.B_OCCLUDES_A
    assert flip_occlusion(Occlusion.B_OCCLUDES_A) == Occlusion.A_OCCLUDES_B
    assert flip_occlusion(Occlusion.NO_OCCLUSION) == Occlusion.NO_OCCLUSION
    assert flip_occlusion(Occlusion.MUTUAL) == Occlusion.MUTUAL


def test_flips_are_involutions():
    for d in Depth:
        assert flip_depth(flip_depth(d)) == d
    for o in Occlusion:
        assert flip_occlusion(flip_occlusion(o)) == o


@pytest.mark.parametrize(
    "coords",
    [(0.5, 0.1, 0.5, 0.9), (0.6, 0.1, 0.4, 0.9), (-0.1, 0.1, 0.5, 0.9),
     (0.1, 0.1, 1.1, 0.9), (0.1, 0.9, 0.5, 0.2)],
)
def test_box_rejects_degenerate_extents(coords):
    with pytest.raises(ValidationError):
        Box(*coords)


def test_box_properties():
    b = Box(0.1, 0.2, 0.5, 0.8)
    assert b.width == pytest.approx(0.4)
    assert b.height == pytest.approx(0.6)
    assert b.area == pytest.approx(0.24)
    assert b.center == (pytest.approx(0.3), pytest.approx(0.5))


grid_coord = st.integers(min_value=0, max_value=32)


@st.composite
def grid_boxes(draw):
    x1, x2 = sorted(draw(st.tuples(grid_coord, grid_coord), ))
    y1, y2 = sorted(draw(st.tuples(grid_coord, grid_coord), ))
    if x1 == x2:
        x2 = x1 + 1 if x2 < 32 else 32
        x1 = x2 - 1
    if y1 == y2:
        y2 = y1 + 1 if y2 < 32 else 32
        y1 = y2 - 1
    return Box(x1 / 32, y1 / 32, x2 / 32, y2 / 32)


def _exact_iou(a: Box, b: Box) -> Fraction:
    """Independent rational IoU over the 1/32 grid."""
    to_frac = lambda v: Fraction(round(v * 32), 32)
    w = min(to_frac(a.xmax), to_frac(b.xmax)) - max(to_frac(a.xmin), to_frac(b.xmin))
    h = min(to_frac(a.ymax), to_frac(b.ymax)) - max(to_frac(a.ymin), to_frac(b.ymin))
    inter = w * h if (w > 0 and h > 0) else Fraction(0)
    area = lambda box: (to_frac(box.xmax) - to_frac(box.xmin)) * (to_frac(box.ymax) - to_frac(box.ymin))
    return inter / (area(a) + area(b) - inter)


@given(grid_boxes(), grid_boxes())
def test_iou_matches_rational_oracle(a, b):
    assert iou(a, b) == pytest.approx(float(_exact_iou(a, b)), abs=1e-12)
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


@given(grid_boxes())
def test_iou_of_a_box_with_itself_is_one(a):
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


def test_overlap_extent_hand_cases():
    a = Box(0.0, 0.0, 0.5, 0.5)
    b = Box(0.25, 0.25, 0.75, 0.75)
    h, w, area = overlap_extent(a, b)
    assert (h, w) == (pytest.approx(0.25), pytest.approx(0.25))
    assert area == pytest.approx(0.0625)
    assert overlap_extent(a, Box(0.5, 0.0, 1.0, 0.5)) == (0.0, 0.0, 0.0)  # touching edges
    assert overlap_extent(a, Box(0.6, 0.6, 0.9, 0.9)) == (0.0, 0.0, 0.0)


@given(grid_boxes(), grid_boxes())
def test_overlap_extent_is_symmetric(a, b):
    assert overlap_extent(a, b) == overlap_extent(b, a)


@given(
    st.floats(-1, 2, allow_nan=False),
    st.floats(-1, 2, allow_nan=False),
    st.floats(-0.5, 1.5, allow_nan=False),
    st.floats(-0.5, 1.5, allow_nan=False),
)
def test_clamped_box_always_constructs_inside_unit_square(cx, cy, w, h):
    box = clamped_box(cx, cy, w, h)
    assert 0.0 <= box.xmin < box.xmax <= 1.0
    assert 0.0 <= box.ymin < box.ymax <= 1.0


def test_clamped_box_preserves_an_interior_box():
    box = clamped_box(0.5, 0.5, 0.2, 0.4)
    assert box == Box(0.4, 0.3, 0.6, 0.7)


def test_image_record_validation():
    with pytest.raises(ValidationError):
        ImageRecord("im", 0, 10, Split.TRAIN, "A")
    with pytest.raises(ValidationError):
        ImageRecord("im", 10, 10, Split.TRAIN, "C")


def test_object_instance_validation():
    box = Box(0.1, 0.1, 0.5, 0.5)
    with pytest.raises(ValidationError):
        ObjectInstance("o", "im", -1, box)
    with pytest.raises(ValidationError):
        ObjectInstance("o", "im", 0, box, detector_score=1.5)
    ObjectInstance("o", "im", 0, box, detector_score=0.5)


def _reference_predicate_rule(setting: str, occlusion, depth: int) -> bool:
    """The setting contract, restated independently of the implementation."""
    if setting == "within":
        return occlusion is not None
    return occlusion is None and depth != int(Depth.SAME_DEPTH)


def test_setting_contract_matches_shared_vectors():
    for setting_name, depth_code, occl_code, expect_ok in load_predicate_vectors():
        assert expect_ok == _reference_predicate_rule(setting_name, occl_code, depth_code)
        setting = Setting(setting_name)
        occlusion = None if occl_code is None else Occlusion(occl_code)
        if expect_ok:
            validate_pair_predicates(setting, Depth(depth_code), occlusion)
        else:
            with pytest.raises(ValidationError):
                validate_pair_predicates(setting, Depth(depth_code), occlusion)


def test_pair_id_format_is_stable():
    assert pair_id_for(Setting.WITHIN, "x", "y") == "w#x#y"
    assert pair_id_for(Setting.ACROSS, "x", "y") == "x#x#y"


def test_pair_label_rejects_self_pairs_and_wrong_images():
    box = Box(0.1, 0.1, 0.5, 0.5)
    a = make_object("im1/a", "im1", box)
    b = make_object("im1/b", "im1", box)
    c = make_object("im2/c", "im2", box)
    with pytest.raises(ValidationError):
        within_pair(a, a)
    with pytest.raises(ValidationError):
        within_pair(a, c)  # spans images
    with pytest.raises(ValidationError):
        across_pair(a, b)  # same image
    with pytest.raises(ValidationError):
        across_pair(a, c, Depth.SAME_DEPTH)
    with pytest.raises(ValidationError):
        PairLabel(
            pair_id="x#im1/a#im2/c", setting=Setting.ACROSS,
            image_id_a="im1", object_id_a="im1/a",
            image_id_b="im2", object_id_b="im2/c",
            depth=Depth.A_CLOSER, occlusion=Occlusion.NO_OCCLUSION,
        )


def test_pair_label_allows_partial_within_labels():
    box = Box(0.1, 0.1, 0.5, 0.5)
    a = make_object("im1/a", "im1", box)
    b = make_object("im1/b", "im1", box)
    p = within_pair(a, b, Depth.A_CLOSER, None)  # unaggregated occlusion
    assert p.key == ("im1/a", "im1/b")
    assert within_pair(a, b).depth is None


def test_prediction_set_checks_setting_and_exhaustiveness():
    box = Box(0.1, 0.1, 0.5, 0.5)
    objs = [make_object(f"im/o{i}", "im", box) for i in range(3)]
    preds = PredictionSet(setting=Setting.WITHIN, objects=objs)
    with pytest.raises(ValidationError):
        preds.add("im/o0", "im/o1", Depth.A_CLOSER)  # within needs occlusion
    for a in objs:
        for b in objs:
            if a.object_id != b.object_id:
                preds.add(a.object_id, b.object_id, Depth.A_CLOSER, Occlusion.NO_OCCLUSION)
    preds.validate_exhaustive_within(objs)
    del preds.depth[("im/o0", "im/o1")]
    with pytest.raises(ValidationError):
        preds.validate_exhaustive_within(objs)
