"""Rule predictors: margins, anchors, priors, and mirrored consistency."""

from __future__ import annotations

import numpy as np
import pytest

from util import across_pair, make_image, make_object, within_pair
from vrd25.dataio import ParseError
from vrd25.depthmaps import DepthMapStore, write_pfm
from vrd25.model import (
    Box,
    Depth,
    Occlusion,
    Setting,
    ValidationError,
    flip_depth,
    flip_occlusion,
)
from vrd25.rules import (
    RULE_NAMES,
    ClassPriorTable,
    RuleConfig,
    RuleMargins,
    coupled_occlusion,
    depth_stat_rule,
    location_rule,
    predict_with_rule,
    size_rule,
)

BIG = Box(0.1, 0.1, 0.6, 0.6)      # area 0.25, ymax 0.6
SMALL = Box(0.7, 0.5, 0.9, 0.7)    # area 0.04, ymax 0.7


def test_size_rule_band_is_strict():
    config = RuleConfig(margins=RuleMargins(delta_s=0.25 - 0.04))
    assert size_rule(BIG, SMALL, Setting.WITHIN, config) == Depth.SAME_DEPTH
    tighter = RuleConfig(margins=RuleMargins(delta_s=0.2))
    assert size_rule(BIG, SMALL, Setting.WITHIN, tighter) == Depth.A_CLOSER
    assert size_rule(SMALL, BIG, Setting.WITHIN, tighter) == Depth.B_CLOSER
    assert size_rule(BIG, SMALL, Setting.ACROSS, config) == Depth.UNSURE


def test_location_rule_anchors():
    bottom = RuleConfig(margins=RuleMargins(delta_l=0.0))
    # SMALL sits lower (ymax 0.7 > 0.6) so it reads closer
    assert location_rule(SMALL, BIG, Setting.WITHIN, bottom) == Depth.A_CLOSER
    assert location_rule(BIG, SMALL, Setting.WITHIN, bottom) == Depth.B_CLOSER
    center = RuleConfig(margins=RuleMargins(delta_l=0.0), location_anchor="center")
    # centers: BIG 0.35, SMALL 0.6
    assert location_rule(SMALL, BIG, Setting.WITHIN, center) == Depth.A_CLOSER
    wide = RuleConfig(margins=RuleMargins(delta_l=0.5))
    assert location_rule(SMALL, BIG, Setting.WITHIN, wide) == Depth.SAME_DEPTH
    assert location_rule(SMALL, BIG, Setting.ACROSS, wide) == Depth.UNSURE


def test_depth_stat_rule_direction_and_inversion():
    config = RuleConfig(margins=RuleMargins(delta_d=0.0))
    assert depth_stat_rule(2.0, 5.0, Setting.WITHIN, config) == Depth.A_CLOSER
    assert depth_stat_rule(5.0, 2.0, Setting.WITHIN, config) == Depth.B_CLOSER
    assert depth_stat_rule(3.0, 3.0, Setting.WITHIN, config) == Depth.SAME_DEPTH
    disparity = RuleConfig(margins=RuleMargins(delta_d=0.0), larger_is_closer=True)
    assert depth_stat_rule(5.0, 2.0, Setting.WITHIN, disparity) == Depth.A_CLOSER
    banded = RuleConfig(margins=RuleMargins(delta_d=3.0))
    assert depth_stat_rule(2.0, 5.0, Setting.WITHIN, banded) == Depth.SAME_DEPTH
    assert depth_stat_rule(2.0, 5.0, Setting.ACROSS, banded) == Depth.UNSURE


def test_coupled_occlusion_requires_overlap_and_direction():
    config = RuleConfig()
    touching = Box(0.6, 0.1, 0.9, 0.6)
    overlapping = Box(0.4, 0.4, 0.8, 0.8)
    assert coupled_occlusion(BIG, touching, Depth.A_CLOSER, config) == Occlusion.NO_OCCLUSION
    assert coupled_occlusion(BIG, overlapping, Depth.A_CLOSER, config) == Occlusion.A_OCCLUDES_B
    assert coupled_occlusion(BIG, overlapping, Depth.B_CLOSER, config) == Occlusion.B_OCCLUDES_A
    assert coupled_occlusion(BIG, overlapping, Depth.SAME_DEPTH, config) == Occlusion.NO_OCCLUSION
    # overlap area 0.2*0.2 = 0.04; the threshold is strict
    at_threshold = RuleConfig(occlusion_overlap_min=0.04)
    assert coupled_occlusion(BIG, overlapping, Depth.A_CLOSER, at_threshold) == Occlusion.NO_OCCLUSION


def test_rule_config_validation_and_file(tmp_path):
    with pytest.raises(ValidationError):
        RuleMargins(delta_s=-0.1)
    with pytest.raises(ValidationError):
        RuleConfig(location_anchor="top")
    path = tmp_path / "rule.txt"
    path.write_text("delta_s=0.05\nlocation_anchor=center\nlarger_is_closer=1\n")
    config = RuleConfig.from_file(path)
    assert config.margins == RuleMargins(delta_s=0.05)
    assert config.location_anchor == "center"
    assert config.larger_is_closer is True
    path.write_text("delta_q=1\n")
    with pytest.raises(ParseError, match="unknown keys"):
        RuleConfig.from_file(path)


# ---------------------------------------------------------------------------
# Class priors


def _prior_fixture():
    im = make_image("im")
    cat1 = make_object("im/cat1", "im", Box(0.1, 0.1, 0.3, 0.3), class_id=1)
    cat2 = make_object("im/cat2", "im", Box(0.6, 0.6, 0.8, 0.8), class_id=1)
    dog = make_object("im/dog", "im", Box(0.4, 0.4, 0.55, 0.55), class_id=2)
    objects = {o.object_id: o for o in (cat1, cat2, dog)}
    pairs = [
        within_pair(cat1, dog, Depth.A_CLOSER, Occlusion.A_OCCLUDES_B),
        within_pair(cat2, dog, Depth.A_CLOSER, Occlusion.NO_OCCLUSION),
        within_pair(dog, cat1, Depth.B_CLOSER, Occlusion.B_OCCLUDES_A),
        within_pair(cat1, cat2, Depth.SAME_DEPTH, Occlusion.NO_OCCLUSION),
    ]
    return objects, pairs


def test_class_prior_fit_counts_both_orders():
    objects, pairs = _prior_fixture()
    table = ClassPriorTable.fit(pairs, objects, Setting.WITHIN)
    # (1,2) evidence: A_CLOSER x2 plus the mirrored (dog,cat) pair flipped -> x3
    assert table.depth_for(1, 2) == Depth.A_CLOSER
    assert table.depth_for(2, 1) == Depth.B_CLOSER
    assert table.depth_for(1, 1) == Depth.SAME_DEPTH
    assert table.occlusion_for(1, 2) == Occlusion.A_OCCLUDES_B
    assert table.occlusion_for(2, 1) == Occlusion.B_OCCLUDES_A


def test_class_prior_modal_tie_breaks_to_lowest_code():
    objects, _ = _prior_fixture()
    cat1, dog = objects["im/cat1"], objects["im/dog"]
    pairs = [
        within_pair(cat1, dog, Depth.A_CLOSER, Occlusion.NO_OCCLUSION),
        within_pair(cat1, dog, Depth.B_CLOSER, Occlusion.NO_OCCLUSION),
    ]
    table = ClassPriorTable.fit(pairs, objects, Setting.WITHIN)
    assert table.depth_for(1, 2) == Depth.A_CLOSER  # tie -> lowest code wins


def test_class_prior_fallbacks():
    objects, pairs = _prior_fixture()
    table = ClassPriorTable.fit(pairs, objects, Setting.WITHIN)
    assert table.depth_for(7, 9) == table.depth_fallback
    assert table.depth_fallback == Depth.A_CLOSER  # modal over all votes, both orders tie -> code 0
    empty = ClassPriorTable.fit([], objects, Setting.WITHIN)
    assert empty.depth_for(1, 2) == Depth.UNSURE
    assert empty.occlusion_for(1, 2) == Occlusion.NO_OCCLUSION


def test_class_prior_fit_filters_by_setting():
    objects, pairs = _prior_fixture()
    table = ClassPriorTable.fit(pairs, objects, Setting.ACROSS)
    assert table.depth_prior == {}
    assert table.depth_fallback == Depth.UNSURE


# ---------------------------------------------------------------------------
# Prediction driver


def _driver_fixture():
    im1 = make_image("im1", group="A")
    im2 = make_image("im2", group="B")
    a = make_object("im1/a", "im1", Box(0.1, 0.2, 0.6, 0.7), class_id=1)   # area 0.25
    b = make_object("im1/b", "im1", Box(0.5, 0.5, 0.8, 0.8), class_id=2)   # area 0.09, overlaps a
    c = make_object("im2/c", "im2", Box(0.2, 0.2, 0.4, 0.4), class_id=1)
    objects = {o.object_id: o for o in (a, b, c)}
    pairs = [
        within_pair(a, b),
        within_pair(b, a),
        across_pair(a, c),
    ]
    return objects, pairs


def test_predict_with_rule_mirrors_reverse_orders():
    objects, pairs = _driver_fixture()
    config = RuleConfig(margins=RuleMargins(delta_s=0.0))
    result = predict_with_rule("size", pairs, objects, config)
    assert not result.skipped
    by_id = {p.pair_id: p for p in result.pairs}
    fwd = by_id["w#im1/a#im1/b"]
    rev = by_id["w#im1/b#im1/a"]
    assert fwd.depth == Depth.A_CLOSER
    assert rev.depth == flip_depth(fwd.depth)
    assert rev.occlusion == flip_occlusion(fwd.occlusion)
    assert fwd.occlusion == Occlusion.A_OCCLUDES_B


def test_predict_with_rule_remaps_same_depth_across():
    objects, pairs = _driver_fixture()
    config = RuleConfig(margins=RuleMargins(delta_s=1.0))  # everything inside the band
    result = predict_with_rule("size", pairs, objects, config)
    by_id = {p.pair_id: p for p in result.pairs}
    assert by_id["w#im1/a#im1/b"].depth == Depth.SAME_DEPTH
    assert by_id["x#im1/a#im2/c"].depth == Depth.UNSURE
    assert by_id["x#im1/a#im2/c"].occlusion is None


def test_predict_with_depth_rule_reads_maps(tmp_path):
    objects, pairs = _driver_fixture()
    write_pfm(tmp_path / "im1.pfm", np.full((64, 64), 4.0, dtype=np.float32))
    flat = np.full((64, 64), 4.0, dtype=np.float32)
    flat[:, :32] = 1.0  # im2/c sits in the near half
    write_pfm(tmp_path / "im2.pfm", flat)
    store = DepthMapStore(tmp_path)
    result = predict_with_rule("depth", pairs, objects, depth_store=store)
    by_id = {p.pair_id: p for p in result.pairs}
    assert by_id["w#im1/a#im1/b"].depth == Depth.SAME_DEPTH  # equal means
    assert by_id["x#im1/a#im2/c"].depth == Depth.B_CLOSER


def test_predict_with_depth_rule_skips_missing_maps(tmp_path):
    objects, pairs = _driver_fixture()
    write_pfm(tmp_path / "im1.pfm", np.full((64, 64), 4.0, dtype=np.float32))
    store = DepthMapStore(tmp_path)
    result = predict_with_rule("depth", pairs, objects, depth_store=store)
    assert len(result.pairs) == 2
    assert len(result.skipped) == 1
    assert result.skipped[0][0] == "x#im1/a#im2/c"
    assert "im2" in result.skipped[0][1]


def test_predict_with_class_rule_uses_prior():
    objects, pairs = _driver_fixture()
    train_pairs = [
        within_pair(objects["im1/a"], objects["im1/b"], Depth.B_CLOSER, Occlusion.B_OCCLUDES_A),
    ]
    prior = ClassPriorTable.fit(train_pairs, objects, Setting.WITHIN)
    result = predict_with_rule("class", pairs, objects, prior=prior)
    by_id = {p.pair_id: p for p in result.pairs}
    assert by_id["w#im1/a#im1/b"].depth == Depth.B_CLOSER
    assert by_id["w#im1/a#im1/b"].occlusion == Occlusion.B_OCCLUDES_A
    assert by_id["w#im1/b#im1/a"].depth == Depth.A_CLOSER


def test_predict_with_rule_requires_inputs():
    objects, pairs = _driver_fixture()
    with pytest.raises(ValidationError, match="unknown rule"):
        predict_with_rule("vibes", pairs, objects)
    with pytest.raises(ValidationError, match="depth-map store"):
        predict_with_rule("depth", pairs, objects)
    with pytest.raises(ValidationError, match="prior"):
        predict_with_rule("class", pairs, objects)
    assert RULE_NAMES == ("size", "location", "depth", "class")


def test_rule_predictions_satisfy_setting_contract():
    objects, pairs = _driver_fixture()
    for rule in ("size", "location"):
        result = predict_with_rule(rule, pairs, objects)
        for p in result.pairs:
            if p.setting == Setting.WITHIN:
                assert p.occlusion is not None
            else:
                assert p.occlusion is None
                assert p.depth != Depth.SAME_DEPTH
