"""Rule-based predictors: box size, vertical location, depth-map statistics,
and class priors, each with a margin threshold and a shared occlusion heuristic.

Every rule is evaluated once per unordered pair in canonical order and
mirrored to the reverse order, so symmetry violations are impossible by
construction rather than by numerical luck.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .dataio import ParseError, read_kv_config
from .depthmaps import DepthMapStore, EmptyRegionError, mean_box_depth
from .model import (
    Box,
    Depth,
    ObjectInstance,
    Occlusion,
    PairLabel,
    Setting,
    ValidationError,
    flip_depth,
    flip_occlusion,
    overlap_extent,
)

RULE_NAMES = ("size", "location", "depth", "class")


@dataclass(frozen=True)
class RuleMargins:
    """Decision margins; inside the band the rule answers SAME_DEPTH within an
    image and UNSURE across images."""

    delta_s: float = 0.0   # box-area difference
    delta_l: float = 0.02  # normalized vertical-position difference
    delta_d: float = 0.02  # mean map-depth difference

    def __post_init__(self) -> None:
        if min(self.delta_s, self.delta_l, self.delta_d) < 0:
            raise ValidationError("margins must be >= 0")


@dataclass(frozen=True)
class RuleConfig:
    margins: RuleMargins = RuleMargins()
    location_anchor: str = "bottom"  # "bottom" (ymax) or "center"
    larger_is_closer: bool = False   # set for disparity-style maps
    occlusion_overlap_min: float = 0.0  # strict threshold on overlap area

    def __post_init__(self) -> None:
        if self.location_anchor not in ("bottom", "center"):
            raise ValidationError("location_anchor must be 'bottom' or 'center'")
        if self.occlusion_overlap_min < 0:
            raise ValidationError("occlusion_overlap_min must be >= 0")

    @classmethod
    def from_file(cls, path: Path | str) -> "RuleConfig":
        raw = read_kv_config(path)
        margins = RuleMargins(
            delta_s=float(raw.pop("delta_s", RuleMargins.delta_s)),
            delta_l=float(raw.pop("delta_l", RuleMargins.delta_l)),
            delta_d=float(raw.pop("delta_d", RuleMargins.delta_d)),
        )
        kwargs: dict[str, object] = {"margins": margins}
        if "location_anchor" in raw:
            kwargs["location_anchor"] = raw.pop("location_anchor")
        if "larger_is_closer" in raw:
            kwargs["larger_is_closer"] = raw.pop("larger_is_closer") in ("1", "true")
        if "occlusion_overlap_min" in raw:
            kwargs["occlusion_overlap_min"] = float(raw.pop("occlusion_overlap_min"))
        if raw:
            raise ParseError(f"{path}: unknown keys: {sorted(raw)}")
        return cls(**kwargs)


def _band_label(signed: float, margin: float, setting: Setting) -> Depth:
    """signed > margin favors A, signed < -margin favors B."""
    if signed > margin:
        return Depth.A_CLOSER
    if -signed > margin:
        return Depth.B_CLOSER
    return Depth.SAME_DEPTH if setting is Setting.WITHIN else Depth.UNSURE


def size_rule(a: Box, b: Box, setting: Setting, config: RuleConfig) -> Depth:
    """Larger projected box area reads as closer."""
    return _band_label(a.area - b.area, config.margins.delta_s, setting)


def location_rule(a: Box, b: Box, setting: Setting, config: RuleConfig) -> Depth:
    """Lower in the frame reads as closer (y grows downward)."""
    if config.location_anchor == "bottom":
        signed = a.ymax - b.ymax
    else:
        signed = a.center[1] - b.center[1]
    return _band_label(signed, config.margins.delta_l, setting)


def depth_stat_rule(
    mean_a: float, mean_b: float, setting: Setting, config: RuleConfig
) -> Depth:
    """Smaller mean depth inside the box reads as closer (metric maps); the
    larger_is_closer flag inverts this for disparity-style maps."""
    signed = mean_b - mean_a
    if config.larger_is_closer:
        signed = -signed
    return _band_label(signed, config.margins.delta_d, setting)


def coupled_occlusion(a: Box, b: Box, depth: Depth, config: RuleConfig) -> Occlusion:
    """The closer object of an overlapping pair is taken to occlude the other."""
    if overlap_extent(a, b)[2] <= config.occlusion_overlap_min:
        return Occlusion.NO_OCCLUSION
    if depth == Depth.A_CLOSER:
        return Occlusion.A_OCCLUDES_B
    if depth == Depth.B_CLOSER:
        return Occlusion.B_OCCLUDES_A
    return Occlusion.NO_OCCLUSION


# ---------------------------------------------------------------------------
# Class priors


@dataclass
class ClassPriorTable:
    """Modal training label per ordered class pair, with global fallbacks."""

    setting: Setting
    depth_prior: dict[tuple[int, int], Depth] = field(default_factory=dict)
    occlusion_prior: dict[tuple[int, int], Occlusion] = field(default_factory=dict)
    depth_fallback: Depth = Depth.UNSURE
    occlusion_fallback: Occlusion = Occlusion.NO_OCCLUSION

    @classmethod
    def fit(
        cls,
        pairs: Sequence[PairLabel],
        objects: dict[str, ObjectInstance],
        setting: Setting,
    ) -> "ClassPriorTable":
        """Count labels over ordered class pairs; each labeled pair also counts
        in the mirrored order with flipped predicates, so lookups in either
        direction see the same evidence."""
        depth_counts: dict[tuple[int, int], Counter] = {}
        occl_counts: dict[tuple[int, int], Counter] = {}
        depth_total: Counter = Counter()
        occl_total: Counter = Counter()
        for p in pairs:
            if p.setting != setting or p.depth is None:
                continue
            ca = objects[p.object_id_a].class_id
            cb = objects[p.object_id_b].class_id
            for key, d in (((ca, cb), p.depth), ((cb, ca), flip_depth(p.depth))):
                depth_counts.setdefault(key, Counter())[d] += 1
                depth_total[d] += 1
            if p.occlusion is not None:
                for key, o in (((ca, cb), p.occlusion), ((cb, ca), flip_occlusion(p.occlusion))):
                    occl_counts.setdefault(key, Counter())[o] += 1
                    occl_total[o] += 1

        def modal(counter: Counter) -> object:
            best = max(counter.values())
            return min(k for k, v in counter.items() if v == best)

        table = cls(setting=setting)
        table.depth_prior = {k: Depth(modal(c)) for k, c in depth_counts.items()}
        table.occlusion_prior = {k: Occlusion(modal(c)) for k, c in occl_counts.items()}
        if depth_total:
            table.depth_fallback = Depth(modal(depth_total))
        if occl_total:
            table.occlusion_fallback = Occlusion(modal(occl_total))
        return table

    def depth_for(self, class_a: int, class_b: int) -> Depth:
        return self.depth_prior.get((class_a, class_b), self.depth_fallback)

    def occlusion_for(self, class_a: int, class_b: int) -> Occlusion:
        return self.occlusion_prior.get((class_a, class_b), self.occlusion_fallback)


# ---------------------------------------------------------------------------
# Prediction driver


@dataclass
class RulePrediction:
    pairs: list[PairLabel]
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (pair_id, reason)


class _MeanDepthCache:
    def __init__(self, store: DepthMapStore):
        self.store = store
        self.cache: dict[str, float] = {}

    def mean(self, obj: ObjectInstance) -> float:
        if obj.object_id not in self.cache:
            if obj.image_id not in self.store:
                raise FileNotFoundError(f"no depth map for image {obj.image_id!r}")
            depth_map = self.store.get(obj.image_id)
            self.cache[obj.object_id] = mean_box_depth(depth_map, obj.box)
        return self.cache[obj.object_id]


def predict_with_rule(
    rule: str,
    pairs: Sequence[PairLabel],
    objects: dict[str, ObjectInstance],
    config: Optional[RuleConfig] = None,
    depth_store: Optional[DepthMapStore] = None,
    prior: Optional[ClassPriorTable] = None,
) -> RulePrediction:
    """Predict depth (and occlusion, within images) for the given pairs.

    Pairs whose inputs are unavailable (missing depth map, sub-pixel box) are
    skipped with a reason instead of failing the whole run.
    """
    if rule not in RULE_NAMES:
        raise ValidationError(f"unknown rule {rule!r}, expected one of {RULE_NAMES}")
    if rule == "depth" and depth_store is None:
        raise ValidationError("depth rule requires a depth-map store")
    if rule == "class" and prior is None:
        raise ValidationError("class rule requires a fitted prior table")
    config = config or RuleConfig()
    cache = _MeanDepthCache(depth_store) if depth_store is not None else None

    result = RulePrediction(pairs=[])
    computed: dict[tuple[str, str], tuple[Depth, Optional[Occlusion]]] = {}
    for pair in pairs:
        key = pair.key
        mirrored = (key[1], key[0])
        if key in computed:
            depth, occlusion = computed[key]
        elif mirrored in computed:
            d, o = computed[mirrored]
            depth = flip_depth(d)
            occlusion = None if o is None else flip_occlusion(o)
        else:
            a, b = objects[pair.object_id_a], objects[pair.object_id_b]
            try:
                depth = _apply_rule(rule, pair.setting, a, b, config, cache, prior)
            except (FileNotFoundError, EmptyRegionError) as exc:
                result.skipped.append((pair.pair_id, str(exc)))
                continue
            if pair.setting is Setting.ACROSS and depth == Depth.SAME_DEPTH:
                depth = Depth.UNSURE
            occlusion = None
            if pair.setting is Setting.WITHIN:
                if rule == "class":
                    occlusion = prior.occlusion_for(a.class_id, b.class_id)
                else:
                    occlusion = coupled_occlusion(a.box, b.box, depth, config)
        computed[key] = (depth, occlusion)
        result.pairs.append(dataclasses.replace(pair, depth=depth, occlusion=occlusion))
    return result


def _apply_rule(
    rule: str,
    setting: Setting,
    a: ObjectInstance,
    b: ObjectInstance,
    config: RuleConfig,
    cache: Optional[_MeanDepthCache],
    prior: Optional[ClassPriorTable],
) -> Depth:
    if rule == "size":
        return size_rule(a.box, b.box, setting, config)
    if rule == "location":
        return location_rule(a.box, b.box, setting, config)
    if rule == "depth":
        return depth_stat_rule(cache.mean(a), cache.mean(b), setting, config)
    return prior.depth_for(a.class_id, b.class_id)
