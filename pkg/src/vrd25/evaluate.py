"""Scoring of directional predicate predictions against exhaustive labels.

Three tasks are scored separately and averaged: within-image depth, occlusion,
and across-image depth. A predicted relation is a true positive when both of
its boxes match groundtruth boxes (IoU strictly above threshold, one-to-one,
class-agnostic) and its predicate equals the label. Ambiguous labels are
excluded from both denominators; unmatched predictions stay in the precision
denominator. The detector keeps as many boxes per image as the groundtruth
has, ranked by confidence.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .dataio import (
    ClassMetadata,
    DatasetBundle,
    FilterConfig,
    admissible_within_pairs,
    filter_objects,
    load_flat_config,
)
from .model import (
    Depth,
    ObjectInstance,
    Occlusion,
    PairLabel,
    Setting,
    ValidationError,
    flip_depth,
    flip_occlusion,
    iou,
    pair_id_for,
)


@dataclass(frozen=True)
class MatchingConfig:
    iou_threshold: float = 0.5        # strict: a match needs IoU > threshold
    leak_groundtruth_count: bool = True
    count_unsure_gt: bool = True      # False drops UNSURE labels from both sides

    def __post_init__(self) -> None:
        if not (0.0 <= self.iou_threshold < 1.0):
            raise ValidationError("iou_threshold must lie in [0, 1)")

    @classmethod
    def from_file(cls, path: "Path | str") -> "MatchingConfig":
        return load_flat_config(cls, path)


@dataclass(frozen=True)
class TaskScore:
    true_positives: int
    predicted: int  # precision denominator
    actual: int     # recall denominator

    @property
    def precision(self) -> float:
        return self.true_positives / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return self.true_positives / self.actual if self.actual else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class EvalReport:
    within_depth: TaskScore
    across_depth: TaskScore
    occlusion: TaskScore
    # (task name, predicate name) -> score; task names "depth_within",
    # "depth_across", "occlusion"
    per_predicate: dict[tuple[str, str], TaskScore] = field(default_factory=dict)

    @property
    def average_f1(self) -> float:
        """Mean F1 over the tasks that have any groundtruth."""
        scores = [
            s.f1 for s in (self.within_depth, self.occlusion, self.across_depth)
            if s.actual > 0
        ]
        return sum(scores) / len(scores) if scores else 0.0


# ---------------------------------------------------------------------------
# Detection filtering, leak, matching


def filter_and_leak_detections(
    gt_by_image: dict[str, list[ObjectInstance]],
    detections: Sequence[ObjectInstance],
    matching: MatchingConfig,
    filter_config: FilterConfig,
    meta: Optional[ClassMetadata] = None,
) -> dict[str, list[ObjectInstance]]:
    """Admission-filter detections per image, then keep the top-N by
    confidence where N is that image's groundtruth object count."""
    det_by_image: dict[str, list[ObjectInstance]] = {iid: [] for iid in gt_by_image}
    for det in detections:
        if det.image_id not in det_by_image:
            continue  # detections on images outside the evaluation set
        det_by_image[det.image_id].append(det)

    kept: dict[str, list[ObjectInstance]] = {}
    for image_id, dets in det_by_image.items():
        survivors = filter_objects(dets, filter_config, meta)
        budget = len(gt_by_image[image_id])
        if matching.leak_groundtruth_count and len(survivors) > budget:
            if any(d.detector_score is None for d in survivors):
                raise ValidationError(
                    f"{image_id}: detector_score required to rank "
                    f"{len(survivors)} detections down to {budget}"
                )
            survivors = sorted(
                survivors, key=lambda d: (-d.detector_score, d.object_id)
            )[:budget]
        kept[image_id] = sorted(survivors, key=lambda d: d.object_id)
    return kept


def match_image_detections(
    gt_objects: Sequence[ObjectInstance],
    detections: Sequence[ObjectInstance],
    iou_threshold: float,
) -> dict[str, str]:
    """Greedy one-to-one matching by descending IoU (ids break ties);
    class-agnostic by design."""
    candidates = []
    for det in detections:
        for gt in gt_objects:
            overlap = iou(det.box, gt.box)
            if overlap > iou_threshold:
                candidates.append((-overlap, det.object_id, gt.object_id))
    candidates.sort()
    matched: dict[str, str] = {}
    used_gt: set[str] = set()
    for _, det_id, gt_id in candidates:
        if det_id in matched or gt_id in used_gt:
            continue
        matched[det_id] = gt_id
        used_gt.add(gt_id)
    return matched


def build_correspondence(
    gt_by_image: dict[str, list[ObjectInstance]],
    kept_by_image: dict[str, list[ObjectInstance]],
    matching: MatchingConfig,
) -> dict[str, str]:
    correspondence: dict[str, str] = {}
    for image_id, gt_objects in gt_by_image.items():
        correspondence.update(match_image_detections(
            gt_objects, kept_by_image.get(image_id, []), matching.iou_threshold
        ))
    return correspondence


def identity_correspondence(objects: Sequence[ObjectInstance]) -> dict[str, str]:
    return {o.object_id: o.object_id for o in objects}


def across_image_pairing(gt_pairs: Sequence[PairLabel]) -> list[tuple[str, str]]:
    """The (image_a, image_b) pairs the across-image labels were drawn over."""
    seen: dict[tuple[str, str], None] = {}
    for p in gt_pairs:
        if p.setting is Setting.ACROSS:
            seen.setdefault((p.image_id_a, p.image_id_b), None)
    return list(seen)


def detection_eval_pairs(
    gt_pairs: Sequence[PairLabel],
    kept_by_image: dict[str, list[ObjectInstance]],
    filter_config: FilterConfig,
    meta: Optional[ClassMetadata] = None,
) -> list[PairLabel]:
    """Unlabeled prediction pairs over kept detections: all admissible ordered
    pairs inside each evaluated image, every cross pair for each evaluated
    image pair."""
    out: list[PairLabel] = []
    within_images = sorted({
        p.image_id_a for p in gt_pairs if p.setting is Setting.WITHIN
    })
    for image_id in within_images:
        for a, b in admissible_within_pairs(kept_by_image.get(image_id, []), filter_config, meta):
            out.append(PairLabel(
                pair_id=pair_id_for(Setting.WITHIN, a.object_id, b.object_id),
                setting=Setting.WITHIN,
                image_id_a=image_id, object_id_a=a.object_id,
                image_id_b=image_id, object_id_b=b.object_id,
                depth=None,
            ))
    for image_a, image_b in across_image_pairing(gt_pairs):
        for a in kept_by_image.get(image_a, []):
            for b in kept_by_image.get(image_b, []):
                out.append(PairLabel(
                    pair_id=pair_id_for(Setting.ACROSS, a.object_id, b.object_id),
                    setting=Setting.ACROSS,
                    image_id_a=image_a, object_id_a=a.object_id,
                    image_id_b=image_b, object_id_b=b.object_id,
                    depth=None,
                ))
    return out


# ---------------------------------------------------------------------------
# Core scorer


def _gt_index(gt_pairs: Sequence[PairLabel]) -> dict[tuple[str, str], PairLabel]:
    index = {}
    for p in gt_pairs:
        if p.key in index:
            raise ValidationError(f"duplicate groundtruth pair for {p.key}")
        index[p.key] = p
    return index


def _depth_countable(gt: PairLabel, config: MatchingConfig) -> bool:
    if gt.depth is None:
        return False
    if gt.depth == Depth.UNSURE and not config.count_unsure_gt:
        return False
    return True


class _TaskCounts:
    def __init__(self) -> None:
        self.tp = 0
        self.predicted = 0
        self.actual = 0
        self.by_predicate: dict[str, list[int]] = {}  # name -> [tp, pred, actual]

    def _slot(self, name: str) -> list[int]:
        return self.by_predicate.setdefault(name, [0, 0, 0])

    def score(self) -> TaskScore:
        return TaskScore(self.tp, self.predicted, self.actual)

    def predicate_scores(self) -> dict[str, TaskScore]:
        return {
            name: TaskScore(tp, pred, act)
            for name, (tp, pred, act) in sorted(self.by_predicate.items())
        }


def score_predictions(
    gt_pairs: Sequence[PairLabel],
    predictions: Sequence[PairLabel],
    correspondence: dict[str, str],
    config: Optional[MatchingConfig] = None,
    count_unmapped_predictions: bool = True,
) -> EvalReport:
    """Score predictions against labels through an object correspondence.

    `correspondence` maps each predicted object id to the groundtruth object
    it was matched with; predictions with unmatched endpoints (or mapping to
    a pair that is not labeled) count against precision when
    `count_unmapped_predictions` is set, and are ignored otherwise (subset
    scoring, e.g. per difficulty scale).
    """
    config = config or MatchingConfig()
    index = _gt_index(gt_pairs)

    depth_counts = {Setting.WITHIN: _TaskCounts(), Setting.ACROSS: _TaskCounts()}
    occl_counts = _TaskCounts()

    for gt in gt_pairs:
        if _depth_countable(gt, config):
            counts = depth_counts[gt.setting]
            counts.actual += 1
            counts._slot(gt.depth.name.lower())[2] += 1
        if gt.setting is Setting.WITHIN and gt.occlusion is not None:
            occl_counts.actual += 1
            occl_counts._slot(gt.occlusion.name.lower())[2] += 1

    seen_keys: set[tuple[str, str]] = set()
    for pred in predictions:
        if pred.depth is None:
            raise ValidationError(f"{pred.pair_id}: prediction without a depth predicate")
        if pred.key in seen_keys:
            raise ValidationError(f"duplicate prediction for {pred.key}")
        seen_keys.add(pred.key)

        gt_a = correspondence.get(pred.object_id_a)
        gt_b = correspondence.get(pred.object_id_b)
        gt = index.get((gt_a, gt_b)) if gt_a is not None and gt_b is not None else None

        counts = depth_counts[pred.setting]
        if gt is None:
            if count_unmapped_predictions:
                counts.predicted += 1
                counts._slot(pred.depth.name.lower())[1] += 1
                if pred.setting is Setting.WITHIN and pred.occlusion is not None:
                    occl_counts.predicted += 1
                    occl_counts._slot(pred.occlusion.name.lower())[1] += 1
            continue
        if gt.setting != pred.setting:
            raise ValidationError(f"{pred.pair_id}: setting differs from matched label")

        if _depth_countable(gt, config):
            counts.predicted += 1
            slot = counts._slot(pred.depth.name.lower())
            slot[1] += 1
            if pred.depth == gt.depth:
                counts.tp += 1
                slot[0] += 1
        if pred.setting is Setting.WITHIN and pred.occlusion is not None and gt.occlusion is not None:
            occl_counts.predicted += 1
            slot = occl_counts._slot(pred.occlusion.name.lower())
            slot[1] += 1
            if pred.occlusion == gt.occlusion:
                occl_counts.tp += 1
                slot[0] += 1

    report = EvalReport(
        within_depth=depth_counts[Setting.WITHIN].score(),
        across_depth=depth_counts[Setting.ACROSS].score(),
        occlusion=occl_counts.score(),
    )
    for setting, task in ((Setting.WITHIN, "depth_within"), (Setting.ACROSS, "depth_across")):
        for name, score in depth_counts[setting].predicate_scores().items():
            report.per_predicate[(task, name)] = score
    for name, score in occl_counts.predicate_scores().items():
        report.per_predicate[("occlusion", name)] = score
    return report


def oracle_predictions(
    prediction_pairs: Sequence[PairLabel],
    correspondence: dict[str, str],
    gt_pairs: Sequence[PairLabel],
) -> list[PairLabel]:
    """The perfect-predicate predictor: copies the label wherever the pair
    maps onto groundtruth; elsewhere the value cannot matter (those stay
    false positives for any predictor)."""
    index = _gt_index(gt_pairs)
    out = []
    for pair in prediction_pairs:
        gt_a = correspondence.get(pair.object_id_a)
        gt_b = correspondence.get(pair.object_id_b)
        gt = index.get((gt_a, gt_b)) if gt_a is not None and gt_b is not None else None
        depth = Depth.UNSURE if pair.setting is Setting.ACROSS else Depth.SAME_DEPTH
        occlusion = Occlusion.NO_OCCLUSION if pair.setting is Setting.WITHIN else None
        if gt is not None:
            if gt.depth is not None:
                depth = gt.depth
            if gt.occlusion is not None:
                occlusion = gt.occlusion
        out.append(dataclasses.replace(pair, depth=depth, occlusion=occlusion))
    return out


# ---------------------------------------------------------------------------
# Error decomposition


PredictFn = Callable[[Sequence[PairLabel], dict[str, ObjectInstance]], list[PairLabel]]


@dataclass
class DecompositionReport:
    full: EvalReport
    predicate_prediction: EvalReport
    detection_oracle: EvalReport


def error_decomposition(
    bundle: DatasetBundle,
    detections: Sequence[ObjectInstance],
    predict: PredictFn,
    matching: Optional[MatchingConfig] = None,
    filter_config: Optional[FilterConfig] = None,
    meta: Optional[ClassMetadata] = None,
) -> DecompositionReport:
    """Score the same predictor three ways: the full detect-then-predict
    pipeline, predicate prediction over groundtruth boxes, and the full
    pipeline with a perfect predicate predictor."""
    matching = matching or MatchingConfig()
    filter_config = filter_config or FilterConfig()
    split_of = {im.image_id: im.split.value for im in bundle.images}
    gt_pairs = [
        p for p in bundle.pairs
        if split_of[p.image_id_a] in ("validation", "test")
    ]
    eval_images = {p.image_id_a for p in gt_pairs} | {p.image_id_b for p in gt_pairs}
    by_id = bundle.object_by_id()
    gt_by_image = {
        iid: objs for iid, objs in bundle.objects_by_image().items() if iid in eval_images
    }

    kept = filter_and_leak_detections(gt_by_image, detections, matching, filter_config, meta)
    correspondence = build_correspondence(gt_by_image, kept, matching)
    det_objects = {o.object_id: o for objs in kept.values() for o in objs}
    det_pairs = detection_eval_pairs(gt_pairs, kept, filter_config, meta)

    full_predictions = predict(det_pairs, det_objects)
    full = score_predictions(gt_pairs, full_predictions, correspondence, matching)

    gt_unlabeled = [dataclasses.replace(p, depth=None, occlusion=None) for p in gt_pairs]
    pp_predictions = predict(gt_unlabeled, by_id)
    predicate_prediction = score_predictions(
        gt_pairs, pp_predictions, identity_correspondence(bundle.objects), matching
    )

    oracle = oracle_predictions(det_pairs, correspondence, gt_pairs)
    detection_oracle = score_predictions(gt_pairs, oracle, correspondence, matching)

    return DecompositionReport(full, predicate_prediction, detection_oracle)


# ---------------------------------------------------------------------------
# Consistency


@dataclass(frozen=True)
class ConsistencyReport:
    depth_symmetry_violations: int
    depth_symmetry_checked: int
    occlusion_symmetry_violations: int
    occlusion_symmetry_checked: int
    transitivity_violations: int
    transitivity_checked: int

    @property
    def depth_symmetry_rate(self) -> float:
        c = self.depth_symmetry_checked
        return self.depth_symmetry_violations / c if c else 0.0

    @property
    def occlusion_symmetry_rate(self) -> float:
        c = self.occlusion_symmetry_checked
        return self.occlusion_symmetry_violations / c if c else 0.0

    @property
    def transitivity_rate(self) -> float:
        c = self.transitivity_checked
        return self.transitivity_violations / c if c else 0.0


def _closer_or_equal(d: Optional[Depth]) -> bool:
    return d in (Depth.A_CLOSER, Depth.SAME_DEPTH)


def consistency_report(pairs: Sequence[PairLabel]) -> ConsistencyReport:
    """Symmetry over unordered pairs labeled in both directions, transitivity
    over within-image ordered triples whose two premise pairs assert
    closer-or-equal. Works on predictions and on labels alike."""
    by_key: dict[tuple[str, str], PairLabel] = {}
    for p in pairs:
        by_key[p.key] = p

    sym_checked = sym_violated = 0
    osym_checked = osym_violated = 0
    for key, p in by_key.items():
        if key[0] >= key[1]:
            continue  # count each unordered pair once
        q = by_key.get((key[1], key[0]))
        if q is None:
            continue
        if p.depth is not None and q.depth is not None:
            sym_checked += 1
            if q.depth != flip_depth(p.depth):
                sym_violated += 1
        if p.occlusion is not None and q.occlusion is not None:
            osym_checked += 1
            if q.occlusion != flip_occlusion(p.occlusion):
                osym_violated += 1

    objects_by_image: dict[str, set[str]] = {}
    for p in pairs:
        if p.setting is Setting.WITHIN:
            objects_by_image.setdefault(p.image_id_a, set()).update(
                (p.object_id_a, p.object_id_b)
            )
    trans_checked = trans_violated = 0
    for image_id, ids in sorted(objects_by_image.items()):
        ordered = sorted(ids)
        for a in ordered:
            for b in ordered:
                if b == a:
                    continue
                ab = by_key.get((a, b))
                if ab is None or not _closer_or_equal(ab.depth):
                    continue
                for c in ordered:
                    if c == a or c == b:
                        continue
                    bc = by_key.get((b, c))
                    if bc is None or not _closer_or_equal(bc.depth):
                        continue
                    ac = by_key.get((a, c))
                    if ac is None or ac.depth is None:
                        continue
                    trans_checked += 1
                    if not _closer_or_equal(ac.depth):
                        trans_violated += 1
    return ConsistencyReport(
        depth_symmetry_violations=sym_violated,
        depth_symmetry_checked=sym_checked,
        occlusion_symmetry_violations=osym_violated,
        occlusion_symmetry_checked=osym_checked,
        transitivity_violations=trans_violated,
        transitivity_checked=trans_checked,
    )


# ---------------------------------------------------------------------------
# Stratified reports


def difficulty_report(
    gt_pairs: Sequence[PairLabel],
    predictions: Sequence[PairLabel],
    correspondence: dict[str, str],
    difficulties: dict[str, str],
    config: Optional[MatchingConfig] = None,
) -> dict[str, EvalReport]:
    """Per difficulty scale, scored as subsets (predictions outside the
    subset are ignored rather than treated as false positives)."""
    out: dict[str, EvalReport] = {}
    scales = sorted(set(difficulties.values()))
    for scale in scales:
        subset = [p for p in gt_pairs if difficulties.get(p.pair_id) == scale]
        out[scale] = score_predictions(
            subset, predictions, correspondence, config,
            count_unmapped_predictions=False,
        )
    return out


_BIN_QUANTITIES = ("size", "ypos", "xpos")


def _bin_value(obj: ObjectInstance, quantity: str) -> float:
    if quantity == "size":
        return obj.box.area
    if quantity == "ypos":
        return obj.box.center[1]
    return obj.box.center[0]


def binned_pair_report(
    gt_pairs: Sequence[PairLabel],
    predictions: Sequence[PairLabel],
    gt_objects: dict[str, ObjectInstance],
    correspondence: dict[str, str],
    quantity: str,
    setting: Setting,
    predicate: Depth = Depth.A_CLOSER,
    n_bins: int = 5,
    config: Optional[MatchingConfig] = None,
) -> dict[tuple[int, int], TaskScore]:
    """F1 of one depth predicate over (bin of object a, bin of object b)
    cells of a normalized geometric quantity. Every cell is reported, even
    empty ones."""
    if quantity not in _BIN_QUANTITIES:
        raise ValidationError(f"unknown binning quantity {quantity!r}")
    config = config or MatchingConfig()

    def bin_of(object_id: str) -> int:
        v = _bin_value(gt_objects[object_id], quantity)
        return min(int(v * n_bins), n_bins - 1)

    cells = {
        (i, j): [0, 0, 0]  # tp, predicted, actual
        for i in range(n_bins) for j in range(n_bins)
    }
    index = _gt_index([p for p in gt_pairs if p.setting == setting])
    for gt in index.values():
        if not _depth_countable(gt, config):
            continue
        if gt.depth == predicate:
            cells[(bin_of(gt.object_id_a), bin_of(gt.object_id_b))][2] += 1
    for pred in predictions:
        if pred.setting != setting or pred.depth != predicate:
            continue
        gt_a = correspondence.get(pred.object_id_a)
        gt_b = correspondence.get(pred.object_id_b)
        gt = index.get((gt_a, gt_b)) if gt_a is not None and gt_b is not None else None
        if gt is None or not _depth_countable(gt, config):
            continue
        cell = cells[(bin_of(gt.object_id_a), bin_of(gt.object_id_b))]
        cell[1] += 1
        if gt.depth == pred.depth:
            cell[0] += 1
    return {key: TaskScore(*vals) for key, vals in cells.items()}


def class_label_distributions(
    gt_pairs: Sequence[PairLabel],
    objects: dict[str, ObjectInstance],
    top_k: int = 6,
) -> list[list[object]]:
    """Label-distribution rows for the most frequent subject classes and
    ordered class pairs (within-image labels only): rows of
    (task, metric, stratum, value, count)."""
    class_counts: Counter = Counter()
    pair_counts: Counter = Counter()
    for p in gt_pairs:
        if p.setting is not Setting.WITHIN or p.depth is None:
            continue
        ca = objects[p.object_id_a].class_id
        cb = objects[p.object_id_b].class_id
        class_counts[ca] += 1
        pair_counts[(ca, cb)] += 1

    rows: list[list[object]] = []

    def emit(stratum_name: str, members: Sequence[PairLabel]) -> None:
        depth_hist: Counter = Counter()
        occl_hist: Counter = Counter()
        for p in members:
            if p.depth is not None:
                depth_hist[p.depth.name.lower()] += 1
            if p.occlusion is not None:
                occl_hist[p.occlusion.name.lower()] += 1
        for hist, kind in ((depth_hist, "depth"), (occl_hist, "occlusion")):
            total = sum(hist.values())
            for label in sorted(hist):
                rows.append([
                    f"bias_{kind}", "fraction",
                    f"{stratum_name}:{label}", repr(hist[label] / total), hist[label],
                ])

    within = [p for p in gt_pairs if p.setting is Setting.WITHIN]
    for class_id, _ in class_counts.most_common(top_k):
        members = [p for p in within if objects[p.object_id_a].class_id == class_id]
        emit(f"class[{class_id}]", members)
    for (ca, cb), _ in pair_counts.most_common(top_k):
        members = [
            p for p in within
            if objects[p.object_id_a].class_id == ca
            and objects[p.object_id_b].class_id == cb
        ]
        emit(f"class_pair[{ca},{cb}]", members)
    return rows


# ---------------------------------------------------------------------------
# Report serialization (metrics_report.csv rows)

METRICS_REPORT_HEADER = ["task", "metric", "stratum", "value", "count"]


def _task_rows(task: str, stratum: str, score: TaskScore) -> list[list[object]]:
    return [
        [task, "precision", stratum, repr(score.precision), score.predicted],
        [task, "recall", stratum, repr(score.recall), score.actual],
        [task, "f1", stratum, repr(score.f1), score.actual],
    ]


def metrics_rows(report: EvalReport, stratum: str = "all") -> list[list[object]]:
    rows = []
    rows += _task_rows("depth_within", stratum, report.within_depth)
    rows += _task_rows("occlusion", stratum, report.occlusion)
    rows += _task_rows("depth_across", stratum, report.across_depth)
    total_actual = (
        report.within_depth.actual + report.occlusion.actual + report.across_depth.actual
    )
    rows.append(["average", "f1", stratum, repr(report.average_f1), total_actual])
    for (task, predicate), score in sorted(report.per_predicate.items()):
        rows += _task_rows(task, f"{stratum}:{predicate}", score)
    return rows


def consistency_rows(report: ConsistencyReport, stratum: str = "all") -> list[list[object]]:
    return [
        ["consistency", "depth_symmetry_violation_rate", stratum,
         repr(report.depth_symmetry_rate), report.depth_symmetry_checked],
        ["consistency", "occlusion_symmetry_violation_rate", stratum,
         repr(report.occlusion_symmetry_rate), report.occlusion_symmetry_checked],
        ["consistency", "transitivity_violation_rate", stratum,
         repr(report.transitivity_rate), report.transitivity_checked],
    ]
