"""Command-line entry point: every workflow as a subcommand.

Exit codes: 0 success, 1 invalid input or flags, 2 unexpected runtime
failure. Outputs are written to a temporary sibling path and atomically
renamed, so an interrupted run never leaves a partial artifact behind.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import os
import shutil
import sys
import traceback
from pathlib import Path
from typing import Callable, Optional, Sequence

import uvicorn

from .aggregate import (
    DIFFICULTY_REPORT_HEADER,
    AggregationError,
    aggregate_bundle,
    difficulty_report_rows,
)
from .dataio import (
    ClassMetadata,
    DatasetBundle,
    FilterConfig,
    IntegrityError,
    ParseError,
    filter_bundle_objects,
    import_public_release,
    pair_admissible,
    read_bundle,
    read_objects_csv,
    read_predictions_csv,
    sample_training_pairs,
    exhaustive_eval_pairs,
    write_bundle,
    write_predictions_csv,
    write_relations_csv,
)
from .depthmaps import (
    DepthMapStore,
    EmptyRegionError,
    depth_to_gray,
    write_pfm,
    write_pgm16,
    write_png_gray,
)
from .evaluate import (
    METRICS_REPORT_HEADER,
    MatchingConfig,
    binned_pair_report,
    class_label_distributions,
    consistency_report,
    consistency_rows,
    difficulty_report,
    error_decomposition,
    identity_correspondence,
    metrics_rows,
    score_predictions,
)
from .features import FeatureConfig, FeatureContext, pseudo_appearance_vectors, read_feature_file
from .mlp import (
    MODEL_SCOPES,
    TRAIN_LOG_HEADER,
    TrainConfig,
    load_model,
    predict_mlp,
    save_model,
    train_mlp,
    training_pairs_for,
)
from .model import ObjectInstance, PairLabel, Setting, Split, ValidationError
from .rules import RULE_NAMES, ClassPriorTable, RuleConfig, RuleMargins, predict_with_rule
from .service import AnnotationStore, create_app
from .synthetic import (
    GenerationError,
    GeneratorConfig,
    build_synthetic_bundle,
    corrupt_depth_map,
    simulate_detections,
    stable_rng,
)

SWEEP_HEADER = ["param", "value", "f1_within_depth", "f1_occlusion", "f1_across_depth", "f1_average", "best"]
TRANSFER_HEADER = ["trained_on", "f1_within_depth", "f1_across_depth"]


class CliError(Exception):
    """Bad flags or arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: A003 - argparse hook
        raise CliError(message)


@contextlib.contextmanager
def _staged(path: Path | str, directory: bool = False):
    """Yield a temp sibling of `path`; rename it over `path` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp"
    if tmp.is_dir():
        shutil.rmtree(tmp)
    elif tmp.exists():
        tmp.unlink()
    if directory:
        tmp.mkdir()
    try:
        yield tmp
    except BaseException:
        if tmp.is_dir():
            shutil.rmtree(tmp, ignore_errors=True)
        elif tmp.exists():
            tmp.unlink()
        raise
    if directory and path.exists():
        shutil.rmtree(path)
    os.replace(tmp, path)


def _write_csv(path: Path | str, header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header))
        writer.writerows(rows)


def _load_meta(args: argparse.Namespace) -> Optional[ClassMetadata]:
    if getattr(args, "class_meta", None) is None:
        return None
    return ClassMetadata.load(args.class_meta, getattr(args, "part_of", None))


def _split_set(text: str) -> set[str]:
    names = {s.strip() for s in text.split(",") if s.strip()}
    bad = names - {s.value for s in Split}
    if bad:
        raise ValidationError(f"unknown splits {sorted(bad)}")
    return names

def _pairs_in_splits(bundle: DatasetBundle, splits: set[str]) -> list[PairLabel]:
    split_of = {im.image_id: im.split.value for im in bundle.images}
    return [p for p in bundle.pairs if split_of[p.image_id_a] in splits]


def _parse_features(spec: str, objects: Sequence[ObjectInstance], args: argparse.Namespace) -> FeatureConfig:
    letters = [s.strip().upper() for s in spec.split(",") if s.strip()]
    unknown = sorted(set(letters) - set("BCDA"))
    if unknown:
        raise ValidationError(f"unknown feature letters {unknown}; use B (box), C (class), D (depth), A (appearance)")
    use_class = "C" in letters
    n_classes = 0
    if use_class:
        n_classes = args.n_classes or max((o.class_id for o in objects), default=-1) + 1
    use_appearance = "A" in letters
    return FeatureConfig(
        use_class=use_class,
        use_bbox="B" in letters,
        use_depth="D" in letters,
        use_appearance=use_appearance,
        n_classes=n_classes,
        appearance_dim=args.appearance_dim if use_appearance else 0,
    )


def _feature_context(
    config: FeatureConfig,
    artifacts: Optional[Path | str],
    objects_pool: Sequence[ObjectInstance],
    appearance_seed: int,
) -> FeatureContext:
    depth_store = None
    if config.use_depth:
        if artifacts is None:
            raise ValidationError("depth features need --artifacts pointing at a depth_maps/ parent")
        depth_store = DepthMapStore(Path(artifacts) / "depth_maps")
    object_vecs = image_vecs = None
    if config.use_appearance:
        obj_path = None if artifacts is None else Path(artifacts) / "appearance_objects.feat"
        img_path = None if artifacts is None else Path(artifacts) / "appearance_images.feat"
        if obj_path is not None and obj_path.exists() and img_path.exists():
            object_vecs = read_feature_file(obj_path)
            image_vecs = read_feature_file(img_path)
        else:
            object_vecs, image_vecs = pseudo_appearance_vectors(
                objects_pool, config.appearance_dim, appearance_seed
            )
    return FeatureContext(
        config,
        depth_store=depth_store,
        object_appearance=object_vecs,
        image_appearance=image_vecs,
    )


PredictorFn = Callable[[Sequence[PairLabel], dict[str, ObjectInstance]], list[PairLabel]]


def _build_predictor(
    args: argparse.Namespace,
    bundle: DatasetBundle,
    artifacts: Optional[Path | str],
    extra_objects: Sequence[ObjectInstance] = (),
) -> tuple[str, PredictorFn, list[tuple[str, str]]]:
    """Predictor closure over (pairs, objects); returns (name, fn, skip log)."""
    skipped: list[tuple[str, str]] = []
    if args.model == "mlp":
        if not getattr(args, "model_file", None):
            raise ValidationError("--model-file is required with --model mlp")
        model = load_model(args.model_file)
        pool = list(bundle.objects) + list(extra_objects)
        context = _feature_context(model.feature_config, artifacts, pool, args.appearance_seed)

        def fn(pairs: Sequence[PairLabel], objs: dict[str, ObjectInstance]) -> list[PairLabel]:
            return predict_mlp(model, pairs, objs, context)

        return f"mlp:{model.scope}", fn, skipped

    if not args.model.startswith("rule:"):
        raise ValidationError(f"unknown model {args.model!r}; use rule:<name> or mlp")
    rule = args.model.split(":", 1)[1]
    if rule not in RULE_NAMES:
        raise ValidationError(f"unknown rule {rule!r}, expected one of {RULE_NAMES}")
    config = RuleConfig.from_file(args.rule_config) if getattr(args, "rule_config", None) else RuleConfig()
    depth_store = None
    if rule == "depth":
        if artifacts is None:
            raise ValidationError("rule:depth needs --artifacts pointing at a depth_maps/ parent")
        depth_store = DepthMapStore(Path(artifacts) / "depth_maps")
    priors: dict[Setting, ClassPriorTable] = {}
    if rule == "class":
        split_of = {im.image_id: im.split for im in bundle.images}
        train_pairs = [p for p in bundle.pairs if split_of[p.image_id_a] is Split.TRAIN]
        by_id = bundle.object_by_id()
        for setting in Setting:
            priors[setting] = ClassPriorTable.fit(train_pairs, by_id, setting)

    def fn(pairs: Sequence[PairLabel], objs: dict[str, ObjectInstance]) -> list[PairLabel]:
        predicted: dict[str, PairLabel] = {}
        for setting in Setting:
            subset = [p for p in pairs if p.setting is setting]
            if not subset:
                continue
            result = predict_with_rule(rule, subset, objs, config, depth_store, priors.get(setting))
            skipped.extend(result.skipped)
            for p in result.pairs:
                predicted[p.pair_id] = p
        return [predicted[p.pair_id] for p in pairs if p.pair_id in predicted]

    return args.model, fn, skipped


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(args: argparse.Namespace) -> int:
    config = GeneratorConfig.from_file(args.config) if args.config else GeneratorConfig()
    filter_config = FilterConfig.from_file(args.filter_config) if args.filter_config else None
    dataset = build_synthetic_bundle(config, args.seed, filter_config, with_votes=not args.no_votes)
    write_map = write_pgm16 if args.depth_format == "pgm" else write_pfm
    with _staged(args.out, directory=True) as tmp:
        write_bundle(dataset.bundle, tmp)
        config.to_file(tmp / "generator_config.txt")
        depth_dir = tmp / "depth_maps"
        image_dir = tmp / "images"
        depth_dir.mkdir()
        image_dir.mkdir()
        for image_id, depth in dataset.render_depth_maps().items():
            if args.depth_noise > 0 or args.depth_smooth > 0:
                depth = corrupt_depth_map(
                    depth,
                    stable_rng(args.seed, "depthnoise", image_id),
                    noise_sigma=args.depth_noise,
                    smooth_radius=args.depth_smooth,
                )
            write_map(depth_dir / f"{image_id}.{args.depth_format}", depth)
            write_png_gray(image_dir / f"{image_id}.png", depth_to_gray(depth))
    return 0


def cmd_import(args: argparse.Namespace) -> int:
    result = import_public_release(args.release_dir, vocabulary_csv=args.vocabulary)
    with _staged(args.out, directory=True) as tmp:
        write_bundle(result.bundle, tmp)
        _write_csv(tmp / "rejects.csv", ["file", "line", "reason"], result.rejects)
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.in_dir)
    config = FilterConfig.from_file(args.config) if args.config else FilterConfig()
    meta = _load_meta(args)
    survivors, report = filter_bundle_objects(bundle, config, meta)
    surviving_ids = {o.object_id for o in survivors}
    by_id = {o.object_id: o for o in survivors}
    kept_pairs = []
    for p in bundle.pairs:
        if p.object_id_a not in surviving_ids or p.object_id_b not in surviving_ids:
            continue
        if p.setting is Setting.WITHIN and not pair_admissible(
            by_id[p.object_id_a], by_id[p.object_id_b], config, meta
        ):
            continue
        kept_pairs.append(p)
    kept_pair_ids = {p.pair_id for p in kept_pairs}
    filtered = DatasetBundle(
        images=bundle.images,
        objects=survivors,
        pairs=kept_pairs,
        votes=[v for v in bundle.votes if v.pair_id in kept_pair_ids],
        provenance=bundle.provenance,
        difficulties={k: v for k, v in bundle.difficulties.items() if k in kept_pair_ids},
    )
    rows = report.rows() + [
        ["input_pairs", len(bundle.pairs)],
        ["surviving_pairs", len(kept_pairs)],
    ]
    with _staged(args.out, directory=True) as tmp:
        write_bundle(filtered, tmp)
        _write_csv(tmp / "filter_report.csv", ["stage", "count"], rows)
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.in_dir)
    config = FilterConfig.from_file(args.filter_config) if args.filter_config else FilterConfig()
    meta = _load_meta(args)
    if args.mode == "train":
        pairs = sample_training_pairs(bundle, config, meta, args.seed)
    else:
        pairs = exhaustive_eval_pairs(bundle, config, meta, args.seed)
    if args.setting != "both":
        pairs = [p for p in pairs if p.setting.value == args.setting]
    with _staged(args.out) as tmp:
        write_relations_csv(tmp, pairs)
    return 0


def cmd_aggregate(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.votes)
    result = aggregate_bundle(bundle, required_eval_votes=args.required_votes_eval)
    aggregated = result.apply(bundle)
    with _staged(args.out, directory=True) as tmp:
        write_bundle(aggregated, tmp)
        _write_csv(tmp / "difficulty_report.csv", DIFFICULTY_REPORT_HEADER,
                   difficulty_report_rows(result, bundle))
        _write_csv(tmp / "issues.csv", ["pair_id", "reason"], result.issues)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.in_dir)
    artifacts = args.artifacts or args.in_dir
    feature_config = _parse_features(args.features, bundle.objects, args)
    context = _feature_context(feature_config, artifacts, bundle.objects, args.appearance_seed)
    config = TrainConfig.from_file(args.train_config) if args.train_config else TrainConfig()
    split_of = {im.image_id: im.split for im in bundle.images}
    pairs = training_pairs_for(bundle.pairs, split_of, args.setting)
    model, log_rows = train_mlp(pairs, bundle.object_by_id(), context, config, args.setting, args.seed)
    with _staged(args.out_model) as tmp:
        save_model(model, tmp)
    if args.log:
        with _staged(args.log) as tmp:
            _write_csv(tmp, TRAIN_LOG_HEADER, log_rows)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.in_dir)
    artifacts = args.artifacts or args.in_dir
    pairs = _pairs_in_splits(bundle, _split_set(args.split))
    name, predictor, skipped = _build_predictor(args, bundle, artifacts)
    predictions = predictor(pairs, bundle.object_by_id())
    with _staged(args.out) as tmp:
        write_predictions_csv(tmp, predictions, name)
    if skipped:
        print(f"skipped {len(skipped)} pairs (first: {skipped[0][1]})", file=sys.stderr)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    predictions, _name = read_predictions_csv(args.pred)
    gt = read_bundle(args.gt)
    matching = MatchingConfig.from_file(args.matching_config) if args.matching_config else MatchingConfig()
    gt_pairs = _pairs_in_splits(gt, _split_set(args.split))
    correspondence = identity_correspondence(gt.objects)
    report = score_predictions(gt_pairs, predictions, correspondence, matching)
    consistency = consistency_report(predictions)
    with _staged(args.out, directory=True) as tmp:
        _write_csv(tmp / "metrics.csv", METRICS_REPORT_HEADER, metrics_rows(report))
        _write_csv(tmp / "consistency.csv", METRICS_REPORT_HEADER, consistency_rows(consistency))
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    predictions, _name = read_predictions_csv(args.pred)
    gt = read_bundle(args.gt)
    matching = MatchingConfig.from_file(args.matching_config) if args.matching_config else MatchingConfig()
    gt_pairs = _pairs_in_splits(gt, _split_set(args.split))
    objects = gt.object_by_id()
    correspondence = identity_correspondence(gt.objects)
    strata = [s.strip() for s in args.strata.split(",") if s.strip()]
    known = {"difficulty", "predicate", "size", "ypos", "xpos", "class"}
    bad = sorted(set(strata) - known)
    if bad:
        raise ValidationError(f"unknown strata {bad}; expected a subset of {sorted(known)}")
    with _staged(args.out, directory=True) as tmp:
        for stratum in strata:
            if stratum == "difficulty":
                reports = difficulty_report(gt_pairs, predictions, correspondence, gt.difficulties, matching)
                rows = []
                for scale in sorted(reports):
                    rows += metrics_rows(reports[scale], stratum=f"difficulty:{scale}")
            elif stratum == "predicate":
                rows = metrics_rows(score_predictions(gt_pairs, predictions, correspondence, matching))
            elif stratum == "class":
                rows = class_label_distributions(gt_pairs, objects)
            else:
                cells = binned_pair_report(
                    gt_pairs, predictions, objects, correspondence, stratum, Setting.WITHIN,
                    config=matching,
                )
                rows = [
                    [f"bin_{stratum}", "f1", f"within:{i},{j}", repr(score.f1), score.actual]
                    for (i, j), score in sorted(cells.items())
                ]
            _write_csv(tmp / f"{stratum}.csv", METRICS_REPORT_HEADER, rows)
        _write_csv(tmp / "consistency.csv", METRICS_REPORT_HEADER,
                   consistency_rows(consistency_report(predictions)))
    return 0


def _parse_grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValidationError(f"bad grid {text!r}, expected start:stop:step")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ValidationError(f"bad grid {text!r}, expected numbers") from None
    if step <= 0 or stop < start:
        raise ValidationError("grid needs step > 0 and stop >= start")
    values = []
    i = 0
    while True:
        v = start + i * step
        if v > stop + 1e-12:
            break
        values.append(v)
        i += 1
    return values


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.param not in ("delta_s", "delta_l", "delta_d"):
        raise ValidationError(f"unknown margin parameter {args.param!r}")
    gt = read_bundle(args.val)
    artifacts = args.artifacts or args.val
    pairs = _pairs_in_splits(gt, _split_set(args.split))
    objects = gt.object_by_id()
    correspondence = identity_correspondence(gt.objects)
    base = RuleConfig.from_file(args.rule_config) if args.rule_config else RuleConfig()
    depth_store = DepthMapStore(Path(artifacts) / "depth_maps") if args.rule == "depth" else None
    grid = _parse_grid(args.grid)
    rows = []
    best_index = 0
    best_f1 = -1.0
    for i, value in enumerate(grid):
        margins = dataclasses.replace(base.margins, **{args.param: value})
        config = dataclasses.replace(base, margins=margins)
        result = predict_with_rule(args.rule, pairs, objects, config, depth_store)
        report = score_predictions(pairs, result.pairs, correspondence)
        rows.append([
            args.param, repr(value),
            repr(report.within_depth.f1), repr(report.occlusion.f1),
            repr(report.across_depth.f1), repr(report.average_f1), 0,
        ])
        if report.average_f1 > best_f1:
            best_f1 = report.average_f1
            best_index = i
    rows[best_index][-1] = 1
    with _staged(args.out) as tmp:
        _write_csv(tmp, SWEEP_HEADER, rows)
    print(f"best {args.param}={grid[best_index]!r} average_f1={best_f1!r}")
    return 0


def cmd_decompose(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.in_dir)
    artifacts = args.artifacts or args.in_dir
    if args.detections:
        detections = read_objects_csv(args.detections)
    else:
        detections = simulate_detections(
            bundle, args.det_seed,
            miss_rate=args.miss_rate,
            jitter_sigma=args.jitter_sigma,
            spurious_rate=args.spurious_rate,
        )
    matching = MatchingConfig.from_file(args.matching_config) if args.matching_config else MatchingConfig()
    filter_config = FilterConfig.from_file(args.filter_config) if args.filter_config else FilterConfig()
    meta = _load_meta(args)
    _name, predictor, _skipped = _build_predictor(args, bundle, artifacts, extra_objects=detections)
    report = error_decomposition(bundle, detections, predictor, matching, filter_config, meta)
    rows = (
        metrics_rows(report.full, "full")
        + metrics_rows(report.predicate_prediction, "predicate_prediction")
        + metrics_rows(report.detection_oracle, "detection_oracle")
    )
    with _staged(args.out) as tmp:
        _write_csv(tmp, METRICS_REPORT_HEADER, rows)
    return 0


def cmd_transfer(args: argparse.Namespace) -> int:
    gt = read_bundle(args.in_dir)
    artifacts = args.artifacts or args.in_dir
    pairs = _pairs_in_splits(gt, _split_set(args.split))
    objects = gt.object_by_id()
    correspondence = identity_correspondence(gt.objects)
    matching = MatchingConfig.from_file(args.matching_config) if args.matching_config else MatchingConfig()
    model_paths = {
        "within": args.model_within,
        "across": args.model_across,
        "joint": args.model_joint,
    }
    rows = []
    for scope in MODEL_SCOPES:
        model = load_model(model_paths[scope])
        if model.scope != scope:
            raise ValidationError(f"{model_paths[scope]}: trained for {model.scope!r}, passed as {scope!r}")
        context = _feature_context(model.feature_config, artifacts, gt.objects, args.appearance_seed)
        predictions = predict_mlp(model, pairs, objects, context)
        report = score_predictions(pairs, predictions, correspondence, matching)
        rows.append([scope, repr(report.within_depth.f1), repr(report.across_depth.f1)])
    with _staged(args.out) as tmp:
        _write_csv(tmp, TRANSFER_HEADER, rows)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.data_dir)
    journal = args.journal or Path(args.data_dir) / "vote_journal.csv"
    store = AnnotationStore(bundle, journal, required_eval_votes=args.required_votes_eval)
    images_dir = args.images_dir or Path(args.data_dir) / "images"
    app = create_app(store, images_dir=images_dir, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_common_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="rule:size|rule:location|rule:depth|rule:class|mlp")
    p.add_argument("--model-file", help="model checkpoint, required with --model mlp")
    p.add_argument("--rule-config", help="key=value file with rule margins")
    p.add_argument("--appearance-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vrd25", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic bundle with depth maps and votes")
    p.add_argument("--config", help="generator key=value config")
    p.add_argument("--filter-config", help="admission-filter key=value config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-votes", action="store_true")
    p.add_argument("--depth-noise", type=float, default=0.0, help="multiplicative depth-map noise sigma")
    p.add_argument("--depth-smooth", type=int, default=0, help="depth-map box-blur radius in pixels")
    p.add_argument("--depth-format", choices=("pfm", "pgm"), default="pfm")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("import", help="import release-style CSV files into a bundle")
    p.add_argument("--release-dir", required=True)
    p.add_argument("--vocabulary", help="class vocabulary csv (default: <release-dir>/vocabulary.csv)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("filter", help="apply object and pair admission filters")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--config", help="filter key=value config")
    p.add_argument("--class-meta", help="class metadata csv")
    p.add_argument("--part-of", help="part-of pairs csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("sample", help="sample training pairs or enumerate evaluation pairs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--mode", choices=("train", "eval"), required=True)
    p.add_argument("--setting", choices=("within", "across", "both"), default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--filter-config")
    p.add_argument("--class-meta")
    p.add_argument("--part-of")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("aggregate", help="aggregate votes into labels and difficulty scales")
    p.add_argument("--votes", required=True, help="bundle directory containing votes.csv")
    p.add_argument("--required-votes-eval", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("train", help="train the two-head perceptron")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--features", default="B", help="comma list of B,C,D,A feature blocks")
    p.add_argument("--setting", choices=MODEL_SCOPES, default="joint")
    p.add_argument("--train-config", help="trainer key=value config")
    p.add_argument("--artifacts", help="directory with depth_maps/ and .feat files (default: --in)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--appearance-dim", type=int, default=16)
    p.add_argument("--appearance-seed", type=int, default=0)
    p.add_argument("--n-classes", type=int)
    p.add_argument("--out-model", required=True)
    p.add_argument("--log", help="write the training log csv here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict predicates for a bundle's pairs")
    _add_common_model_flags(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--artifacts", help="directory with depth_maps/ and .feat files (default: --in)")
    p.add_argument("--split", default="validation,test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a predictions file against groundtruth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--matching-config")
    p.add_argument("--split", default="validation,test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="stratified, bias, and consistency reports")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--strata", default="difficulty,predicate,size,ypos,xpos,class")
    p.add_argument("--matching-config")
    p.add_argument("--split", default="validation,test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="grid-search a rule margin on validation pairs")
    p.add_argument("--rule", choices=("size", "location", "depth"), required=True)
    p.add_argument("--param", required=True, help="delta_s, delta_l, or delta_d")
    p.add_argument("--grid", required=True, help="start:stop:step, inclusive")
    p.add_argument("--val", required=True, help="groundtruth bundle directory")
    p.add_argument("--artifacts")
    p.add_argument("--rule-config")
    p.add_argument("--split", default="validation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("decompose", help="full-pipeline vs predicate-only vs detection-oracle scores")
    _add_common_model_flags(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--artifacts")
    p.add_argument("--detections", help="objects csv of detections; simulated when absent")
    p.add_argument("--det-seed", type=int, default=0)
    p.add_argument("--miss-rate", type=float, default=0.0)
    p.add_argument("--jitter-sigma", type=float, default=0.0)
    p.add_argument("--spurious-rate", type=float, default=0.0)
    p.add_argument("--matching-config")
    p.add_argument("--filter-config")
    p.add_argument("--class-meta")
    p.add_argument("--part-of")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("transfer", help="cross-setting evaluation of scoped models")
    p.add_argument("--model-within", required=True)
    p.add_argument("--model-across", required=True)
    p.add_argument("--model-joint", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--artifacts")
    p.add_argument("--matching-config")
    p.add_argument("--split", default="validation,test")
    p.add_argument("--appearance-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--images-dir", help="PNG directory (default: <data-dir>/images)")
    p.add_argument("--ui-dir", help="static annotation UI to mount at /")
    p.add_argument("--journal", help="vote journal path (default: <data-dir>/vote_journal.csv)")
    p.add_argument("--required-votes-eval", type=int, default=5)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (
        ValidationError,
        ParseError,
        IntegrityError,
        AggregationError,
        GenerationError,
        EmptyRegionError,
        FileNotFoundError,
        NotADirectoryError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        raise
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
