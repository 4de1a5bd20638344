"""Canonical file formats, the box/pair filtering procedure, and pair sampling.

All files are header-first CSV, UTF-8, LF line endings, predicate codes per
`vrd25.model`. Removal thresholds are strict inequalities (< min area, > max
area, > max pair IoU) so boundary fixtures stay deterministic.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import (
    Box,
    Depth,
    ImageRecord,
    ObjectInstance,
    Occlusion,
    PairLabel,
    Setting,
    Split,
    ValidationError,
    VoteRecord,
    iou,
    pair_id_for,
)

IMAGES_HEADER = ["image_id", "width_px", "height_px", "split", "group"]
OBJECTS_HEADER = [
    "object_id", "image_id", "class_id",
    "xmin", "ymin", "xmax", "ymax",
    "is_group_of", "detector_score",
]
RELATIONS_HEADER = [
    "pair_id", "setting",
    "image_id_a", "object_id_a", "image_id_b", "object_id_b",
    "depth", "occlusion",
]
VOTES_HEADER = ["pair_id", "rater_id", "depth_vote", "occlusion_vote", "timestamp_unix_ms"]
PREDICTIONS_HEADER = RELATIONS_HEADER + ["model_name"]
CLASS_META_HEADER = ["class_id", "name", "is_body_part", "is_clothing", "is_person"]
PART_OF_HEADER = ["part_class_id", "whole_class_id"]
PAIR_DIFFICULTY_HEADER = ["pair_id", "difficulty"]


class ParseError(ValueError):
    """Malformed file content, reported with file and line."""


class IntegrityError(ValueError):
    """Dangling references between bundle files."""


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds for the object and pair admission filters."""

    min_area_frac: float = 0.02
    max_area_frac: float = 0.70
    pair_iou_max: float = 0.7

    def __post_init__(self) -> None:
        if not (0.0 <= self.min_area_frac < self.max_area_frac <= 1.0):
            raise ValidationError("area window must satisfy 0 <= min < max <= 1")
        if not (0.0 < self.pair_iou_max <= 1.0):
            raise ValidationError("pair_iou_max must lie in (0, 1]")

    @classmethod
    def from_file(cls, path: Path | str) -> "FilterConfig":
        values = read_kv_config(path)
        kwargs = {}
        for name in ("min_area_frac", "max_area_frac", "pair_iou_max"):
            if name in values:
                kwargs[name] = float(values[name])
        return cls(**kwargs)


@dataclass
class ClassMetadata:
    """Class-vocabulary flags and the part-of exclusion table (data, not code)."""

    names: dict[int, str] = field(default_factory=dict)
    body_part_ids: frozenset[int] = frozenset()
    clothing_ids: frozenset[int] = frozenset()
    person_ids: frozenset[int] = frozenset()
    part_of: frozenset[tuple[int, int]] = frozenset()

    @classmethod
    def empty(cls) -> "ClassMetadata":
        return cls()

    @classmethod
    def load(cls, class_csv: Path | str, part_of_csv: Optional[Path | str] = None) -> "ClassMetadata":
        names: dict[int, str] = {}
        body, cloth, person = set(), set(), set()
        for line_no, row in _read_rows(class_csv, CLASS_META_HEADER):
            cid = _parse_int(row[0], "class_id", class_csv, line_no)
            names[cid] = row[1]
            if _parse_bool(row[2], "is_body_part", class_csv, line_no):
                body.add(cid)
            if _parse_bool(row[3], "is_clothing", class_csv, line_no):
                cloth.add(cid)
            if _parse_bool(row[4], "is_person", class_csv, line_no):
                person.add(cid)
        parts: set[tuple[int, int]] = set()
        if part_of_csv is not None and Path(part_of_csv).exists():
            for line_no, row in _read_rows(part_of_csv, PART_OF_HEADER):
                parts.add((
                    _parse_int(row[0], "part_class_id", part_of_csv, line_no),
                    _parse_int(row[1], "whole_class_id", part_of_csv, line_no),
                ))
        return cls(names, frozenset(body), frozenset(cloth), frozenset(person), frozenset(parts))

    def save(self, class_csv: Path | str, part_of_csv: Path | str) -> None:
        rows = [
            [cid, self.names.get(cid, f"class_{cid}"),
             int(cid in self.body_part_ids), int(cid in self.clothing_ids),
             int(cid in self.person_ids)]
            for cid in sorted(self.names)
        ]
        _write_rows(class_csv, CLASS_META_HEADER, rows)
        _write_rows(part_of_csv, PART_OF_HEADER, sorted(self.part_of))


@dataclass
class DatasetBundle:
    """Everything one dataset directory holds, in memory."""

    images: list[ImageRecord]
    objects: list[ObjectInstance]
    pairs: list[PairLabel]
    votes: list[VoteRecord] = field(default_factory=list)
    provenance: str = "synthetic"
    difficulties: dict[str, str] = field(default_factory=dict)  # pair_id -> scale name

    def image_by_id(self) -> dict[str, ImageRecord]:
        return {im.image_id: im for im in self.images}

    def object_by_id(self) -> dict[str, ObjectInstance]:
        return {o.object_id: o for o in self.objects}

    def objects_by_image(self) -> dict[str, list[ObjectInstance]]:
        out: dict[str, list[ObjectInstance]] = {im.image_id: [] for im in self.images}
        for o in self.objects:
            out.setdefault(o.image_id, []).append(o)
        return out

    def validate(self) -> None:
        image_ids = {im.image_id for im in self.images}
        if len(image_ids) != len(self.images):
            raise IntegrityError("duplicate image_id in images")
        object_ids = set()
        dangling = []
        for o in self.objects:
            if o.object_id in object_ids:
                raise IntegrityError(f"duplicate object_id {o.object_id!r}")
            object_ids.add(o.object_id)
            if o.image_id not in image_ids:
                dangling.append(o.object_id)
        if dangling:
            raise IntegrityError(f"objects referencing unknown image_id: {dangling[:10]}")
        by_id = self.object_by_id()
        bad_pairs = []
        for p in self.pairs:
            for oid, iid in ((p.object_id_a, p.image_id_a), (p.object_id_b, p.image_id_b)):
                obj = by_id.get(oid)
                if obj is None or obj.image_id != iid:
                    bad_pairs.append(p.pair_id)
                    break
        if bad_pairs:
            raise IntegrityError(f"pairs referencing unknown objects: {bad_pairs[:10]}")
        known_pairs = {p.pair_id for p in self.pairs}
        bad_votes = sorted({v.pair_id for v in self.votes} - known_pairs)
        if bad_votes:
            raise IntegrityError(f"votes referencing unknown pair_id: {bad_votes[:10]}")


# ---------------------------------------------------------------------------
# Filtering


def filter_objects(
    objects: Sequence[ObjectInstance],
    config: FilterConfig,
    meta: Optional[ClassMetadata] = None,
) -> list[ObjectInstance]:
    """Admission filter for one image's boxes.

    Removal order is fixed: group-of boxes first, then body-part/clothing
    boxes when a person box is present in the image, then the area window.
    Idempotent by construction (each stage is a pure predicate).
    """
    meta = meta or ClassMetadata.empty()
    survivors = [o for o in objects if not o.is_group_of]
    has_person = any(o.class_id in meta.person_ids for o in survivors)
    if has_person:
        drop = meta.body_part_ids | meta.clothing_ids
        survivors = [o for o in survivors if o.class_id not in drop]
    survivors = [
        o for o in survivors
        if config.min_area_frac <= o.box.area <= config.max_area_frac
    ]
    return survivors


def pair_admissible(
    a: ObjectInstance,
    b: ObjectInstance,
    config: FilterConfig,
    meta: Optional[ClassMetadata] = None,
) -> bool:
    """Pair-level admission: rejects highly-overlapped and part-of pairs."""
    if iou(a.box, b.box) > config.pair_iou_max:
        return False
    if meta is not None:
        if (a.class_id, b.class_id) in meta.part_of or (b.class_id, a.class_id) in meta.part_of:
            return False
    return True


def filter_pairs(
    pairs: Sequence[tuple[ObjectInstance, ObjectInstance]],
    config: FilterConfig,
    meta: Optional[ClassMetadata] = None,
) -> list[tuple[ObjectInstance, ObjectInstance]]:
    return [(a, b) for a, b in pairs if pair_admissible(a, b, config, meta)]


def admissible_within_pairs(
    objects: Sequence[ObjectInstance],
    config: FilterConfig,
    meta: Optional[ClassMetadata] = None,
) -> list[tuple[ObjectInstance, ObjectInstance]]:
    """All admissible ordered pairs over one image's surviving objects."""
    out = []
    for a in objects:
        for b in objects:
            if a.object_id != b.object_id and pair_admissible(a, b, config, meta):
                out.append((a, b))
    return out


@dataclass
class FilterReport:
    """Counts removed at each filter stage, for the survival report."""

    input_objects: int = 0
    removed_group_of: int = 0
    removed_body_part_clothing: int = 0
    removed_area: int = 0
    surviving_objects: int = 0

    def rows(self) -> list[list[object]]:
        return [
            ["input_objects", self.input_objects],
            ["removed_group_of", self.removed_group_of],
            ["removed_body_part_clothing", self.removed_body_part_clothing],
            ["removed_area", self.removed_area],
            ["surviving_objects", self.surviving_objects],
        ]


def filter_bundle_objects(
    bundle: DatasetBundle,
    config: FilterConfig,
    meta: Optional[ClassMetadata] = None,
) -> tuple[list[ObjectInstance], FilterReport]:
    """Apply filter_objects image by image; returns survivors plus stage counts."""
    meta = meta or ClassMetadata.empty()
    report = FilterReport(input_objects=len(bundle.objects))
    survivors: list[ObjectInstance] = []
    for image_id, objs in sorted(bundle.objects_by_image().items()):
        stage1 = [o for o in objs if not o.is_group_of]
        report.removed_group_of += len(objs) - len(stage1)
        has_person = any(o.class_id in meta.person_ids for o in stage1)
        stage2 = stage1
        if has_person:
            drop = meta.body_part_ids | meta.clothing_ids
            stage2 = [o for o in stage1 if o.class_id not in drop]
        report.removed_body_part_clothing += len(stage1) - len(stage2)
        stage3 = [
            o for o in stage2
            if config.min_area_frac <= o.box.area <= config.max_area_frac
        ]
        report.removed_area += len(stage2) - len(stage3)
        survivors.extend(stage3)
    report.surviving_objects = len(survivors)
    return survivors, report


# ---------------------------------------------------------------------------
# Pair sampling


def assign_group(image_id: str) -> str:
    """Deterministic, split-stable A/B group from a hash of the image id."""
    digest = hashlib.blake2b(image_id.encode("utf-8"), digest_size=8).digest()
    return "A" if digest[0] % 2 == 0 else "B"


def _stable_seed(*parts: object) -> np.random.SeedSequence:
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return np.random.SeedSequence(int.from_bytes(digest, "little"))


def match_image_pairs(
    images: Sequence[ImageRecord], seed: int
) -> list[tuple[str, str]]:
    """Random perfect matching of group-A images to group-B images.

    Deterministic given the seed; each image is used at most once.
    """
    group_a = sorted(im.image_id for im in images if im.group == "A")
    group_b = sorted(im.image_id for im in images if im.group == "B")
    rng = np.random.default_rng(_stable_seed("match", seed))
    perm_a = [group_a[i] for i in rng.permutation(len(group_a))]
    perm_b = [group_b[i] for i in rng.permutation(len(group_b))]
    return list(zip(perm_a, perm_b))


def _unlabeled_pair(setting: Setting, a: ObjectInstance, b: ObjectInstance) -> PairLabel:
    return PairLabel(
        pair_id=pair_id_for(setting, a.object_id, b.object_id),
        setting=setting,
        image_id_a=a.image_id,
        object_id_a=a.object_id,
        image_id_b=b.image_id,
        object_id_b=b.object_id,
        depth=None,
        occlusion=None,
    )


def sample_training_pairs(
    bundle: DatasetBundle,
    config: FilterConfig,
    meta: Optional[ClassMetadata],
    seed: int,
) -> list[PairLabel]:
    """Training-split annotation pairs: one random admissible ordered pair per
    image, plus one random object pair per matched A-B image pair."""
    survivors, _ = filter_bundle_objects(bundle, config, meta)
    by_image: dict[str, list[ObjectInstance]] = {}
    for o in survivors:
        by_image.setdefault(o.image_id, []).append(o)
    image_index = bundle.image_by_id()
    train_images = sorted(
        im.image_id for im in bundle.images if im.split == Split.TRAIN
    )

    pairs: list[PairLabel] = []
    rng = np.random.default_rng(_stable_seed("train-within", seed))
    for image_id in train_images:
        objs = by_image.get(image_id, [])
        if len(objs) < 2:
            continue
        candidates = admissible_within_pairs(objs, config, meta)
        if not candidates:
            continue
        a, b = candidates[int(rng.integers(len(candidates)))]
        pairs.append(_unlabeled_pair(Setting.WITHIN, a, b))

    rng = np.random.default_rng(_stable_seed("train-across", seed))
    train_records = [image_index[i] for i in train_images]
    for image_a, image_b in match_image_pairs(train_records, seed):
        objs_a = by_image.get(image_a, [])
        objs_b = by_image.get(image_b, [])
        if not objs_a or not objs_b:
            continue
        a = objs_a[int(rng.integers(len(objs_a)))]
        b = objs_b[int(rng.integers(len(objs_b)))]
        pairs.append(_unlabeled_pair(Setting.ACROSS, a, b))
    return pairs


def exhaustive_eval_pairs(
    bundle: DatasetBundle,
    config: FilterConfig,
    meta: Optional[ClassMetadata] = None,
    seed: int = 0,
) -> list[PairLabel]:
    """Validation/test annotation pairs: every admissible ordered pair within
    each image, and every cross pair for each matched A-B image pair."""
    survivors, _ = filter_bundle_objects(bundle, config, meta)
    by_image: dict[str, list[ObjectInstance]] = {}
    for o in survivors:
        by_image.setdefault(o.image_id, []).append(o)

    pairs: list[PairLabel] = []
    eval_images = [
        im for im in bundle.images if im.split in (Split.VALIDATION, Split.TEST)
    ]
    for image_id in sorted(im.image_id for im in eval_images):
        for a, b in admissible_within_pairs(by_image.get(image_id, []), config, meta):
            pairs.append(_unlabeled_pair(Setting.WITHIN, a, b))
    for split in (Split.VALIDATION, Split.TEST):
        split_images = [im for im in eval_images if im.split == split]
        for image_a, image_b in match_image_pairs(split_images, seed):
            for a in by_image.get(image_a, []):
                for b in by_image.get(image_b, []):
                    pairs.append(_unlabeled_pair(Setting.ACROSS, a, b))
    return pairs


# ---------------------------------------------------------------------------
# CSV primitives


def read_kv_config(path: Path | str) -> dict[str, str]:
    """Flat key=value config file; '#' starts a comment."""
    values: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def write_kv_config(path: Path | str, values: dict[str, object]) -> None:
    lines = [f"{k}={values[k]}" for k in values]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_flat_config(cls: type, path: Path | str):
    """Build a flat dataclass from a key=value file, typed by field annotation.

    Supports bool ('0'/'1'/'true'/'false'), int, float, and str fields; keys
    absent from the file keep the dataclass defaults, unknown keys fail.
    """
    raw = read_kv_config(path)
    kwargs: dict[str, object] = {}
    for f in dataclasses.fields(cls):
        if f.name not in raw:
            continue
        text = raw.pop(f.name)
        if f.type == "bool":
            if text not in ("0", "1", "true", "false"):
                raise ParseError(f"{path}: key {f.name!r}: expected a 0/1 flag, got {text!r}")
            kwargs[f.name] = text in ("1", "true")
        elif f.type == "int":
            try:
                kwargs[f.name] = int(text)
            except ValueError:
                raise ParseError(f"{path}: key {f.name!r}: not an integer: {text!r}")
        elif f.type == "float":
            try:
                kwargs[f.name] = float(text)
            except ValueError:
                raise ParseError(f"{path}: key {f.name!r}: not a number: {text!r}")
        else:
            kwargs[f.name] = text
    if raw:
        raise ParseError(f"{path}: unknown keys: {sorted(raw)}")
    return cls(**kwargs)


def dump_flat_config(obj, path: Path | str) -> None:
    values = {
        f.name: (int(getattr(obj, f.name)) if f.type == "bool" else getattr(obj, f.name))
        for f in dataclasses.fields(obj)
    }
    write_kv_config(path, values)


def _read_rows(path: Path | str, header: list[str]) -> Iterable[tuple[int, list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            got = next(reader)
        except StopIteration:
            raise ParseError(f"{path}:1: empty file, expected header {','.join(header)}")
        if got != header:
            raise ParseError(
                f"{path}:1: bad header {','.join(got)!r}, expected {','.join(header)!r}"
            )
        for line_no, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line_no}: expected {len(header)} columns, got {len(row)}")
            yield line_no, row


def _write_rows(path: Path | str, header: list[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _parse_int(text: str, column: str, path: Path | str, line_no: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{path}:{line_no}: column {column!r}: not an integer: {text!r}")


def _parse_float(text: str, column: str, path: Path | str, line_no: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{path}:{line_no}: column {column!r}: not a number: {text!r}")


def _parse_bool(text: str, column: str, path: Path | str, line_no: int) -> bool:
    if text in ("0", "1"):
        return text == "1"
    raise ParseError(f"{path}:{line_no}: column {column!r}: expected 0 or 1, got {text!r}")


def _parse_depth(text: str, column: str, path: Path | str, line_no: int) -> Optional[Depth]:
    if text == "":
        return None
    code = _parse_int(text, column, path, line_no)
    try:
        return Depth(code)
    except ValueError:
        raise ParseError(f"{path}:{line_no}: column {column!r}: unknown depth code {code}")


def _parse_occlusion(text: str, column: str, path: Path | str, line_no: int) -> Optional[Occlusion]:
    if text == "":
        return None
    code = _parse_int(text, column, path, line_no)
    try:
        return Occlusion(code)
    except ValueError:
        raise ParseError(f"{path}:{line_no}: column {column!r}: unknown occlusion code {code}")


def _parse_setting(text: str, path: Path | str, line_no: int) -> Setting:
    try:
        return Setting(text)
    except ValueError:
        raise ParseError(f"{path}:{line_no}: column 'setting': unknown setting {text!r}")


def _fmt_opt(value: Optional[object]) -> str:
    return "" if value is None else str(value)


# ---------------------------------------------------------------------------
# Bundle IO


def write_images_csv(path: Path | str, images: Sequence[ImageRecord]) -> None:
    rows = [
        [im.image_id, im.width_px, im.height_px, im.split.value, im.group]
        for im in images
    ]
    _write_rows(path, IMAGES_HEADER, rows)


def read_images_csv(path: Path | str) -> list[ImageRecord]:
    images = []
    for line_no, row in _read_rows(path, IMAGES_HEADER):
        try:
            split = Split(row[3])
        except ValueError:
            raise ParseError(f"{path}:{line_no}: column 'split': unknown split {row[3]!r}")
        try:
            images.append(ImageRecord(
                image_id=row[0],
                width_px=_parse_int(row[1], "width_px", path, line_no),
                height_px=_parse_int(row[2], "height_px", path, line_no),
                split=split,
                group=row[4],
            ))
        except ValidationError as exc:
            raise ParseError(f"{path}:{line_no}: {exc}")
    return images


def write_objects_csv(path: Path | str, objects: Sequence[ObjectInstance]) -> None:
    rows = [
        [o.object_id, o.image_id, o.class_id,
         repr(o.box.xmin), repr(o.box.ymin), repr(o.box.xmax), repr(o.box.ymax),
         int(o.is_group_of), _fmt_opt(o.detector_score)]
        for o in objects
    ]
    _write_rows(path, OBJECTS_HEADER, rows)


def read_objects_csv(path: Path | str) -> list[ObjectInstance]:
    objects = []
    for line_no, row in _read_rows(path, OBJECTS_HEADER):
        score = None if row[8] == "" else _parse_float(row[8], "detector_score", path, line_no)
        try:
            objects.append(ObjectInstance(
                object_id=row[0],
                image_id=row[1],
                class_id=_parse_int(row[2], "class_id", path, line_no),
                box=Box(
                    _parse_float(row[3], "xmin", path, line_no),
                    _parse_float(row[4], "ymin", path, line_no),
                    _parse_float(row[5], "xmax", path, line_no),
                    _parse_float(row[6], "ymax", path, line_no),
                ),
                is_group_of=_parse_bool(row[7], "is_group_of", path, line_no),
                detector_score=score,
            ))
        except ValidationError as exc:
            raise ParseError(f"{path}:{line_no}: {exc}")
    return objects


def _relation_row(p: PairLabel) -> list[object]:
    return [
        p.pair_id, p.setting.value,
        p.image_id_a, p.object_id_a, p.image_id_b, p.object_id_b,
        _fmt_opt(None if p.depth is None else int(p.depth)),
        _fmt_opt(None if p.occlusion is None else int(p.occlusion)),
    ]


def write_relations_csv(path: Path | str, pairs: Sequence[PairLabel]) -> None:
    _write_rows(path, RELATIONS_HEADER, [_relation_row(p) for p in pairs])


def _pair_from_row(row: list[str], path: Path | str, line_no: int) -> PairLabel:
    setting = _parse_setting(row[1], path, line_no)
    try:
        return PairLabel(
            pair_id=row[0],
            setting=setting,
            image_id_a=row[2],
            object_id_a=row[3],
            image_id_b=row[4],
            object_id_b=row[5],
            depth=_parse_depth(row[6], "depth", path, line_no),
            occlusion=_parse_occlusion(row[7], "occlusion", path, line_no),
        )
    except ValidationError as exc:
        raise ParseError(f"{path}:{line_no}: {exc}")


def read_relations_csv(path: Path | str) -> list[PairLabel]:
    return [
        _pair_from_row(row, path, line_no)
        for line_no, row in _read_rows(path, RELATIONS_HEADER)
    ]


def vote_row(v: VoteRecord) -> list[object]:
    return [
        v.pair_id, v.rater_id, int(v.depth_vote),
        _fmt_opt(None if v.occlusion_vote is None else int(v.occlusion_vote)),
        v.timestamp_ms,
    ]


def write_votes_csv(path: Path | str, votes: Sequence[VoteRecord]) -> None:
    _write_rows(path, VOTES_HEADER, [vote_row(v) for v in votes])


def votes_csv_text(votes: Sequence[VoteRecord]) -> str:
    """The exact votes.csv bytes as a string (shared with the file writer)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(VOTES_HEADER)
    writer.writerows(vote_row(v) for v in votes)
    return buffer.getvalue()


def read_votes_csv(path: Path | str) -> list[VoteRecord]:
    votes = []
    for line_no, row in _read_rows(path, VOTES_HEADER):
        depth = _parse_depth(row[2], "depth_vote", path, line_no)
        if depth is None:
            raise ParseError(f"{path}:{line_no}: column 'depth_vote': must not be empty")
        votes.append(VoteRecord(
            pair_id=row[0],
            rater_id=row[1],
            depth_vote=depth,
            occlusion_vote=_parse_occlusion(row[3], "occlusion_vote", path, line_no),
            timestamp_ms=_parse_int(row[4], "timestamp_unix_ms", path, line_no),
        ))
    return votes


def write_pair_difficulty_csv(path: Path | str, difficulties: dict[str, str]) -> None:
    rows = [[pair_id, difficulties[pair_id]] for pair_id in sorted(difficulties)]
    _write_rows(path, PAIR_DIFFICULTY_HEADER, rows)


def read_pair_difficulty_csv(path: Path | str) -> dict[str, str]:
    return {row[0]: row[1] for _, row in _read_rows(path, PAIR_DIFFICULTY_HEADER)}


def write_bundle(bundle: DatasetBundle, directory: Path | str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_images_csv(directory / "images.csv", bundle.images)
    write_objects_csv(directory / "objects.csv", bundle.objects)
    write_relations_csv(directory / "relations.csv", bundle.pairs)
    if bundle.votes:
        write_votes_csv(directory / "votes.csv", bundle.votes)
    if bundle.difficulties:
        write_pair_difficulty_csv(directory / "pair_difficulty.csv", bundle.difficulties)
    (directory / "provenance.txt").write_text(bundle.provenance + "\n", encoding="utf-8")


def read_bundle(directory: Path | str) -> DatasetBundle:
    directory = Path(directory)
    votes_path = directory / "votes.csv"
    difficulty_path = directory / "pair_difficulty.csv"
    provenance_path = directory / "provenance.txt"
    bundle = DatasetBundle(
        images=read_images_csv(directory / "images.csv"),
        objects=read_objects_csv(directory / "objects.csv"),
        pairs=read_relations_csv(directory / "relations.csv"),
        votes=read_votes_csv(votes_path) if votes_path.exists() else [],
        provenance=(
            provenance_path.read_text(encoding="utf-8").strip()
            if provenance_path.exists() else "imported"
        ),
        difficulties=(
            read_pair_difficulty_csv(difficulty_path) if difficulty_path.exists() else {}
        ),
    )
    bundle.validate()
    return bundle


# ---------------------------------------------------------------------------
# Predictions IO (relations schema + model_name)


def write_predictions_csv(
    path: Path | str, pairs: Sequence[PairLabel], model_name: str
) -> None:
    rows = [_relation_row(p) + [model_name] for p in pairs]
    _write_rows(path, PREDICTIONS_HEADER, rows)


def read_predictions_csv(path: Path | str) -> tuple[list[PairLabel], str]:
    pairs = []
    model_name = ""
    for line_no, row in _read_rows(path, PREDICTIONS_HEADER):
        pairs.append(_pair_from_row(row[:8], path, line_no))
        model_name = row[8]
    return pairs, model_name


# ---------------------------------------------------------------------------
# Public-release import/export

# Accepted spellings for each canonical release column. The release schema is
# header-driven; column order does not matter.
_RELEASE_ALIASES: dict[str, tuple[str, ...]] = {
    "image_id_a": ("image_id_a", "image_id_1", "image_a", "image_id1"),
    "object_id_a": ("object_id_a", "entity_id_1", "object_id_1", "entity_1"),
    "image_id_b": ("image_id_b", "image_id_2", "image_b", "image_id2"),
    "object_id_b": ("object_id_b", "entity_id_2", "object_id_2", "entity_2"),
    "xmin_a": ("xmin_a", "xmin_1", "x_min_1"),
    "ymin_a": ("ymin_a", "ymin_1", "y_min_1"),
    "xmax_a": ("xmax_a", "xmax_1", "x_max_1"),
    "ymax_a": ("ymax_a", "ymax_1", "y_max_1"),
    "xmin_b": ("xmin_b", "xmin_2", "x_min_2"),
    "ymin_b": ("ymin_b", "ymin_2", "y_min_2"),
    "xmax_b": ("xmax_b", "xmax_2", "x_max_2"),
    "ymax_b": ("ymax_b", "ymax_2", "y_max_2"),
    "class_a": ("class_a", "label_1", "class_1", "entity_class_1"),
    "class_b": ("class_b", "label_2", "class_2", "entity_class_2"),
    "depth": ("depth", "depth_label", "raw_depth", "distance"),
    "occlusion": ("occlusion", "occlusion_label", "raw_occlusion"),
}

_RELEASE_REQUIRED = [
    "image_id_a", "object_id_a", "image_id_b", "object_id_b",
    "xmin_a", "ymin_a", "xmax_a", "ymax_a",
    "xmin_b", "ymin_b", "xmax_b", "ymax_b",
    "class_a", "class_b", "depth",
]


@dataclass
class ImportResult:
    bundle: DatasetBundle
    rejects: list[tuple[str, int, str]]  # (file, line, reason)


def _release_split(name: str) -> Split:
    lowered = name.lower()
    if "train" in lowered:
        return Split.TRAIN
    if "val" in lowered:
        return Split.VALIDATION
    return Split.TEST


def _release_setting(name: str, relpath: str) -> Setting:
    text = (relpath + "/" + name).lower()
    return Setting.ACROSS if "across" in text else Setting.WITHIN


def export_release(
    bundle: DatasetBundle,
    meta: ClassMetadata,
    directory: Path | str,
    image_sizes: bool = True,
) -> None:
    """Write the bundle as flat release-style relation files, one row per
    labeled pair with boxes and class names inline, plus a vocabulary file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_id = bundle.object_by_id()
    image_index = bundle.image_by_id()
    class_name = {cid: meta.names.get(cid, f"class_{cid}") for cid in
                  {o.class_id for o in bundle.objects}}

    header = [
        "image_id_1", "entity_id_1", "xmin_1", "ymin_1", "xmax_1", "ymax_1", "label_1",
        "image_id_2", "entity_id_2", "xmin_2", "ymin_2", "xmax_2", "ymax_2", "label_2",
        "depth", "occlusion", "image_width_1", "image_height_1",
        "image_width_2", "image_height_2",
    ]
    groups: dict[tuple[Setting, Split], list[list[object]]] = {}
    for p in bundle.pairs:
        a, b = by_id[p.object_id_a], by_id[p.object_id_b]
        split = image_index[p.image_id_a].split
        im_a, im_b = image_index[p.image_id_a], image_index[p.image_id_b]
        row = [
            p.image_id_a, p.object_id_a,
            repr(a.box.xmin), repr(a.box.ymin), repr(a.box.xmax), repr(a.box.ymax),
            class_name[a.class_id],
            p.image_id_b, p.object_id_b,
            repr(b.box.xmin), repr(b.box.ymin), repr(b.box.xmax), repr(b.box.ymax),
            class_name[b.class_id],
            _fmt_opt(None if p.depth is None else int(p.depth)),
            _fmt_opt(None if p.occlusion is None else int(p.occlusion)),
            im_a.width_px, im_a.height_px, im_b.width_px, im_b.height_px,
        ]
        groups.setdefault((p.setting, split), []).append(row)
    for (setting, split), rows in sorted(groups.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        sub = directory / f"{setting.value}_image"
        sub.mkdir(exist_ok=True)
        _write_rows(sub / f"{split.value}.csv", header, rows)

    vocab_rows = [[name, cid] for cid, name in sorted(class_name.items(), key=lambda kv: kv[0])]
    _write_rows(directory / "vocabulary.csv", ["name", "class_id"], vocab_rows)


def import_public_release(
    directory: Path | str, vocabulary_csv: Optional[Path | str] = None
) -> ImportResult:
    """Best-effort import of release-style relation files into a bundle.

    Column mapping is header-driven via the alias table; rows that cannot be
    mapped are collected as rejects with reasons instead of failing the run.
    """
    directory = Path(directory)
    if vocabulary_csv is None:
        vocabulary_csv = directory / "vocabulary.csv"
    if not Path(vocabulary_csv).exists():
        raise FileNotFoundError(f"missing vocabulary file: {vocabulary_csv}")
    name_to_class: dict[str, int] = {}
    for line_no, row in _read_rows(vocabulary_csv, ["name", "class_id"]):
        name_to_class[row[0]] = _parse_int(row[1], "class_id", vocabulary_csv, line_no)

    files = sorted(p for p in directory.rglob("*.csv") if p.name != "vocabulary.csv")
    if not files:
        raise FileNotFoundError(f"no annotation files found in {directory}")

    images: dict[str, ImageRecord] = {}
    objects: dict[str, ObjectInstance] = {}
    pairs: list[PairLabel] = []
    seen_pair_ids: set[str] = set()
    rejects: list[tuple[str, int, str]] = []

    for path in files:
        relpath = str(path.relative_to(directory))
        setting = _release_setting(path.name, relpath)
        split = _release_split(path.stem)
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            try:
                header = next(reader)
            except StopIteration:
                rejects.append((relpath, 1, "empty file"))
                continue
            col: dict[str, int] = {}
            for canonical, aliases in _RELEASE_ALIASES.items():
                for alias in aliases:
                    if alias in header:
                        col[canonical] = header.index(alias)
                        break
            missing = [c for c in _RELEASE_REQUIRED if c not in col]
            if missing:
                raise ParseError(
                    f"{relpath}:1: unrecognized schema, missing columns {missing}"
                )
            width_cols = {
                "wa": header.index("image_width_1") if "image_width_1" in header else None,
                "ha": header.index("image_height_1") if "image_height_1" in header else None,
                "wb": header.index("image_width_2") if "image_width_2" in header else None,
                "hb": header.index("image_height_2") if "image_height_2" in header else None,
            }

            for line_no, row in enumerate(reader, 2):
                if not row:
                    continue
                try:
                    pair = _import_release_row(
                        row, col, width_cols, name_to_class, setting, split,
                        images, objects, relpath, line_no,
                    )
                except (ParseError, ValidationError, IndexError, KeyError) as exc:
                    rejects.append((relpath, line_no, str(exc)))
                    continue
                if pair.pair_id in seen_pair_ids:
                    rejects.append((relpath, line_no, f"duplicate pair {pair.pair_id}"))
                    continue
                seen_pair_ids.add(pair.pair_id)
                pairs.append(pair)

    bundle = DatasetBundle(
        images=sorted(images.values(), key=lambda im: im.image_id),
        objects=sorted(objects.values(), key=lambda o: o.object_id),
        pairs=pairs,
        provenance="imported",
    )
    bundle.validate()
    return ImportResult(bundle=bundle, rejects=rejects)


def _import_release_row(
    row: list[str],
    col: dict[str, int],
    width_cols: dict[str, Optional[int]],
    name_to_class: dict[str, int],
    setting: Setting,
    split: Split,
    images: dict[str, ImageRecord],
    objects: dict[str, ObjectInstance],
    relpath: str,
    line_no: int,
) -> PairLabel:
    def get(name: str) -> str:
        return row[col[name]]

    image_a, image_b = get("image_id_a"), get("image_id_b")
    for image_id, wkey, hkey in ((image_a, "wa", "ha"), (image_b, "wb", "hb")):
        if image_id not in images:
            wcol, hcol = width_cols[wkey], width_cols[hkey]
            w = int(row[wcol]) if wcol is not None else 1
            h = int(row[hcol]) if hcol is not None else 1
            images[image_id] = ImageRecord(
                image_id=image_id, width_px=w, height_px=h,
                split=split, group=assign_group(image_id),
            )

    def class_of(name_key: str) -> int:
        label = get(name_key)
        if label in name_to_class:
            return name_to_class[label]
        try:
            return int(label)
        except ValueError:
            raise ParseError(f"{relpath}:{line_no}: unknown class label {label!r}")

    def make_object(suffix: str, image_id: str) -> ObjectInstance:
        oid = get(f"object_id_{suffix}")
        obj = ObjectInstance(
            object_id=oid,
            image_id=image_id,
            class_id=class_of(f"class_{suffix}"),
            box=Box(
                _parse_float(get(f"xmin_{suffix}"), f"xmin_{suffix}", relpath, line_no),
                _parse_float(get(f"ymin_{suffix}"), f"ymin_{suffix}", relpath, line_no),
                _parse_float(get(f"xmax_{suffix}"), f"xmax_{suffix}", relpath, line_no),
                _parse_float(get(f"ymax_{suffix}"), f"ymax_{suffix}", relpath, line_no),
            ),
        )
        if obj.object_id in objects:
            existing = objects[obj.object_id]
            if existing != obj:
                raise ParseError(
                    f"{relpath}:{line_no}: object {obj.object_id!r} redefined inconsistently"
                )
            return existing
        objects[obj.object_id] = obj
        return obj

    a = make_object("a", image_a)
    b = make_object("b", image_b)
    depth = _parse_depth(get("depth"), "depth", relpath, line_no)
    occlusion = (
        _parse_occlusion(row[col["occlusion"]], "occlusion", relpath, line_no)
        if "occlusion" in col else None
    )
    return PairLabel(
        pair_id=pair_id_for(setting, a.object_id, b.object_id),
        setting=setting,
        image_id_a=image_a,
        object_id_a=a.object_id,
        image_id_b=image_b,
        object_id_b=b.object_id,
        depth=depth,
        occlusion=occlusion,
    )
