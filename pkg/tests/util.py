"""Shared builders for hand-made fixtures."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

from vrd25.dataio import DatasetBundle
from vrd25.model import (
    Box,
    Depth,
    ImageRecord,
    ObjectInstance,
    Occlusion,
    PairLabel,
    Setting,
    Split,
    pair_id_for,
)

DATA_DIR = Path(__file__).parent / "data"


def make_image(
    image_id: str,
    split: Split = Split.VALIDATION,
    group: str = "A",
    size: int = 64,
) -> ImageRecord:
    return ImageRecord(image_id=image_id, width_px=size, height_px=size, split=split, group=group)


def make_object(
    object_id: str,
    image_id: str,
    box: Box,
    class_id: int = 0,
    score: Optional[float] = None,
) -> ObjectInstance:
    return ObjectInstance(
        object_id=object_id, image_id=image_id, class_id=class_id,
        box=box, detector_score=score,
    )


def within_pair(
    a: ObjectInstance,
    b: ObjectInstance,
    depth: Optional[Depth] = None,
    occlusion: Optional[Occlusion] = None,
) -> PairLabel:
    return PairLabel(
        pair_id=pair_id_for(Setting.WITHIN, a.object_id, b.object_id),
        setting=Setting.WITHIN,
        image_id_a=a.image_id, object_id_a=a.object_id,
        image_id_b=b.image_id, object_id_b=b.object_id,
        depth=depth, occlusion=occlusion,
    )


def across_pair(
    a: ObjectInstance,
    b: ObjectInstance,
    depth: Optional[Depth] = None,
) -> PairLabel:
    return PairLabel(
        pair_id=pair_id_for(Setting.ACROSS, a.object_id, b.object_id),
        setting=Setting.ACROSS,
        image_id_a=a.image_id, object_id_a=a.object_id,
        image_id_b=b.image_id, object_id_b=b.object_id,
        depth=depth, occlusion=None,
    )


def two_image_bundle() -> DatasetBundle:
    """Two validation images, two objects each, labeled within and across pairs."""
    im1 = make_image("im1", group="A")
    im2 = make_image("im2", group="B")
    a = make_object("im1/a", "im1", Box(0.1, 0.1, 0.4, 0.5), class_id=1)
    b = make_object("im1/b", "im1", Box(0.5, 0.2, 0.9, 0.8), class_id=2)
    c = make_object("im2/c", "im2", Box(0.2, 0.3, 0.5, 0.7), class_id=1)
    d = make_object("im2/d", "im2", Box(0.6, 0.1, 0.8, 0.4), class_id=3)
    pairs = [
        within_pair(a, b, Depth.A_CLOSER, Occlusion.NO_OCCLUSION),
        within_pair(b, a, Depth.B_CLOSER, Occlusion.NO_OCCLUSION),
        within_pair(c, d, Depth.SAME_DEPTH, Occlusion.A_OCCLUDES_B),
        within_pair(d, c, Depth.SAME_DEPTH, Occlusion.B_OCCLUDES_A),
        across_pair(a, c, Depth.A_CLOSER),
        across_pair(a, d, Depth.UNSURE),
        across_pair(b, c, Depth.B_CLOSER),
        across_pair(b, d, Depth.A_CLOSER),
    ]
    return DatasetBundle(images=[im1, im2], objects=[a, b, c, d], pairs=pairs)


def task_queue_bundle(n_tasks: int) -> DatasetBundle:
    """n validation images with two objects and one unlabeled within pair each."""
    images, objects, pairs = [], [], []
    for i in range(n_tasks):
        image_id = f"im{i:04d}"
        images.append(make_image(image_id))
        a = make_object(f"{image_id}/a", image_id, Box(0.1, 0.1, 0.4, 0.4))
        b = make_object(f"{image_id}/b", image_id, Box(0.5, 0.5, 0.9, 0.9))
        objects.extend([a, b])
        pairs.append(within_pair(a, b))
    return DatasetBundle(images=images, objects=objects, pairs=pairs)


def load_predicate_vectors() -> list[tuple[str, int, Optional[int], bool]]:
    rows = []
    with open(DATA_DIR / "predicate_vectors.csv", newline="") as f:
        for row in csv.DictReader(f):
            occlusion = None if row["occlusion"] == "" else int(row["occlusion"])
            rows.append((row["setting"], int(row["depth"]), occlusion, row["expect"] == "ok"))
    assert len(rows) == 40
    return rows
