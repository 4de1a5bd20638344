"""Canonical domain types and predicate algebra shared by every other module.

Predicate wire codes are fixed for all files and messages:
depth 0=A_CLOSER, 1=B_CLOSER, 2=SAME_DEPTH, 3=UNSURE;
occlusion 0=NO_OCCLUSION, 1=A_OCCLUDES_B, 2=B_OCCLUDES_A, 3=MUTUAL.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional


class Depth(enum.IntEnum):
    """Relative-depth predicate of an ordered object pair, viewer as reference."""

    A_CLOSER = 0
    B_CLOSER = 1
    SAME_DEPTH = 2
    UNSURE = 3


class Occlusion(enum.IntEnum):
    """Occlusion predicate of an ordered object pair (within-image only)."""

    NO_OCCLUSION = 0
    A_OCCLUDES_B = 1
    B_OCCLUDES_A = 2
    MUTUAL = 3


class Setting(enum.Enum):
    """Whether the two objects of a pair come from one image or two."""

    WITHIN = "within"
    ACROSS = "across"


class Split(enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


def flip_depth(p: Depth) -> Depth:
    """Mirror a depth predicate to the reversed pair order. Involution."""
    if p == Depth.A_CLOSER:
        return Depth.B_CLOSER
    if p == Depth.B_CLOSER:
        return Depth.A_CLOSER
    return p


def flip_occlusion(p: Occlusion) -> Occlusion:
    """Mirror an occlusion predicate to the reversed pair order. Involution."""
    if p == Occlusion.A_OCCLUDES_B:
        return Occlusion.B_OCCLUDES_A
    if p == Occlusion.B_OCCLUDES_A:
        return Occlusion.A_OCCLUDES_B
    return p


class ValidationError(ValueError):
    """Raised when a record violates a domain invariant."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box normalized to [0,1], xmin < xmax and ymin < ymax.

    Zero-area boxes are construction errors, not IoU special cases; they
    cannot survive the minimum-area filter anyway.
    """

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.xmin < self.xmax <= 1.0):
            raise ValidationError(f"invalid x extent: [{self.xmin}, {self.xmax}]")
        if not (0.0 <= self.ymin < self.ymax <= 1.0):
            raise ValidationError(f"invalid y extent: [{self.ymin}, {self.ymax}]")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))


def overlap_extent(a: Box, b: Box) -> tuple[float, float, float]:
    """(height, width, area) of the intersection rectangle; zeros if disjoint."""
    w = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    h = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if w <= 0.0 or h <= 0.0:
        return (0.0, 0.0, 0.0)
    return (h, w, h * w)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; symmetric, in [0, 1]."""
    inter = overlap_extent(a, b)[2]
    union = a.area + b.area - inter
    return inter / union


def clamped_box(cx: float, cy: float, w: float, h: float) -> Box:
    """Box from center and size, pushed inside the unit square with positive
    area; used where perturbed geometry must stay constructible."""
    w, h = max(w, 1e-4), max(h, 1e-4)
    xmin = min(max(cx - w / 2, 0.0), 1.0 - 1e-6)
    xmax = min(max(cx + w / 2, xmin + 1e-6), 1.0)
    ymin = min(max(cy - h / 2, 0.0), 1.0 - 1e-6)
    ymax = min(max(cy + h / 2, ymin + 1e-6), 1.0)
    return Box(xmin, ymin, xmax, ymax)


@dataclass(frozen=True)
class ImageRecord:
    """One image, referenced by id; pixels never live in this model."""

    image_id: str
    width_px: int
    height_px: int
    split: Split
    group: str  # "A" or "B", across-image pairing group

    def __post_init__(self) -> None:
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValidationError(f"{self.image_id}: non-positive image size")
        if self.group not in ("A", "B"):
            raise ValidationError(f"{self.image_id}: group must be A or B")


@dataclass(frozen=True)
class ObjectInstance:
    """A bounding box with class and flags inside one image record.

    detector_score is present only for detected (not groundtruth) objects.
    """

    object_id: str
    image_id: str
    class_id: int
    box: Box
    is_group_of: bool = False
    detector_score: Optional[float] = None

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise ValidationError(f"{self.object_id}: negative class_id")
        if self.detector_score is not None and not (0.0 <= self.detector_score <= 1.0):
            raise ValidationError(f"{self.object_id}: detector_score outside [0,1]")


def validate_pair_predicates(
    setting: Setting, depth: Optional[Depth], occlusion: Optional[Occlusion]
) -> None:
    """Setting contract shared by pair labels, votes, and the annotation service.

    WITHIN requires an occlusion value; ACROSS forbids occlusion and SAME_DEPTH.
    """
    if setting == Setting.WITHIN:
        if occlusion is None:
            raise ValidationError("within-image pair requires an occlusion predicate")
    else:
        if occlusion is not None:
            raise ValidationError("across-image pair cannot carry occlusion")
        if depth == Depth.SAME_DEPTH:
            raise ValidationError("SAME_DEPTH is not valid across images")


@dataclass(frozen=True)
class PairLabel:
    """Directional predicates for an ordered object pair.

    depth/occlusion may be None only as the no-majority (ambiguous) sentinel of
    an aggregated label; such pairs are excluded from evaluation denominators.
    """

    pair_id: str
    setting: Setting
    image_id_a: str
    object_id_a: str
    image_id_b: str
    object_id_b: str
    depth: Optional[Depth]
    occlusion: Optional[Occlusion] = None

    def __post_init__(self) -> None:
        if self.object_id_a == self.object_id_b:
            raise ValidationError(f"{self.pair_id}: pair of an object with itself")
        if self.setting == Setting.WITHIN:
            if self.image_id_a != self.image_id_b:
                raise ValidationError(f"{self.pair_id}: within-image pair spans images")
        else:
            if self.image_id_a == self.image_id_b:
                raise ValidationError(f"{self.pair_id}: across-image pair inside one image")
            if self.occlusion is not None:
                raise ValidationError(f"{self.pair_id}: occlusion on across-image pair")
            if self.depth == Depth.SAME_DEPTH:
                raise ValidationError(f"{self.pair_id}: SAME_DEPTH across images")

    @property
    def key(self) -> tuple[str, str]:
        return (self.object_id_a, self.object_id_b)


def pair_id_for(setting: Setting, object_id_a: str, object_id_b: str) -> str:
    """Deterministic pair key; object ids are unique within a dataset."""
    tag = "w" if setting == Setting.WITHIN else "x"
    return f"{tag}#{object_id_a}#{object_id_b}"


@dataclass(frozen=True)
class VoteRecord:
    """One rater's answer for one pair."""

    pair_id: str
    rater_id: str
    depth_vote: Depth
    occlusion_vote: Optional[Occlusion]
    timestamp_ms: int = 0


@dataclass
class PredictionSet:
    """A model's predicate predictions over ordered pairs of objects.

    `objects` lists the instances the predictions are defined over; `depth`
    and `occlusion` map ordered (object_id_a, object_id_b) keys to predicates.
    Across-image pairs carry no occlusion entry.
    """

    setting: Setting
    objects: list[ObjectInstance]
    depth: dict[tuple[str, str], Depth] = field(default_factory=dict)
    occlusion: dict[tuple[str, str], Occlusion] = field(default_factory=dict)

    def add(
        self,
        object_id_a: str,
        object_id_b: str,
        depth: Depth,
        occlusion: Optional[Occlusion] = None,
    ) -> None:
        validate_pair_predicates(self.setting, depth, occlusion)
        key = (object_id_a, object_id_b)
        self.depth[key] = depth
        if occlusion is not None:
            self.occlusion[key] = occlusion

    def validate_exhaustive_within(self, image_objects: Iterable[ObjectInstance]) -> None:
        """Check the N*(N-1) contract over one image's surviving objects."""
        ids = [o.object_id for o in image_objects]
        expected = {(a, b) for a in ids for b in ids if a != b}
        got = {k for k in self.depth if k[0] in set(ids) and k[1] in set(ids)}
        if got != expected:
            missing = len(expected - got)
            extra = len(got - expected)
            raise ValidationError(
                f"prediction set not exhaustive: {missing} missing, {extra} extra pairs"
            )
