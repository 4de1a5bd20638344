"""Synthetic billboard-world generator with exact geometric ground truth.

Scenes are fronto-parallel rectangles (one or two parts per object) placed by
a pinhole camera, so projected area scales as 1/z^2 and every relation label
can be derived from the world state instead of being invented. The generator,
vote simulator, detector simulator, and depth-map renderer are deterministic
functions of (config, seed).
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataio import (
    DatasetBundle,
    FilterConfig,
    assign_group,
    dump_flat_config,
    exhaustive_eval_pairs,
    load_flat_config,
    sample_training_pairs,
)
from .depthmaps import box_slice
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
    clamped_box,
    overlap_extent,
)


class GenerationError(RuntimeError):
    """Object placement failed within the retry budget."""


def _hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def _rng(*parts: object) -> np.random.Generator:
    entropy = [p if isinstance(p, int) else _hash64(str(p)) for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stable_rng(*parts: object) -> np.random.Generator:
    """Deterministic generator keyed by the given parts (ints hash as-is)."""
    return _rng(*parts)


# ---------------------------------------------------------------------------
# World model


@dataclass(frozen=True)
class Camera:
    focal_px: float
    width_px: int
    height_px: int

    @property
    def cx(self) -> float:
        return self.width_px / 2.0

    @property
    def cy(self) -> float:
        return self.height_px / 2.0


@dataclass(frozen=True)
class Part:
    """Fronto-parallel world rectangle at constant depth (camera frame)."""

    x: float
    y: float
    z: float
    width: float
    height: float

    def __post_init__(self) -> None:
        if self.z <= 0 or self.width <= 0 or self.height <= 0:
            raise ValidationError("part requires z, width, height > 0")

    def project(self, camera: Camera) -> Box:
        """Normalized image box under the pinhole model u = f*x/z + cx."""
        sx = camera.focal_px / (self.z * camera.width_px)
        sy = camera.focal_px / (self.z * camera.height_px)
        ncx, ncy = camera.cx / camera.width_px, camera.cy / camera.height_px
        xmin = ncx + (self.x - self.width / 2) * sx
        xmax = ncx + (self.x + self.width / 2) * sx
        ymin = ncy + (self.y - self.height / 2) * sy
        ymax = ncy + (self.y + self.height / 2) * sy
        return Box(
            min(max(xmin, 0.0), 1.0), min(max(ymin, 0.0), 1.0),
            min(max(xmax, 0.0), 1.0), min(max(ymax, 0.0), 1.0),
        )

    def projected_area(self, camera: Camera) -> float:
        """Normalized area of the unclipped projection (for the 1/z^2 law)."""
        w = self.width * camera.focal_px / (self.z * camera.width_px)
        h = self.height * camera.focal_px / (self.z * camera.height_px)
        return w * h

    @classmethod
    def from_normalized(cls, box: Box, z: float, camera: Camera) -> "Part":
        """World rectangle whose projection is exactly the given box."""
        cx_px = (box.xmin + box.xmax) / 2 * camera.width_px
        cy_px = (box.ymin + box.ymax) / 2 * camera.height_px
        return cls(
            x=(cx_px - camera.cx) * z / camera.focal_px,
            y=(cy_px - camera.cy) * z / camera.focal_px,
            z=z,
            width=box.width * camera.width_px * z / camera.focal_px,
            height=box.height * camera.height_px * z / camera.focal_px,
        )


@dataclass(frozen=True)
class BillboardObject:
    class_id: int
    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        if not self.parts:
            raise ValidationError("object requires at least one part")

    @property
    def representative_depth(self) -> float:
        """Projected-area-weighted mean depth (weights world_area / z^2)."""
        weights = [p.width * p.height / p.z**2 for p in self.parts]
        return sum(w * p.z for w, p in zip(weights, self.parts)) / sum(weights)

    def bounding_box(self, camera: Camera) -> Box:
        boxes = [p.project(camera) for p in self.parts]
        return Box(
            min(b.xmin for b in boxes), min(b.ymin for b in boxes),
            max(b.xmax for b in boxes), max(b.ymax for b in boxes),
        )


@dataclass
class SyntheticScene:
    image_id: str
    camera: Camera
    objects: list[BillboardObject]
    background_depth: float

    def object_instances(self) -> list[ObjectInstance]:
        return [
            ObjectInstance(
                object_id=f"{self.image_id}/o{k}",
                image_id=self.image_id,
                class_id=obj.class_id,
                box=obj.bounding_box(self.camera),
            )
            for k, obj in enumerate(self.objects)
        ]

    def object_map(self) -> dict[str, BillboardObject]:
        return {f"{self.image_id}/o{k}": obj for k, obj in enumerate(self.objects)}


# ---------------------------------------------------------------------------
# Ground truth


def relative_depth_gap(depth_a: float, depth_b: float) -> float:
    return abs(depth_a - depth_b) / min(depth_a, depth_b)


def depth_label(depth_a: float, depth_b: float, tau: float, setting: Setting) -> Depth:
    """Threshold rule on the relative depth gap; the inside-band outcome is
    SAME_DEPTH within one image and UNSURE across images."""
    lo = min(depth_a, depth_b)
    if (depth_b - depth_a) / lo > tau:
        return Depth.A_CLOSER
    if (depth_a - depth_b) / lo > tau:
        return Depth.B_CLOSER
    return Depth.SAME_DEPTH if setting is Setting.WITHIN else Depth.UNSURE


def occlusion_label(a: BillboardObject, b: BillboardObject, camera: Camera) -> Occlusion:
    """Part-level test: a part strictly nearer than an overlapping part of the
    other object hides some of it (billboards are opaque)."""
    a_over_b = b_over_a = False
    for p in a.parts:
        bp = p.project(camera)
        for q in b.parts:
            bq = q.project(camera)
            _, _, area = overlap_extent(bp, bq)
            if area <= 0.0:
                continue
            if p.z < q.z:
                a_over_b = True
            elif q.z < p.z:
                b_over_a = True
    if a_over_b and b_over_a:
        return Occlusion.MUTUAL
    if a_over_b:
        return Occlusion.A_OCCLUDES_B
    if b_over_a:
        return Occlusion.B_OCCLUDES_A
    return Occlusion.NO_OCCLUSION


# ---------------------------------------------------------------------------
# Generator config


@dataclass(frozen=True)
class GeneratorConfig:
    """Flat key=value generator settings; every field round-trips to file."""

    image_width: int = 128
    image_height: int = 128
    focal_px: float = 100.0
    images_train: int = 12
    images_val: int = 6
    images_test: int = 6
    objects_min: int = 2
    objects_max: int = 5
    z_min: float = 1.0
    z_max: float = 10.0
    area_min: float = 0.03
    area_max: float = 0.25
    aspect_min: float = 0.6
    aspect_max: float = 1.6
    margin: float = 0.01
    allow_overlap: bool = True
    max_pair_iou: float = 0.6
    p_compound: float = 0.25
    depth_cluster_prob: float = 0.0
    min_rel_gap: float = 0.0
    ground_bias: float = 0.0
    near_class_id: int = -1
    n_classes: int = 10
    tau: float = 0.1
    background_depth_factor: float = 1.5
    n_raters_eval: int = 5
    rater_sigma: float = 0.0
    rater_unsure_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.image_width < 8 or self.image_height < 8:
            raise ValidationError("image size must be at least 8x8")
        if self.focal_px <= 0:
            raise ValidationError("focal_px must be positive")
        if min(self.images_train, self.images_val, self.images_test) < 0:
            raise ValidationError("image counts must be non-negative")
        if self.objects_min < 2:
            raise ValidationError("objects_min must be at least 2 (pairs need two objects)")
        if self.objects_max < self.objects_min:
            raise ValidationError("objects_max must be >= objects_min")
        if not (0 < self.z_min < self.z_max):
            raise ValidationError("depth range must satisfy 0 < z_min < z_max")
        if not (0 < self.area_min < self.area_max < 1):
            raise ValidationError("area window must satisfy 0 < min < max < 1")
        if not (0 < self.aspect_min <= self.aspect_max):
            raise ValidationError("aspect range must be positive and ordered")
        if not (0 <= self.margin < 0.5):
            raise ValidationError("margin must lie in [0, 0.5)")
        if not (0 < self.max_pair_iou <= 1):
            raise ValidationError("max_pair_iou must lie in (0, 1]")
        for name in ("p_compound", "depth_cluster_prob", "ground_bias",
                     "rater_unsure_prob"):
            if not (0 <= getattr(self, name) <= 1):
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.tau < 0 or self.min_rel_gap < 0 or self.rater_sigma < 0:
            raise ValidationError("tau, min_rel_gap, rater_sigma must be >= 0")
        if self.n_classes < 1:
            raise ValidationError("n_classes must be at least 1")
        if self.n_raters_eval < 1:
            raise ValidationError("n_raters_eval must be at least 1")
        if self.background_depth_factor < 1:
            raise ValidationError("background_depth_factor must be >= 1")
        usable = 1 - 2 * self.margin
        if math.sqrt(self.area_max * self.aspect_max) >= usable or \
           math.sqrt(self.area_max / self.aspect_min) >= usable:
            raise ValidationError("area/aspect window does not fit inside the margins")

    @property
    def camera(self) -> Camera:
        return Camera(self.focal_px, self.image_width, self.image_height)

    @classmethod
    def from_file(cls, path: Path | str) -> "GeneratorConfig":
        return load_flat_config(cls, path)

    def to_file(self, path: Path | str) -> None:
        dump_flat_config(self, path)


# ---------------------------------------------------------------------------
# Scene generation

_MAX_ATTEMPTS = 500


def _generate_scene(image_id: str, config: GeneratorConfig, rng: np.random.Generator) -> SyntheticScene:
    camera = config.camera
    n = int(rng.integers(config.objects_min, config.objects_max + 1))
    boxes: list[Box] = []
    parts_per_object: list[tuple[Part, ...]] = []
    rep_depths: list[float] = []

    for _ in range(n):
        for attempt in range(_MAX_ATTEMPTS):
            cluster = bool(rep_depths) and rng.random() < config.depth_cluster_prob
            if cluster:
                z = rep_depths[int(rng.integers(len(rep_depths)))]
            else:
                z = float(rng.uniform(config.z_min, config.z_max))

            area = float(rng.uniform(config.area_min, config.area_max))
            aspect = float(rng.uniform(config.aspect_min, config.aspect_max))
            bw = math.sqrt(area * aspect)
            bh = math.sqrt(area / aspect)
            u_lo, u_hi = config.margin + bw / 2, 1 - config.margin - bw / 2
            v_lo, v_hi = config.margin + bh / 2, 1 - config.margin - bh / 2
            u = float(rng.uniform(u_lo, u_hi))
            v_rand = float(rng.uniform(v_lo, v_hi))
            if config.ground_bias > 0:
                # near objects sit lower in the frame
                t = (z - config.z_min) / (config.z_max - config.z_min)
                v_biased = v_lo + (1 - t) * (v_hi - v_lo)
                v = (1 - config.ground_bias) * v_rand + config.ground_bias * v_biased
            else:
                v = v_rand
            box = Box(u - bw / 2, v - bh / 2, u + bw / 2, v + bh / 2)

            if not config.allow_overlap:
                if any(overlap_extent(box, other)[2] > 0 for other in boxes):
                    continue
            elif any(_iou(box, other) > config.max_pair_iou for other in boxes):
                continue

            compound = (not cluster) and rng.random() < config.p_compound
            if compound:
                split_frac = float(rng.uniform(0.35, 0.65))
                x_mid = box.xmin + split_frac * box.width
                delta = float(rng.uniform(0.05, 0.3)) * (1 if rng.random() < 0.5 else -1)
                z2 = min(max(z * (1 + delta), config.z_min), config.z_max)
                parts = (
                    Part.from_normalized(Box(box.xmin, box.ymin, x_mid, box.ymax), z, camera),
                    Part.from_normalized(Box(x_mid, box.ymin, box.xmax, box.ymax), z2, camera),
                )
                rep = BillboardObject(0, parts).representative_depth
            else:
                parts = (Part.from_normalized(box, z, camera),)
                rep = z

            if config.min_rel_gap > 0 and any(
                0 < relative_depth_gap(rep, other) <= config.min_rel_gap
                for other in rep_depths
            ):
                continue
            boxes.append(box)
            parts_per_object.append(parts)
            rep_depths.append(rep)
            break
        else:
            raise GenerationError(
                f"could not place object {len(boxes)} in {image_id} "
                f"after {_MAX_ATTEMPTS} attempts"
            )

    class_ids = [int(c) for c in rng.integers(0, config.n_classes, size=n)]
    if config.near_class_id >= 0:
        nearest = int(np.argmin(rep_depths))
        if config.n_classes > 1:
            others = [c for c in range(config.n_classes) if c != config.near_class_id]
            class_ids = [others[int(rng.integers(len(others)))] for _ in range(n)]
        class_ids[nearest] = config.near_class_id

    objects = [
        BillboardObject(class_id=c, parts=p)
        for c, p in zip(class_ids, parts_per_object)
    ]
    return SyntheticScene(
        image_id=image_id,
        camera=camera,
        objects=objects,
        background_depth=config.z_max * config.background_depth_factor,
    )


def _iou(a: Box, b: Box) -> float:
    _, _, inter = overlap_extent(a, b)
    if inter <= 0:
        return 0.0
    return inter / (a.area + b.area - inter)


# ---------------------------------------------------------------------------
# Dataset assembly


@dataclass
class SyntheticDataset:
    bundle: DatasetBundle
    scenes: dict[str, SyntheticScene]
    config: GeneratorConfig
    seed: int

    def billboard(self, object_id: str) -> BillboardObject:
        image_id = object_id.rsplit("/", 1)[0]
        return self.scenes[image_id].object_map()[object_id]

    def object_depth(self, object_id: str) -> float:
        return self.billboard(object_id).representative_depth

    def label_pair(self, pair: PairLabel) -> PairLabel:
        """Attach exact geometric ground truth to an unlabeled pair."""
        depth_a = self.object_depth(pair.object_id_a)
        depth_b = self.object_depth(pair.object_id_b)
        depth = depth_label(depth_a, depth_b, self.config.tau, pair.setting)
        occlusion = None
        if pair.setting is Setting.WITHIN:
            scene = self.scenes[pair.image_id_a]
            occlusion = occlusion_label(
                self.billboard(pair.object_id_a),
                self.billboard(pair.object_id_b),
                scene.camera,
            )
        return dataclasses.replace(pair, depth=depth, occlusion=occlusion)

    def render_depth_maps(self) -> dict[str, np.ndarray]:
        return {iid: render_depth_map(s) for iid, s in sorted(self.scenes.items())}


def build_synthetic_bundle(
    config: GeneratorConfig,
    seed: int,
    filter_config: Optional[FilterConfig] = None,
    with_votes: bool = True,
) -> SyntheticDataset:
    """Generate scenes, draw annotation pairs (sampled for train, exhaustive
    for validation/test), label them from geometry, and simulate votes."""
    filter_config = filter_config or FilterConfig()
    images: list[ImageRecord] = []
    scenes: dict[str, SyntheticScene] = {}
    for split, count in (
        (Split.TRAIN, config.images_train),
        (Split.VALIDATION, config.images_val),
        (Split.TEST, config.images_test),
    ):
        for i in range(count):
            image_id = f"{split.value}_im{i:04d}"
            scene = _generate_scene(image_id, config, _rng(seed, "scene", image_id))
            scenes[image_id] = scene
            images.append(ImageRecord(
                image_id=image_id,
                width_px=config.image_width,
                height_px=config.image_height,
                split=split,
                group=assign_group(image_id),
            ))

    objects = [inst for iid in sorted(scenes) for inst in scenes[iid].object_instances()]
    skeleton = DatasetBundle(images=images, objects=objects, pairs=[])
    unlabeled = (
        sample_training_pairs(skeleton, filter_config, None, seed)
        + exhaustive_eval_pairs(skeleton, filter_config, None, seed)
    )

    dataset = SyntheticDataset(bundle=skeleton, scenes=scenes, config=config, seed=seed)
    pairs = [dataset.label_pair(p) for p in unlabeled]
    dataset.bundle = DatasetBundle(
        images=images,
        objects=objects,
        pairs=pairs,
        provenance=f"synthetic seed={seed}",
    )
    if with_votes:
        dataset.bundle.votes = simulate_votes(dataset)
    dataset.bundle.validate()
    return dataset


# ---------------------------------------------------------------------------
# Vote simulation


@dataclass(frozen=True)
class RaterProfile:
    rater_id: str
    sigma: float = 0.0
    unsure_prob: float = 0.0
    seed: int = 0


def default_profiles(config: GeneratorConfig, seed: int) -> list[RaterProfile]:
    return [
        RaterProfile(
            rater_id=f"r{r}",
            sigma=config.rater_sigma,
            unsure_prob=config.rater_unsure_prob,
            seed=seed,
        )
        for r in range(config.n_raters_eval)
    ]


def simulate_vote(
    pair: PairLabel,
    depth_a: float,
    depth_b: float,
    gt_occlusion: Optional[Occlusion],
    profile: RaterProfile,
    tau: float,
) -> VoteRecord:
    """One rater's judgment: depths perturbed multiplicatively, occlusion
    flipped to a uniformly wrong class with probability min(1, sigma).
    Deterministic per (rater, pair) regardless of call order."""
    rng = _rng(profile.seed, "vote", profile.rater_id, pair.pair_id)
    if rng.random() < profile.unsure_prob:
        depth_vote = Depth.UNSURE
    else:
        noisy_a = max(depth_a * (1 + profile.sigma * rng.standard_normal()), 0.01)
        noisy_b = max(depth_b * (1 + profile.sigma * rng.standard_normal()), 0.01)
        depth_vote = depth_label(noisy_a, noisy_b, tau, pair.setting)

    occlusion_vote: Optional[Occlusion] = None
    if pair.setting is Setting.WITHIN:
        occlusion_vote = gt_occlusion if gt_occlusion is not None else Occlusion.NO_OCCLUSION
        if rng.random() < min(1.0, profile.sigma):
            wrong = [o for o in Occlusion if o != occlusion_vote]
            occlusion_vote = wrong[int(rng.integers(len(wrong)))]
    return VoteRecord(
        pair_id=pair.pair_id,
        rater_id=profile.rater_id,
        depth_vote=depth_vote,
        occlusion_vote=occlusion_vote,
        timestamp_ms=0,
    )


def simulate_votes(
    dataset: SyntheticDataset,
    profiles: Optional[Sequence[RaterProfile]] = None,
) -> list[VoteRecord]:
    """Single vote per training pair, one vote per rater elsewhere."""
    profiles = list(profiles or default_profiles(dataset.config, dataset.seed))
    split_of = {im.image_id: im.split for im in dataset.bundle.images}
    votes: list[VoteRecord] = []
    for pair in dataset.bundle.pairs:
        depth_a = dataset.object_depth(pair.object_id_a)
        depth_b = dataset.object_depth(pair.object_id_b)
        gt_occ = None
        if pair.setting is Setting.WITHIN:
            gt_occ = occlusion_label(
                dataset.billboard(pair.object_id_a),
                dataset.billboard(pair.object_id_b),
                dataset.scenes[pair.image_id_a].camera,
            )
        active = profiles[:1] if split_of[pair.image_id_a] == Split.TRAIN else profiles
        for profile in active:
            votes.append(simulate_vote(pair, depth_a, depth_b, gt_occ, profile, dataset.config.tau))
    return votes


# ---------------------------------------------------------------------------
# Depth-map rendering and corruption


def render_depth_map(scene: SyntheticScene) -> np.ndarray:
    """Z-buffer rasterization of part depths onto the shared pixel grid."""
    camera = scene.camera
    depth = np.full(
        (camera.height_px, camera.width_px),
        np.float32(scene.background_depth),
        dtype=np.float32,
    )
    for obj in scene.objects:
        for part in obj.parts:
            rows, cols = box_slice(part.project(camera), camera.width_px, camera.height_px)
            region = depth[rows, cols]
            np.minimum(region, np.float32(part.z), out=region)
    return depth


def corrupt_depth_map(
    depth: np.ndarray,
    rng: np.random.Generator,
    noise_sigma: float = 0.05,
    smooth_radius: int = 1,
) -> np.ndarray:
    """Multiplicative noise plus box blur, imitating an estimated depth map."""
    out = depth.astype(np.float64) * (1 + noise_sigma * rng.standard_normal(depth.shape))
    np.clip(out, 1e-3, None, out=out)
    if smooth_radius > 0:
        r = smooth_radius
        h, w = out.shape
        padded = np.pad(out, r, mode="edge")
        acc = np.zeros_like(out)
        for dy in range(2 * r + 1):
            for dx in range(2 * r + 1):
                acc += padded[dy:dy + h, dx:dx + w]
        out = acc / (2 * r + 1) ** 2
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Detector simulation


def simulate_detections(
    bundle: DatasetBundle,
    seed: int,
    miss_rate: float = 0.0,
    jitter_sigma: float = 0.0,
    spurious_rate: float = 0.0,
) -> list[ObjectInstance]:
    """Detector output: jittered copies of ground-truth boxes with confidence
    scores that fall as the jitter grows, some boxes dropped, and spurious
    low-score boxes added."""
    detections: list[ObjectInstance] = []
    by_image = bundle.objects_by_image()
    for image_id in sorted(by_image):
        rng = _rng(seed, "det", image_id)
        k = 0
        classes_here = sorted({o.class_id for o in by_image[image_id]}) or [0]
        for obj in sorted(by_image[image_id], key=lambda o: o.object_id):
            if rng.random() < miss_rate:
                continue
            box = obj.box
            noise = jitter_sigma * rng.standard_normal(4)
            cx = box.center[0] * (1 + noise[0])
            cy = box.center[1] * (1 + noise[1])
            w = box.width * (1 + noise[2])
            h = box.height * (1 + noise[3])
            jittered = clamped_box(cx, cy, w, h)
            drift = float(np.mean(np.abs(noise)))
            score = float(np.clip(1.0 - 2.0 * drift - 0.05 * rng.random(), 0.05, 1.0))
            detections.append(ObjectInstance(
                object_id=f"{image_id}/d{k}",
                image_id=image_id,
                class_id=obj.class_id,
                box=jittered,
                detector_score=score,
            ))
            k += 1
        for _ in range(int(rng.poisson(spurious_rate))):
            area = float(rng.uniform(0.02, 0.3))
            aspect = float(rng.uniform(0.6, 1.6))
            bw, bh = math.sqrt(area * aspect), math.sqrt(area / aspect)
            cx = float(rng.uniform(bw / 2, 1 - bw / 2))
            cy = float(rng.uniform(bh / 2, 1 - bh / 2))
            detections.append(ObjectInstance(
                object_id=f"{image_id}/d{k}",
                image_id=image_id,
                class_id=classes_here[int(rng.integers(len(classes_here)))],
                box=clamped_box(cx, cy, bw, bh),
                detector_score=float(rng.uniform(0.05, 0.35)),
            ))
            k += 1
    return detections
