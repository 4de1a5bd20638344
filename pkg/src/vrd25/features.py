"""Feature vectors for ordered object pairs, and the .feat container format.

Block layout, in order, each block optional:
  class:      one-hot of class_a (C values) then class_b (C values)
  bbox:       a box (4), b box (4), overlap height/width/area (3)  -> 11
  depth:      box stats of a (4), of b (4), image stats of a's image (4) -> 12
  appearance: vector of a (D), of b (D), of a's image (D) -> 3D

Values are raw (no per-image normalization); direction covariance comes from
swapping the a/b slots, which works identically within and across images.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .depthmaps import DepthMapStore, box_depth_stats, image_depth_stats
from .model import Box, ObjectInstance, PairLabel, ValidationError, overlap_extent

BBOX_BLOCK_DIM = 11
DEPTH_BLOCK_DIM = 12


@dataclass(frozen=True)
class FeatureConfig:
    use_class: bool = False
    use_bbox: bool = True
    use_depth: bool = False
    use_appearance: bool = False
    n_classes: int = 0
    appearance_dim: int = 0

    def __post_init__(self) -> None:
        if not (self.use_class or self.use_bbox or self.use_depth or self.use_appearance):
            raise ValidationError("at least one feature block must be enabled")
        if self.use_class and self.n_classes < 1:
            raise ValidationError("class block requires n_classes >= 1")
        if self.use_appearance and self.appearance_dim < 1:
            raise ValidationError("appearance block requires appearance_dim >= 1")

    @property
    def dim(self) -> int:
        total = 0
        if self.use_class:
            total += 2 * self.n_classes
        if self.use_bbox:
            total += BBOX_BLOCK_DIM
        if self.use_depth:
            total += DEPTH_BLOCK_DIM
        if self.use_appearance:
            total += 3 * self.appearance_dim
        return total

    def fingerprint(self) -> int:
        """Stable u32 identifying the layout, stored in model checkpoints."""
        text = (
            f"c{int(self.use_class)}:{self.n_classes}"
            f"b{int(self.use_bbox)}d{int(self.use_depth)}"
            f"a{int(self.use_appearance)}:{self.appearance_dim}"
        )
        return zlib.crc32(text.encode("ascii"))


class FeatureContext:
    """Binds a feature layout to the artifacts its blocks read from.

    Depth and appearance artifacts are required exactly when the matching
    block is enabled; a missing map or vector is an error, not a zero-fill.
    """

    def __init__(
        self,
        config: FeatureConfig,
        depth_store: Optional[DepthMapStore] = None,
        object_appearance: Optional[dict[str, np.ndarray]] = None,
        image_appearance: Optional[dict[str, np.ndarray]] = None,
    ):
        if config.use_depth and depth_store is None:
            raise ValidationError("depth block enabled but no depth-map store given")
        if config.use_appearance and (object_appearance is None or image_appearance is None):
            raise ValidationError("appearance block enabled but vectors missing")
        self.config = config
        self.depth_store = depth_store
        self.object_appearance = object_appearance or {}
        self.image_appearance = image_appearance or {}
        self._image_stats: dict[str, tuple[float, float, float, float]] = {}

    def _image_depth_stats(self, image_id: str) -> tuple[float, float, float, float]:
        if image_id not in self._image_stats:
            if image_id not in self.depth_store:
                raise FileNotFoundError(f"no depth map for image {image_id!r}")
            stats = image_depth_stats(self.depth_store.get(image_id))
            self._image_stats[image_id] = stats.as_tuple()
        return self._image_stats[image_id]

    def _appearance(self, table: dict[str, np.ndarray], key: str, what: str) -> np.ndarray:
        vec = table.get(key)
        if vec is None:
            raise ValidationError(f"no appearance vector for {what} {key!r}")
        if vec.shape != (self.config.appearance_dim,):
            raise ValidationError(
                f"appearance vector for {key!r} has dim {vec.shape}, "
                f"expected ({self.config.appearance_dim},)"
            )
        return vec

    def features(
        self,
        a: ObjectInstance,
        b: ObjectInstance,
        box_a: Optional[Box] = None,
        box_b: Optional[Box] = None,
    ) -> np.ndarray:
        """Feature vector for the ordered pair (a, b); box overrides let the
        trainer perturb geometry without forging new object records."""
        config = self.config
        box_a = box_a or a.box
        box_b = box_b or b.box
        parts: list[np.ndarray] = []
        if config.use_class:
            onehots = np.zeros(2 * config.n_classes)
            for slot, obj in enumerate((a, b)):
                if not (0 <= obj.class_id < config.n_classes):
                    raise ValidationError(
                        f"{obj.object_id}: class_id {obj.class_id} outside "
                        f"[0, {config.n_classes})"
                    )
                onehots[slot * config.n_classes + obj.class_id] = 1.0
            parts.append(onehots)
        if config.use_bbox:
            oh, ow, oarea = overlap_extent(box_a, box_b)
            parts.append(np.array([
                box_a.xmin, box_a.ymin, box_a.xmax, box_a.ymax,
                box_b.xmin, box_b.ymin, box_b.xmax, box_b.ymax,
                oh, ow, oarea,
            ]))
        if config.use_depth:
            if a.image_id not in self.depth_store:
                raise FileNotFoundError(f"no depth map for image {a.image_id!r}")
            if b.image_id not in self.depth_store:
                raise FileNotFoundError(f"no depth map for image {b.image_id!r}")
            stats_a = box_depth_stats(self.depth_store.get(a.image_id), box_a)
            stats_b = box_depth_stats(self.depth_store.get(b.image_id), box_b)
            parts.append(np.array(
                stats_a.as_tuple() + stats_b.as_tuple() + self._image_depth_stats(a.image_id)
            ))
        if config.use_appearance:
            parts.append(np.concatenate([
                self._appearance(self.object_appearance, a.object_id, "object"),
                self._appearance(self.object_appearance, b.object_id, "object"),
                self._appearance(self.image_appearance, a.image_id, "image"),
            ]))
        out = np.concatenate(parts)
        assert out.shape == (config.dim,)
        return out

    def featurize_pairs(
        self,
        pairs: Sequence[PairLabel],
        objects: dict[str, ObjectInstance],
    ) -> np.ndarray:
        rows = np.empty((len(pairs), self.config.dim))
        for i, p in enumerate(pairs):
            rows[i] = self.features(objects[p.object_id_a], objects[p.object_id_b])
        return rows


# ---------------------------------------------------------------------------
# Pseudo-appearance for synthetic data


def _keyed_rng(seed: int, *parts: str) -> np.random.Generator:
    digest = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(np.random.SeedSequence([seed, int.from_bytes(digest, "big")]))


def pseudo_appearance_vectors(
    objects: Sequence[ObjectInstance],
    dim: int,
    seed: int,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Deterministic class-correlated vectors standing in for a real encoder.

    Each vector is a fixed random class embedding plus object-keyed noise, so
    an object's vector does not depend on which other objects are in the
    batch; image vectors are the mean over the image's objects."""
    class_cache: dict[int, np.ndarray] = {}
    object_vecs: dict[str, np.ndarray] = {}
    per_image: dict[str, list[np.ndarray]] = {}
    for o in sorted(objects, key=lambda o: o.object_id):
        embedding = class_cache.get(o.class_id)
        if embedding is None:
            embedding = _keyed_rng(seed, "class", str(o.class_id)).standard_normal(dim)
            class_cache[o.class_id] = embedding
        noise = _keyed_rng(seed, "object", o.object_id).standard_normal(dim)
        vec = (embedding + 0.1 * noise).astype(np.float32)
        object_vecs[o.object_id] = vec
        per_image.setdefault(o.image_id, []).append(vec)
    image_vecs = {
        iid: np.mean(vecs, axis=0).astype(np.float32)
        for iid, vecs in per_image.items()
    }
    return object_vecs, image_vecs


# ---------------------------------------------------------------------------
# .feat container: keyed float32 vectors with a fixed dimension

FEAT_MAGIC = b"VRDF"
FEAT_VERSION = 1


def write_feature_file(path: Path | str, vectors: dict[str, np.ndarray]) -> None:
    if not vectors:
        raise ValidationError("refusing to write an empty feature file")
    dims = {v.shape for v in vectors.values()}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise ValidationError(f"vectors must share one 1-d shape, got {dims}")
    dim = next(iter(dims))[0]
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(struct.pack("<III", FEAT_VERSION, dim, 0))
        f.write(struct.pack("<I", len(vectors)))
        for key in sorted(vectors):
            encoded = key.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(np.asarray(vectors[key], dtype="<f4").tobytes())


def read_feature_file(path: Path | str) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != FEAT_MAGIC:
        raise ValidationError(f"{path}: not a feature file (bad magic)")
    version, dim, _reserved = struct.unpack_from("<III", data, 4)
    if version != FEAT_VERSION:
        raise ValidationError(f"{path}: unsupported feature-file version {version}")
    (count,) = struct.unpack_from("<I", data, 16)
    offset = 20
    vectors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (key_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        key = data[offset:offset + key_len].decode("utf-8")
        offset += key_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
        vectors[key] = vec
    if offset != len(data):
        raise ValidationError(f"{path}: trailing bytes after {count} records")
    return vectors
