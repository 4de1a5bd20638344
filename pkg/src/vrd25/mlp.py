"""Two-head MLP over pair features: one hidden ReLU layer, a 4-class depth
head and a 4-class occlusion head, trained with Adam on the summed
cross-entropies plus L2 on the weight matrices.

Each sampled pair enters a batch in both orders with mirrored labels, and box
coordinates get multiplicative jitter, so the learned function is encouraged
(not forced) to be direction-covariant; predictions stay independent per
ordered pair.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataio import load_flat_config
from .features import FeatureConfig, FeatureContext
from .model import (
    Depth,
    ObjectInstance,
    Occlusion,
    PairLabel,
    Setting,
    Split,
    ValidationError,
    clamped_box,
    flip_depth,
    flip_occlusion,
)

PARAM_KEYS = ("w1", "b1", "wd", "bd", "wo", "bo")
N_PREDICATES = 4


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 1024
    steps: int = 60000
    batch_size: int = 32
    learning_rate: float = 2e-4
    weight_decay: float = 1e-4
    dropout: float = 0.5
    box_jitter: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.hidden_dim < 1 or self.steps < 1 or self.batch_size < 1:
            raise ValidationError("hidden_dim, steps, batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if not (0 <= self.dropout < 1):
            raise ValidationError("dropout must lie in [0, 1)")
        if self.weight_decay < 0 or self.box_jitter < 0:
            raise ValidationError("weight_decay and box_jitter must be >= 0")

    @classmethod
    def from_file(cls, path: Path | str) -> "TrainConfig":
        return load_flat_config(cls, path)


def init_params(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-scaled hidden layer, Glorot-scaled linear heads, zero biases."""
    return {
        "w1": rng.standard_normal((input_dim, hidden_dim)) * np.sqrt(2.0 / input_dim),
        "b1": np.zeros(hidden_dim),
        "wd": rng.standard_normal((hidden_dim, N_PREDICATES))
        * np.sqrt(2.0 / (hidden_dim + N_PREDICATES)),
        "bd": np.zeros(N_PREDICATES),
        "wo": rng.standard_normal((hidden_dim, N_PREDICATES))
        * np.sqrt(2.0 / (hidden_dim + N_PREDICATES)),
        "bo": np.zeros(N_PREDICATES),
    }


@dataclass
class Batch:
    """Feature rows with targets; occl_target -1 marks rows without occlusion
    supervision (across-image pairs)."""

    x: np.ndarray
    depth_target: np.ndarray
    occl_target: np.ndarray

    def __post_init__(self) -> None:
        n = self.x.shape[0]
        if self.depth_target.shape != (n,) or self.occl_target.shape != (n,):
            raise ValidationError("batch target shapes do not match features")


def forward(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    dropout_mask: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(depth logits, occlusion logits) for feature rows."""
    h = np.maximum(x @ params["w1"] + params["b1"], 0.0)
    if dropout_mask is not None:
        h = h * dropout_mask
    return h @ params["wd"] + params["bd"], h @ params["wo"] + params["bo"]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass
class LossBreakdown:
    total: float
    depth: float
    occlusion: float
    l2: float


def loss_and_grads(
    params: dict[str, np.ndarray],
    batch: Batch,
    weight_decay: float,
    dropout_mask: Optional[np.ndarray] = None,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Mean depth cross-entropy over all rows plus occlusion cross-entropy
    normalized by the same row count (unsupervised rows contribute zero),
    plus weight_decay * sum of squared weights. Exact analytic gradients."""
    x = batch.x
    n = x.shape[0]
    pre = x @ params["w1"] + params["b1"]
    h = np.maximum(pre, 0.0)
    if dropout_mask is not None:
        h = h * dropout_mask
    logits_d = h @ params["wd"] + params["bd"]
    logits_o = h @ params["wo"] + params["bo"]

    ls_d = _log_softmax(logits_d)
    loss_d = -float(ls_d[np.arange(n), batch.depth_target].mean())
    dlogits_d = np.exp(ls_d)
    dlogits_d[np.arange(n), batch.depth_target] -= 1.0
    dlogits_d /= n

    occl_rows = batch.occl_target >= 0
    ls_o = _log_softmax(logits_o)
    dlogits_o = np.exp(ls_o)
    if occl_rows.any():
        targets = batch.occl_target[occl_rows]
        loss_o = -float(ls_o[occl_rows, targets].sum()) / n
        onehot_rows = np.zeros_like(dlogits_o)
        onehot_rows[occl_rows, targets] = 1.0
        dlogits_o = (dlogits_o - onehot_rows) / n
        dlogits_o[~occl_rows] = 0.0
    else:
        loss_o = 0.0
        dlogits_o = np.zeros_like(logits_o)

    l2 = weight_decay * float(
        (params["w1"] ** 2).sum() + (params["wd"] ** 2).sum() + (params["wo"] ** 2).sum()
    )

    grads = {
        "wd": h.T @ dlogits_d + 2 * weight_decay * params["wd"],
        "bd": dlogits_d.sum(axis=0),
        "wo": h.T @ dlogits_o + 2 * weight_decay * params["wo"],
        "bo": dlogits_o.sum(axis=0),
    }
    dh = dlogits_d @ params["wd"].T + dlogits_o @ params["wo"].T
    if dropout_mask is not None:
        dh = dh * dropout_mask
    dpre = dh * (pre > 0)
    grads["w1"] = x.T @ dpre + 2 * weight_decay * params["w1"]
    grads["b1"] = dpre.sum(axis=0)

    return LossBreakdown(loss_d + loss_o + l2, loss_d, loss_o, l2), grads


class AdamState:
    """Adam with bias correction and a constant learning rate."""

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.config = config

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.config
        self.t += 1
        correction1 = 1 - c.adam_beta1 ** self.t
        correction2 = 1 - c.adam_beta2 ** self.t
        for key in PARAM_KEYS:
            g = grads[key]
            self.m[key] = c.adam_beta1 * self.m[key] + (1 - c.adam_beta1) * g
            self.v[key] = c.adam_beta2 * self.v[key] + (1 - c.adam_beta2) * g * g
            m_hat = self.m[key] / correction1
            v_hat = self.v[key] / correction2
            params[key] -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps)


# ---------------------------------------------------------------------------
# Training driver


MODEL_SCOPES = ("within", "across", "joint")


@dataclass
class TrainedMlp:
    params: dict[str, np.ndarray]
    feature_config: FeatureConfig
    scope: str  # one of MODEL_SCOPES
    hidden_dim: int

    def __post_init__(self) -> None:
        if self.scope not in MODEL_SCOPES:
            raise ValidationError(f"scope must be one of {MODEL_SCOPES}")


def _jitter_box(box, rng: np.random.Generator, scale: float):
    cx, cy = box.center
    noise = rng.uniform(-scale, scale, size=4)
    return clamped_box(
        cx * (1 + noise[0]), cy * (1 + noise[1]),
        box.width * (1 + noise[2]), box.height * (1 + noise[3]),
    )


def _pair_rows(
    pair: PairLabel,
    a: ObjectInstance,
    b: ObjectInstance,
    context: FeatureContext,
    rng: Optional[np.random.Generator],
    jitter: float,
) -> tuple[np.ndarray, np.ndarray, list[int], list[int]]:
    box_a, box_b = a.box, b.box
    if rng is not None and jitter > 0:
        box_a = _jitter_box(box_a, rng, jitter)
        box_b = _jitter_box(box_b, rng, jitter)
    forward_row = context.features(a, b, box_a, box_b)
    reverse_row = context.features(b, a, box_b, box_a)
    d = int(pair.depth)
    d_flip = int(flip_depth(pair.depth))
    if pair.occlusion is not None:
        o, o_flip = int(pair.occlusion), int(flip_occlusion(pair.occlusion))
    else:
        o = o_flip = -1
    return forward_row, reverse_row, [d, d_flip], [o, o_flip]


def train_mlp(
    pairs: Sequence[PairLabel],
    objects: dict[str, ObjectInstance],
    context: FeatureContext,
    config: TrainConfig,
    scope: str,
    seed: int,
) -> tuple[TrainedMlp, list[list[object]]]:
    """Run exactly config.steps Adam updates; each step samples batch_size
    labeled pairs with replacement and presents them in both orders.
    Returns the model and the training-log rows."""
    pairs = [p for p in pairs if p.depth is not None]
    if not pairs:
        raise ValidationError("no labeled pairs to train on")
    dim = context.config.dim
    rng = np.random.default_rng(seed)
    params = init_params(dim, config.hidden_dim, rng)
    adam = AdamState(params, config)

    static_rows = None
    if config.box_jitter == 0:
        static_rows = np.empty((2 * len(pairs), dim))
        targets_d = np.empty(2 * len(pairs), dtype=np.int64)
        targets_o = np.empty(2 * len(pairs), dtype=np.int64)
        for i, p in enumerate(pairs):
            fwd, rev, d, o = _pair_rows(
                p, objects[p.object_id_a], objects[p.object_id_b], context, None, 0.0
            )
            static_rows[2 * i], static_rows[2 * i + 1] = fwd, rev
            targets_d[2 * i], targets_d[2 * i + 1] = d
            targets_o[2 * i], targets_o[2 * i + 1] = o

    log: list[list[object]] = []
    for step in range(1, config.steps + 1):
        picked = rng.integers(0, len(pairs), size=config.batch_size)
        if static_rows is not None:
            idx = np.empty(2 * config.batch_size, dtype=np.int64)
            idx[0::2], idx[1::2] = 2 * picked, 2 * picked + 1
            batch = Batch(static_rows[idx], targets_d[idx], targets_o[idx])
        else:
            rows = np.empty((2 * config.batch_size, dim))
            t_d = np.empty(2 * config.batch_size, dtype=np.int64)
            t_o = np.empty(2 * config.batch_size, dtype=np.int64)
            for j, i in enumerate(picked):
                p = pairs[int(i)]
                fwd, rev, d, o = _pair_rows(
                    p, objects[p.object_id_a], objects[p.object_id_b],
                    context, rng, config.box_jitter,
                )
                rows[2 * j], rows[2 * j + 1] = fwd, rev
                t_d[2 * j], t_d[2 * j + 1] = d
                t_o[2 * j], t_o[2 * j + 1] = o
            batch = Batch(rows, t_d, t_o)

        mask = None
        if config.dropout > 0:
            keep = 1.0 - config.dropout
            mask = (rng.random((batch.x.shape[0], config.hidden_dim)) < keep) / keep
        loss, grads = loss_and_grads(params, batch, config.weight_decay, mask)
        adam.update(params, grads)
        if step % config.log_every == 0 or step == config.steps:
            log.append([
                step, repr(loss.depth), repr(loss.occlusion),
                repr(loss.l2), repr(config.learning_rate),
            ])

    model = TrainedMlp(
        params=params,
        feature_config=context.config,
        scope=scope,
        hidden_dim=config.hidden_dim,
    )
    return model, log


TRAIN_LOG_HEADER = ["step", "loss_depth", "loss_occlusion", "l2", "learning_rate"]


def predict_mlp(
    model: TrainedMlp,
    pairs: Sequence[PairLabel],
    objects: dict[str, ObjectInstance],
    context: FeatureContext,
) -> list[PairLabel]:
    """Independent argmax per ordered pair; across-image pairs never receive
    SAME_DEPTH (that logit is masked) and carry no occlusion."""
    if context.config != model.feature_config:
        raise ValidationError("feature layout does not match the trained model")
    out: list[PairLabel] = []
    if not pairs:
        return out
    rows = np.empty((len(pairs), context.config.dim))
    for i, p in enumerate(pairs):
        rows[i] = context.features(objects[p.object_id_a], objects[p.object_id_b])
    logits_d, logits_o = forward(model.params, rows)
    for i, p in enumerate(pairs):
        ld = logits_d[i].copy()
        if p.setting is Setting.ACROSS:
            ld[int(Depth.SAME_DEPTH)] = -np.inf
        depth = Depth(int(np.argmax(ld)))
        occlusion = None
        if p.setting is Setting.WITHIN:
            occlusion = Occlusion(int(np.argmax(logits_o[i])))
        out.append(dataclasses.replace(p, depth=depth, occlusion=occlusion))
    return out


# ---------------------------------------------------------------------------
# Checkpoint format: "VRDM", little-endian header, float64 tensors

MODEL_MAGIC = b"VRDM"
MODEL_VERSION = 1
_SCOPE_CODES = {"within": 0, "across": 1, "joint": 2}
_SCOPE_NAMES = {v: k for k, v in _SCOPE_CODES.items()}


def save_model(model: TrainedMlp, path: Path | str) -> None:
    fc = model.feature_config
    input_dim = fc.dim
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<III", MODEL_VERSION, fc.fingerprint(), 0))
        f.write(struct.pack(
            "<IIIBBBBII",
            input_dim, model.hidden_dim, _SCOPE_CODES[model.scope],
            int(fc.use_class), int(fc.use_bbox), int(fc.use_depth), int(fc.use_appearance),
            fc.n_classes, fc.appearance_dim,
        ))
        for key in PARAM_KEYS:
            f.write(np.ascontiguousarray(model.params[key], dtype="<f8").tobytes())


def load_model(path: Path | str) -> TrainedMlp:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise ValidationError(f"{path}: not a model checkpoint (bad magic)")
    version, fingerprint, _reserved = struct.unpack_from("<III", data, 4)
    if version != MODEL_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    (input_dim, hidden_dim, scope_code,
     use_class, use_bbox, use_depth, use_appearance,
     n_classes, appearance_dim) = struct.unpack_from("<IIIBBBBII", data, 16)
    fc = FeatureConfig(
        use_class=bool(use_class), use_bbox=bool(use_bbox),
        use_depth=bool(use_depth), use_appearance=bool(use_appearance),
        n_classes=n_classes, appearance_dim=appearance_dim,
    )
    if fc.fingerprint() != fingerprint:
        raise ValidationError(f"{path}: feature fingerprint mismatch")
    if fc.dim != input_dim:
        raise ValidationError(f"{path}: input dim {input_dim} != layout dim {fc.dim}")
    offset = 16 + struct.calcsize("<IIIBBBBII")
    shapes = {
        "w1": (input_dim, hidden_dim),
        "b1": (hidden_dim,),
        "wd": (hidden_dim, N_PREDICATES),
        "bd": (N_PREDICATES,),
        "wo": (hidden_dim, N_PREDICATES),
        "bo": (N_PREDICATES,),
    }
    params = {}
    for key in PARAM_KEYS:
        count = int(np.prod(shapes[key]))
        params[key] = np.frombuffer(
            data, dtype="<f8", count=count, offset=offset
        ).reshape(shapes[key]).copy()
        offset += 8 * count
    if offset != len(data):
        raise ValidationError(f"{path}: trailing bytes after tensors")
    return TrainedMlp(
        params=params,
        feature_config=fc,
        scope=_SCOPE_NAMES[scope_code],
        hidden_dim=hidden_dim,
    )


def scope_settings(scope: str) -> tuple[Setting, ...]:
    if scope == "within":
        return (Setting.WITHIN,)
    if scope == "across":
        return (Setting.ACROSS,)
    return (Setting.WITHIN, Setting.ACROSS)


def training_pairs_for(
    pairs: Sequence[PairLabel],
    split_of: dict[str, Split],
    scope: str,
) -> list[PairLabel]:
    """Labeled training-split pairs whose setting the scope covers."""
    wanted = set(scope_settings(scope))
    return [
        p for p in pairs
        if p.depth is not None
        and p.setting in wanted
        and split_of[p.image_id_a] == Split.TRAIN
    ]
