"""Batched forward/backward passes, the RMSprop step, and the training loop.

Each conv stage computes conv -> maxpool -> ReLU.  That is exactly equivalent
to the conventional conv -> ReLU -> maxpool (max commutes with the
nondecreasing ReLU, and gradients through all-negative windows vanish either
way) but applies the activation at pooled resolution, which quarters the
memory traffic of the early stages.

Weight updates: S <- decay*S + (1-decay)*g^2, then
w <- w - decay * lr * g / sqrt(S + eps).  The leading decay factor on the
step is kept deliberately, so the effective step size is decay*lr.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..dataset import ClipArray, DatasetManifest, load_clips
from ..geometry import ParseError
from .layers import (
    StateError,
    ShapeMismatch,
    conv_backward,
    conv_forward,
    cross_entropy_batch,
    maxpool_backward,
    maxpool_forward,
    softmax_batch,
)
from .model import Model


class LabelSpaceMismatch(ValueError):
    pass


class DataError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    decay: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    init: str = "uniform_fan_in"

    def __post_init__(self):
        if not (0.0 < self.decay < 1.0):
            raise ValueError("decay must be in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "decay": self.decay,
            "epsilon": self.epsilon,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "init": self.init,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(
            learning_rate=float(d["learning_rate"]),
            decay=float(d["decay"]),
            epsilon=float(d["epsilon"]),
            batch_size=int(d["batch_size"]),
            epochs=int(d["epochs"]),
            seed=int(d["seed"]),
            init=str(d.get("init", "uniform_fan_in")),
        )


def forward_batch(model: Model, x: np.ndarray, train: bool = False) -> np.ndarray:
    """Run the network on a batch; x is (N,H,W) or (N,H,W,C) float32 in [0,1].

    Returns class probabilities (N, d).  With train=True the activations
    needed by backward_batch are cached on the model."""
    if x.ndim == 3:
        x = x[:, :, :, None]
    if x.shape[1:3] != model.spec.input_hw or x.shape[3] != model.spec.in_channels:
        raise ShapeMismatch(f"input {x.shape[1:]} does not match spec "
                            f"{model.spec.input_hw + (model.spec.in_channels,)}")
    x = np.ascontiguousarray(x, dtype=np.float32)
    scratch = model.scratch
    stages = []
    for i in range(len(model.spec.conv_filters)):
        kernels, bias = model.conv_params(i)
        z, cols = conv_forward(x, kernels, bias, model.spec.padding, scratch, tag=f"s{i}")
        pooled, idx = maxpool_forward(z)
        np.maximum(pooled, 0, out=pooled)  # ReLU at pooled resolution
        stages.append({"x_shape": x.shape, "z_shape": z.shape, "cols": cols, "idx": idx, "out": pooled})
        x = pooled
    n = x.shape[0]
    flat = x.reshape(n, -1)
    fc_w, fc_b, out_w, out_b = model.dense_params()
    hidden = flat @ fc_w.T + fc_b
    np.maximum(hidden, 0, out=hidden)
    logits = hidden @ out_w.T + out_b
    probs = softmax_batch(logits)
    if train:
        model.cache = {"stages": stages, "flat": flat, "hidden": hidden, "probs": probs}
    else:
        model.cache = {}
    return probs


def backward_batch(model: Model, target_idx: np.ndarray) -> list[np.ndarray]:
    """Exact gradients of mean batch cross-entropy, aligned with model.params."""
    cache = model.cache
    if not cache:
        raise StateError("backward_batch requires a cached train-mode forward pass")
    probs, hidden, flat = cache["probs"], cache["hidden"], cache["flat"]
    n = probs.shape[0]
    fc_w, _fc_b, out_w, _out_b = model.dense_params()

    dlogits = probs.copy()
    dlogits[np.arange(n), target_idx] -= 1.0
    dlogits /= np.float32(n)
    d_out_w = dlogits.T @ hidden
    d_out_b = dlogits.sum(axis=0)
    dh = dlogits @ out_w
    dh *= hidden > 0
    d_fc_w = dh.T @ flat
    d_fc_b = dh.sum(axis=0)
    da = (dh @ fc_w).reshape(cache["stages"][-1]["out"].shape)

    grads: list[np.ndarray | None] = [None] * len(model.params)
    grads[-4] = d_fc_w
    grads[-3] = d_fc_b
    grads[-2] = d_out_w
    grads[-1] = d_out_b
    for i in range(len(model.spec.conv_filters) - 1, -1, -1):
        st = cache["stages"][i]
        dz_pooled = da * (st["out"] > 0)
        dz = maxpool_backward(dz_pooled, st["idx"], st["z_shape"], model.scratch, tag=f"s{i}")
        kernels, _bias = model.conv_params(i)
        dx, dk, db = conv_backward(
            dz, st["cols"], kernels, st["x_shape"], model.spec.padding,
            need_dx=(i > 0), scratch=model.scratch, tag=f"s{i}",
        )
        grads[2 * i] = dk
        grads[2 * i + 1] = db
        da = dx
    return grads  # type: ignore[return-value]


def rmsprop_step(model: Model, grads: list[np.ndarray], cfg: TrainConfig) -> Model:
    """In-place RMSprop update over every parameter tensor."""
    alpha = np.float32(cfg.decay)
    one_minus = np.float32(1.0 - cfg.decay)
    step_scale = np.float32(cfg.decay * cfg.learning_rate)
    eps = np.float32(cfg.epsilon)
    for p, s, g in zip(model.params, model.rms, grads):
        np.multiply(s, alpha, out=s)
        s += one_minus * (g * g)
        p -= step_scale * g / np.sqrt(s + eps)
    return model


@dataclass
class EpochStats:
    train_loss: float
    val_loss: float
    val_accuracy: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)


def evaluate(model: Model, clips: ClipArray, batch_size: int = 64) -> tuple[float, float, np.ndarray]:
    """(mean loss, accuracy, predicted class indices) over a clip array."""
    n = len(clips)
    if n == 0:
        return 0.0, 0.0, np.zeros(0, dtype=np.int64)
    preds = np.empty(n, dtype=np.int64)
    loss_sum = 0.0
    for lo in range(0, n, batch_size):
        idx = np.arange(lo, min(lo + batch_size, n))
        probs = forward_batch(model, clips.images(idx), train=False)
        preds[idx] = probs.argmax(axis=1)
        loss_sum += cross_entropy_batch(probs, clips.labels[idx]) * len(idx)
    accuracy = float((preds == clips.labels).mean())
    return loss_sum / n, accuracy, preds


def _check_finite(model: Model, *values: float) -> None:
    if not all(np.isfinite(v) for v in values):
        raise FloatingPointError("non-finite loss during training")
    for name, p in zip(model.param_names(), model.params):
        if not np.isfinite(p).all():
            raise FloatingPointError(f"non-finite values in {name}")


def train(
    model: Model,
    manifest: DatasetManifest,
    cfg: TrainConfig,
    base_dir,
    on_epoch=None,
) -> tuple[Model, TrainHistory]:
    """Mini-batch training on the manifest's train split; validation split is
    scored per epoch and never used for updates."""
    if len(manifest.classes) != model.spec.output_dim:
        raise LabelSpaceMismatch(
            f"manifest has {len(manifest.classes)} classes, model outputs {model.spec.output_dim}"
        )
    try:
        train_clips = load_clips(manifest, base_dir, "train")
        val_clips = load_clips(manifest, base_dir, "val")
    except (OSError, ParseError) as e:
        raise DataError(str(e)) from e

    model.train_cfg = cfg.to_dict()
    history = TrainHistory()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    n = len(train_clips)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            x = train_clips.images(idx)
            y = train_clips.labels[idx]
            probs = forward_batch(model, x, train=True)
            loss_sum += cross_entropy_batch(probs, y) * len(idx)
            grads = backward_batch(model, y)
            rmsprop_step(model, grads, cfg)
        train_loss = loss_sum / n if n else 0.0
        val_loss, val_acc, _ = evaluate(model, val_clips)
        seconds = time.perf_counter() - t0
        _check_finite(model, train_loss, val_loss)
        stats = EpochStats(train_loss, val_loss, val_acc, seconds)
        history.epochs.append(stats)
        if on_epoch is not None:
            on_epoch(epoch, stats)
    return model, history


def predict(model: Model, image: np.ndarray) -> tuple[np.ndarray, str]:
    """Classify one clip; accepts {0,255} file values or {0,1} rasters.

    Returns (probabilities, label); argmax ties break to the lowest index."""
    if image.ndim != 2 or image.shape != model.spec.input_hw:
        raise ShapeMismatch(f"image shape {image.shape} != {model.spec.input_hw}")
    x = image.astype(np.float32)
    if x.max(initial=0.0) > 1.0:
        x /= np.float32(255.0)
    probs = forward_batch(model, x[None], train=False)[0]
    return probs, model.classes[int(probs.argmax())]


# ---------------------------------------------------------------------------
# History file: one line per epoch
# ---------------------------------------------------------------------------

def write_history(history: TrainHistory, path, config: dict | None = None) -> None:
    import json

    lines = ["# drccnn-history v1"]
    if config is not None:
        lines.append(f"# config: {json.dumps(config, sort_keys=True)}")
    lines.append("epoch,train_loss,val_loss,val_accuracy,seconds")
    for k, e in enumerate(history.epochs, start=1):
        lines.append(f"{k},{e.train_loss:.6f},{e.val_loss:.6f},{e.val_accuracy:.6f},{e.seconds:.3f}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_history(path) -> TrainHistory:
    history = TrainHistory()
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("epoch,"):
                continue
            _, tl, vl, va, sec = line.split(",")
            history.epochs.append(EpochStats(float(tl), float(vl), float(va), float(sec)))
    return history
