"""Model definition, construction per the two presets, and serialization.

A model is four conv(3x3)+maxpool(2x2) stages, a ReLU hidden dense layer, and
a softmax output layer.  Presets pin the published per-layer conv and output
parameter counts exactly:

    one_rule:   convs 320 / 4,624 / 2,320 / 4,640, output 258  (d=2, fc 128)
    three_rule: convs 160 / 4,640 / 9,248 / 18,496, output 2,056 (d=8, fc 256)

The dense hidden-layer counts that fall out of the 200->100->50->25->12
spatial chain (same padding, floor pooling) are computed and printed rather
than forced to any external figure; no stage arrangement of this family
reproduces the published dense counts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..dataset import CLASSES_1RULE, CLASSES_3RULE
from .layers import Scratch, ShapeMismatch


class SpecError(ValueError):
    pass


class VersionMismatch(RuntimeError):
    pass


class ChecksumError(RuntimeError):
    pass


MODEL_FORMAT_VERSION = 1

PRESETS: dict[str, dict] = {
    "one_rule": {"conv_filters": (32, 16, 16, 32), "fc_size": 128, "output_dim": 2},
    "three_rule": {"conv_filters": (16, 32, 32, 64), "fc_size": 256, "output_dim": 8},
}


@dataclass(frozen=True)
class ModelSpec:
    conv_filters: tuple[int, ...]
    fc_size: int
    output_dim: int
    input_hw: tuple[int, int] = (200, 200)
    in_channels: int = 1
    padding: str = "same"

    def __post_init__(self):
        if not self.conv_filters or any(f <= 0 for f in self.conv_filters):
            raise SpecError(f"bad conv filter counts {self.conv_filters}")
        if self.fc_size <= 0 or self.output_dim < 2:
            raise SpecError("fc_size must be positive and output_dim >= 2")
        if self.padding not in ("same", "valid"):
            raise SpecError(f"unknown padding {self.padding!r}")
        self.spatial_chain()  # raises if any stage underflows

    def spatial_chain(self) -> list[tuple[int, int]]:
        """(H, W) after each conv+pool stage."""
        h, w = self.input_hw
        chain = []
        for _ in self.conv_filters:
            if self.padding == "valid":
                h, w = h - 2, w - 2
            if h < 2 or w < 2:
                raise SpecError(f"spatial size {h}x{w} too small to pool")
            h, w = h // 2, w // 2
            chain.append((h, w))
        return chain

    def flatten_size(self) -> int:
        h, w = self.spatial_chain()[-1]
        return h * w * self.conv_filters[-1]

    def conv_param_counts(self) -> list[int]:
        counts = []
        c = self.in_channels
        for f in self.conv_filters:
            counts.append(f * (9 * c + 1))
            c = f
        return counts

    def fc_param_count(self) -> int:
        return self.fc_size * (self.flatten_size() + 1)

    def output_param_count(self) -> int:
        return self.output_dim * (self.fc_size + 1)

    def total_param_count(self) -> int:
        return sum(self.conv_param_counts()) + self.fc_param_count() + self.output_param_count()

    def to_dict(self) -> dict:
        return {
            "conv_filters": list(self.conv_filters),
            "fc_size": self.fc_size,
            "output_dim": self.output_dim,
            "input_hw": list(self.input_hw),
            "in_channels": self.in_channels,
            "padding": self.padding,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            conv_filters=tuple(d["conv_filters"]),
            fc_size=int(d["fc_size"]),
            output_dim=int(d["output_dim"]),
            input_hw=tuple(d["input_hw"]),
            in_channels=int(d["in_channels"]),
            padding=d["padding"],
        )


def classes_for_dim(d: int) -> tuple[str, ...]:
    if d == 2:
        return CLASSES_1RULE
    if d == 8:
        return CLASSES_3RULE
    return tuple(f"C{k}" for k in range(d))


@dataclass
class Model:
    spec: ModelSpec
    params: list[np.ndarray]          # k0,b0,k1,b1,...,fc_w,fc_b,out_w,out_b
    rms: list[np.ndarray] = field(default_factory=list)  # RMSprop accumulators
    seed: int = 0
    train_cfg: dict = field(default_factory=dict)
    scratch: Scratch = field(default_factory=Scratch)
    cache: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.rms:
            self.rms = [np.zeros_like(p) for p in self.params]

    @property
    def classes(self) -> tuple[str, ...]:
        return classes_for_dim(self.spec.output_dim)

    def param_names(self) -> list[str]:
        names = []
        for i in range(len(self.spec.conv_filters)):
            names += [f"conv{i}.kernels", f"conv{i}.bias"]
        names += ["fc.weight", "fc.bias", "out.weight", "out.bias"]
        return names

    def conv_params(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.params[2 * i], self.params[2 * i + 1]

    def dense_params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return tuple(self.params[-4:])

    def weight_blob(self) -> bytes:
        return b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in self.params)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.weight_blob()).hexdigest()[:16]


def _resolve_spec(preset_or_spec) -> ModelSpec:
    if isinstance(preset_or_spec, ModelSpec):
        return preset_or_spec
    key = str(preset_or_spec).lower()
    if key not in PRESETS:
        raise SpecError(f"unknown preset {preset_or_spec!r}; presets: {sorted(PRESETS)}")
    return ModelSpec(**PRESETS[key])


def param_summary(spec: ModelSpec) -> str:
    lines = ["layer           params"]
    for i, n in enumerate(spec.conv_param_counts()):
        lines.append(f"conv{i + 1} ({spec.conv_filters[i]:>3}f)   {n:>9,}")
    lines.append(f"fc   ({spec.fc_size:>3}u)   {spec.fc_param_count():>9,}")
    lines.append(f"out  ({spec.output_dim:>3}d)   {spec.output_param_count():>9,}")
    lines.append(f"total          {spec.total_param_count():>9,}")
    return "\n".join(lines)


def build_model(
    preset_or_spec,
    rng: np.random.Generator,
    seed: int = 0,
    print_summary: bool = False,
) -> Model:
    """Instantiate a model; kernels uniform in +-sqrt(6/fan_in), biases zero."""
    spec = _resolve_spec(preset_or_spec)
    params: list[np.ndarray] = []
    c = spec.in_channels
    for f in spec.conv_filters:
        lim = np.sqrt(6.0 / (9 * c))
        params.append(rng.uniform(-lim, lim, size=(f, 3, 3, c)).astype(np.float32))
        params.append(np.zeros(f, dtype=np.float32))
        c = f
    n_in = spec.flatten_size()
    lim = np.sqrt(6.0 / n_in)
    params.append(rng.uniform(-lim, lim, size=(spec.fc_size, n_in)).astype(np.float32))
    params.append(np.zeros(spec.fc_size, dtype=np.float32))
    lim = np.sqrt(6.0 / spec.fc_size)
    params.append(rng.uniform(-lim, lim, size=(spec.output_dim, spec.fc_size)).astype(np.float32))
    params.append(np.zeros(spec.output_dim, dtype=np.float32))
    if print_summary:
        print(param_summary(spec))
    return Model(spec=spec, params=params, seed=seed)


# ---------------------------------------------------------------------------
# Serialization: text header, then the raw little-endian float32 weight blob.
# ---------------------------------------------------------------------------

def save_model(model: Model, path) -> None:
    blob = model.weight_blob()
    shapes = [[name, list(p.shape)] for name, p in zip(model.param_names(), model.params)]
    header = [
        f"drccnn-model v{MODEL_FORMAT_VERSION}",
        f"spec: {json.dumps(model.spec.to_dict(), sort_keys=True)}",
        f"seed: {model.seed}",
        f"cfg: {json.dumps(model.train_cfg, sort_keys=True)}",
        f"classes: {','.join(model.classes)}",
        f"layers: {json.dumps(shapes)}",
        f"checksum: {hashlib.sha256(blob).hexdigest()}",
        f"blob_bytes: {len(blob)}",
        "END",
    ]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode())
        f.write(blob)


def _read_header(f) -> dict:
    first = f.readline().decode().rstrip("\n")
    if not first.startswith("drccnn-model v"):
        raise VersionMismatch(f"not a drccnn model file: {first!r}")
    version = int(first.split("v", 1)[1])
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatch(f"model format v{version}, supported v{MODEL_FORMAT_VERSION}")
    header: dict[str, str] = {"version": str(version)}
    while True:
        line = f.readline()
        if not line:
            raise VersionMismatch("truncated model header (no END marker)")
        text = line.decode().rstrip("\n")
        if text == "END":
            return header
        key, val = text.split(":", 1)
        header[key.strip()] = val.strip()


def inspect_model(path) -> dict:
    """Header-only view: spec, seed, cfg, layer shapes.  Never reads weights."""
    with open(path, "rb") as f:
        header = _read_header(f)
    return {
        "version": int(header["version"]),
        "spec": json.loads(header["spec"]),
        "seed": int(header["seed"]),
        "cfg": json.loads(header["cfg"]),
        "classes": header["classes"].split(","),
        "layers": json.loads(header["layers"]),
        "checksum": header["checksum"],
        "blob_bytes": int(header["blob_bytes"]),
    }


def load_model(path) -> Model:
    with open(path, "rb") as f:
        header = _read_header(f)
        blob = f.read(int(header["blob_bytes"]))
    if len(blob) != int(header["blob_bytes"]):
        raise ChecksumError("weight blob shorter than declared")
    if hashlib.sha256(blob).hexdigest() != header["checksum"]:
        raise ChecksumError("weight blob checksum mismatch")
    spec = ModelSpec.from_dict(json.loads(header["spec"]))
    shapes = json.loads(header["layers"])
    params = []
    offset = 0
    for _name, shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
        params.append(arr)
        offset += 4 * n
    if offset != len(blob):
        raise ChecksumError("weight blob length inconsistent with layer shapes")
    return Model(
        spec=spec,
        params=params,
        seed=int(header["seed"]),
        train_cfg=json.loads(header["cfg"]),
    )
