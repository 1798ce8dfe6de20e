from .layers import (
    ShapeMismatch,
    StateError,
    conv2d_forward,
    cross_entropy,
    fully_connected,
    maxpool2d,
    relu,
    softmax,
)
from .model import (
    ChecksumError,
    Model,
    ModelSpec,
    PRESETS,
    SpecError,
    VersionMismatch,
    build_model,
    inspect_model,
    load_model,
    param_summary,
    save_model,
)
from .train import (
    DataError,
    EpochStats,
    LabelSpaceMismatch,
    TrainConfig,
    TrainHistory,
    backward_batch,
    evaluate,
    forward_batch,
    predict,
    read_history,
    rmsprop_step,
    train,
    write_history,
)

__all__ = [
    "ChecksumError", "DataError", "EpochStats", "LabelSpaceMismatch", "Model",
    "ModelSpec", "PRESETS", "ShapeMismatch", "SpecError", "StateError",
    "TrainConfig", "TrainHistory", "VersionMismatch", "backward_batch",
    "build_model", "conv2d_forward", "cross_entropy", "evaluate",
    "forward_batch", "fully_connected", "inspect_model", "load_model",
    "maxpool2d", "param_summary", "predict", "read_history", "relu",
    "rmsprop_step", "save_model", "softmax", "train", "write_history",
]
