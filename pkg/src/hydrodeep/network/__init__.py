"""
The dual-branch discharge network, its baselines and checkpoints.
"""
from .arch import GROUPS, VARIANTS, ArchError, ArchSpec, ConvSpec
from .checkpoint import (
    BadMagicError,
    CheckpointError,
    ShapeInconsistencyError,
    TruncatedCheckpointError,
    VersionMismatchError,
    checkpoint_bytes,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from .model import (
    Model,
    ModelCache,
    backward,
    build_model,
    forward,
    forward_batch,
    group_of,
    model_grad_check,
    model_grad_check_suite,
    predict,
    tiny_arch,
)

__all__ = [
    "GROUPS",
    "VARIANTS",
    "ArchError",
    "ArchSpec",
    "BadMagicError",
    "CheckpointError",
    "ConvSpec",
    "Model",
    "ModelCache",
    "ShapeInconsistencyError",
    "TruncatedCheckpointError",
    "VersionMismatchError",
    "backward",
    "build_model",
    "checkpoint_bytes",
    "forward",
    "forward_batch",
    "group_of",
    "load_checkpoint",
    "model_grad_check",
    "model_grad_check_suite",
    "parse_checkpoint",
    "predict",
    "save_checkpoint",
    "tiny_arch",
]
