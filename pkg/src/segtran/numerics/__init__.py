from .adam import Adam, AdamState, adam_step
from .checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from .gradcheck import check_gradients, numerical_grad, relative_error
from .tensor import *  # noqa: F401,F403
from .tensor import __all__ as _tensor_all

import numpy as np


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    """Uniform in ±sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape if shape is not None else (fan_in, fan_out))


__all__ = list(_tensor_all) + [
    "Adam",
    "AdamState",
    "adam_step",
    "CheckpointError",
    "load_checkpoint",
    "read_manifest",
    "save_checkpoint",
    "check_gradients",
    "numerical_grad",
    "relative_error",
    "glorot",
]
