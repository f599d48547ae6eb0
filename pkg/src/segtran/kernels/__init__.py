"""Hot kernels: compiled extension when built, pure-Python fallback otherwise.

Set ``SEGTRAN_PURE_PYTHON=1`` to force the fallback.  Both modules expose
the same functions; ``python`` and ``compiled`` name them in :data:`BACKENDS`.
"""

import os

from . import _py

BACKENDS = {"python": _py}
try:
    from . import _ext

    BACKENDS["compiled"] = _ext
except ImportError:
    pass

if os.environ.get("SEGTRAN_PURE_PYTHON", "") in ("1", "true", "yes"):
    BACKEND = "python"
else:
    BACKEND = "compiled" if "compiled" in BACKENDS else "python"
_impl = BACKENDS[BACKEND]

hop_distances = _impl.hop_distances
mp_block_forward = _impl.mp_block_forward
mp_block_backward = _impl.mp_block_backward
mha_forward = _impl.mha_forward
mha_backward = _impl.mha_backward
attention_weights = _impl.attention_weights
adam_update = _impl.adam_update

__all__ = [
    "BACKEND",
    "BACKENDS",
    "adam_update",
    "attention_weights",
    "hop_distances",
    "mha_backward",
    "mha_forward",
    "mp_block_backward",
    "mp_block_forward",
]
