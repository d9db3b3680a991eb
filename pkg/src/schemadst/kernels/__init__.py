"""Numeric kernels with a switchable backend.

The SCHEMADST_KERNELS environment variable picks the implementation at import
time: "numpy" forces the pure-numpy reference, "numba" forces the compiled
backend (an error if numba is unavailable), and "auto" (the default) prefers
numba when it imports cleanly. `set_backend` switches at runtime, e.g. for
benchmarking one against the other.
"""

from __future__ import annotations

import os

from ..errors import ConfigError

_impl = None
_backend_name = None


def _resolve(name: str) -> str:
    if name == "auto":
        try:
            from . import jit  # noqa: F401
        except ImportError:
            return "numpy"
        return "numba"
    if name in ("numpy", "numba"):
        return name
    raise ConfigError(
        f"unknown kernel backend {name!r}; expected 'auto', 'numpy' or 'numba'"
    )


def set_backend(name: str) -> str:
    """Select the kernel implementation; returns the resolved backend name."""
    global _impl, _backend_name
    resolved = _resolve(name)
    if resolved == "numba":
        try:
            from . import jit as impl
        except ImportError as exc:
            raise ConfigError("kernel backend 'numba' requested but numba is not importable") from exc
    else:
        from . import reference as impl
    _impl = impl
    _backend_name = resolved
    return resolved


def active_backend() -> str:
    return _backend_name


set_backend(os.environ.get("SCHEMADST_KERNELS", "auto"))


def layer_norm_forward(x, gamma, beta, eps):
    return _impl.layer_norm_forward(x, gamma, beta, eps)


def layer_norm_backward(dy, x, gamma, mean, rstd):
    return _impl.layer_norm_backward(dy, x, gamma, mean, rstd)


def gelu_forward(x):
    return _impl.gelu_forward(x)


def gelu_backward(dy, x):
    return _impl.gelu_backward(dy, x)


def attention_softmax(scores, valid_lens):
    return _impl.attention_softmax(scores, valid_lens)


def attention_softmax_backward(dprobs, probs):
    return _impl.attention_softmax_backward(dprobs, probs)


def softmax_xent(logits, labels):
    return _impl.softmax_xent(logits, labels)


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, t):
    return _impl.adam_step(param, grad, m, v, lr, beta1, beta2, eps, t)
