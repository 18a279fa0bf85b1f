"""Kernel backend selection.

The compiled extension ``subsurr._kernels`` is used when it imports;
otherwise, or when ``SUBSURR_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy versions in ``subsurr._pykernels`` are used.
"""
import os

from . import _pykernels

_force_py = os.environ.get("SUBSURR_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_py:
        raise ImportError("pure python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

BACKEND = "compiled" if _compiled is not None else "python"
_active = BACKENDS[BACKEND]


def use_backend(name):
    """Switch the process-wide backend; returns the previous name."""
    global BACKEND, _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    prev, BACKEND, _active = BACKEND, name, BACKENDS[name]
    return prev


def hex_stiffness_batch(coords, E, nu):
    return _active.hex_stiffness_batch(coords, E, nu)


def mlp_forward(theta, dims, X):
    return _active.mlp_forward(theta, dims, X)


def mlp_loss_grad(theta, dims, X, T, head):
    return _active.mlp_loss_grad(theta, dims, X, T, head)


def adam_step(theta, grad, m, v, lr, beta1, beta2, eps, step):
    return _active.adam_step(theta, grad, m, v, lr, beta1, beta2, eps, step)
