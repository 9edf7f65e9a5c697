"""Backend selection for the hot numeric kernels.

Two interchangeable implementations exist: a compiled Cython extension
(``_core``) and a pure-numpy reference (``numpy_ref``).  The compiled one is
preferred when it imported cleanly; setting the environment variable
``MUNLAB_PURE_PYTHON=1`` forces the numpy fallback.  Both expose the same
three functions:

    forward(weights, biases, x, hidden_act, out_act) -> list of activations
    backward(weights, acts, d_out, hidden_act, out_act,
             need_param_grads, need_input_grad) -> (d_weights, d_biases, d_x)
    adam_update(param, grad, m, v, t, lr, beta1, beta2, eps)  # in place

Results agree across backends to float64 round-off; within one backend they
are bit-reproducible.
"""

import os

# Activation codes shared by both backends.
ACT_IDENTITY = 0
ACT_TANH = 1
ACT_RELU = 2
ACT_SIGMOID = 3

_ACT_CODES = {
    "identity": ACT_IDENTITY,
    "tanh": ACT_TANH,
    "relu": ACT_RELU,
    "sigmoid": ACT_SIGMOID,
}


def act_code(name: str) -> int:
    """Map an activation name to its kernel code."""
    try:
        return _ACT_CODES[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


if os.environ.get("MUNLAB_PURE_PYTHON", "") not in ("", "0"):
    from . import numpy_ref as impl

    BACKEND = "numpy"
else:
    try:
        from . import _core as impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import numpy_ref as impl

        BACKEND = "numpy"


def backend_name() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND
