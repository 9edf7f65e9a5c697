"""Pure-numpy reference implementation of the hot kernels.

This is the fallback backend and the semantic reference for the compiled
extension; the parity tests hold the two to float64 round-off of each other.
All arrays are float64.  ``x`` and the cached activations are 2-D with one
row per batch element; ``weights[i]`` has shape (fan_out, fan_in).
"""

import numpy as np

ACT_IDENTITY = 0
ACT_TANH = 1
ACT_RELU = 2
ACT_SIGMOID = 3


def _apply_act(z, code):
    if code == ACT_IDENTITY:
        return z
    if code == ACT_TANH:
        return np.tanh(z)
    if code == ACT_RELU:
        return np.maximum(z, 0.0)
    if code == ACT_SIGMOID:
        return 1.0 / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation code {code}")


def _act_grad_from_output(a, code):
    # Derivatives written in terms of the activation output so the cache
    # only has to hold post-activation values.
    if code == ACT_IDENTITY:
        return None  # multiplying by ones; caller skips the product
    if code == ACT_TANH:
        return 1.0 - a * a
    if code == ACT_RELU:
        return (a > 0.0).astype(np.float64)
    if code == ACT_SIGMOID:
        return a * (1.0 - a)
    raise ValueError(f"unknown activation code {code}")


def forward(weights, biases, x, hidden_act, out_act):
    """Run the network, returning the list [x, a_1, ..., a_L] of activations."""
    acts = [x]
    last = len(weights) - 1
    for i in range(len(weights)):
        z = acts[-1] @ weights[i].T + biases[i]
        acts.append(_apply_act(z, out_act if i == last else hidden_act))
    return acts


def backward(weights, acts, d_out, hidden_act, out_act, need_param_grads, need_input_grad):
    """Backpropagate ``d_out`` (gradient w.r.t. the network output).

    Returns (d_weights, d_biases, d_x); the parameter gradients are summed
    over the batch rows.  Entries not requested come back as None.
    """
    n = len(weights)
    d_weights = [None] * n
    d_biases = [None] * n
    da = d_out
    dx = None
    for i in range(n - 1, -1, -1):
        code = out_act if i == n - 1 else hidden_act
        g = _act_grad_from_output(acts[i + 1], code)
        dz = da if g is None else da * g
        if need_param_grads:
            d_weights[i] = dz.T @ acts[i]
            d_biases[i] = dz.sum(axis=0)
        if i > 0 or need_input_grad:
            da = dz @ weights[i]
    if need_input_grad:
        dx = da
    return d_weights, d_biases, dx


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One Adam step with bias correction, applied in place to ``param``.

    ``t`` is the step count after incrementing (first step passes t=1).
    Operates on flat or 2-D arrays alike.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
