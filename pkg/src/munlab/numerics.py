"""Hand-written MLP numerics: parameters, forward/backward, Adam, gradient checking.

Everything is float64.  A network with layer_sizes [n_0, ..., n_L] applies
``activation`` after each hidden layer and ``output_transform`` after the
last; ``weights[i]`` has shape (n_{i+1}, n_i) and ``biases[i]`` shape
(n_{i+1},).  The heavy lifting (matmuls, activations, Adam) is delegated to
the selected kernel backend; this module owns shapes, validation, and the
finite-difference oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import act_code, impl
from .errors import DimensionError, TrainingDivergenceError

VALID_ACTIVATIONS = ("tanh", "relu", "identity")
VALID_OUTPUT_TRANSFORMS = ("identity", "sigmoid")


@dataclass
class MlpParams:
    """Weights and biases of one MLP, with its activation choices."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    output_transform: str = "identity"

    def validate(self) -> None:
        if len(self.layer_sizes) < 2:
            raise DimensionError("an MLP needs at least input and output layers")
        if self.activation not in VALID_ACTIVATIONS:
            raise DimensionError(f"unknown activation {self.activation!r}")
        if self.output_transform not in VALID_OUTPUT_TRANSFORMS:
            raise DimensionError(f"unknown output_transform {self.output_transform!r}")
        n = len(self.layer_sizes) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise DimensionError("weights/biases count does not match layer_sizes")
        for i in range(n):
            want = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if self.weights[i].shape != want:
                raise DimensionError(f"weights[{i}] has shape {self.weights[i].shape}, want {want}")
            if self.biases[i].shape != (self.layer_sizes[i + 1],):
                raise DimensionError(f"biases[{i}] has shape {self.biases[i].shape}")
            if not (np.isfinite(self.weights[i]).all() and np.isfinite(self.biases[i]).all()):
                raise TrainingDivergenceError(f"non-finite parameters in layer {i}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class MlpCache:
    """Per-layer activations saved by a forward pass (index 0 is the input batch)."""

    activations: list[np.ndarray]


@dataclass
class Grads:
    """Parameter gradients with the same shapes as the network they came from."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    def add_(self, other: "Grads") -> None:
        for a, b in zip(self.d_weights, other.d_weights):
            a += b
        for a, b in zip(self.d_biases, other.d_biases):
            a += b

    def scale_(self, alpha: float) -> None:
        for a in self.d_weights:
            a *= alpha
        for a in self.d_biases:
            a *= alpha


@dataclass
class AdamState:
    """Adam optimizer state for one MlpParams (moments mirror parameter shapes)."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class FiniteDiffReport:
    """Outcome of a gradient check."""

    passed: bool
    max_rel_error: float
    worst_coordinate: str = ""
    checked: int = 0


def init_mlp(
    layer_sizes: list[int],
    rng: np.random.Generator,
    activation: str = "tanh",
    output_transform: str = "identity",
) -> MlpParams:
    """Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero biases."""
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    params = MlpParams(list(layer_sizes), weights, biases, activation, output_transform)
    params.validate()
    return params


def params_copy(params: MlpParams) -> MlpParams:
    return MlpParams(
        list(params.layer_sizes),
        [w.copy() for w in params.weights],
        [b.copy() for b in params.biases],
        params.activation,
        params.output_transform,
    )


def mlp_forward_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Forward a batch (rows are inputs); returns (output batch, cache)."""
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise DimensionError(f"input has shape {x.shape}, want (batch, {params.in_dim})")
    acts = impl.forward(
        params.weights,
        params.biases,
        np.ascontiguousarray(x, dtype=np.float64),
        act_code(params.activation),
        act_code(params.output_transform),
    )
    return acts[-1], MlpCache(acts)


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Forward a single input vector; returns (output vector, cache)."""
    y, cache = mlp_forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])
    return y[0], cache


def mlp_backward_batch(
    params: MlpParams,
    cache: MlpCache,
    d_out: np.ndarray,
    need_param_grads: bool = True,
    need_input_grad: bool = False,
) -> tuple[Grads | None, np.ndarray | None]:
    """Backpropagate d_out (same shape as the forward output batch).

    Parameter gradients are summed over batch rows; scale d_out beforehand
    for a mean.  Either output can be skipped to save work.
    """
    out = cache.activations[-1]
    if d_out.shape != out.shape:
        raise DimensionError(f"d_out has shape {d_out.shape}, want {out.shape}")
    d_weights, d_biases, d_x = impl.backward(
        params.weights,
        cache.activations,
        np.ascontiguousarray(d_out, dtype=np.float64),
        act_code(params.activation),
        act_code(params.output_transform),
        need_param_grads,
        need_input_grad,
    )
    grads = Grads(d_weights, d_biases) if need_param_grads else None
    return grads, d_x


def mlp_backward(
    params: MlpParams, cache: MlpCache, d_out: np.ndarray
) -> tuple[Grads, np.ndarray]:
    """Single-vector backward; returns (Grads, gradient w.r.t. the input vector)."""
    grads, d_x = mlp_backward_batch(
        params, cache, np.asarray(d_out, dtype=np.float64)[None, :], True, True
    )
    assert grads is not None and d_x is not None
    return grads, d_x[0]


def zero_grads(params: MlpParams) -> Grads:
    return Grads(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


def adam_init(params: MlpParams, learning_rate: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        m_weights=[np.zeros_like(w) for w in params.weights],
        v_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_biases=[np.zeros_like(b) for b in params.biases],
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(params: MlpParams, grads: Grads, state: AdamState) -> None:
    """Apply one Adam update in place (params and state are both advanced)."""
    for g in grads.d_weights:
        if not np.isfinite(g).all():
            raise TrainingDivergenceError("non-finite weight gradient")
    for g in grads.d_biases:
        if not np.isfinite(g).all():
            raise TrainingDivergenceError("non-finite bias gradient")
    state.step_count += 1
    t = state.step_count
    for i in range(len(params.weights)):
        impl.adam_update(
            params.weights[i], grads.d_weights[i], state.m_weights[i], state.v_weights[i],
            t, state.learning_rate, state.beta1, state.beta2, state.epsilon,
        )
        impl.adam_update(
            params.biases[i], grads.d_biases[i], state.m_biases[i], state.v_biases[i],
            t, state.learning_rate, state.beta1, state.beta2, state.epsilon,
        )


def finite_diff_check(
    params: MlpParams,
    loss_fn,
    grad_fn,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    denom_floor: float = 1e-3,
) -> FiniteDiffReport:
    """Compare grad_fn(params) against central differences of loss_fn(params).

    ``loss_fn`` maps params to a scalar; ``grad_fn`` maps params to Grads for
    that same scalar.  Every coordinate is perturbed by ±step.  The relative
    error of a coordinate is |analytic - fd| / max(|analytic|, |fd|,
    denom_floor); the check passes when the max over coordinates is below
    ``tolerance``.
    """
    work = params_copy(params)
    analytic = grad_fn(work)
    max_rel = 0.0
    worst = ""
    checked = 0

    def fd_for(arr: np.ndarray, a_arr: np.ndarray, label: str) -> None:
        nonlocal max_rel, worst, checked
        flat = arr.reshape(-1)
        a_flat = a_arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_fn(work)
            flat[j] = orig - step
            down = loss_fn(work)
            flat[j] = orig
            fd = (up - down) / (2.0 * step)
            a = a_flat[j]
            rel = abs(a - fd) / max(abs(a), abs(fd), denom_floor)
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = f"{label}[{j}]"

    for i in range(len(work.weights)):
        fd_for(work.weights[i], analytic.d_weights[i], f"weights[{i}]")
        fd_for(work.biases[i], analytic.d_biases[i], f"biases[{i}]")

    return FiniteDiffReport(max_rel <= tolerance, max_rel, worst, checked)
