"""Multi-layer perceptrons on top of the autodiff tensor."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, UnsupportedPrimitiveError, check_finite

__all__ = ["MlpParams", "init_mlp", "forward_mlp", "gradient_of", "finite_difference_grads"]

_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": lambda t: t,
    "tanh": Tensor.tanh,
    "relu": Tensor.relu,
    "silu": Tensor.silu,
    "sigmoid": Tensor.sigmoid,
    "softplus": Tensor.softplus,
}


@dataclass(frozen=True)
class MlpParams:
    """Immutable stack of (weight, bias) layers.

    Weights are (fan_in, fan_out); hidden layers apply ``hidden_activation``
    (tanh by default), the output layer ``output_activation``.
    """

    layers: tuple[tuple[Tensor, Tensor], ...]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        for name in (self.hidden_activation, self.output_activation):
            if name not in _ACTIVATIONS:
                raise UnsupportedPrimitiveError(f"unknown activation {name!r}")
        prev = None
        for w, b in self.layers:
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
                raise ValueError("layer weight/bias shapes are inconsistent")
            if prev is not None and w.shape[0] != prev:
                raise ValueError("adjacent layer dimensions are incompatible")
            check_finite(w.data, "weight")
            check_finite(b.data, "bias")
            prev = w.shape[1]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in self.layers:
            out.extend((w.data, b.data))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        if len(arrays) != 2 * len(self.layers):
            raise ValueError("array count does not match layer count")
        layers = tuple(
            (Tensor(arrays[2 * i], requires_grad=True), Tensor(arrays[2 * i + 1], requires_grad=True))
            for i in range(len(self.layers))
        )
        return replace(self, layers=layers)


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "tanh",
    output_activation: str = "identity",
) -> MlpParams:
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append(
            (Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True))
        )
    return MlpParams(tuple(layers), hidden_activation, output_activation)


def forward_mlp(params: MlpParams, x) -> Tensor:
    """Run the network; input may be (din,) or (batch, din)."""
    h = x if isinstance(x, Tensor) else Tensor(x)
    if h.shape[-1] != params.in_dim:
        raise ValueError(
            f"input dim {h.shape[-1]} does not match network input {params.in_dim}"
        )
    hidden = _ACTIVATIONS[params.hidden_activation]
    out_act = _ACTIVATIONS[params.output_activation]
    n = len(params.layers)
    for i, (w, b) in enumerate(params.layers):
        h = h @ w + b if h.ndim == 2 else (h.reshape(1, -1) @ w + b).reshape(-1)
        h = out_act(h) if i == n - 1 else hidden(h)
    check_finite(h.data, "network output")
    return h


def gradient_of(loss_fn: Callable[[MlpParams], Tensor], at: MlpParams):
    """Gradients of a scalar loss with respect to every layer's (w, b).

    Returns a list of (dw, db) ndarray pairs in layer order.
    """
    params = at.with_arrays(at.arrays())  # fresh leaves with clean grads
    loss = loss_fn(params)
    if not isinstance(loss, Tensor):
        raise UnsupportedPrimitiveError("loss_fn must return a Tensor scalar")
    check_finite(loss.data, "loss")
    loss.backward()
    grads = []
    for w, b in params.layers:
        dw = w.grad if w.grad is not None else np.zeros_like(w.data)
        db = b.grad if b.grad is not None else np.zeros_like(b.data)
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise NonFiniteError("non-finite gradient")
        grads.append((dw, db))
    return grads


def finite_difference_grads(
    loss_fn: Callable[[MlpParams], Tensor], at: MlpParams, step: float = 1e-5
):
    """Central-difference gradients; the independent check for gradient_of."""
    arrays = [a.copy() for a in at.arrays()]
    grads = [np.zeros_like(a) for a in arrays]

    def eval_loss() -> float:
        return float(loss_fn(at.with_arrays(arrays)).data)

    for arr, grad in zip(arrays, grads):
        flat, gflat = arr.ravel(), grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = eval_loss()
            flat[i] = orig - step
            lo = eval_loss()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
    return [(grads[2 * i], grads[2 * i + 1]) for i in range(len(at.layers))]
