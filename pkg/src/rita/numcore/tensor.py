"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array and records the operation that produced it.
``backward()`` on a scalar walks the tape in reverse topological order and
accumulates gradients into every reachable leaf with ``requires_grad``.
The primitive set is intentionally small; composite layers (MLPs, convs,
attention) are built from it in the sibling modules.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "NumericError",
    "NonFiniteError",
    "UnsupportedPrimitiveError",
    "as_tensor",
    "concat",
    "stack",
    "dense",
    "batched_matmul",
    "softmax",
    "conv1d",
    "conv1d_transpose",
    "check_finite",
]


class NumericError(Exception):
    """Base class for numeric-substrate failures."""


class NonFiniteError(NumericError):
    """A value that must be finite contains NaN or Inf."""


class UnsupportedPrimitiveError(NumericError):
    """An expression used an operation outside the differentiable set."""


def check_finite(arr: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite {what}")
    return arr


def _sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph holding a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None

    # numpy must not silently absorb Tensors into ufunc calls
    def __array_ufunc__(self, *args, **kwargs):
        raise UnsupportedPrimitiveError(
            "numpy ufuncs are not differentiable primitives; use Tensor methods"
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ---- graph construction -------------------------------------------------

    @staticmethod
    def _op(out_data, parents, vjp) -> "Tensor":
        return Tensor(out_data, _parents=tuple(parents), _vjp=vjp)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all reachable leaves."""
        if self.data.size != 1:
            raise NumericError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [self]
        while stack:
            node = stack[-1]
            if id(node) in seen:
                stack.pop()
                continue
            unvisited = [p for p in node._parents if id(p) not in seen]
            if unvisited:
                stack.extend(unvisited)
                continue
            seen.add(id(node))
            topo.append(stack.pop())
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is not None:
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if not parent.requires_grad or pg is None:
                        continue
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
            elif node._parents:  # pragma: no cover - every op defines a vjp
                raise NumericError("graph node missing backward rule")
            if node._vjp is None and node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g

    # ---- arithmetic primitives ----------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = self.data + other.data
        return Tensor._op(
            out,
            (self, other),
            lambda g: (_sum_to_shape(g, self.shape), _sum_to_shape(g, other.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = self.data * other.data
        return Tensor._op(
            out,
            (self, other),
            lambda g: (
                _sum_to_shape(g * other.data, self.shape),
                _sum_to_shape(g * self.data, other.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = self.data / other.data
        return Tensor._op(
            out,
            (self, other),
            lambda g: (
                _sum_to_shape(g / other.data, self.shape),
                _sum_to_shape(-g * self.data / other.data**2, other.shape),
            ),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise UnsupportedPrimitiveError("@ is 2-D only; use dense/batched_matmul")
        out = self.data @ other.data
        return Tensor._op(
            out,
            (self, other),
            lambda g: (g @ other.data.T, self.data.T @ g),
        )

    # ---- elementwise nonlinearities ------------------------------------------

    def square(self):
        return Tensor._op(self.data**2, (self,), lambda g: (2.0 * self.data * g,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._op(out, (self,), lambda g: (g * 0.5 / out,))

    def exp(self):
        out = np.exp(self.data)
        return Tensor._op(out, (self,), lambda g: (g * out,))

    def log(self):
        return Tensor._op(np.log(self.data), (self,), lambda g: (g / self.data,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._op(out, (self,), lambda g: (g * (1.0 - out**2),))

    def sigmoid(self):
        out = 0.5 * (np.tanh(0.5 * self.data) + 1.0)
        return Tensor._op(out, (self,), lambda g: (g * out * (1.0 - out),))

    def softplus(self):
        out = np.logaddexp(0.0, self.data)
        sig = 0.5 * (np.tanh(0.5 * self.data) + 1.0)
        return Tensor._op(out, (self,), lambda g: (g * sig,))

    def relu(self):
        mask = self.data > 0.0
        return Tensor._op(self.data * mask, (self,), lambda g: (g * mask,))

    def silu(self):
        sig = 0.5 * (np.tanh(0.5 * self.data) + 1.0)
        out = self.data * sig
        return Tensor._op(
            out, (self,), lambda g: (g * (sig + self.data * sig * (1.0 - sig)),)
        )

    def abs(self):
        sign = np.sign(self.data)
        return Tensor._op(np.abs(self.data), (self,), lambda g: (g * sign,))

    def clip(self, lo: float, hi: float):
        """Hard clamp; gradient is zero outside [lo, hi]."""
        mask = (self.data >= lo) & (self.data <= hi)
        return Tensor._op(np.clip(self.data, lo, hi), (self,), lambda g: (g * mask,))

    # ---- reductions and shape ops --------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.shape).copy(),)

        return Tensor._op(out, (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self.data.reshape(shape)
        return Tensor._op(out, (self,), lambda g: (g.reshape(self.shape),))

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        out = self.data.transpose(axes)
        return Tensor._op(out, (self,), lambda g: (g.transpose(inv),))

    def __getitem__(self, idx):
        out = self.data[idx]

        def vjp(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._op(out, (self,), vjp)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return Tensor._op(out, tuple(tensors), vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._op(out, tuple(tensors), vjp)


def dense(x: Tensor, w: Tensor) -> Tensor:
    """Contract the last axis of ``x`` with a 2-D weight ``w`` (din, dout)."""
    x, w = as_tensor(x), as_tensor(w)
    din, dout = w.shape
    out = x.data @ w.data

    def vjp(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, din).T @ g.reshape(-1, dout)
        return gx, gw

    return Tensor._op(out, (x, w), vjp)


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """matmul over the trailing two axes; leading axes must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-2] != b.shape[:-2]:
        raise UnsupportedPrimitiveError("batched_matmul requires equal leading axes")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        return (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        )

    return Tensor._op(out, (a, b), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._op(out, (x,), vjp)


# ---- 1-D convolution (im2col + GEMM) ----------------------------------------


def _im2col(xp: np.ndarray, k: int, stride: int, l_out: int) -> np.ndarray:
    """(B, C, Lp) -> contiguous (B, l_out, C*k) window matrix."""
    b, c, _ = xp.shape
    s0, s1, s2 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c, l_out, k), strides=(s0, s1, s2 * stride, s2), writeable=False
    )
    return win.transpose(0, 2, 1, 3).reshape(b * l_out, c * k)


def _conv1d_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    b, c_in, l = x.shape
    c_out, _, k = w.shape
    l_out = (l + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    cols = _im2col(xp, k, stride, l_out)
    y = cols @ w.reshape(c_out, c_in * k).T
    return y.reshape(b, l_out, c_out).transpose(0, 2, 1)


def _conv1d_dw(
    x: np.ndarray, gy: np.ndarray, stride: int, pad: int, k: int
) -> np.ndarray:
    b, c_in, _ = x.shape
    c_out, l_out = gy.shape[1], gy.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    cols = _im2col(xp, k, stride, l_out)
    gcols = gy.transpose(0, 2, 1).reshape(b * l_out, c_out)
    return (gcols.T @ cols).reshape(c_out, c_in, k)


def _conv1d_dx(
    gy: np.ndarray, w: np.ndarray, stride: int, pad: int, l_in: int
) -> np.ndarray:
    b, _, l_out = gy.shape
    c_out, c_in, k = w.shape
    gcols = gy.transpose(0, 2, 1).reshape(b * l_out, c_out) @ w.reshape(c_out, c_in * k)
    gwin = gcols.reshape(b, l_out, c_in, k).transpose(0, 2, 3, 1)  # (B, C, K, Lout)
    dxp = np.zeros((b, c_in, l_in + 2 * pad))
    for j in range(k):
        dxp[:, :, j : j + stride * l_out : stride] += gwin[:, :, j, :]
    return dxp[:, :, pad : pad + l_in] if pad else dxp


def conv1d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """1-D convolution: x (B, Cin, L), w (Cout, Cin, K) -> (B, Cout, Lout)."""
    x, w = as_tensor(x), as_tensor(w)
    l_in = x.shape[2]
    k = w.shape[2]
    out = _conv1d_fwd(x.data, w.data, stride, pad)

    def vjp(g):
        return (
            _conv1d_dx(g, w.data, stride, pad, l_in),
            _conv1d_dw(x.data, g, stride, pad, k),
        )

    return Tensor._op(out, (x, w), vjp)


def conv1d_transpose(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed 1-D convolution: x (B, Cin, L), w (Cin, Cout, K).

    Output length is (L-1)*stride - 2*pad + K (the adjoint of ``conv1d``).
    """
    x, w = as_tensor(x), as_tensor(w)
    k = w.shape[2]
    l_out = (x.shape[2] - 1) * stride - 2 * pad + k
    out = _conv1d_dx(x.data, w.data, stride, pad, l_out)

    def vjp(g):
        return (
            _conv1d_fwd(g, w.data, stride, pad),
            _conv1d_dw(g, x.data, stride, pad, k),
        )

    return Tensor._op(out, (x, w), vjp)
