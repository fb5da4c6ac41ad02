"""
Dense-tensor automatic differentiation for the fusion classifier.

Only the operations the network needs are implemented:
- conv3d (3x3x3 kernels, stride 1, zero padding 1)
- maxpool3d / avgpool3d (2x2x2 blocks, stride 2)
- batchnorm3d (train / eval)
- relu, sigmoid, fully_connected, add, mul, concat_channels, flatten

5-D activations use the (batch, channel, depth, height, width) layout.
Arrays are float32 unless a caller opts into another dtype with
`default_dtype(...)` (gradient checks run in float64).

Each op returns a new Tensor; when grad recording is enabled and an input
requires grad, the result remembers its parents and a backward function that
maps the upstream gradient to one gradient per parent (None = no gradient).
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

# (i, j, k) offsets of the 27 taps of a 3x3x3 kernel, scan order
_TAPS: Tuple[Tuple[int, int, int], ...] = tuple(itertools.product(range(3), repeat=3))

_local = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


def get_default_dtype() -> type:
    return getattr(_local, "dtype", np.float32)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for the current thread."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


@contextmanager
def default_dtype(dtype: type) -> Iterator[None]:
    """Create new tensors with `dtype` inside the block (current thread only)."""
    previous = get_default_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = previous


class Tensor:
    """A node of the autograd graph: value, gradient and backward recipe."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype: Optional[type] = None):
        array = np.asarray(data, dtype=dtype or get_default_dtype())
        self.data: np.ndarray = np.ascontiguousarray(array)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.op: Optional[str] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    # ---- basic accessors ----
    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # ---- autograd ----
    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited: set[int] = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf that requires grad."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = self._topological_order()
        # intermediate grads belong to one traversal; only leaves accumulate
        for node in order:
            if not node.is_leaf:
                node.grad = None
        if self.is_leaf:
            self.grad = (self.grad if self.grad is not None else 0) + np.ones_like(self.data)
        else:
            self.grad = np.ones_like(self.data)

        for node in reversed(order):
            if node.is_leaf or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, grad in zip(node._parents, grads):
                if grad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += grad.astype(parent.data.dtype, copy=False)


@dataclass
class Parameter:
    """A learnable tensor with a unique dotted name inside its model."""

    name: str
    tensor: Tensor

    @classmethod
    def create(cls, name: str, data: np.ndarray) -> "Parameter":
        return cls(name=name, tensor=Tensor(data, requires_grad=True))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.tensor.shape

    @property
    def size(self) -> int:
        return self.tensor.size


# Builds an op result; the graph is recorded only when some parent needs grad.
def from_op(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _require_5d(op: str, x: Tensor) -> None:
    if x.ndim != 5:
        raise ShapeError(f"{op}: expected (B, C, D, H, W) input, got shape {x.shape}")


def _channel_view(v: np.ndarray) -> np.ndarray:
    return v.reshape(1, -1, 1, 1, 1)


# ---- elementwise ----
def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)

    def backward(g: np.ndarray):
        return g, g

    return from_op(a.data + b.data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray):
        return g * b_data, g * a_data

    return from_op(a_data * b_data, (a, b), backward, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(g: np.ndarray):
        return (g * factor,)

    return from_op(x.data * x.data.dtype.type(factor), (x,), backward, "scale")


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0

    def backward(g: np.ndarray):
        return (g * positive,)

    return from_op(np.where(positive, x.data, 0).astype(x.data.dtype), (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Overflow-safe logistic function; output strictly inside (0, 1)."""
    dtype = x.data.dtype
    e = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    info = np.finfo(dtype)
    s = np.clip(s, info.tiny, 1.0 - info.epsneg).astype(dtype)

    def backward(g: np.ndarray):
        return (g * s * (1 - s),)

    return from_op(s, (x,), backward, "sigmoid")


def tensor_sum(x: Tensor) -> Tensor:
    shape = x.shape

    def backward(g: np.ndarray):
        return (np.broadcast_to(g, shape).copy(),)

    return from_op(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward, "sum")


# ---- shape ops ----
def flatten(x: Tensor) -> Tensor:
    shape = x.shape
    if len(shape) < 2:
        raise ShapeError(f"flatten: expected a batch axis, got shape {shape}")

    def backward(g: np.ndarray):
        return (g.reshape(shape),)

    return from_op(x.data.reshape(shape[0], -1), (x,), backward, "flatten")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != b.ndim or a.ndim < 2 or a.shape[:1] + a.shape[2:] != b.shape[:1] + b.shape[2:]:
        raise ShapeError(f"concat_channels: shapes differ outside the channel axis {a.shape} vs {b.shape}")
    split = a.shape[1]

    def backward(g: np.ndarray):
        return g[:, :split], g[:, split:]

    return from_op(np.concatenate([a.data, b.data], axis=1), (a, b), backward, "concat")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_channels: [{start}, {stop}) outside channel axis of {x.shape}")
    shape = x.shape

    def backward(g: np.ndarray):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return from_op(x.data[:, start:stop].copy(), (x,), backward, "slice")


# ---- layers ----
def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"fully_connected: input {x.shape} vs weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"fully_connected: bias {bias.shape} vs weight {weight.shape}")
    x_data, w_data = x.data, weight.data

    def backward(g: np.ndarray):
        gx = g @ w_data if x.requires_grad else None
        return gx, g.T @ x_data, g.sum(axis=0)

    out = x_data @ w_data.T + bias.data
    return from_op(out, (x, weight, bias), backward, "fc")


def conv3d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3x3 cross-correlation, stride 1, zero padding 1 (spatial shape preserved)."""
    _require_5d("conv3d", x)
    if weight.ndim != 5 or weight.shape[2:] != (3, 3, 3):
        raise ShapeError(f"conv3d: expected (Cout, Cin, 3, 3, 3) weight, got {weight.shape}")
    batch, cin, depth, height, width = x.shape
    cout = weight.shape[0]
    if weight.shape[1] != cin:
        raise ShapeError(f"conv3d: channel mismatch, input {x.shape} vs weight {weight.shape}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv3d: bias {bias.shape} vs weight {weight.shape}")

    padded = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    w_data = weight.data
    # channels-last accumulator: one GEMM per kernel tap
    acc = np.zeros((batch, depth, height, width, cout), dtype=x.data.dtype)
    for i, j, k in _TAPS:
        window = padded[:, :, i:i + depth, j:j + height, k:k + width]
        acc += np.tensordot(window, w_data[:, :, i, j, k], axes=([1], [1]))
    out = np.moveaxis(acc, 4, 1) + _channel_view(bias.data)

    def backward(g: np.ndarray):
        g_last = np.ascontiguousarray(np.moveaxis(g, 1, 4))
        gw = np.zeros_like(w_data)
        gpad = np.zeros_like(padded) if x.requires_grad else None
        for i, j, k in _TAPS:
            window = padded[:, :, i:i + depth, j:j + height, k:k + width]
            gw[:, :, i, j, k] = np.tensordot(g, window, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
            if gpad is not None:
                tap = np.tensordot(g_last, w_data[:, :, i, j, k], axes=([4], [0]))
                gpad[:, :, i:i + depth, j:j + height, k:k + width] += np.moveaxis(tap, 4, 1)
        gx = gpad[:, :, 1:-1, 1:-1, 1:-1] if gpad is not None else None
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    return from_op(np.ascontiguousarray(out), (x, weight, bias), backward, "conv3d")


def _pool_blocks(op: str, x: Tensor) -> np.ndarray:
    _require_5d(op, x)
    batch, channels, depth, height, width = x.shape
    if depth % 2 or height % 2 or width % 2:
        raise ShapeError(f"{op}: spatial dims must be even, got {x.shape}")
    blocks = x.data.reshape(batch, channels, depth // 2, 2, height // 2, 2, width // 2, 2)
    # (B, C, D/2, H/2, W/2, 8), block entries in z, y, x scan order
    return blocks.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(
        batch, channels, depth // 2, height // 2, width // 2, 8
    )


def _unpool_blocks(blocks: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    batch, channels, d2, h2, w2, _ = blocks.shape
    return (
        blocks.reshape(batch, channels, d2, h2, w2, 2, 2, 2)
        .transpose(0, 1, 2, 5, 3, 6, 4, 7)
        .reshape(shape)
    )


def maxpool3d(x: Tensor) -> Tensor:
    """2x2x2 max pooling; backward routes to the first maximal voxel in scan order."""
    blocks = _pool_blocks("maxpool3d", x)
    argmax = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, argmax, axis=-1)[..., 0]
    shape = x.shape

    def backward(g: np.ndarray):
        routed = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(routed, argmax, g[..., None], axis=-1)
        return (_unpool_blocks(routed, shape),)

    return from_op(np.ascontiguousarray(out), (x,), backward, "maxpool3d")


def avgpool3d(x: Tensor) -> Tensor:
    blocks = _pool_blocks("avgpool3d", x)
    shape = x.shape

    def backward(g: np.ndarray):
        spread = np.broadcast_to(g[..., None] / 8, blocks.shape).astype(g.dtype)
        return (_unpool_blocks(spread, shape),)

    return from_op(blocks.mean(axis=-1).astype(x.data.dtype), (x,), backward, "avgpool3d")


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def create(cls, channels: int) -> "BatchNormState":
        dtype = get_default_dtype()
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm3d(
    x: Tensor,
    gamma: Tensor,
    beta_shift: Tensor,
    state: BatchNormState,
    training: bool,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """
    Per-channel batch normalization.

    Train mode normalizes with the (biased) batch statistics and folds them into
    the running stats: running = momentum * running + (1 - momentum) * batch,
    the running variance using the unbiased estimate. Eval mode uses the
    running stats (defaults mean 0, var 1 before any train step).
    """
    _require_5d("batchnorm3d", x)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta_shift.shape != (channels,):
        raise ShapeError(
            f"batchnorm3d: input {x.shape} vs gamma {gamma.shape} / beta {beta_shift.shape}"
        )
    axes = (0, 2, 3, 4)
    count = x.size // channels
    dtype = x.data.dtype

    if training:
        if count < 2:
            raise ShapeError(f"batchnorm3d: train mode needs >= 2 values per channel, got shape {x.shape}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * (count / (count - 1))
        state.running_mean[...] = momentum * state.running_mean + (1 - momentum) * mean
        state.running_var[...] = momentum * state.running_var + (1 - momentum) * unbiased
    else:
        mean = state.running_mean.astype(dtype)
        var = state.running_var.astype(dtype)

    inv_std = (1.0 / np.sqrt(var + eps)).astype(dtype)
    xhat = (x.data - _channel_view(mean)) * _channel_view(inv_std)
    out = _channel_view(gamma.data) * xhat + _channel_view(beta_shift.data)
    gamma_data = gamma.data

    def backward(g: np.ndarray):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * _channel_view(gamma_data)
        if training:
            gx = _channel_view(inv_std / count) * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = dxhat * _channel_view(inv_std)
        return gx, dgamma, dbeta

    return from_op(out.astype(dtype), (x, gamma, beta_shift), backward, "batchnorm3d")


# ---- verification helpers ----
def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-based relative error ||a - n|| / (||a|| + ||n||)."""
    diff = float(np.linalg.norm(np.asarray(analytic, dtype=np.float64) - numeric))
    scale_ = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return diff / scale_ if scale_ > 1e-12 else diff


def numerical_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor], target: Tensor, eps: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar fn(*inputs) w.r.t. `target`."""
    numeric = np.zeros(target.data.shape, dtype=np.float64)
    flat = target.data.reshape(-1)
    out_flat = numeric.reshape(-1)
    with no_grad():
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + eps
            f_plus = fn(*inputs).item()
            flat[idx] = original - eps
            f_minus = fn(*inputs).item()
            flat[idx] = original
            out_flat[idx] = (f_plus - f_minus) / (2 * eps)
    return numeric


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-3) -> float:
    """
    Compare autograd against central differences for every input that requires grad.

    Returns the worst relative error. Run under `default_dtype(np.float64)` for a
    meaningful 1e-3 bound.
    """
    for t in inputs:
        t.grad = None
    fn(*inputs).backward()
    analytic = [
        (t, t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for t in inputs
        if t.requires_grad
    ]
    worst = 0.0
    for t, grad in analytic:
        numeric = numerical_gradient(fn, inputs, t, eps=eps)
        worst = max(worst, relative_error(grad, numeric))
    return worst
