"""
Dense tensors with tape-based reverse-mode automatic differentiation.

Every value is a 64-bit float stored row-major in a numpy array. Operations
executed inside a ``with Tape() as tape:`` block are recorded in insertion
order; ``backward(loss, tape)`` walks the tape in reverse and accumulates
gradients on the leaf tensors that require them. Outside a tape no graph is
kept, which is how evaluation runs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from models.errors import ContractError, DimensionError

EPS_NORM = 1e-6
GELU_C = float(np.sqrt(2.0 / np.pi))

_ACTIVE_TAPES: List["Tape"] = []
_TAPE_SERIAL = itertools.count(1)

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Dense real tensor with optional gradient tracking."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape_id: Optional[Tuple[int, int]] = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.requires_grad = requires_grad
        out.grad = None
        out.tape_id = None
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"

    # Arithmetic sugar, all routed through the recorded primitives below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


@dataclass
class _Node:
    parents: Tuple[Tensor, ...]
    backward: BackwardFn


class Tape:
    """Linear record of differentiable operations, replayed backwards."""

    def __init__(self):
        self.serial = next(_TAPE_SERIAL)
        self.nodes: List[_Node] = []
        self.leaves: Dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    @staticmethod
    def current() -> Optional["Tape"]:
        return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None

    def owns(self, tensor: Tensor) -> bool:
        return tensor.tape_id is not None and tensor.tape_id[0] == self.serial

    def record(self, out: Tensor, parents: Tuple[Tensor, ...], backward_fn: BackwardFn) -> None:
        out.tape_id = (self.serial, len(self.nodes))
        self.nodes.append(_Node(parents, backward_fn))
        for parent in parents:
            if parent.requires_grad and not self.owns(parent):
                self.leaves[id(parent)] = parent

    def reset(self) -> None:
        self.nodes.clear()
        self.leaves.clear()
        # Tensors recorded before the reset no longer belong to this tape.
        self.serial = next(_TAPE_SERIAL)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    tape = Tape.current()
    tracked = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, requires_grad=tracked)
    if tracked:
        tape.record(out, parents, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor, tape: Tape) -> None:
    """
    Populate ``grad`` on every leaf tensor recorded on ``tape``.

    Gradients accumulate additively across fan-out. Leaves that were recorded
    but do not influence the loss receive a zero gradient. The tape is reset
    afterwards.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.owns(loss):
        raise ContractError("loss was not recorded on this tape")

    grads: Dict[int, np.ndarray] = {loss.tape_id[1]: np.ones_like(loss.data)}
    for index in range(len(tape.nodes) - 1, -1, -1):
        grad = grads.pop(index, None)
        if grad is None:
            continue
        node = tape.nodes[index]
        for parent, parent_grad in zip(node.parents, node.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = _unbroadcast(parent_grad, parent.shape)
            if tape.owns(parent):
                key = parent.tape_id[1]
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad
            elif parent.grad is None:
                parent.grad = np.array(parent_grad, dtype=np.float64)
            else:
                parent.grad = parent.grad + parent_grad

    for leaf in tape.leaves.values():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
    tape.reset()


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data / b.data, (a, b),
        lambda g: (g / b.data, -g * a.data / (b.data * b.data)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _result(
        a.data ** exponent, (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def swish(a) -> Tensor:
    """swish(z) = z * sigmoid(z)."""
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _result(
        a.data * s, (a,),
        lambda g: (g * (s + a.data * s * (1.0 - s)),),
    )


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0.0),))


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(GELU_C * (x + 0.044715 * x ** 3))

    def _backward(g):
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _result(0.5 * x * (1.0 + t), (a,), _backward)


def clamp_min(a, lower: float) -> Tensor:
    a = as_tensor(a)
    return _result(np.maximum(a.data, lower), (a,), lambda g: (g * (a.data > lower),))


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; the identity outside training."""
    if not training or rate <= 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# Shape and reduction primitives
# ---------------------------------------------------------------------------

def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), _backward)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tensor_sum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swap_last(a) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis), tensors,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: rows of ``table`` indexed by integer ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)

    def _backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _result(table.data[ids], (table,), _backward)


def pick(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather one entry per row along the last axis."""
    index = np.asarray(index, dtype=np.int64)[..., None]

    def _backward(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, index, g[..., None], axis=-1)
        return (grad,)

    return _result(np.take_along_axis(a.data, index, axis=-1)[..., 0], (a,), _backward)


# ---------------------------------------------------------------------------
# Linear algebra and fused network primitives
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def _backward(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        grad_b = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return grad_a, grad_b

    return _result(a.data @ b.data, (a, b), _backward)


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis with max-subtraction."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return _result(
        y, (x,),
        lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),),
    )


def rms_norm(x, gain, eps: float = EPS_NORM) -> Tensor:
    """y = gain * x / sqrt(mean(x^2) + eps), no mean subtraction."""
    x, gain = as_tensor(x), as_tensor(gain)
    if gain.shape != x.shape[-1:]:
        raise DimensionError(f"rms_norm gain {gain.shape} does not match {x.shape}")
    r = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    xhat = x.data * r

    def _backward(g):
        dxhat = g * gain.data
        dx = r * (dxhat - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, g * xhat

    return _result(gain.data * xhat, (x, gain), _backward)


def layer_norm(x, gain, bias, eps: float = EPS_NORM) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    r = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * r

    def _backward(g):
        dxhat = g * gain.data
        dx = r * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, g * xhat, g

    return _result(xhat * gain.data + bias.data, (x, gain, bias), _backward)


def swiglu(x, w_gate, w_up, w_down) -> Tensor:
    """(swish(x W_gate) * (x W_up)) W_down."""
    x, w_gate, w_up, w_down = (as_tensor(t) for t in (x, w_gate, w_up, w_down))
    d = x.shape[-1]
    if w_gate.ndim != 2 or w_gate.shape[0] != d or w_up.shape != w_gate.shape:
        raise DimensionError(f"swiglu gate/up shapes {w_gate.shape}, {w_up.shape} do not fit input {x.shape}")
    if w_down.shape != (w_gate.shape[1], d):
        raise DimensionError(f"swiglu down projection {w_down.shape} should be {(w_gate.shape[1], d)}")
    return matmul(mul(swish(matmul(x, w_gate)), matmul(x, w_up)), w_down)


def rotate_pairs(x, angles: np.ndarray) -> Tensor:
    """
    Rotate consecutive coordinate pairs (x_2i, x_2i+1) by ``angles``.

    Args:
        x: Tensor whose last two axes are (sequence, even feature dim)
        angles: Array of shape (sequence, feature_dim / 2)
    """
    x = as_tensor(x)
    cos, sin = np.cos(angles), np.sin(angles)

    def _rotate(v, s):
        out = np.empty_like(v)
        even, odd = v[..., 0::2], v[..., 1::2]
        out[..., 0::2] = even * cos - odd * s
        out[..., 1::2] = even * s + odd * cos
        return out

    return _result(_rotate(x.data, sin), (x,), lambda g: (_rotate(g, -sin),))


def conv2d(x, weight, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation over (batch, channel, height, width) input.

    Args:
        x: Input of shape (B, C, H, W)
        weight: Kernels of shape (O, C, kh, kw)
        bias: Per-output-channel bias of shape (O,)
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d input {x.shape} and kernel {weight.shape} do not agree")
    batch, channels, height, width = x.shape
    out_ch, _, kh, kw = weight.shape
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, channels * kh * kw)
    kernel = weight.data.reshape(out_ch, -1)
    out = (cols @ kernel.T + bias.data).reshape(batch, out_h, out_w, out_ch).transpose(0, 3, 1, 2)

    def _backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, out_ch)
        grad_w = (g2.T @ cols).reshape(weight.shape)
        grad_b = g2.sum(axis=0)
        grad_x = None
        if x.requires_grad:
            dcols = (g2 @ kernel).reshape(batch, out_h, out_w, channels, kh, kw)
            dpad = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    dpad[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            grad_x = dpad[:, :, padding:padding + height, padding:padding + width]
        return grad_x, grad_w, grad_b

    return _result(out, (x, weight, bias), _backward)
