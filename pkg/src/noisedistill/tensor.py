"""Dense-matrix autodiff core.

A ``Tensor`` wraps a numpy array together with a gradient slot and the
closures needed for reverse-mode differentiation.  Graphs are per-training-step
tapes: building one is cheap, and ``backward()`` walks it exactly once in
reverse topological order, so gradient accumulation order is deterministic and
loss traces are bit-reproducible under a fixed seed.

Working precision is a process-global setting (`set_precision`): tests run at
64-bit so finite-difference tolerances are meaningful, training may opt into
32-bit.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DomainError, NumericError, ShapeError

_DTYPE = np.float64
_CHECKED = True
_GRAD_ENABLED = True

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def set_precision(mode: str) -> None:
    """Select the global working precision: "test" (64-bit) or "train" (32-bit)."""
    global _DTYPE
    if mode == "test":
        _DTYPE = np.float64
    elif mode == "train":
        _DTYPE = np.float32
    else:
        raise ValueError(f"unknown precision mode {mode!r}, expected 'test' or 'train'")


def active_dtype() -> np.dtype:
    return np.dtype(_DTYPE)


def set_checked(flag: bool) -> None:
    """Toggle NaN/Inf rejection at Tensor construction."""
    global _CHECKED
    _CHECKED = bool(flag)


class no_grad:
    """Context manager that suspends tape recording.

    Ops executed inside produce constant tensors with no parents; the teacher
    branch runs under this so its parameters can never enter a student tape.
    """

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _coerce(value) -> np.ndarray:
    arr = np.asarray(value, dtype=_DTYPE)
    if _CHECKED and not np.all(np.isfinite(arr)):
        raise NumericError("tensor construction rejected non-finite entries")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A value in the computation graph with a gradient slot of equal shape."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, _parents: tuple = (), _backward: Callable | None = None):
        self.value = _coerce(value)
        self.grad: np.ndarray | None = None
        self._parents = _parents if _GRAD_ENABLED else ()
        self._backward = _backward if _GRAD_ENABLED else None

    # -- graph -----------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded tape.

        Visits each node exactly once, in the reverse of a deterministic
        topological order.
        """
        if self.value.ndim != 0 and self.value.size != 1:
            raise ShapeError("backward() requires a scalar output")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += grad

    # -- basics ----------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other) -> Tensor:
        other = as_tensor(other)
        out = Tensor(self.value + other.value, (self, other))

        def backward(g):
            self._accumulate(_unbroadcast(g, self.value.shape))
            other._accumulate(_unbroadcast(g, other.value.shape))

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other)
        out = Tensor(self.value * other.value, (self, other))

        def backward(g):
            self._accumulate(_unbroadcast(g * other.value, self.value.shape))
            other._accumulate(_unbroadcast(g * self.value, other.value.shape))

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def __pow__(self, exponent: float) -> Tensor:
        if not isinstance(exponent, (int, float)):
            raise TypeError("tensor exponent must be a python scalar")
        out = Tensor(self.value ** exponent, (self,))

        def backward(g):
            self._accumulate(g * exponent * self.value ** (exponent - 1))

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def __neg__(self) -> Tensor:
        return self * -1.0

    def __sub__(self, other) -> Tensor:
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other) + (-self)

    def __radd__(self, other) -> Tensor:
        return self + other

    def __rmul__(self, other) -> Tensor:
        return self * other

    def __truediv__(self, other) -> Tensor:
        return self * (as_tensor(other) ** -1.0)

    def __rtruediv__(self, other) -> Tensor:
        return as_tensor(other) * (self ** -1.0)

    def __matmul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self.value, other.value
        if a.ndim == 2 and b.ndim == 2:
            if a.shape[1] != b.shape[0]:
                raise ShapeError(f"matmul mismatch {a.shape} @ {b.shape}")
            out = Tensor(a @ b, (self, other))

            def backward(g):
                self._accumulate(g @ b.T)
                other._accumulate(a.T @ g)

        elif a.ndim == 2 and b.ndim == 1:
            if a.shape[1] != b.shape[0]:
                raise ShapeError(f"matvec mismatch {a.shape} @ {b.shape}")
            out = Tensor(a @ b, (self, other))

            def backward(g):
                self._accumulate(np.outer(g, b))
                other._accumulate(a.T @ g)

        elif a.ndim == 1 and b.ndim == 1:
            if a.shape[0] != b.shape[0]:
                raise ShapeError(f"dot mismatch {a.shape} . {b.shape}")
            out = Tensor(np.dot(a, b), (self, other))

            def backward(g):
                self._accumulate(g * b)
                other._accumulate(g * a)

        else:
            raise ShapeError(f"unsupported matmul ranks {a.ndim} @ {b.ndim}")
        out._backward = backward if _GRAD_ENABLED else None
        return out

    # -- reductions and elementwise functions ------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        out = Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,))

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.value.shape).copy())
            else:
                g_exp = g if keepdims else np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g_exp, self.value.shape).copy())

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def exp(self) -> Tensor:
        out = Tensor(np.exp(self.value), (self,))

        def backward(g):
            self._accumulate(g * out.value)

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def log(self) -> Tensor:
        out = Tensor(np.log(self.value), (self,))

        def backward(g):
            self._accumulate(g / self.value)

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def sqrt(self) -> Tensor:
        out = Tensor(np.sqrt(self.value), (self,))

        def backward(g):
            self._accumulate(g * 0.5 / out.value)

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def tanh(self) -> Tensor:
        out = Tensor(np.tanh(self.value), (self,))

        def backward(g):
            self._accumulate(g * (1.0 - out.value ** 2))

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def abs(self) -> Tensor:
        out = Tensor(np.abs(self.value), (self,))

        def backward(g):
            self._accumulate(g * np.sign(self.value))

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def clamp_min(self, floor: float) -> Tensor:
        """max(x, floor) elementwise; gradient is blocked where the floor binds."""
        out = Tensor(np.maximum(self.value, floor), (self,))

        def backward(g):
            self._accumulate(g * (self.value > floor))

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def gelu(self) -> Tensor:
        """Exact GELU x * Phi(x) with the Gaussian CDF."""
        x = self.value
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        out = Tensor(x * cdf, (self,))

        def backward(g):
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
            self._accumulate(g * (cdf + x * pdf))

        out._backward = backward if _GRAD_ENABLED else None
        return out

    # -- shape manipulation ------------------------------------------------

    def reshape(self, *shape) -> Tensor:
        out = Tensor(self.value.reshape(*shape), (self,))

        def backward(g):
            self._accumulate(g.reshape(self.value.shape))

        out._backward = backward if _GRAD_ENABLED else None
        return out

    @property
    def T(self) -> Tensor:
        out = Tensor(self.value.T, (self,))

        def backward(g):
            self._accumulate(g.T)

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def row(self, index: int) -> Tensor:
        """Extract row `index` of a 2-D tensor as a 1-D tensor."""
        if self.value.ndim != 2:
            raise ShapeError("row() expects a 2-D tensor")
        out = Tensor(self.value[index].copy(), (self,))

        def backward(g):
            full = np.zeros_like(self.value)
            full[index] = g
            self._accumulate(full)

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def take_rows(self, indices: Sequence[int]) -> Tensor:
        """Gather rows of a 2-D tensor; duplicate indices accumulate on backward."""
        if self.value.ndim != 2:
            raise ShapeError("take_rows() expects a 2-D tensor")
        idx = np.asarray(indices, dtype=np.intp)
        out = Tensor(self.value[idx].copy(), (self,))

        def backward(g):
            full = np.zeros_like(self.value)
            np.add.at(full, idx, g)
            self._accumulate(full)

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def slice_cols(self, start: int, stop: int) -> Tensor:
        if self.value.ndim != 2:
            raise ShapeError("slice_cols() expects a 2-D tensor")
        out = Tensor(self.value[:, start:stop].copy(), (self,))

        def backward(g):
            full = np.zeros_like(self.value)
            full[:, start:stop] = g
            self._accumulate(full)

        out._backward = backward if _GRAD_ENABLED else None
        return out

    def logsumexp(self) -> Tensor:
        """Stable log-sum-exp of a 1-D tensor; gradient is the softmax."""
        if self.value.ndim != 1:
            raise ShapeError("logsumexp() expects a 1-D tensor")
        if self.value.size == 0:
            raise DomainError("logsumexp of an empty vector")
        m = float(np.max(self.value))
        shifted = np.exp(self.value - m)
        total = shifted.sum()
        out = Tensor(m + math.log(total), (self,))

        def backward(g):
            self._accumulate(g * (shifted / total))

        out._backward = backward if _GRAD_ENABLED else None
        return out


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def matrix(rows: int, cols: int, data) -> np.ndarray:
    """Validated row-major matrix constructor for external data."""
    arr = np.asarray(data, dtype=_DTYPE).reshape(-1)
    if arr.size != rows * cols:
        raise ShapeError(f"expected {rows * cols} entries for {rows}x{cols}, got {arr.size}")
    if _CHECKED and not np.all(np.isfinite(arr)):
        raise NumericError("matrix construction rejected non-finite entries")
    return arr.reshape(rows, cols)


def concat(parts: Iterable[Tensor]) -> Tensor:
    """Concatenate 1-D tensors into one 1-D tensor."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DomainError("concat of an empty sequence")
    for p in parts:
        if p.value.ndim != 1:
            raise ShapeError("concat expects 1-D tensors")
    out = Tensor(np.concatenate([p.value for p in parts]), tuple(parts))
    offsets = np.cumsum([0] + [p.value.size for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p._accumulate(g[lo:hi])

    out._backward = backward if _GRAD_ENABLED else None
    return out


def concat_cols(parts: Iterable[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along columns (used to merge attention heads)."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DomainError("concat_cols of an empty sequence")
    out = Tensor(np.concatenate([p.value for p in parts], axis=1), tuple(parts))
    offsets = np.cumsum([0] + [p.value.shape[1] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p._accumulate(g[:, lo:hi])

    out._backward = backward if _GRAD_ENABLED else None
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor."""
    x = as_tensor(x)
    if x.value.ndim != 2:
        raise ShapeError("softmax_rows expects a 2-D tensor")
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, (x,))

    def backward(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        x._accumulate(y * (g - inner))

    out._backward = backward if _GRAD_ENABLED else None
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int) -> Tensor:
    """Valid (no padding) strided 1-D convolution.

    x: (T_in, C_in); weight: (C_out, C_in, K); bias: (C_out,) -> (T_out, C_out)
    with T_out = floor((T_in - K) / stride) + 1.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    t_in, c_in = x.value.shape
    c_out, c_in_w, k = weight.value.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv1d channel mismatch: input {c_in}, weight {c_in_w}")
    if t_in < k:
        raise ShapeError(f"conv1d input length {t_in} shorter than kernel {k}")
    windows = np.lib.stride_tricks.sliding_window_view(x.value, k, axis=0)[::stride]
    t_out = windows.shape[0]
    flat_windows = windows.reshape(t_out, c_in * k)  # (t_out, c_in*k), contiguous copy
    flat_weight = weight.value.reshape(c_out, c_in * k)
    out = Tensor(flat_windows @ flat_weight.T + bias.value, (x, weight, bias))

    def backward(g):
        weight._accumulate((g.T @ flat_windows).reshape(c_out, c_in, k))
        bias._accumulate(g.sum(axis=0))
        contrib = (g @ flat_weight).reshape(t_out, c_in, k)
        dx = np.zeros_like(x.value)
        positions = (np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]).ravel()
        np.add.at(dx, positions, contrib.transpose(0, 2, 1).reshape(-1, c_in))
        x._accumulate(dx)

    out._backward = backward if _GRAD_ENABLED else None
    return out


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance with learned affine."""
    x = as_tensor(x)
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    return centered * ((var + eps) ** -0.5) * scale + shift


def norm_floored(x: Tensor, eps: float = 1e-8) -> Tensor:
    """max(||x||_2, eps), computed as sqrt(max(sum x^2, eps^2)) so it stays
    differentiable at degenerate inputs."""
    x = as_tensor(x)
    return (x * x).sum().clamp_min(eps * eps).sqrt()


def cosine_similarity(a, b, eps: float = 1e-8) -> Tensor:
    """Cosine similarity a.b / (max(||a||, eps) * max(||b||, eps)).

    Differentiable with respect to both inputs; returns a scalar tensor.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 1 or b.value.ndim != 1:
        raise ShapeError("cosine_similarity expects 1-D vectors")
    if a.value.shape != b.value.shape:
        raise ShapeError(f"cosine_similarity length mismatch {a.value.shape} vs {b.value.shape}")
    return (a @ b) / (norm_floored(a, eps) * norm_floored(b, eps))


def log_sum_exp(v) -> Tensor:
    """Stable log(sum(exp(v))) of a nonempty 1-D vector."""
    return as_tensor(v).logsumexp()


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                               h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, entry by entry.

    The oracle all analytic gradients in this package are checked against; it
    never touches the tape.
    """
    if h <= 0:
        raise DomainError("finite difference step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(x))
        flat[i] = orig - h
        f_minus = float(f(x))
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError("non-finite evaluation inside finite differences")
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
