"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the model needs are provided. Every op runs eagerly on
NumPy arrays; when any input requires a gradient the result records its
parents and a closure mapping the output gradient to input gradients.
``Tensor.backward`` walks that record in reverse topological order.

Operands may carry arbitrary leading (batch) axes. Binary elementwise ops and
``matmul`` follow NumPy broadcasting; gradients are summed back onto the
broadcast operand.
"""

from __future__ import annotations

import contextlib
import math
import os
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

GELU_C = math.sqrt(2.0 / math.pi)  # 0.7978845608028654
GELU_A = 0.044715

_state = threading.local()
_DEBUG = os.environ.get("FMLA_DEBUG", "") not in ("", "0")


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the tape (evaluation, finite differences)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def set_debug(flag: bool) -> None:
    """Toggle finite-value checks on every op output."""
    global _DEBUG
    _DEBUG = bool(flag)


class MacCounter:
    """Accumulates multiply-accumulates executed by contraction ops."""

    def __init__(self):
        self.macs = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int) -> None:
        self.macs += int(n)
        self.by_op[op] = self.by_op.get(op, 0) + int(n)


@contextlib.contextmanager
def mac_counter():
    """Count MACs of matmul / convolution ops executed inside the block."""
    counter = MacCounter()
    stack = getattr(_state, "counters", None)
    if stack is None:
        stack = _state.counters = []
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


def _count(op: str, n: int) -> None:
    for c in getattr(_state, "counters", ()):
        c.add(op, n)


class Tensor:
    """Shape-tagged float64 array with an optional gradient slot."""

    __array_priority__ = 1000
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- autodiff --------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar root, got {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = np.array(g) if node.grad is None else node.grad + g
                continue
            for p, gp in zip(node._parents, node._backward(g)):
                if gp is None or not p.requires_grad:
                    continue
                if _DEBUG and gp.shape != p.shape:
                    raise DimensionError(f"gradient shape {gp.shape} != operand shape {p.shape}")
                key = id(p)
                grads[key] = gp if key not in grads else grads[key] + gp

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced by a forward op")
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def log_clamped(x: Tensor, eps: float) -> Tensor:
    """ln(max(x, eps)); zero gradient where the clamp is active."""
    active = x.data >= eps
    safe = np.where(active, x.data, eps)
    return _node(np.log(safe), (x,), lambda g: (np.where(active, g / safe, 0.0),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _node(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def gelu(x: Tensor) -> Tensor:
    """tanh approximation: 0.5 x (1 + tanh(c (x + a x^3))), c = sqrt(2/pi), a = 0.044715."""
    v = x.data
    v2 = v * v
    t = np.tanh(GELU_C * v * (1.0 + GELU_A * v2))
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        dt = (1.0 - t * t) * (GELU_C * (1.0 + 3.0 * GELU_A * v2))
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return _node(out, (x,), backward)


# -- reductions and shape ops ------------------------------------------------

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis, keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _node(out, (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _node(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def getitem(x: Tensor, idx) -> Tensor:
    """Basic (slice/integer) indexing only; no fancy-index duplicates."""
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _node(np.array(out), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _node(out, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(out, tensors, backward)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    _count("matmul", out.size * a.shape[-1])

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward)


# -- normalisation and softmax ---------------------------------------------------

def softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (x,), backward)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _node(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply a per-feature affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dy = g * gain.data
        dx = rstd * (dy - dy.mean(axis=-1, keepdims=True) - xhat * (dy * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(out, (x, gain, bias), backward)


def batch_norm(
    x: Tensor,
    gain: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation; channels live on axis -2 of ``(..., c, n)``.

    In training mode batch statistics are used and the running buffers are
    updated in place (``running = momentum * running + (1 - momentum) * batch``).
    """
    axes = tuple(i for i in range(x.ndim) if i != x.ndim - 2)
    shape = [1] * x.ndim
    shape[-2] = x.shape[-2]
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        count = x.data.size // x.shape[-2]
        unbiased = var.reshape(-1) * (count / max(count - 1, 1))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu.reshape(-1)
        running_var *= momentum
        running_var += (1.0 - momentum) * unbiased
    else:
        xc = x.data - running_mean.reshape(shape)
        var = running_var.reshape(shape)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data.reshape(shape) + bias.data.reshape(shape)

    def backward(g):
        dy = g * gain.data.reshape(shape)
        if training:
            dx = rstd * (dy - dy.mean(axis=axes, keepdims=True) - xhat * (dy * xhat).mean(axis=axes, keepdims=True))
        else:
            dx = dy * rstd
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(out, (x, gain, bias), backward)


# -- convolution, sampling, pooling --------------------------------------------

def conv1d_same(x: Tensor, w: Tensor, groups: int = 1, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of ``x (..., c_in, n)`` with ``w (c_out, c_in/groups, k)``.

    Zero padding of (k-1)/2 on both sides keeps the length at n.
    """
    c_in, n = x.shape[-2], x.shape[-1]
    c_out, cg, k = w.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ConfigError(f"channels ({c_in} in, {c_out} out) not divisible by groups={groups}")
    if cg != c_in // groups:
        raise DimensionError(f"kernel {w.shape} does not match input {x.shape} with groups={groups}")
    if k % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {k}")
    lead = x.shape[:-2]
    L = int(np.prod(lead)) if lead else 1
    pad = (k - 1) // 2
    og = c_out // groups

    xp = np.pad(x.data.reshape(L, c_in, n), ((0, 0), (0, 0), (pad, pad)))
    if k == 1:
        cols = xp[:, :, None, :]
    else:
        cols = np.stack([xp[:, :, j:j + n] for j in range(k)], axis=2)  # (L, c_in, k, n)
    w2 = w.data.reshape(groups, og, cg * k)
    colg = cols.reshape(L, groups, cg * k, n)
    out = np.empty((L, groups, og, n))
    for gi in range(groups):
        np.matmul(w2[gi], colg[:, gi], out=out[:, gi])
    out = out.reshape(L, c_out, n)
    if bias is not None:
        out = out + bias.data[:, None]
    _count("conv1d", L * c_out * cg * k * n)

    def backward(g):
        g3 = g.reshape(L, groups, og, n)
        gx = gw = None
        if w.requires_grad:
            gw = np.stack([
                np.tensordot(g3[:, gi], colg[:, gi], axes=([0, 2], [0, 2])) for gi in range(groups)
            ]).reshape(w.shape)
        if x.requires_grad:
            dcols = np.empty((L, groups, cg * k, n))
            for gi in range(groups):
                np.matmul(w2[gi].T, g3[:, gi], out=dcols[:, gi])
            dcols = dcols.reshape(L, c_in, k, n)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, :, j:j + n] += dcols[:, :, j, :]
            gx = dxp[:, :, pad:pad + n].reshape(x.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(L, c_out, n).sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return _node(out.reshape(lead + (c_out, n)), parents, backward)


def linear_interp_sample(x: Tensor, pos: Tensor) -> Tensor:
    """Sample every channel of ``x (..., c, n)`` at real positions ``pos (..., m)``.

    Positions are clamped to [0, n-1]; the value at p is
    (1-f) x[floor p] + f x[floor p + 1]. Clamped positions get zero position
    gradient. Result has shape (..., c, m).
    """
    c, n = x.shape[-2], x.shape[-1]
    if pos.shape[:-1] != x.shape[:-2]:
        raise DimensionError(f"sample positions {pos.shape} do not match input {x.shape}")
    lead = x.shape[:-2]
    L = int(np.prod(lead)) if lead else 1
    m = pos.shape[-1]
    xd = x.data.reshape(L, c, n)
    pd = pos.data.reshape(L, m)
    if not np.all(np.isfinite(pd)):
        raise NumericError("non-finite sampling positions (diverged offsets)")
    inside = (pd >= 0.0) & (pd <= n - 1)
    p = np.clip(pd, 0.0, n - 1)
    i0 = np.minimum(np.floor(p).astype(np.int64), max(n - 2, 0))
    i1 = np.minimum(i0 + 1, n - 1)
    f = p - i0
    x0 = np.take_along_axis(xd, np.broadcast_to(i0[:, None, :], (L, c, m)), axis=-1)
    x1 = np.take_along_axis(xd, np.broadcast_to(i1[:, None, :], (L, c, m)), axis=-1)
    out = x0 + f[:, None, :] * (x1 - x0)

    def backward(g):
        g3 = g.reshape(L, c, m)
        gx = gp = None
        if x.requires_grad:
            base = (np.arange(L * c) * n).reshape(L, c, 1)
            idx0 = (base + i0[:, None, :]).ravel()
            idx1 = (base + i1[:, None, :]).ravel()
            w1 = g3 * f[:, None, :]
            flat = np.bincount(idx0, weights=(g3 - w1).ravel(), minlength=L * c * n)
            flat += np.bincount(idx1, weights=w1.ravel(), minlength=L * c * n)
            gx = flat.reshape(x.shape)
        if pos.requires_grad:
            gp = ((g3 * (x1 - x0)).sum(axis=1) * inside).reshape(pos.shape)
        return gx, gp

    return _node(out.reshape(lead + (c, m)), (x, pos), backward)


def _window_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum over a centred window along axis -2 with zero padding."""
    n = a.shape[-2]
    pad = [(0, 0)] * a.ndim
    pad[-2] = (radius, radius)
    ap = np.pad(a, pad)
    out = np.zeros_like(a)
    for j in range(2 * radius + 1):
        out += ap[..., j:j + n, :]
    return out


def avg_pool_same(x: Tensor, kernel: int = 3) -> Tensor:
    """Stride-1 average pooling along axis -2 of ``(..., n, f)``; output length n.

    Windows are truncated at the borders and divided by the number of valid
    elements, so a constant sequence pools to itself.
    """
    if kernel % 2 == 0:
        raise ConfigError(f"pooling kernel must be odd, got {kernel}")
    r = kernel // 2
    n = x.shape[-2]
    t = np.arange(n)
    count = (np.minimum(t + r, n - 1) - np.maximum(t - r, 0) + 1).astype(np.float64)[:, None]
    out = _window_sum(x.data, r) / count
    return _node(out, (x,), lambda g: (_window_sum(g / count, r),))


# -- finite-difference verification ------------------------------------------------

def gradient_errors(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> list[float]:
    """Per-parameter worst relative error of analytic vs central-difference gradients.

    Relative error of one entry is |a - n| / max(1, |a|, |n|).
    """
    if not 1e-6 <= step <= 1e-4:
        raise ConfigError(f"finite-difference step {step} outside [1e-6, 1e-4]")
    for p in params:
        p.zero_grad()
    root = f()
    if not np.isfinite(root.data).all():
        raise NumericError("function value is not finite")
    root.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = []
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            err = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = float(f().data)
                flat[i] = orig - step
                down = float(f().data)
                flat[i] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise NumericError("function value is not finite under perturbation")
                num = (up - down) / (2.0 * step)
                ana = a.reshape(-1)[i]
                err = max(err, abs(ana - num) / max(1.0, abs(ana), abs(num)))
            worst.append(err)
    return worst


def gradient_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Maximum relative gradient error over all entries of ``params``."""
    errs = gradient_errors(f, params, step)
    return max(errs) if errs else 0.0


def leaves(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
