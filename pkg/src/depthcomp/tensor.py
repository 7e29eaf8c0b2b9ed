"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every op result remembers its parents and a closure mapping the upstream
gradient to one gradient per parent. Results carry a monotonically increasing
sequence number, so sorting the reachable nodes by that number recovers the
execution order; ``backward`` walks it once, in reverse.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateError, DimensionError, EmptyInputError

_seq = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Build no graph inside the block (inference with frozen parameters)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_seq)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            _raise_not_scalar(self)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(node) into ``.grad`` of every reachable node.

        Without an explicit seed the tensor must be a scalar.
        """
        if grad is None:
            if self.data.size != 1:
                _raise_not_scalar(self)
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64).reshape(self.shape)
        nodes = graph_nodes(self)
        pending = {id(self): grad}
        for node in reversed(nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def _raise_not_scalar(t: Tensor):
    raise ContractError(f"expected a scalar tensor, got shape {t.shape}")


def graph_nodes(root: Tensor) -> list[Tensor]:
    """Gradient-carrying nodes reachable from ``root``, in execution order."""
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or not t.requires_grad:
            continue
        seen[id(t)] = t
        stack.extend(t._parents)
    return sorted(seen.values(), key=lambda t: t._seq)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op; ``backward(g)`` returns one grad per parent."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: cannot combine shapes {a.shape} and {b.shape}") from None
    return make_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub: cannot combine shapes {a.shape} and {b.shape}") from None
    return make_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: cannot combine shapes {a.shape} and {b.shape}") from None
    return make_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tensor_sum(x: Tensor) -> Tensor:
    return make_op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reshape(x: Tensor, shape) -> Tensor:
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def repeat_rows(x: Tensor, repeats: int) -> Tensor:
    """Repeat each row ``repeats`` times consecutively (``np.repeat`` on axis 0)."""
    n = x.shape[0]
    return make_op(
        np.repeat(x.data, repeats, axis=0),
        (x,),
        lambda g: (g.reshape(n, repeats, *x.shape[1:]).sum(axis=1),),
    )


def broadcast_rows(x: Tensor, n: int) -> Tensor:
    """Stack a 1-D tensor ``n`` times into an ``n x F`` matrix."""
    if x.data.ndim != 1:
        raise DimensionError(f"broadcast_rows expects a vector, got shape {x.shape}")
    return make_op(np.tile(x.data, (n, 1)), (x,), lambda g: (g.sum(axis=0),))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise EmptyInputError("concat of an empty list")
    ndim = xs[0].data.ndim
    ax = axis % ndim
    for x in xs[1:]:
        if x.data.ndim != ndim or any(
            x.shape[i] != xs[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise DimensionError(
                f"concat along axis {axis}: incompatible shapes {[t.shape for t in xs]}"
            )
    sizes = [x.shape[ax] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return make_op(
        np.concatenate([x.data for x in xs], axis=ax),
        xs,
        lambda g: tuple(np.split(g, splits, axis=ax)),
    )


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    return make_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` laid out as ``in x out``."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Square-kernel 2D cross-correlation on a ``C x H x W`` tensor.

    Padding is ``k // 2`` (1 for 3x3, 0 for 1x1), so the output extent is
    ``ceil(H / stride)`` for both kernel sizes.
    """
    if stride not in (1, 2):
        raise DimensionError(f"conv2d: stride must be 1 or 2, got {stride}")
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise DimensionError(f"conv2d: expected CxHxW input and OxCxkxk kernel, got {x.shape}, {kernel.shape}")
    o, c, k, k2 = kernel.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {kernel.shape}")
    if x.shape[0] != c:
        raise DimensionError(f"conv2d: input has {x.shape[0]} channels, kernel expects {c} ({x.shape} vs {kernel.shape})")
    _, h, w = x.shape
    pad = k // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = kernel.data.reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data.reshape(o, 1)
    out = out.reshape(o, ho, wo)

    def backward(g):
        g2 = g.reshape(o, ho * wo)
        dk = (g2 @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        db = g2.sum(axis=1).reshape(bias.shape) if bias is not None and bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(c, k, k, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dcols[:, i, j]
            dx = dxp[:, pad : pad + h, pad : pad + w] if pad else dxp
        return (dx, dk) if bias is None else (dx, dk, db)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_op(out, parents, backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return make_op(out, (x,), lambda g: (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),))


def maxpool_points(x: Tensor) -> Tensor:
    """Per-feature max over the point axis of an ``N x F`` tensor.

    The gradient goes to the first row attaining the max.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"maxpool_points expects N x F, got {x.shape}")
    n, f = x.shape
    if n == 0:
        raise EmptyInputError("maxpool_points over zero points")
    idx = np.argmax(x.data, axis=0)
    cols = np.arange(f)

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[idx, cols] = g
        return (dx,)

    return make_op(x.data[idx, cols], (x,), backward)


# ---------------------------------------------------------------------------
# losses


def mse_masked(pred: Tensor, target, mask) -> Tensor:
    """Mean squared error over pixels where ``mask`` is nonzero."""
    pred, target = as_tensor(pred), as_tensor(target)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape or mask.shape != pred.shape:
        raise DimensionError(
            f"mse_masked: pred {pred.shape}, target {target.shape}, mask {mask.shape} must match"
        )
    total = mask.sum()
    if total == 0:
        raise DegenerateError("mse_masked: mask selects no elements")
    diff = pred.data - target.data
    loss = (mask * diff * diff).sum() / total

    def backward(g):
        d = (2.0 * g / total) * mask * diff
        return d, -d

    return make_op(np.asarray(loss), (pred, target), backward)


# ---------------------------------------------------------------------------
# verification


def grad_check(
    f: Callable[[], Tensor],
    params: Tensor | Iterable[Tensor],
    eps: float = 1e-5,
    tol: float | None = None,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Largest relative gap between backprop and central finite differences.

    ``f`` rebuilds the graph from the current parameter values and must
    return a scalar. Per coordinate the error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; ``floor``
    keeps coordinates with vanishing gradient from dividing by zero.
    ``max_coords`` checks a seeded random subset of each tensor. If ``tol``
    is given, exceeding it raises ``AssertionError``.
    """
    params = [params] if isinstance(params, Tensor) else list(params)
    for p in params:
        p.grad = None
    out = f()
    if out.data.size != 1:
        raise ContractError(f"grad_check: function must return a scalar, got shape {out.shape}")
    if out.requires_grad:
        out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    if tol is not None and worst > tol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e} > {tol:.1e}")
    return worst
