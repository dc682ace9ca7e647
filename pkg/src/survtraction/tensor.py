"""Small float64 tensor kernel with tape-based reverse-mode differentiation.

Every op builds its output eagerly with numpy and records a closure that maps
the output gradient to input gradients. ``backward`` walks the recorded graph
in reverse topological order. The graph is rebuilt on every forward pass.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

# Raise NumericFault on NaN/Inf after every op. Off by default (cost), tests
# and the gradcheck command switch it on.
CHECK_FINITE = False

LOG_CLAMP = 1e-12
_GRAD_ENABLED = True


class ContractViolation(ValueError):
    """An op was called with inputs that break its shape or type contract."""


class NumericFault(FloatingPointError):
    """A forward op produced NaN or Inf."""

    def __init__(self, op: str, message: str = "non-finite output"):
        super().__init__(f"{op}: {message}")
        self.op = op


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable tensor with a dotted name and AdamW state."""

    __slots__ = ("name", "m", "v", "step")

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if CHECK_FINITE and not np.isfinite(out).all():
        raise NumericFault(op)
    t = Tensor(out)
    t.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    return t


@contextlib.contextmanager
def no_grad():
    """Forward ops inside this block record nothing on the tape."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_trailing_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    # Only trailing-aligned broadcasting (bias rows, constant masks) is allowed.
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------------------
# forward ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record("matmul", out, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_trailing_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_trailing_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product with trailing broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_trailing_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", a.data * b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractViolation("concat: no inputs")
    ndim = ts[0].ndim
    ax = axis % ndim
    for t in ts[1:]:
        if t.ndim != ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ts[0].shape)) if i != ax
        ):
            raise ContractViolation(
                f"concat: shapes {[t.shape for t in ts]} differ outside axis {axis}"
            )
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=ax)

    return _record("concat", out, ts, backward)


def concat_last_axis(tensors: Sequence) -> Tensor:
    return concat(tensors, axis=-1)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(a)) evaluated without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _record("log_sigmoid", out, (a,), lambda g: (g * _sigmoid(-x),))


def log(a, clamp: float = LOG_CLAMP) -> Tensor:
    """Natural log of ``max(a, clamp)``; gradient is zero where clamped."""
    a = as_tensor(a)
    safe = np.maximum(a.data, clamp)
    live = a.data > clamp
    return _record("log", np.log(safe), (a,), lambda g: (np.where(live, g / safe, 0.0),))


def softmax_rows(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` (broadcastable boolean, True = keep) gives exactly zero weight to
    masked entries; every row must keep at least one entry.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record("softmax_rows", out, (a,), backward)


def layer_norm_last_axis(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        n = x.shape[-1]
        gx = inv / n * (n * g - g.sum(axis=-1, keepdims=True)
                        - xhat * (g * xhat).sum(axis=-1, keepdims=True))
        return (gx,)

    return _record("layer_norm_last_axis", xhat, (a,), backward)


def mse(a, b, weights: np.ndarray | None = None) -> Tensor:
    """Mean squared error; ``weights`` broadcast against the residual and
    select which entries count (the mean runs over their weighted total)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractViolation(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    if weights is None:
        w = np.ones_like(diff)
    else:
        w = np.broadcast_to(np.asarray(weights, dtype=np.float64), diff.shape)
    total = w.sum()
    if total <= 0:
        raise ContractViolation("mse: no entries selected")
    out = np.array((w * diff * diff).sum() / total)

    def backward(g):
        gd = g * 2.0 * w * diff / total
        return gd, -gd

    return _record("mse", out, (a, b), backward)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _record("sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    shape = a.shape
    return _record("mean", np.array(a.data.mean()), (a,),
                   lambda g: (np.full(shape, float(g) / n),))


def sum_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    ax = axis % a.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), a.shape).copy(),)

    return _record("sum_axis", a.data.sum(axis=ax), (a,), backward)


def mean_last_axis(a) -> Tensor:
    a = as_tensor(a)
    n = a.shape[-1]

    def backward(g):
        return (np.broadcast_to(g[..., None] / n, a.shape).copy(),)

    return _record("mean_last_axis", a.data.mean(axis=-1), (a,), backward)


def embedding_lookup(table, indices) -> Tensor:
    """Gather rows of a 2-D table; output shape is ``indices.shape + (dim,)``."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if table.ndim != 2:
        raise ContractViolation(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractViolation("embedding_lookup: indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractViolation(
            f"embedding_lookup: index out of range for table with {table.shape[0]} rows"
        )

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _record("embedding_lookup", table.data[idx], (table,), backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ContractViolation(f"reshape: {exc}") from None
    return _record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    """``a[..., start:stop, ...]`` along one axis."""
    a = as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        return (ga,)

    return _record("slice_axis", a.data[index], (a,), backward)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def cumprod_last_axis(a) -> Tensor:
    """Running product along the last axis.

    The gradient is formed from explicit partial products, so zeros in the
    input are handled without division.
    """
    a = as_tensor(a)
    x = a.data
    out = np.cumprod(x, axis=-1)
    n = x.shape[-1]

    def backward(g):
        gx = np.zeros_like(x)
        for j in range(n):
            # d out[t] / d x[j] = prod_{k<=t, k!=j} x[k] for t >= j
            before = np.prod(x[..., :j], axis=-1)
            after = np.cumprod(x[..., j + 1:], axis=-1)
            partial = np.concatenate([np.ones(x.shape[:-1] + (1,)), after], axis=-1)
            gx[..., j] = before * (g[..., j:] * partial).sum(axis=-1)
        return (gx,)

    return _record("cumprod_last_axis", out, (a,), backward)


FORWARD_OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "scale": scale,
    "concat_last_axis": concat_last_axis,
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax_rows": softmax_rows,
    "layer_norm_last_axis": layer_norm_last_axis,
    "mse": mse,
    "mean_last_axis": mean_last_axis,
    "embedding_lookup": embedding_lookup,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch one of the named kernel ops."""
    try:
        fn = FORWARD_OPS[kind]
    except KeyError:
        raise ContractViolation(f"unknown op kind {kind!r}") from None
    if kind == "concat_last_axis":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse mode


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d t into ``t.grad`` for every differentiable ancestor."""
    if not isinstance(loss, Tensor) or loss.data.size != 1 or loss.ndim > 1:
        raise ContractViolation("backward: loss must be a scalar tensor")
    if not loss.requires_grad:
        raise ContractViolation("backward: loss does not depend on any differentiable tensor")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# optimizer


def adamw_step(
    params: Iterable[Parameter],
    lr: float,
    weight_decay: float = 1e-2,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One AdamW update with decoupled weight decay. Gradients are left as is."""
    params = list(params)
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise ContractViolation(f"adamw_step: no gradient for {', '.join(missing)}")
    if lr == 0:
        return
    b1, b2 = betas
    for p in params:
        p.step += 1
        g = p.grad
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * g * g
        m_hat = p.m / (1.0 - b1 ** p.step)
        v_hat = p.v / (1.0 - b2 ** p.step)
        if weight_decay:
            p.data = p.data * (1.0 - lr * weight_decay)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# finite-difference oracle


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max()) if err.size else 0.0


def numeric_grad(f: Callable[[], float], target: np.ndarray, step: float) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``target`` (mutated in place)."""
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        with no_grad():
            flat[i] = orig + step
            hi = f()
            flat[i] = orig - step
            lo = f()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericFault("grad_check", "non-finite value during finite differences")
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients
    of scalar ``f`` at ``point``."""
    if step <= 0:
        raise ContractViolation("grad_check: step must be positive")
    x = Tensor(np.array(point.data, dtype=np.float64), requires_grad=True)
    out = f(x)
    if not np.isfinite(out.data).all():
        raise NumericFault("grad_check", "non-finite loss")
    if out.requires_grad:
        backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    probe = Tensor(x.data.copy())
    numeric = numeric_grad(lambda: float(f(probe).data), probe.data, step)
    return relative_error(analytic, numeric)


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-5,
    corrupt: float = 0.0,
) -> float:
    """Like :func:`grad_check` but over every entry of a set of parameters.

    ``corrupt`` adds a constant to the analytic gradients; it exists only as a
    negative control for the checker itself.
    """
    zero_grad(params)
    loss = loss_fn()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = (np.zeros_like(p.data) if p.grad is None else p.grad) + corrupt
        numeric = numeric_grad(lambda: float(loss_fn().data), p.data, step)
        worst = max(worst, relative_error(analytic, numeric))
    zero_grad(params)
    return worst
