"""Dense float64 tensors with a reverse-mode differentiation tape.

Every public operation accepts plain arrays or :class:`Tensor` objects and
returns a :class:`Tensor`.  When a :class:`Tape` is active and at least one
operand requires gradients, the operation is recorded so that
:meth:`Tape.backward` can propagate adjoints back to the leaf parameters.
``finite_diff_grad`` is an independent central-difference oracle that only
evaluates the forward function.
"""
from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

LEAKY_SLOPE = 0.2

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "scenematch_active_tape", default=None
)


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class Tensor:
    """A float64 array, optionally tracked for differentiation."""

    __slots__ = ("value", "requires_grad", "name", "parents", "op", "_fwd", "_bwd", "_tape")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.parents: tuple[Tensor, ...] = ()
        self.op = "leaf"
        self._fwd = None
        self._bwd = None
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name: str) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


class Tape:
    """Ordered record of primitive operations on tracked tensors.

    Use as a context manager; operations performed inside the block on
    tensors that require gradients are appended in execution order, which is
    a topological order by construction.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
        return backward(self, loss, params)

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded node from the current leaf values."""
        fresh: dict[int, np.ndarray] = {}
        out = []
        for node in self.nodes:
            args = [fresh.get(id(p), p.value) for p in node.parents]
            val = node._fwd(*args)
            fresh[id(node)] = val
            out.append(val)
        return out


def _record(op: str, fwd: Callable, bwd: Callable, *inputs) -> Tensor:
    tensors = [as_tensor(x) for x in inputs]
    out = Tensor(fwd(*[t.value for t in tensors]))
    out.op = op
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out.parents = tuple(tensors)
        out._fwd = fwd
        out._bwd = bwd
        out._tape = tape
        tape.nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(tape: Tape, loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every tracked leaf.

    Returns a map from parameter name to gradient array.  When ``params`` is
    given, the result holds exactly one entry per parameter (zeros for those
    the loss does not depend on).
    """
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if loss._tape is not tape:
        raise ContractError("loss node is not recorded on this tape")
    end = None
    for k in range(len(tape.nodes) - 1, -1, -1):
        if tape.nodes[k] is loss:
            end = k
            break
    if end is None:
        raise ContractError("loss node is not recorded on this tape")

    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes[: end + 1]):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        grads = node._bwd(g, node.value, *[p.value for p in node.parents])
        for parent, pg in zip(node.parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.shape)
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg
            if parent._tape is None:
                leaves[key] = parent

    result: dict[str, np.ndarray] = {}
    if params is not None:
        for name, p in params.items():
            result[name] = adj.get(id(p), np.zeros_like(p.value))
        return result
    for key, leaf in leaves.items():
        result[leaf.name or f"leaf{key}"] = adj[key]
    return result


def finite_diff_grad(f: Callable[[], float], params: Mapping[str, Tensor], eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``f`` over every coordinate of ``params``.

    ``f`` takes no arguments and must read the current ``.value`` of the
    parameters.  Values are restored after each probe.
    """
    if not eps > 0:
        raise ContractError("eps must be positive")
    grads = {}
    for name, p in params.items():
        base = p.value
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        for idx in range(base.size):
            probe = base.copy()
            probe.flat[idx] = base.flat[idx] + eps
            p.value = probe
            fp = float(f())
            probe = base.copy()
            probe.flat[idx] = base.flat[idx] - eps
            p.value = probe
            fm = float(f())
            p.value = base
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite objective while probing {name}[{idx}]")
            flat[idx] = (fp - fm) / (2.0 * eps)
        grads[name] = g
    return grads


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    return _record("add", np.add, lambda g, out, x, y: (g, g), a, b)


def sub(a, b) -> Tensor:
    return _record("sub", np.subtract, lambda g, out, x, y: (g, -g), a, b)


def mul(a, b) -> Tensor:
    return _record("mul", np.multiply, lambda g, out, x, y: (g * y, g * x), a, b)


def div(a, b) -> Tensor:
    return _record("div", np.divide, lambda g, out, x, y: (g / y, -g * x / (y * y)), a, b)


def exp(a) -> Tensor:
    return _record("exp", np.exp, lambda g, out, x: (g * out,), a)


def log(a) -> Tensor:
    return _record("log", np.log, lambda g, out, x: (g / x,), a)


def sqrt(a) -> Tensor:
    return _record("sqrt", np.sqrt, lambda g, out, x: (g / (2.0 * out),), a)


def square(a) -> Tensor:
    return _record("square", np.square, lambda g, out, x: (2.0 * g * x,), a)


def relu(a) -> Tensor:
    return _record("relu", lambda x: np.maximum(x, 0.0), lambda g, out, x: (g * (x > 0),), a)


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    return _record(
        "leaky_relu",
        lambda x: np.where(x >= 0, x, slope * x),
        lambda g, out, x: (np.where(x >= 0, g, slope * g),),
        a,
    )


def elu(a) -> Tensor:
    def fwd(x):
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))

    def bwd(g, out, x):
        return (np.where(x > 0, g, g * np.exp(np.minimum(x, 0.0))),)

    return _record("elu", fwd, bwd, a)


def sigmoid(a) -> Tensor:
    def fwd(x):
        # branch-free stable logistic
        z = np.exp(-np.abs(x))
        return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    return _record("sigmoid", fwd, lambda g, out, x: (g * out * (1.0 - out),), a)


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = as_tensor(a).shape

    def bwd(g, out, x):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record("sum", lambda x: np.sum(x, axis=axis, keepdims=keepdims), bwd, a)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(a)
    count = t.value.size if axis is None else np.prod([t.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(t, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError("matmul needs at least 1-d operands")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if a.ndim == 1 and b.ndim == 1:
        return sum(a * b)
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + b.shape[-1:])
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])

    def bwd(g, out, x, y):
        return g @ np.swapaxes(y, -1, -2), np.swapaxes(x, -1, -2) @ g

    return _record("matmul", np.matmul, bwd, a, b)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    return _record(
        "swapaxes",
        lambda x: np.swapaxes(x, ax1, ax2),
        lambda g, out, x: (np.swapaxes(g, ax1, ax2),),
        a,
    )


def reshape(a, shape) -> Tensor:
    src = as_tensor(a).shape
    return _record("reshape", lambda x: np.reshape(x, shape), lambda g, out, x: (g.reshape(src),), a)


def broadcast_to(a, shape) -> Tensor:
    return _record(
        "broadcast_to",
        lambda x: np.broadcast_to(x, shape).copy(),
        lambda g, out, x: (_unbroadcast(g, x.shape),),
        a,
    )


def take(a, index) -> Tensor:
    """Basic or fancy indexing; gradients scatter-add back."""

    def bwd(g, out, x):
        full = np.zeros_like(x)
        np.add.at(full, index, g)
        return (full,)

    return _record("take", lambda x: np.array(x[index], dtype=np.float64), bwd, a)


def place(a, index, shape) -> Tensor:
    """Zeros of ``shape`` with ``a`` written at ``index`` (inverse of take)."""

    def fwd(x):
        out = np.zeros(shape)
        out[index] = x
        return out

    return _record("place", fwd, lambda g, out, x: (np.array(g[index]),), a)


def concat(items: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in items]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g, out, *xs):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", lambda *xs: np.concatenate(xs, axis=axis), bwd, *tensors)


def stack(items: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in items]

    def bwd(g, out, *xs):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _record("stack", lambda *xs: np.stack(xs, axis=axis), bwd, *tensors)


def split(a, sizes: Iterable[int], axis: int = 0) -> list[Tensor]:
    t = as_tensor(a)
    sizes = list(sizes)
    if np.sum(sizes) != t.shape[axis]:
        raise DimensionError(f"cannot split axis of length {t.shape[axis]} into {sizes}")
    out, start = [], 0
    for s in sizes:
        index = [slice(None)] * t.ndim
        index[axis] = slice(start, start + s)
        out.append(take(t, tuple(index)))
        start += s
    return out


# ---------------------------------------------------------------- attention helpers

def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax with max subtraction; ``mask`` (bool) excludes entries."""
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=axis).all():
            raise ContractError("softmax mask leaves an empty slice")

    def fwd(x):
        if mask is not None:
            x = np.where(mask, x, -np.inf)
        z = np.exp(x - np.max(x, axis=axis, keepdims=True))
        return z / np.sum(z, axis=axis, keepdims=True)

    def bwd(g, out, x):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _record("softmax", fwd, bwd, a)


def row_softmax(m) -> Tensor:
    t = as_tensor(m)
    if t.ndim < 1 or t.value.size == 0:
        raise DimensionError(f"row_softmax needs a nonempty matrix, got shape {t.shape}")
    return softmax(t, axis=-1)


def cosine(a, b, axis: int = -1) -> Tensor:
    """Cosine similarity along ``axis``; zero-norm inputs are an error."""
    a, b = as_tensor(a), as_tensor(b)
    na = sum(square(a), axis=axis)
    nb = sum(square(b), axis=axis)
    if np.any(na.value == 0) or np.any(nb.value == 0):
        raise NumericError("cosine of a zero-norm vector")
    return sum(a * b, axis=axis) / sqrt(na * nb)
