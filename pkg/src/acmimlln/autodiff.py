"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable primitive records its parents and a backward rule on the
output tensor. :func:`backward` orders the recorded graph into a :class:`Tape`
(reverse topological order) and replays it, accumulating gradients into leaf
tensors that were created with ``requires_grad=True``.

Broadcasting is deliberately narrow: binary elementwise ops accept equal
shapes, a 0-d scalar on either side, or a vector whose length matches the
last axis of the other operand ("vector over rows").
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataError, DimensionError

_DTYPE = np.float32
_local = threading.local()


def get_default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    """Set the global float precision: ``float32``, ``float64``, or ``longdouble`` for diagnostics."""
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64, np.longdouble):
        raise ConfigError(f"unsupported precision {dtype!r}; use float32 or float64")
    _DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=_DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> list[float]:
        """Values in row-major order."""
        return self.data.ravel().tolist()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0:
        return
    if b.ndim == 1 and a.ndim >= 1 and sa[-1] == sb[0]:
        return
    if a.ndim == 1 and b.ndim >= 1 and sb[-1] == sa[0]:
        return
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


# --------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant Python scalar."""
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    return _make(np.where(positive, a.data, 0).astype(a.data.dtype), (a,),
                 lambda g: (g * positive,), "relu")


def log(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log of ``max(a, floor)``; zero gradient where the floor is active."""
    x = a.data
    active = x > floor
    safe = np.where(active, x, floor)
    return _make(np.log(safe), (a,), lambda g: (np.where(active, g / safe, 0.0),), "log")


_ELEMENTWISE = {"add": add, "mul": mul, "tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}; known: {sorted(_ELEMENTWISE)}") from None
    return fn(*args)


# --------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a [..., k] @ b [k, n]``; leading axes of ``a`` are treated as rows."""
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


def _parse_einsum(subscripts: str) -> tuple[str, str, str]:
    try:
        inputs, out = subscripts.replace(" ", "").split("->")
        left, right = inputs.split(",")
    except ValueError:
        raise ContractError(f"einsum needs explicit 'ab,bc->ac' form, got {subscripts!r}") from None
    for sub_, other in ((left, right), (right, left)):
        if len(set(sub_)) != len(sub_):
            raise ContractError(f"einsum: repeated index within one operand in {subscripts!r}")
        orphan = set(sub_) - set(other) - set(out)
        if orphan:
            raise ContractError(f"einsum: indices {sorted(orphan)} summed within a single operand")
    return left, right, out


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand Einstein summation, e.g. ``"bn,bnd->bd"``."""
    left, right, out = _parse_einsum(subscripts)
    ad, bd = a.data, b.data
    try:
        y = np.einsum(subscripts, ad, bd)
    except ValueError as exc:
        raise DimensionError(f"einsum {subscripts!r}: shapes {a.shape} and {b.shape}: {exc}") from None

    def backward(g):
        return (np.einsum(f"{out},{right}->{left}", g, bd),
                np.einsum(f"{out},{left}->{right}", g, ad))

    return _make(y, (a, b), backward, "einsum")


def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    y = np.sum(a.data, axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.asarray(y, dtype=a.data.dtype), (a,), backward, "sum")


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted softmax along ``axis``.

    ``mask`` (boolean, broadcastable to ``a``) marks valid entries; invalid
    entries get probability exactly zero.
    """
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DimensionError(f"softmax: empty input of shape {a.shape}")
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, (a,), backward, "softmax")


# --------------------------------------------------------------------------
# structural primitives


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def take(a: Tensor, index) -> Tensor:
    """Numpy-style indexing with scatter-add backward."""
    shape, dtype = a.shape, a.data.dtype
    basic = _is_basic_index(index)

    def backward(g):
        z = np.zeros(shape, dtype=dtype)
        if basic:
            z[index] = g
        else:
            np.add.at(z, index, g)
        return (z,)

    return _make(a.data[index], (a,), backward, "take")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("stack: no tensors given")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {sorted(shapes)}")
    y = np.stack([t.data for t in tensors], axis=axis)
    ax = axis if axis >= 0 else y.ndim + axis

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _make(y, tensors, backward, "stack")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(y, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def select(condition: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``condition ? a : b`` with a constant boolean condition."""
    if a.shape != b.shape:
        raise DimensionError(f"select: branch shapes differ: {a.shape} vs {b.shape}")
    cond = np.asarray(condition, dtype=bool)
    zero = np.zeros((), dtype=a.data.dtype)

    def backward(g):
        return np.where(cond, g, zero), np.where(cond, zero, g)

    return _make(np.where(cond, a.data, b.data), (a, b), backward, "select")


def embedding(table: Tensor, ids, pad_index: int | None = None) -> Tensor:
    """Row lookup ``table[ids]``. The pad row never receives gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        bad = tuple(int(i) for i in np.argwhere((ids < 0) | (ids >= rows))[0])
        where = bad[0] if len(bad) == 1 else bad
        raise DataError(f"token index {int(ids[bad])} at position {where} "
                        f"outside vocabulary of size {rows}")
    shape, dtype = table.shape, table.data.dtype

    def backward(g):
        z = np.zeros(shape, dtype=dtype)
        np.add.at(z, ids, g)
        if pad_index is not None:
            z[pad_index] = 0
        return (z,)

    return _make(table.data[ids], (table,), backward, "embedding")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)``; identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / x.data.dtype.type(1.0 - p)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def detach(a: Tensor) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data, out.grad, out.requires_grad = a.data, None, False
    out._parents, out._backward, out.op = (), None, "detach"
    return out


# --------------------------------------------------------------------------
# gradient replay


@dataclass
class Tape:
    """Recorded nodes in forward (topological) order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack_.append((parent, False))
        return cls(order)

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Tape.from_output(loss).replay(loss, np.ones_like(loss.data))


# --------------------------------------------------------------------------
# parameters


class ParamRegistry:
    """Named parameters with a trainable flag, iterated in lexicographic order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        tensor.requires_grad = trainable
        tensor.grad = np.zeros_like(tensor.data) if trainable else None
        self._params[name] = tensor
        self._trainable[name] = trainable
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.items() if self._trainable[n]]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, names: Iterable[str], flag: bool) -> None:
        for name in names:
            t = self._params[name]
            self._trainable[name] = flag
            t.requires_grad = flag
            t.grad = np.zeros_like(t.data) if flag else None

    def zero_grad(self) -> None:
        for _, t in self.trainable():
            t.grad = np.zeros_like(t.data)

    def l2_penalty(self) -> Tensor:
        """Sum of squares over exactly the trainable parameters."""
        terms = [tsum(mul(t, t)) for _, t in self.trainable()]
        if not terms:
            return Tensor(0.0)
        total = terms[0]
        for term in terms[1:]:
            total = add(total, term)
        return total

    def num_values(self, trainable_only: bool = False) -> int:
        pool = self.trainable() if trainable_only else self.items()
        return sum(t.data.size for _, t in pool)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise DimensionError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in state.items():
            t = self._params[name]
            if tuple(value.shape) != t.shape:
                raise DimensionError(f"parameter {name}: stored shape {tuple(value.shape)} != {t.shape}")
            t.data = np.array(value, dtype=t.data.dtype)


# --------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    worst_index: dict[str, tuple[int, ...]]
    analytic: dict[str, np.ndarray] = field(default_factory=dict)
    numeric: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.max_error < tol

    def within(self, rtol: float, atol: float) -> bool:
        """Every element satisfies ``|a - n| <= rtol * max(|a|, |n|) + atol``."""
        for name, a in self.analytic.items():
            n = self.numeric[name]
            bound = rtol * np.maximum(np.abs(a), np.abs(n)) + atol
            if np.any(np.abs(a - n) > bound):
                return False
        return True


def relative_error(analytic, numeric) -> np.ndarray:
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / denom


def grad_check(f: Callable[[], Tensor], registry: ParamRegistry, eps: float = 1e-5,
               names: Iterable[str] | None = None) -> GradCheckReport:
    """Compare backward() against central differences for every trainable parameter.

    ``f`` must be deterministic and read the parameters from ``registry``.
    """
    registry.zero_grad()
    backward(f())
    selected = set(names) if names is not None else None
    errors, worst, analytic_all, numeric_all = {}, {}, {}, {}
    for name, t in registry.trainable():
        if selected is not None and name not in selected:
            continue
        analytic = t.grad.copy()
        numeric = np.zeros_like(analytic, dtype=np.float64)
        flat = t.data.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2 * eps)
        err = relative_error(analytic, numeric)
        analytic_all[name], numeric_all[name] = analytic.astype(np.float64), numeric
        errors[name] = float(err.max()) if err.size else 0.0
        worst[name] = tuple(int(i) for i in np.unravel_index(int(np.argmax(err)), err.shape)) if err.size else ()
    registry.zero_grad()
    return GradCheckReport(errors, worst, analytic_all, numeric_all)


def is_finite(t: Tensor) -> bool:
    return bool(np.all(np.isfinite(t.data)))


__all__ = [
    "Tensor", "Tape", "ParamRegistry", "GradCheckReport",
    "add", "sub", "mul", "scale", "tanh", "sigmoid", "relu", "log", "elementwise",
    "matmul", "einsum", "tsum", "softmax", "take", "reshape", "stack", "concat", "select",
    "embedding", "dropout", "detach", "backward", "grad_check", "relative_error",
    "no_grad", "default_dtype", "set_default_dtype", "get_default_dtype", "is_finite",
]
