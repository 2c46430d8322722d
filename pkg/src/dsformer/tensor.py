"""Dense-tensor core with reverse-mode differentiation.

Every value is a float64 numpy array wrapped in a :class:`Tensor` node.
Operations build a tape; ``backward`` walks it in reverse topological
order and accumulates gradients into leaf tensors (parameters). All ops
are pure given their inputs plus an explicit rng, so the forward pass is
deterministic per seed and safe to run from multiple workers on disjoint
data.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, GraphError, NumericsError

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    return np.random.default_rng(seed)


class Tensor:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_version", "_parent_versions")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._grad_fn: Optional[Callable[[np.ndarray], None]] = None
        self._version = 0
        self._parent_versions: tuple = ()

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def mutate_(self, new_data: np.ndarray) -> None:
        """Replace values in place; invalidates graphs built on the old values."""
        self.data[...] = new_data
        self._version += 1

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        Gradients accumulate across calls until explicitly zeroed.
        Raises GraphError if any tensor on the tape was mutated after the
        forward pass, and NumericsError if a non-finite gradient appears.
        """
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        for node in topo:
            for p, v in zip(node._parents, node._parent_versions):
                if p._version != v:
                    raise GraphError("backward through a graph whose inputs were mutated after the forward pass")

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                if not np.all(np.isfinite(g)):
                    raise NumericsError("non-finite gradient reached a leaf tensor")
                node._accumulate(g)
            if node._grad_fn is not None:
                node._grad_fn(g, grads)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter:
    """A named leaf tensor with a persistent gradient slot."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.tensor = Tensor(np.array(data, dtype=np.float64), requires_grad=True)

    @property
    def value(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray:
        if self.tensor.grad is None:
            return np.zeros_like(self.tensor.data)
        return self.tensor.grad

    @property
    def shape(self) -> tuple:
        return self.tensor.data.shape

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _node(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._parent_versions = tuple(p._version for p in parents)
        out._grad_fn = grad_fn
    return out


def _send(grads: dict, parent: Tensor, g: np.ndarray) -> None:
    if not (parent.requires_grad or parent._parents):
        return
    key = id(parent)
    if key in grads:
        grads[key] += g
    else:
        grads[key] = np.array(g, dtype=np.float64, copy=True)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g, grads):
        _send(grads, a, _unbroadcast(g, a.shape))
        _send(grads, b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g, grads):
        _send(grads, a, _unbroadcast(g, a.shape))
        _send(grads, b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g, grads):
        _send(grads, a, _unbroadcast(g * b.data, a.shape))
        _send(grads, b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), grad_fn)


def scale(x: Tensor, c: float) -> Tensor:
    def grad_fn(g, grads):
        _send(grads, x, g * c)

    return _node(x.data * c, (x,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the trailing two axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes do not conform: {a.shape} @ {b.shape}")

    def grad_fn(g, grads):
        _send(grads, a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _send(grads, b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), grad_fn)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def grad_fn(g, grads):
        _send(grads, x, g.transpose(inverse))

    return _node(x.data.transpose(axes), (x,), grad_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = x.shape

    def grad_fn(g, grads):
        _send(grads, x, g.reshape(old))

    return _node(x.data.reshape(shape), (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    def grad_fn(g, grads):
        _send(grads, x, g * (x.data > 0))

    return _node(np.maximum(x.data, 0.0), (x,), grad_fn)


def abs_(x: Tensor) -> Tensor:
    def grad_fn(g, grads):
        _send(grads, x, g * np.sign(x.data))

    return _node(np.abs(x.data), (x,), grad_fn)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def grad_fn(g, grads):
        _send(grads, x, np.full(x.shape, float(g) / n))

    return _node(np.asarray(x.data.mean()), (x,), grad_fn)


def softmax_last(x: Tensor) -> Tensor:
    """Normalized exponential over the last axis, max-subtracted for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g, grads):
        # d/dx softmax: s * (g - sum(g*s))
        dot = (g * s).sum(axis=-1, keepdims=True)
        _send(grads, x, s * (g - dot))

    return _node(s, (x,), grad_fn)


def layer_norm(x: Tensor, g: Tensor, b: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then scale and shift."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if g.shape != (d,) or b.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias must have shape ({d},), got {g.shape} and {b.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = g.data * xhat + b.data

    def grad_fn(gout, grads):
        lead = tuple(range(gout.ndim - 1))
        _send(grads, g, (gout * xhat).sum(axis=lead))
        _send(grads, b, gout.sum(axis=lead))
        gy = gout * g.data
        term = gy - gy.mean(axis=-1, keepdims=True) - xhat * (gy * xhat).mean(axis=-1, keepdims=True)
        _send(grads, x, inv * term)

    return _node(out, (x, g, b), grad_fn)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map along the last axis, weights shared across all leading positions."""
    if w.ndim != 2:
        raise DimensionError(f"linear weight must be 2-d, got {w.shape}")
    din, dout = w.shape
    if x.shape[-1] != din:
        raise DimensionError(f"linear input has last axis {x.shape[-1]}, weight expects {din}")
    if b.shape != (dout,):
        raise DimensionError(f"linear bias must have shape ({dout},), got {b.shape}")
    out = x.data @ w.data + b.data

    def grad_fn(g, grads):
        g2 = g.reshape(-1, dout)
        x2 = x.data.reshape(-1, din)
        _send(grads, w, x2.T @ g2)
        _send(grads, b, g2.sum(axis=0))
        _send(grads, x, (g @ w.data.T).reshape(x.shape))

    return _node(out, (x, w, b), grad_fn)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[Rng]) -> Tensor:
    """Inverted dropout: zero with probability p and rescale survivors; identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode requires an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def grad_fn(g, grads):
        _send(grads, x, g * mask)

    return _node(x.data * mask, (x,), grad_fn)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def assert_all_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericsError(f"non-finite values in {what}")


def collect_parameters(obj) -> Iterable[Parameter]:
    """Yield Parameter leaves from nested dataclass-like containers."""
    if isinstance(obj, Parameter):
        yield obj
    elif isinstance(obj, (list, tuple)):
        for item in obj:
            yield from collect_parameters(item)
    elif hasattr(obj, "__dataclass_fields__"):
        for name in obj.__dataclass_fields__:
            yield from collect_parameters(getattr(obj, name))
