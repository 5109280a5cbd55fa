"""Small reverse-mode autodiff over numpy arrays.

Every op returns a :class:`Tensor` holding the forward value, references to
its inputs and a closure that pushes the output gradient back to them.
``Tensor.backward`` orders the recorded graph topologically and runs each
closure exactly once, so shared subexpressions accumulate gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class TargetOutOfRange(IndexError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype).reshape(self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)
    __getitem__ = lambda self, idx: index(self, idx)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / other)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _topological_order(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        a._accumulate(g * c)

    return _make(a.data * c, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - y * y))

    return _make(y, (a,), backward)


def log1p_abs(a: Tensor) -> Tensor:
    """log(1 + |x|); a sign-preserving-slope alternative to tanh for the bias regularizer."""
    x = a.data

    def backward(g):
        a._accumulate(g * np.sign(x) / (1.0 + np.abs(x)))

    return _make(np.log1p(np.abs(x)), (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = a.data
    u = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))

    return _make(y, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Swap the last two axes, or permute by ``axes``."""
    if axes is None:
        if a.ndim < 2:
            raise ShapeMismatch(f"transpose needs rank >= 2, got {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {tuple(shape)}") from exc

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(out, (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: incompatible shapes {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(out, ts, backward)


def index(a: Tensor, idx) -> Tensor:
    """``a[idx]`` for basic or integer-array indexing; repeated indices accumulate."""
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(np.array(out, copy=True), (a,), backward)


def take_rows(a: Tensor, rows: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; ``rows`` may have any shape."""
    rows = np.asarray(rows, dtype=np.intp)
    out = a.data[rows]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, rows.reshape(-1), g.reshape(-1, *a.shape[1:]))
        a._accumulate(full)

    return _make(out, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# normalisation and losses
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax. ``-inf`` entries receive zero weight."""
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeMismatch(f"softmax_rows expects a 2-D tensor, got {x.shape}")
    return softmax(x, axis=-1)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = np.max(x.data, axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    y = x.data - lse

    def backward(g):
        p = np.exp(y)
        x._accumulate(g - p * g.sum(axis=axis, keepdims=True))

    return _make(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            gx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(gx)

    return _make(out, (x, gain, bias), backward)


def cross_entropy(logits: Tensor, target) -> Tensor:
    """-log softmax(logits)[target].

    1-D logits take an int target. 2-D logits ``(N, C)`` take N targets and
    return the mean; ``-inf`` logits mark absent choices.
    """
    logits = as_tensor(logits)
    if logits.ndim == 1:
        t = int(target)
        if not 0 <= t < logits.shape[0]:
            raise TargetOutOfRange(f"target {t} outside {logits.shape[0]} classes")
        return scale(index(log_softmax(logits), t), -1.0)
    if logits.ndim != 2:
        raise ShapeMismatch(f"cross_entropy expects 1-D or 2-D logits, got {logits.shape}")
    targets = np.asarray(target, dtype=np.intp)
    n, c = logits.shape
    if targets.shape != (n,):
        raise ShapeMismatch(f"expected {n} targets, got shape {targets.shape}")
    if np.any(targets < 0) or np.any(targets >= c) or np.any(np.isneginf(logits.data[np.arange(n), targets])):
        raise TargetOutOfRange(f"targets {targets.tolist()} out of range for {c} classes")
    picked = index(log_softmax(logits), (np.arange(n), targets))
    return scale(tsum(picked), -1.0 / n)


# ---------------------------------------------------------------------------
# parameters and modules
# ---------------------------------------------------------------------------

def init_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


class Module:
    """Parameter registry found by walking attributes (Parameters, Modules,
    and lists/dicts of Modules)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            yield from _walk(f"{prefix}{key}", val)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise ShapeMismatch(f"{k}: checkpoint shape {state[k].shape} != model shape {p.shape}")
            p.data = np.array(state[k], dtype=p.data.dtype, copy=True)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _walk(name: str, val) -> Iterator[tuple[str, Parameter]]:
    if isinstance(val, Parameter):
        yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(prefix=name + ".")
    elif isinstance(val, (list, tuple)):
        for i, v in enumerate(val):
            yield from _walk(f"{name}.{i}", v)
    elif isinstance(val, dict):
        for k in sorted(val):
            yield from _walk(f"{name}.{k}", val[k])


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    tol: float = 1e-4,
    step: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences.

    The relative error per entry is ``|a - n| / (max(|a|, |n|) + floor)``;
    ``floor`` keeps exact zeros from dividing by zero. ``max_entries`` samples
    that many entries per parameter instead of checking all of them.
    """
    named = dict(params) if isinstance(params, dict) else {p.name or f"p{i}": p for i, p in enumerate(params)}
    for p in named.values():
        p.grad = None
    out = f()
    if out.data.size != 1:
        raise ShapeMismatch("grad_check needs a scalar-valued function")
    if out.requires_grad:
        out.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in named.items()}

    report = GradCheckReport(0.0, tol)
    for k, p in named.items():
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = (rng or np.random.default_rng(0)).choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        a_flat = analytic[k].reshape(-1)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            err = abs(a_flat[i] - num) / (max(abs(a_flat[i]), abs(num)) + floor)
            worst = max(worst, err)
            report.checked += 1
        report.per_param[k] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------

def save_parameters(path, params: dict[str, np.ndarray], metadata: dict | None = None):
    """Write an ``.npz`` archive: one float64 array per parameter name plus a
    ``__meta__`` entry holding JSON metadata. Values round-trip bit-exactly."""
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    if "__meta__" in arrays:
        raise KeyError("'__meta__' is a reserved name")
    arrays["__meta__"] = np.array(json.dumps(metadata or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_parameters(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"])) if "__meta__" in z.files else {}
        params = {k: z[k] for k in z.files if k != "__meta__"}
    return params, meta


def iter_params(params: Iterable[Parameter]) -> Iterator[Parameter]:
    seen = set()
    for p in params:
        if id(p) not in seen:
            seen.add(id(p))
            yield p
