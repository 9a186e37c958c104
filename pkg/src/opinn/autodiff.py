"""A small reverse-mode differentiation core over dense float64 numpy arrays.

Operations record themselves on the active :class:`Tape` when at least one
input requires a gradient; outside a tape they just compute values. The tape
keeps nodes in creation order, so the backward sweep is a plain reverse walk
and gradient accumulation order is deterministic.

    with Tape() as tape:
        loss = mse(model(x), y)
    grads = tape.backward(loss, params)
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DatasetFormatError, InvalidParameterError, ShapeError

_ACTIVE: list["Tape | None"] = []


class Tensor:
    """A float64 array, optionally a node of a recorded computation."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_vjp")
    __array_ufunc__ = None  # make numpy defer binary operators to Tensor

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __getitem__(self, idx):
        return slice_(self, idx)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records operation nodes in order; :meth:`backward` sweeps them in reverse."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def backward(self, loss: Tensor, params=None):
        """Gradients of scalar ``loss``.

        ``params`` may be a mapping name -> Tensor (returns a dict of arrays),
        a sequence of Tensors (returns a list) or None (returns the raw
        id -> array map). Unused parameters get zero gradients.
        """
        if loss.data.size != 1:
            raise InvalidParameterError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        if params is None:
            return grads
        if isinstance(params, dict):
            return {k: grads.get(id(p), np.zeros_like(p.data)) for k, p in params.items()}
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


@contextmanager
def no_grad():
    """Suspend recording inside an enclosing tape."""
    _ACTIVE.append(None)
    try:
        yield
    finally:
        _ACTIVE.pop()


def record(out_data, parents, vjp) -> Tensor:
    """Register a custom operation; ``vjp(g)`` returns one gradient (or None) per parent."""
    return _record(out_data, tuple(as_tensor(p) for p in parents), vjp)


def _record(out_data, parents, vjp) -> Tensor:
    out = Tensor(out_data)
    tape = _ACTIVE[-1] if _ACTIVE else None
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(np.maximum(ad, 0.0), (a,), lambda g: (np.where(ad > 0, g, 0.0),))


def logistic(x: np.ndarray) -> np.ndarray:
    """Overflow-free ``1 / (1 + exp(-x))`` via ``tanh``."""
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = logistic(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


# -- reductions and shape ops -------------------------------------------------

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, ax1=-1, ax2=-2) -> Tensor:
    a = as_tensor(a)
    return _record(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def slice_(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _record(a.data[idx], (a,), vjp)


def concat(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _record(np.concatenate([t.data for t in ts], axis=ax), tuple(ts),
                   lambda g: tuple(np.split(g, sizes, axis=ax)))


def concat_rows(tensors) -> Tensor:
    return concat(tensors, axis=0)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product following ``np.matmul`` broadcasting (both operands >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, ad.shape),
            None if gb is None else _unbroadcast(gb, bd.shape),
        )

    return _record(ad @ bd, (a, b), vjp)


def sparse_apply(s: sp.spmatrix, x) -> Tensor:
    """``s @ x`` along the node axis (-2) of ``x`` for a constant sparse ``s``."""
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-2] != s.shape[1]:
        raise ShapeError(f"sparse_apply: operator {s.shape} vs tensor {x.shape}")
    st = s.T.tocsr()

    def apply(m, arr):
        moved = np.moveaxis(arr, -2, 0)
        flat = moved.reshape(moved.shape[0], -1)
        out = np.asarray(m @ flat).reshape((m.shape[0],) + moved.shape[1:])
        return np.moveaxis(out, 0, -2)

    return _record(apply(s, x.data), (x,), lambda g: (apply(st, g),))


def row_softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    y = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)
    return _record(y, (a,), lambda g: (_softmax_vjp(y, g),))


def _softmax_vjp(y, g):
    out = g - (g * y).sum(axis=-1, keepdims=True)
    out *= y
    return out


def pairwise_relu_softmax(s) -> Tensor:
    """``softmax_j(relu(s_i - s_j))`` for ``s`` of shape ``(..., N, 1)``, as one operation.

    Equals ``row_softmax(relu(s - swapaxes(s)))`` but avoids storing the
    intermediate ``(..., N, N)`` arrays.
    """
    s = as_tensor(s)
    if s.ndim < 2 or s.shape[-1] != 1:
        raise ShapeError(f"pairwise_relu_softmax expects (..., N, 1), got {s.shape}")
    sd = s.data
    st = np.swapaxes(sd, -1, -2)
    y = sd - st
    np.maximum(y, 0.0, out=y)
    # row max of relu(s_i - s_j) is relu(s_i - min_j s_j)
    y -= np.maximum(sd - sd.min(axis=-2, keepdims=True), 0.0)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def vjp(g):
        ga = _softmax_vjp(y, g)
        ga *= sd > st
        return ((ga.sum(axis=-1) - ga.sum(axis=-2))[..., None],)

    return _record(y, (s,), vjp)


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    return _record(np.mean(diff * diff), (pred, target),
                   lambda g: (g * 2.0 * diff / n, -g * 2.0 * diff / n))


# -- optimisation -------------------------------------------------------------

@dataclass
class AdamState:
    """Adam with L2 weight decay folded into the gradient."""

    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps_hat: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One in-place Adam update of ``params`` (name -> Tensor); returns ``params``."""
    b1, b2 = state.betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)
    return params


# -- checkpoints --------------------------------------------------------------

def save_parameters(params: dict, path, extra: dict | None = None) -> None:
    """JSON checkpoint ``{"params": {name: {"shape", "data"}}, ...extra}``; floats round-trip exactly."""
    doc = dict(extra or {})
    doc["params"] = {
        k: {"shape": list(p.shape), "data": p.data.ravel().tolist()} for k, p in params.items()
    }
    Path(path).write_text(json.dumps(doc))


def load_parameters(path, into: dict | None = None) -> tuple[dict, dict]:
    """Read a checkpoint. With ``into``, copy values into those tensors, rejecting shape mismatches.

    Returns ``(arrays, extra)``.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetFormatError(path, "file not found") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, exc.msg, line=exc.lineno) from None
    if "params" not in doc:
        raise DatasetFormatError(path, "missing 'params' entry")
    arrays = {}
    for k, entry in doc.pop("params").items():
        arr = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise DatasetFormatError(path, f"parameter {k!r}: {arr.size} values for shape {shape}")
        arrays[k] = arr.reshape(shape)
    if into is not None:
        missing = set(into) - set(arrays)
        if missing:
            raise ShapeError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, t in into.items():
            if arrays[k].shape != t.shape:
                raise ShapeError(f"parameter {k!r}: checkpoint shape {arrays[k].shape}, model {t.shape}")
        for k, t in into.items():
            t.data = arrays[k].copy()
    return arrays, doc


def gradient_check(fn, params: dict, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Max elementwise relative error between tape gradients and central differences.

    ``fn()`` must build and return a scalar Tensor from ``params`` (name -> Tensor).
    The relative error of each entry is ``|a - b| / max(|a|, |b|, floor)``.
    Central differences at ``h = 1e-5`` carry ~1e-11 rounding noise for O(1)
    losses, so entries below ``floor`` are effectively compared in absolute terms.
    """
    with Tape() as tape:
        loss = fn()
    ad = tape.backward(loss, params)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        fd = np.empty_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            with no_grad():
                up = fn().item()
            flat[k] = orig - h
            with no_grad():
                dn = fn().item()
            flat[k] = orig
            fd[k] = (up - dn) / (2 * h)
        a = ad[name].reshape(-1)
        rel = np.abs(a - fd) / np.maximum(np.maximum(np.abs(a), np.abs(fd)), floor)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst
