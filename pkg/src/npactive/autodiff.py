"""Reverse-mode automatic differentiation on float64 numpy arrays.

Define-by-run: while a Tape is open as a context manager, every operation
involving a gradient-carrying tensor appends a node (output tensor, parent
references, vjp closure) to the tape. Creation order is topological by
construction, so ``tape.backward(loss)`` is a single reverse sweep that
visits each node exactly once.

Shapes are explicit: elementwise ops require identical shapes (python
scalars are the one exception and never broadcast an array axis), matmul is
strictly 2-D, and the only array broadcast is ``add_bias``. Every forward
result is checked for NaN/inf and raises NumericalError naming the op.
"""
from __future__ import annotations

import json

import numpy as np
from scipy.special import expit

from .errors import IntegrityError, NumericalError, ValidationError

PARAMS_FORMAT_VERSION = 1

_ACTIVE_TAPE = None


class Tape:
    """Records one forward pass; consumed by a single backward() call."""

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ValidationError("a tape is already recording; tapes do not nest")
        if self._consumed:
            raise ValidationError("tape was already consumed by backward()")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into .grad of every reachable tensor.

        loss must be a scalar tensor recorded on this tape. Afterwards the
        tape is cleared and cannot be reused; parameter .grad slots keep
        their accumulated values until zero_grad().
        """
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is self:
            raise ValidationError("backward() called while the tape is still recording")
        if self._consumed:
            raise ValidationError("backward() called twice on the same tape")
        if not isinstance(loss, Tensor):
            raise ValidationError("backward() expects a Tensor loss")
        if loss.data.shape != ():
            raise ValidationError(
                f"backward() needs a scalar loss, got shape {loss.data.shape}"
            )
        if loss._tape is not self:
            raise ValidationError("loss was not recorded on this tape")
        loss.grad = np.ones((), dtype=np.float64)
        for node in reversed(self._nodes):
            if node.grad is None or node._vjp is None:
                continue
            node._vjp(node.grad)
        for node in self._nodes:
            node._vjp = None
            node._parents = ()
            node._tape = None
        self._nodes.clear()
        self._consumed = True


class Tensor:
    """A float64 array plus an optional gradient slot.

    Leaf tensors with requires_grad=True act as trainable parameters;
    everything else is either a constant or an intermediate node.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_tape")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._vjp = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None):
        return sum_(self, axis=axis)

    def mean(self, axis=None):
        return mean_(self, axis=axis)


def parameter(data, name):
    """A named leaf tensor that optimizers and checkpoints track."""
    if not name:
        raise ValidationError("parameters must be named")
    return Tensor(data, requires_grad=True, name=name)


def constant(data):
    return Tensor(data, requires_grad=False)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(np.float64(x))
    raise ValidationError(f"cannot use {type(x).__name__} as a tensor operand")


def _finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in output of op '{op}'")
    return arr


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(out, parents, vjp):
    tape = _ACTIVE_TAPE
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._tape = tape
        tape._nodes.append(out)
    return out


def _reduce_to(g, shape):
    # reverse a scalar () operand's participation in an elementwise op
    if g.shape == shape:
        return g
    return np.sum(g)


def _elementwise_shapes(a, b, op):
    if a.data.shape == b.data.shape:
        return
    if a.data.shape == () or b.data.shape == ():
        return
    raise ValidationError(
        f"{op} shape mismatch: {a.data.shape} vs {b.data.shape} (no implicit broadcasting)"
    )


# -- binary elementwise ------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b, "add")
    out = Tensor(_finite(a.data + b.data, "add"))

    def vjp(g):
        if a.requires_grad:
            _accum(a, _reduce_to(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _reduce_to(g, b.data.shape))

    return _record(out, (a, b), vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b, "sub")
    out = Tensor(_finite(a.data - b.data, "sub"))

    def vjp(g):
        if a.requires_grad:
            _accum(a, _reduce_to(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _reduce_to(-g, b.data.shape))

    return _record(out, (a, b), vjp)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b, "mul")
    out = Tensor(_finite(a.data * b.data, "mul"))

    def vjp(g):
        if a.requires_grad:
            _accum(a, _reduce_to(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _reduce_to(g * a.data, b.data.shape))

    return _record(out, (a, b), vjp)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b, "div")
    out = Tensor(_finite(a.data / b.data, "div"))

    def vjp(g):
        if a.requires_grad:
            _accum(a, _reduce_to(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(out, (a, b), vjp)


def neg(a):
    a = _as_tensor(a)
    out = Tensor(-a.data)

    def vjp(g):
        if a.requires_grad:
            _accum(a, -g)

    return _record(out, (a,), vjp)


# -- matmul and bias ---------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValidationError(
            f"matmul needs 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValidationError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out = Tensor(_finite(a.data @ b.data, "matmul"))

    def vjp(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _record(out, (a, b), vjp)


def add_bias(x, b):
    """x + b with b broadcast over the leading axis; the only array broadcast."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ValidationError(
            f"add_bias expects (n,f) + (f,), got {x.data.shape} + {b.data.shape}"
        )
    out = Tensor(_finite(x.data + b.data[None, :], "add_bias"))

    def vjp(g):
        if x.requires_grad:
            _accum(x, g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0))

    return _record(out, (x, b), vjp)


def mul_bias(x, b):
    """x * b with b broadcast over the leading axis (row-vector scale)."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ValidationError(
            f"mul_bias expects (n,f) * (f,), got {x.data.shape} * {b.data.shape}"
        )
    out = Tensor(_finite(x.data * b.data[None, :], "mul_bias"))

    def vjp(g):
        if x.requires_grad:
            _accum(x, g * b.data[None, :])
        if b.requires_grad:
            _accum(b, (g * x.data).sum(axis=0))

    return _record(out, (x, b), vjp)


# -- unary -------------------------------------------------------------


def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)

    def vjp(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - y * y))

    return _record(out, (a,), vjp)


def sigmoid(a):
    a = _as_tensor(a)
    y = expit(a.data)
    out = Tensor(y)

    def vjp(g):
        if a.requires_grad:
            _accum(a, g * y * (1.0 - y))

    return _record(out, (a,), vjp)


def relu(a):
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def vjp(g):
        if a.requires_grad:
            _accum(a, g * (a.data > 0.0))

    return _record(out, (a,), vjp)


def exp(a):
    a = _as_tensor(a)
    y = _finite(np.exp(a.data), "exp")
    out = Tensor(y)

    def vjp(g):
        if a.requires_grad:
            _accum(a, g * y)

    return _record(out, (a,), vjp)


def log(a):
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)
    out = Tensor(_finite(y, "log"))

    def vjp(g):
        if a.requires_grad:
            _accum(a, g / a.data)

    return _record(out, (a,), vjp)


def softplus(a):
    """log(1 + exp(x)) computed as max(x, 0) + log1p(exp(-|x|))."""
    a = _as_tensor(a)
    y = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    out = Tensor(y)

    def vjp(g):
        if a.requires_grad:
            _accum(a, g * expit(a.data))

    return _record(out, (a,), vjp)


# -- reductions --------------------------------------------------------


def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def sum_(a, axis=None):
    a = _as_tensor(a)
    out = Tensor(_finite(np.sum(a.data, axis=axis), "sum"))

    def vjp(g):
        if a.requires_grad:
            _accum(a, _expand_reduced(g, a.data.shape, axis))

    return _record(out, (a,), vjp)


def mean_(a, axis=None):
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    if count == 0:
        raise ValidationError("mean over an empty axis")
    out = Tensor(_finite(np.mean(a.data, axis=axis), "mean"))

    def vjp(g):
        if a.requires_grad:
            _accum(a, _expand_reduced(g, a.data.shape, axis) / count)

    return _record(out, (a,), vjp)


def mean_rows_canonical(a):
    """Mean over axis 0 with rows pre-sorted lexicographically.

    The forward sum runs in a canonical row order, so the result is
    bit-identical under any permutation of the rows. The gradient of a row
    mean is uniform, so the sort never appears in the backward pass.
    """
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValidationError(f"mean_rows_canonical expects a 2-D input, got {a.data.shape}")
    if a.data.shape[0] == 0:
        raise ValidationError("mean over zero rows")
    order = np.lexsort(a.data.T[::-1])
    out = Tensor(_finite(a.data[order].mean(axis=0), "mean_rows_canonical"))
    n = a.data.shape[0]

    def vjp(g):
        if a.requires_grad:
            _accum(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _record(out, (a,), vjp)


# -- structural --------------------------------------------------------


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValidationError("concat of an empty list")
    ndim = tensors[0].data.ndim
    for t in tensors:
        if t.data.ndim != ndim:
            raise ValidationError("concat operands must share rank")
    out = Tensor(_finite(np.concatenate([t.data for t in tensors], axis=axis), "concat"))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _record(out, tuple(tensors), vjp)


def slice_(a, key):
    """Basic (non-fancy) indexing: ints, slices, tuples thereof."""
    a = _as_tensor(a)
    out = Tensor(np.array(a.data[key]))

    def vjp(g):
        if a.requires_grad:
            scatter = np.zeros_like(a.data)
            scatter[key] += g
            _accum(a, scatter)

    return _record(out, (a,), vjp)


def reshape(a, shape):
    """C-order reshape; total size must be unchanged."""
    a = _as_tensor(a)
    try:
        y = a.data.reshape(shape).copy()
    except ValueError as exc:
        raise ValidationError(
            f"cannot reshape {a.data.shape} to {shape}: {exc}"
        ) from exc
    out = Tensor(y)

    def vjp(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return _record(out, (a,), vjp)


def node_mix(x, m):
    """Mix the node axis of stacked per-node features by a constant matrix.

    x has shape (batch*nodes, f) with node index varying fastest; m is a
    constant (nodes, nodes) numpy array. Row b*D+i of the result is
    sum_j m[i, j] * x[b*D+j]. Gradients flow through x only.
    """
    x = _as_tensor(x)
    m = np.asarray(m, dtype=np.float64)
    if x.data.ndim != 2 or m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(
            f"node_mix expects (n,f) input and square matrix, got {x.data.shape}, {m.shape}"
        )
    d = m.shape[0]
    if x.data.shape[0] % d != 0:
        raise ValidationError(
            f"node_mix row count {x.data.shape[0]} not divisible by node count {d}"
        )
    b = x.data.shape[0] // d
    f = x.data.shape[1]
    y = np.einsum("ij,bjf->bif", m, x.data.reshape(b, d, f)).reshape(b * d, f)
    out = Tensor(_finite(y, "node_mix"))

    def vjp(g):
        if x.requires_grad:
            gx = np.einsum("ji,bjf->bif", m, g.reshape(b, d, f)).reshape(b * d, f)
            _accum(x, gx)

    return _record(out, (x,), vjp)


# -- optimizer ---------------------------------------------------------


class Adam:
    """Adam with bias correction. Parameters with grad=None are skipped."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names) or None in names:
            raise ValidationError("optimizer parameters must have unique names")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {p.name: np.zeros_like(p.data) for p in self.params}
        self._v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[p.name]
            v = self._v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {
            "t": self.t,
            "m": {k: v.tolist() for k, v in self._m.items()},
            "v": {k: v.tolist() for k, v in self._v.items()},
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for k in self._m:
            self._m[k] = np.array(state["m"][k], dtype=np.float64).reshape(self._m[k].shape)
            self._v[k] = np.array(state["v"][k], dtype=np.float64).reshape(self._v[k].shape)


# -- parameter serialization -------------------------------------------


def params_to_payload(params):
    """params: dict name -> Tensor. Returns a JSON-ready versioned map."""
    out = {}
    for name, p in sorted(params.items()):
        out[name] = {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
    return {"version": PARAMS_FORMAT_VERSION, "params": out}


def payload_to_arrays(payload):
    """Inverse of params_to_payload; returns dict name -> float64 ndarray."""
    if not isinstance(payload, dict) or "version" not in payload:
        raise IntegrityError("parameter map is missing a version field")
    if payload["version"] != PARAMS_FORMAT_VERSION:
        raise IntegrityError(
            f"parameter map version {payload['version']} is not supported "
            f"(expected {PARAMS_FORMAT_VERSION})"
        )
    arrays = {}
    for name, entry in payload["params"].items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        arrays[name] = arr
    return arrays


def save_params(params, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_payload(params), fh)


def load_params(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"parameter file {path} is not valid JSON: {exc}") from exc
    return payload_to_arrays(payload)
