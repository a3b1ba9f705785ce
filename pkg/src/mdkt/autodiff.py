"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a node that remembers its inputs and a backward rule.
:func:`backward` orders the graph reachable from a scalar loss into a
:class:`Tape` and replays the rules in reverse, accumulating ``grad`` on every
leaf created with ``requires_grad=True``.

Outputs are checked for NaN/Inf after every operation; a non-finite value
raises :class:`~mdkt.errors.NumericError` immediately instead of propagating.
"""

import contextlib

import numpy as np

from .errors import DomainError, NumericError, ParameterError, ShapeError, UsageError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by '{op}'")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")
    __array_ufunc__ = None  # make numpy defer to the reflected Tensor operators

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, _op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if _op == "leaf":
            arr = arr.copy()
            if any(n == 0 for n in arr.shape):
                raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        _check_finite(arr, _op)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        backward(self)

    # -- operator sugar ------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    """Wrap an op result, recording the node only when some input needs a gradient."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, True, _parents=parents, _backward=backward_fn, _op=op)
    return Tensor(data, _op=op)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------

def _broadcast_check(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a, c):
    """Multiply by a plain scalar constant."""
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw, "div")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0  # subgradient at 0 is 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: non-positive argument")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    """Square root; the gradient at exactly 0 is taken as 0 rather than infinity."""
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt: negative argument")
    out = np.sqrt(a.data)
    safe = np.where(out > 0, out, 1.0)

    def bw(g):
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _make(out, (a,), bw, "sqrt")


def clamp_min(a, lo):
    a = as_tensor(a)
    keep = a.data > lo
    return _make(np.where(keep, a.data, lo), (a,), lambda g: (g * keep,), "clamp_min")


# -- reductions and shape ops -------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.sum(axis=axis, keepdims=keepdims) / n

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(out, (a,), bw, "mean")


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a):
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def index(a, key):
    """Indexing with basic or integer-array keys; the gradient scatters back with ``np.add.at``."""
    a = as_tensor(a)
    try:
        out = a.data[key]
    except IndexError as exc:
        raise ShapeError(f"index: {exc}") from None

    def bw(g):
        z = np.zeros_like(a.data)
        np.add.at(z, key, g)
        return (z,)

    return _make(np.array(out, dtype=np.float64), (a,), bw, "index")


def take_rows(a, rows):
    """Row-select: ``a[rows]`` for a 2-D tensor and an integer index list."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("take_rows expects a 2-D tensor")
    return index(a, np.asarray(rows, dtype=np.intp))


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concatenate: empty input")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concatenate: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), bw, "concatenate")


def concat_rows(tensors):
    return concatenate(tensors, axis=0)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ ({a.shape} @ {b.shape})")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# -- fused numerics -------------------------------------------------------

def _check_temperature(temperature):
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")


def softmax_rows(logits, temperature=1.0):
    """Row-wise softmax of ``logits / temperature`` with row-max subtraction."""
    _check_temperature(temperature)
    x = as_tensor(logits)
    if x.ndim != 2:
        raise ShapeError("softmax_rows expects a 2-D tensor")
    z = x.data / temperature
    e = np.exp(z - z.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        # y_i * sum_j y_j (g_i - g_j): same value as y_i * (g_i - <g, y>) but without the
        # cancellation that zeroes the gradient of a saturated entry (y_i rounding to 1).
        spread = ((g[:, :, None] - g[:, None, :]) * y[:, None, :]).sum(axis=2)
        return (y * spread / temperature,)

    return _make(y, (x,), bw, "softmax_rows")


def log_softmax_rows(logits, temperature=1.0):
    _check_temperature(temperature)
    x = as_tensor(logits)
    if x.ndim != 2:
        raise ShapeError("log_softmax_rows expects a 2-D tensor")
    z = x.data / temperature
    z = z - z.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = np.exp(out)

    def bw(g):
        return ((g - y * g.sum(axis=1, keepdims=True)) / temperature,)

    return _make(out, (x,), bw, "log_softmax_rows")


KL_CLAMP = 1e-12


def kl_divergence(p, q):
    """Sum over rows of ``KL(p_row || q_row)`` for row-stochastic ``p`` and ``q``.

    Uses ``0 * ln 0 = 0`` and clamps ``q`` below at ``1e-12`` before the log.
    Where ``p`` is exactly zero its gradient is taken as zero.
    """
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape or p.ndim != 2:
        raise ShapeError(f"kl_divergence expects equal 2-D shapes, got {p.shape} and {q.shape}")
    for name, t in (("p", p), ("q", q)):
        if np.any(t.data < 0):
            raise DomainError(f"kl_divergence: negative entry in {name}")
        if np.any(np.abs(t.data.sum(axis=1) - 1.0) > 1e-9):
            raise DomainError(f"kl_divergence: rows of {name} do not sum to 1")
    pd = p.data
    qc = np.maximum(q.data, KL_CLAMP)
    pos = pd > 0
    log_p = np.log(np.where(pos, pd, 1.0))
    log_q = np.log(qc)
    out = np.where(pos, pd * (log_p - log_q), 0.0).sum()

    def bw(g):
        gp = np.where(pos, log_p - log_q + 1.0, 0.0) * g
        gq = np.where(q.data > KL_CLAMP, -pd / qc, 0.0) * g
        return gp, gq

    return _make(out, (p, q), bw, "kl_divergence")


def pairwise_sq_euclidean(x):
    """Matrix of squared distances between the rows of ``x``.

    Uses the expansion ``|xi|^2 + |xj|^2 - 2<xi, xj>``, symmetrised, clamped at 0,
    and with an exactly-zero diagonal.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("pairwise_sq_euclidean expects a 2-D tensor")
    b = x.shape[0]
    if b < 2:
        raise ShapeError("pairwise_sq_euclidean needs at least two rows")
    sq = tsum(x * x, axis=1)
    gram = matmul(x, transpose(x))
    expanded = reshape(sq, (b, 1)) + reshape(sq, (1, b)) - scale(gram, 2.0)
    sym = scale(expanded + transpose(expanded), 0.5)
    off_diag = 1.0 - np.eye(b)
    return clamp_min(sym, 0.0) * off_diag


# -- backward -----------------------------------------------------------------

class Tape:
    """Operation records reachable from an output, in execution (topological) order."""

    def __init__(self, records=None):
        self.records = list(records or [])

    @classmethod
    def from_output(cls, output):
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.records)

    def clear(self):
        self.records.clear()

    def replay(self, output):
        grads = {id(output): np.ones_like(output.data)}
        for node in reversed(self.records):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                _check_finite(pg, f"backward of {node._op}")
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def backward(loss):
    """Accumulate ``d loss / d leaf`` into ``.grad`` of every reachable leaf."""
    if not isinstance(loss, Tensor) or loss.size != 1 or loss.ndim > 1:
        raise UsageError("backward expects a scalar tensor")
    if not loss.requires_grad:
        return
    tape = Tape.from_output(loss)
    tape.replay(loss)
    tape.clear()
