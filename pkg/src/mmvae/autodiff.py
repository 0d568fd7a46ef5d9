"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation applied to its :class:`Node` values.
Nodes are appended in creation order, so the node list is already a
topological order and :meth:`Tape.backward` simply walks it in reverse.

Operations accept nodes, numpy arrays or Python scalars; raw arrays are lifted
to constant nodes on the tape of the first node operand.  When no operand is a
node the operation is evaluated eagerly and a plain array is returned.

Example::

    tape = Tape()
    w = tape.watch(weights)              # weights is a Parameter
    y = relu(matmul(x, transpose(w)))
    loss = sum_all(square(y - target))
    grads = tape.backward(loss)          # {weights: dloss/dweights}
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, ShapeError

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
DTYPE = np.float64


class Parameter:
    """A trainable array. Identity is the key used in gradient maps."""

    __slots__ = ("value", "name")

    def __init__(self, value, name=""):
        self.value = np.array(value, dtype=DTYPE)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Node:
    __slots__ = ("tape", "index", "value", "parents", "vjp", "param", "needs_grad")

    def __init__(self, tape, index, value, parents=(), vjp=None, param=None, needs_grad=False):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.param = param
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.value.shape})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of a single forward pass.

    Build a fresh tape for each forward pass; parameters are attached with
    :meth:`watch` and receive gradients from :meth:`backward`.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.adjoints: list[np.ndarray | None] = []
        self._watched: dict[int, Node] = {}

    def __len__(self):
        return len(self.nodes)

    def _record(self, value, parents=(), vjp=None, param=None):
        needs = param is not None or any(p.needs_grad for p in parents)
        node = Node(self, len(self.nodes), value, parents, vjp if needs else None, param, needs)
        self.nodes.append(node)
        return node

    def constant(self, value):
        return self._record(np.asarray(value, dtype=DTYPE))

    def watch(self, param: Parameter):
        """Leaf node bound to ``param``; repeated calls return the same node."""
        key = id(param)
        node = self._watched.get(key)
        if node is None:
            node = self._record(param.value, param=param)
            self._watched[key] = node
        return node

    def adjoint(self, node):
        """Gradient of the last backward loss w.r.t. ``node`` (zeros if unused)."""
        g = self.adjoints[node.index] if node.index < len(self.adjoints) else None
        return np.zeros_like(node.value) if g is None else g

    def backward(self, loss, params=None):
        """Propagate adjoints from scalar ``loss``.

        Returns a map from every watched parameter (and any extra ``params``)
        to its gradient.  Parameters not reached by the loss get exact zeros.
        """
        if loss.tape is not self:
            raise ContractError("loss node belongs to a different tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        adj: list[np.ndarray | None] = [None] * len(self.nodes)
        adj[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = adj[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for parent, gp in zip(node.parents, node.vjp(g)):
                if gp is None or not parent.needs_grad:
                    continue
                j = parent.index
                adj[j] = gp if adj[j] is None else adj[j] + gp
        self.adjoints = adj
        grads = {}
        for node in self._watched.values():
            g = adj[node.index]
            grads[node.param] = np.zeros_like(node.value) if g is None else g
        for p in params or ():
            if p not in grads:
                grads[p] = np.zeros_like(p.value)
        return grads


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=DTYPE)


def _lift(tape, x):
    return x if isinstance(x, Node) else tape.constant(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _emit(value, operands, vjp):
    tape = _tape_of(*operands)
    if tape is None:
        return value
    parents = tuple(_lift(tape, x) for x in operands)
    return tape._record(value, parents, vjp)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def linear(x, w, b):
    """Affine map ``x @ w.T + b`` for weights shaped (out, in)."""
    xv, wv, bv = _val(x), _val(w), _val(b)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[1] or bv.shape != (wv.shape[0],):
        raise ShapeError(f"linear shape mismatch: x {xv.shape}, w {wv.shape}, b {bv.shape}")
    x_grad = isinstance(x, Node) and x.needs_grad

    def vjp(g):
        return (g @ wv if x_grad else None, g.T @ xv, g.sum(axis=0))

    return _emit(xv @ wv.T + bv, (x, w, b), vjp)


def transpose(a):
    av = _val(a)
    return _emit(av.T, (a,), lambda g: (g.T,))


# -- elementwise arithmetic -------------------------------------------------

def _check_broadcast(av, bv, op):
    try:
        return np.broadcast_shapes(av.shape, bv.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {av.shape} with {bv.shape}") from None


def add(a, b):
    av, bv = _val(a), _val(b)
    _check_broadcast(av, bv, "add")
    return _emit(av + bv, (a, b),
                 lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = _val(a), _val(b)
    _check_broadcast(av, bv, "sub")
    return _emit(av - bv, (a, b),
                 lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = _val(a), _val(b)
    _check_broadcast(av, bv, "mul")
    return _emit(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = _val(a), _val(b)
    _check_broadcast(av, bv, "div")
    out = av / bv
    return _emit(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    return _emit(-_val(a), (a,), lambda g: (-g,))


def square(a):
    av = _val(a)
    return _emit(av * av, (a,), lambda g: (2.0 * g * av,))


def exp(a):
    out = np.exp(_val(a))
    return _emit(out, (a,), lambda g: (g * out,))


def log(a):
    av = _val(a)
    return _emit(np.log(av), (a,), lambda g: (g / av,))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    av = _val(a)
    inside = (av >= lo) & (av <= hi)
    return _emit(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


# -- activations ------------------------------------------------------------

def relu(a):
    out = np.maximum(_val(a), 0.0)
    return _emit(out, (a,), lambda g: (g * (out > 0),))


def tanh(a):
    out = np.tanh(_val(a))
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a):
    av = _val(a)
    out = np.logaddexp(0.0, av)
    sig = np.exp(av - out)
    return _emit(out, (a,), lambda g: (g * sig,))


def identity(a):
    return a


ACTIVATIONS = {"relu": relu, "tanh": tanh, "softplus": softplus, "linear": identity}


# -- reductions and reshaping -------------------------------------------------

def sum_all(a):
    av = _val(a)
    return _emit(np.asarray(av.sum()), (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def mean_all(a):
    av = _val(a)
    n = av.size
    return _emit(np.asarray(av.mean()), (a,), lambda g: (np.full(av.shape, g / n),))


def sum_rows(a):
    """Sum over axis 1, keeping a (batch, 1) column."""
    av = _val(a)
    return _emit(av.sum(axis=1, keepdims=True), (a,),
                 lambda g: (np.broadcast_to(g, av.shape).copy(),))


def columns(a, start, stop):
    av = _val(a)
    if not 0 <= start < stop <= av.shape[1]:
        raise ShapeError(f"column slice [{start}:{stop}] out of range for {av.shape}")

    def vjp(g):
        full = np.zeros_like(av)
        full[:, start:stop] = g
        return (full,)

    return _emit(av[:, start:stop], (a,), vjp)


def concat(parts):
    """Concatenate along axis 1."""
    vals = [_val(p) for p in parts]
    rows = {v.shape[0] for v in vals}
    if len(rows) != 1 or any(v.ndim != 2 for v in vals):
        raise ShapeError(f"concat needs 2-D operands with equal rows, got {[v.shape for v in vals]}")
    edges = np.cumsum([0] + [v.shape[1] for v in vals])

    def vjp(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(vals)))

    return _emit(np.concatenate(vals, axis=1), tuple(parts), vjp)


# -- VAE helpers ------------------------------------------------------------

def reparameterize(mean, log_variance, noise):
    """``mean + exp(0.5 * log_variance) * noise`` with the log-variance clamped.

    ``noise`` is treated as a constant, so gradients reach only the mean and
    log-variance.
    """
    if _val(mean).shape != _val(log_variance).shape or _val(mean).shape != np.shape(_val(noise)):
        raise ShapeError("reparameterize: mean, log_variance and noise shapes differ")
    lv = clip(log_variance, LOGVAR_MIN, LOGVAR_MAX)
    return add(mean, mul(exp(mul(lv, 0.5)), _val(noise)))


HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def gaussian_nll(target, mean, variance):
    """Per-entry negative log-likelihood of ``target`` under N(mean, variance)."""
    diff = sub(target, mean)
    return add(mul(log(variance), 0.5), add(div(square(diff), mul(variance, 2.0)), HALF_LOG_2PI))
