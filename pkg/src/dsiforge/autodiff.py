"""Reverse-mode automatic differentiation over dense float64 tensors.

The graph is built define-by-run: every constructor computes its value
eagerly, so downstream modules can inspect values while wiring the graph.
``forward`` re-evaluates a built graph under fresh parameter bindings (used
by the finite-difference harness), ``backward`` accumulates gradients in
reverse topological order.

Supported shapes are scalars, vectors, and matrices. Elementwise ops accept
equal shapes or scalar-vs-tensor; there is no general broadcasting. Biases
are folded into matmuls by appending a ones column to the input.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import NumericError, ShapeError

_SEQ = itertools.count()

OP_KINDS = (
    "const", "param", "add", "sub", "mul", "div", "matmul", "concat",
    "lookup", "tanh", "sigmoid", "exp", "log", "maxs", "mins",
    "softmax", "rsum", "rmean", "emax", "emin",
)


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Node:
    """One vertex of the computation DAG.

    ``id`` increases monotonically with construction order, which is also a
    valid topological order because constructors only accept existing nodes.
    """

    __slots__ = ("id", "op", "inputs", "value", "grad", "name", "aux")

    def __init__(self, op: str, inputs: tuple, value: np.ndarray,
                 name: str | None = None, aux=None):
        self.id = next(_SEQ)
        self.op = op
        self.inputs = inputs
        self.value = value
        self.grad: np.ndarray | None = None
        self.name = name
        self.aux = aux

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}#{self.id}, shape={self.shape})"

    # Operator sugar; scalars lift to constants.
    def __add__(self, other):
        return add(self, lift(other))

    def __radd__(self, other):
        return add(lift(other), self)

    def __sub__(self, other):
        return sub(self, lift(other))

    def __rsub__(self, other):
        return sub(lift(other), self)

    def __mul__(self, other):
        return mul(self, lift(other))

    def __rmul__(self, other):
        return mul(lift(other), self)

    def __truediv__(self, other):
        return div(self, lift(other))

    def __rtruediv__(self, other):
        return div(lift(other), self)

    def __neg__(self):
        return mul(const(-1.0), self)


def lift(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def const(value) -> Node:
    return Node("const", (), _arr(value))


def param(name: str, value) -> Node:
    return Node("param", (), _arr(value), name=name)


def _check_elementwise(op: str, a: Node, b: Node):
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise ShapeError(
        f"{op}: incompatible shapes {a.shape} vs {b.shape} "
        f"(nodes #{a.id}, #{b.id})")


def _binary(op: str, a: Node, b: Node) -> Node:
    _check_elementwise(op, a, b)
    return Node(op, (a, b), _FORWARD[op]((a.value, b.value), None))


def add(a: Node, b: Node) -> Node:
    return _binary("add", a, b)


def sub(a: Node, b: Node) -> Node:
    return _binary("sub", a, b)


def mul(a: Node, b: Node) -> Node:
    return _binary("mul", a, b)


def div(a: Node, b: Node) -> Node:
    return _binary("div", a, b)


def emax(a: Node, b: Node) -> Node:
    return _binary("emax", a, b)


def emin(a: Node, b: Node) -> Node:
    return _binary("emin", a, b)


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: cannot multiply {a.shape} by {b.shape} "
            f"(nodes #{a.id}, #{b.id})")
    return Node("matmul", (a, b), _FORWARD["matmul"]((a.value, b.value), None))


def concat(nodes: list, axis: int = 0) -> Node:
    if not nodes:
        raise ShapeError("concat: empty input list")
    vals = [n.value for n in nodes]
    ndim = vals[0].ndim
    ax = axis % ndim if ndim else 0
    for v in vals[1:]:
        if v.ndim != ndim or any(
                v.shape[d] != vals[0].shape[d] for d in range(ndim) if d != ax):
            raise ShapeError(
                f"concat: mismatched shapes {[x.shape for x in vals]} on axis {axis}")
    return Node("concat", tuple(nodes), _FORWARD["concat"](vals, ax), aux=ax)


def lookup(table: Node, ids) -> Node:
    """Gather rows of a matrix node by constant integer ids."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.value.ndim != 2:
        raise ShapeError(f"lookup: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"lookup: id out of range for table with {table.shape[0]} rows")
    return Node("lookup", (table,), _FORWARD["lookup"]((table.value,), idx), aux=idx)


def _unary(op: str, a: Node) -> Node:
    return Node(op, (a,), _FORWARD[op]((a.value,), None))


def tanh(a: Node) -> Node:
    return _unary("tanh", a)


def sigmoid(a: Node) -> Node:
    return _unary("sigmoid", a)


def exp(a: Node) -> Node:
    return _unary("exp", a)


def log(a: Node) -> Node:
    return _unary("log", a)


def maxs(a: Node, scalar: float) -> Node:
    """Elementwise max(value, scalar)."""
    return Node("maxs", (a,), _FORWARD["maxs"]((a.value,), float(scalar)),
                aux=float(scalar))


def mins(a: Node, scalar: float) -> Node:
    """Elementwise min(value, scalar)."""
    return Node("mins", (a,), _FORWARD["mins"]((a.value,), float(scalar)),
                aux=float(scalar))


def softmax(a: Node) -> Node:
    """Row-wise softmax over the last axis (max-shifted for stability)."""
    if a.value.ndim not in (1, 2):
        raise ShapeError(f"softmax: expected 1-D or 2-D input, got {a.shape}")
    return Node("softmax", (a,), _FORWARD["softmax"]((a.value,), None))


def rsum(a: Node, axis: int | None = None) -> Node:
    return Node("rsum", (a,), _FORWARD["rsum"]((a.value,), axis), aux=axis)


def rmean(a: Node, axis: int | None = None) -> Node:
    return Node("rmean", (a,), _FORWARD["rmean"]((a.value,), axis), aux=axis)


# ---------------------------------------------------------------------------
# Kernels

def _k_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _k_log(x: np.ndarray) -> np.ndarray:
    if np.any(x <= 0.0):
        raise NumericError(
            "internal error: log evaluated at a non-positive argument "
            f"(min={x.min()!r}); upstream clamp was bypassed")
    return np.log(x)


_FORWARD = {
    "add": lambda v, aux: v[0] + v[1],
    "sub": lambda v, aux: v[0] - v[1],
    "mul": lambda v, aux: v[0] * v[1],
    "div": lambda v, aux: v[0] / v[1],
    "matmul": lambda v, aux: v[0] @ v[1],
    "concat": lambda v, aux: np.concatenate(v, axis=aux),
    "lookup": lambda v, aux: v[0][aux],
    "tanh": lambda v, aux: np.tanh(v[0]),
    "sigmoid": lambda v, aux: 1.0 / (1.0 + np.exp(-v[0])),
    "exp": lambda v, aux: np.exp(v[0]),
    "log": lambda v, aux: _k_log(v[0]),
    "maxs": lambda v, aux: np.maximum(v[0], aux),
    "mins": lambda v, aux: np.minimum(v[0], aux),
    "softmax": lambda v, aux: _k_softmax(v[0]),
    "rsum": lambda v, aux: np.asarray(v[0].sum(axis=aux)),
    "rmean": lambda v, aux: np.asarray(v[0].mean(axis=aux)),
}


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    # Only scalar-vs-tensor broadcasting exists, so collapse to the scalar.
    return np.asarray(g.sum()).reshape(shape)


def _b_add(n, g):
    a, b = n.inputs
    return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _b_sub(n, g):
    a, b = n.inputs
    return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _b_mul(n, g):
    a, b = n.inputs
    return (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape))


def _b_div(n, g):
    a, b = n.inputs
    return (_unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.shape))


def _b_matmul(n, g):
    a, b = n.inputs
    return (g @ b.value.T, a.value.T @ g)


def _b_concat(n, g):
    ax = n.aux
    sizes = [inp.value.shape[ax] for inp in n.inputs]
    offsets = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, offsets, axis=ax))


def _b_lookup(n, g):
    (table,) = n.inputs
    gt = np.zeros_like(table.value)
    np.add.at(gt, n.aux, g)
    return (gt,)


def _b_tanh(n, g):
    return (g * (1.0 - n.value * n.value),)


def _b_sigmoid(n, g):
    return (g * n.value * (1.0 - n.value),)


def _b_exp(n, g):
    return (g * n.value,)


def _b_log(n, g):
    return (g / n.inputs[0].value,)


def _b_maxs(n, g):
    # Subgradient 0 exactly at the kink (strict inequality keeps gradient).
    return (g * (n.inputs[0].value > n.aux),)


def _b_mins(n, g):
    return (g * (n.inputs[0].value < n.aux),)


def _b_softmax(n, g):
    y = n.value
    dot = (g * y).sum(axis=-1, keepdims=True)
    return (y * (g - dot),)


def _b_rsum(n, g):
    x = n.inputs[0].value
    if n.aux is None:
        return (np.full_like(x, float(g)),)
    return (np.broadcast_to(np.expand_dims(g, n.aux), x.shape).copy(),)


def _b_rmean(n, g):
    x = n.inputs[0].value
    if n.aux is None:
        return (np.full_like(x, float(g) / x.size),)
    scale = 1.0 / x.shape[n.aux]
    return (np.broadcast_to(np.expand_dims(g * scale, n.aux), x.shape).copy(),)


def _b_emax(n, g):
    a, b = n.inputs
    av, bv = np.broadcast_arrays(a.value, b.value)
    return (_unbroadcast(g * (av > bv), a.shape), _unbroadcast(g * (bv > av), b.shape))


def _b_emin(n, g):
    a, b = n.inputs
    av, bv = np.broadcast_arrays(a.value, b.value)
    return (_unbroadcast(g * (av < bv), a.shape), _unbroadcast(g * (bv < av), b.shape))


_BACKWARD = {
    "add": _b_add, "sub": _b_sub, "mul": _b_mul, "div": _b_div,
    "matmul": _b_matmul, "concat": _b_concat, "lookup": _b_lookup,
    "tanh": _b_tanh, "sigmoid": _b_sigmoid, "exp": _b_exp, "log": _b_log,
    "maxs": _b_maxs, "mins": _b_mins, "softmax": _b_softmax,
    "rsum": _b_rsum, "rmean": _b_rmean, "emax": _b_emax, "emin": _b_emin,
}

_FORWARD["emax"] = lambda v, aux: np.maximum(v[0], v[1])
_FORWARD["emin"] = lambda v, aux: np.minimum(v[0], v[1])


# ---------------------------------------------------------------------------
# Graph execution

def topo_order(root: Node) -> list:
    """All nodes reachable from root, in construction (= topological) order."""
    seen = set()
    out = []
    stack = [root]
    while stack:
        n = stack.pop()
        if n.id in seen:
            continue
        seen.add(n.id)
        out.append(n)
        stack.extend(n.inputs)
    out.sort(key=lambda n: n.id)
    return out


def forward(root: Node, bindings: dict | None = None) -> np.ndarray:
    """Re-evaluate the graph; parameters named in ``bindings`` take new values.

    Deterministic for fixed inputs. Raises ShapeError if a binding does not
    match the parameter's declared shape.
    """
    for n in topo_order(root):
        if n.op == "param":
            if bindings is not None and n.name in bindings:
                v = _arr(bindings[n.name])
                if v.shape != n.value.shape:
                    raise ShapeError(
                        f"forward: binding for '{n.name}' has shape {v.shape}, "
                        f"expected {n.value.shape} (node #{n.id})")
                n.value = v
        elif n.op != "const":
            n.value = _FORWARD[n.op]([i.value for i in n.inputs], n.aux)
    return root.value


def backward(root: Node) -> dict:
    """Accumulate gradients of the scalar root into every reachable node.

    Returns a map parameter-name -> gradient array (zeros for parameters the
    root does not depend on).
    """
    if root.value is None:
        raise NumericError("backward called before forward")
    nodes = topo_order(root)
    for n in nodes:
        n.grad = None
    root.grad = np.ones_like(root.value)
    for n in reversed(nodes):
        if n.grad is None or not n.inputs:
            continue
        for inp, g in zip(n.inputs, _BACKWARD[n.op](n, n.grad)):
            if g is None:
                continue
            if inp.grad is None:
                inp.grad = np.asarray(g, dtype=np.float64).copy()
            else:
                inp.grad = inp.grad + g
    out = {}
    for n in nodes:
        if n.op == "param":
            out[n.name] = n.grad if n.grad is not None else np.zeros_like(n.value)
    return out


def finite_diff_check(root: Node, bindings: dict, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The root must be scalar. Error is |analytic - numeric| / max(1e-8, |numeric|),
    maximized over every element of every bound parameter.
    """
    if h <= 0:
        raise ValueError("finite_diff_check: h must be positive")
    forward(root, bindings)
    if root.value.shape != ():
        raise ShapeError(
            f"finite_diff_check: root must be scalar, got shape {root.value.shape}")
    analytic = backward(root)
    worst = 0.0
    work = {k: _arr(v).copy() for k, v in bindings.items()}
    for name in sorted(work):
        base = work[name]
        grad = analytic.get(name, np.zeros_like(base))
        flat = base.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(forward(root, work))
            flat[i] = orig - h
            fm = float(forward(root, work))
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = abs(float(gflat[i]) - numeric) / max(1e-8, abs(numeric))
            worst = max(worst, err)
    forward(root, bindings)
    return worst
