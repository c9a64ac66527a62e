"""Reverse-mode automatic differentiation on dense float64 arrays.

Every operation records its parents and the vector-Jacobian products needed
to run the chain rule backwards.  Gradients may be cut at individual input
edges (``stop_slots``): the gradient across a stopped edge is defined to be
exactly zero, which is how the hard gate mask and the frozen-dictionary
reconstruction term are realized downstream.

All arithmetic is 64-bit.  Forward passes are pure functions of their
inputs, and gradient accumulation is order-canonicalized so that the result
does not depend on the order in which sibling branches were recorded.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "ComputeGraph",
    "forward",
    "backward",
    "finite_diff_check",
    "backprop",
    "add",
    "sub",
    "mul",
    "matmul",
    "scale",
    "neg",
    "leaky_relu",
    "relu",
    "tanh",
    "sin",
    "cos",
    "log",
    "heaviside",
    "softmax",
    "layer_norm",
    "conv1d",
    "global_avg_pool",
    "concat",
    "transpose",
    "reshape",
    "sum_all",
    "l1_norm",
    "sq_l2_norm",
]

LAYERNORM_EPS = 1e-5

_node_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's shape rule."""

    def __init__(self, op: str, node_id: int, shapes: Sequence[tuple]):
        self.op = op
        self.node_id = node_id
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(
            f"shape mismatch in node {node_id} ({op}): operands {self.shapes}"
        )


class Tensor:
    """A node in the recorded computation.

    Leaf tensors wrap raw arrays (inputs, parameters, constants); op tensors
    additionally hold their parents and per-parent vector-Jacobian products.
    ``grad`` is populated by :func:`backprop` and holds d(seed)/d(self).
    """

    __slots__ = (
        "data",
        "grad",
        "requires_grad",
        "name",
        "node_id",
        "op",
        "_parents",
        "_vjps",
        "_stops",
        "_needs_grad",
    )

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_node_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple = ()
        self._stops: frozenset[int] = frozenset()
        self._needs_grad = requires_grad

    @classmethod
    def _op(cls, op, data, parents, vjps, stops=frozenset()):
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = False
        t.name = None
        t.node_id = next(_node_ids)
        t.op = op
        t._parents = tuple(parents)
        t._vjps = tuple(vjps)
        t._stops = frozenset(stops)
        t._needs_grad = any(
            p._needs_grad for i, p in enumerate(t._parents) if i not in t._stops
        )
        return t

    # -- conveniences ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A gradient-free leaf view of this tensor's current value."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.data.shape}, id={self.node_id})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        src = self
        out = self.data[key]

        def vjp(g, key=key, shape=self.data.shape):
            z = np.zeros(shape)
            z[key] = g
            return z

        return Tensor._op("slice", out, (src,), (vjp,))


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(op, next(_node_ids), [a.data.shape, b.data.shape]) from None


# -- elementwise and scalar ops -------------------------------------------


def add(a, b, stop_slots: Iterable[int] = ()):
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)
    out = a.data + b.data
    return Tensor._op(
        "add",
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.data.shape),
            lambda g: _unbroadcast(g, b.data.shape),
        ),
        stop_slots,
    )


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a, b)
    out = a.data - b.data
    return Tensor._op(
        "sub",
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.data.shape),
            lambda g: _unbroadcast(-g, b.data.shape),
        ),
    )


def mul(a, b, stop_slots: Iterable[int] = ()):
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a, b)
    out = a.data * b.data
    return Tensor._op(
        "mul",
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.data.shape),
            lambda g: _unbroadcast(g * a.data, b.data.shape),
        ),
        stop_slots,
    )


def scale(x, s: float):
    """Multiply by a python scalar (compile-time constant, no extra leaf)."""
    x = _lift(x)
    s = float(s)
    return Tensor._op("scale", x.data * s, (x,), (lambda g: g * s,))


def neg(x):
    return scale(x, -1.0)


def leaky_relu(x, slope: float = 0.01):
    x = _lift(x)
    pos = x.data > 0.0
    out = np.where(pos, x.data, slope * x.data)
    return Tensor._op(
        "leaky_relu", out, (x,), (lambda g: g * np.where(pos, 1.0, slope),)
    )


def relu(x):
    x = _lift(x)
    pos = x.data > 0.0
    return Tensor._op("relu", np.where(pos, x.data, 0.0), (x,), (lambda g: g * pos,))


def tanh(x):
    x = _lift(x)
    t = np.tanh(x.data)
    return Tensor._op("tanh", t, (x,), (lambda g: g * (1.0 - t * t),))


def sin(x):
    x = _lift(x)
    c = np.cos(x.data)
    return Tensor._op("sin", np.sin(x.data), (x,), (lambda g: g * c,))


def cos(x):
    x = _lift(x)
    s = np.sin(x.data)
    return Tensor._op("cos", np.cos(x.data), (x,), (lambda g: -g * s,))


def log(x):
    x = _lift(x)
    return Tensor._op("log", np.log(x.data), (x,), (lambda g: g / x.data,))


def heaviside(x):
    """Hard binarization 1[x > 0] with an exact gradient stop on its input.

    The value at exactly zero is 0 (ties break toward the closed state).
    """
    x = _lift(x)
    out = (x.data > 0.0).astype(np.float64)
    return Tensor._op("heaviside", out, (x,), (None,), stops=frozenset({0}))


# -- linear algebra --------------------------------------------------------


def matmul(a, b, stop_slots: Iterable[int] = ()):
    """Matrix product for 2D@2D, 2D@1D and 1D@2D operands."""
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2) or (ad.ndim == bd.ndim == 1):
        raise ShapeError("matmul", next(_node_ids), [ad.shape, bd.shape])
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError("matmul", next(_node_ids), [ad.shape, bd.shape])
    out = ad @ bd

    if ad.ndim == 2 and bd.ndim == 2:
        vjps = (lambda g: g @ bd.T, lambda g: ad.T @ g)
    elif ad.ndim == 2 and bd.ndim == 1:
        vjps = (lambda g: np.outer(g, bd), lambda g: ad.T @ g)
    else:  # 1D @ 2D
        vjps = (lambda g: bd @ g, lambda g: np.outer(ad, g))
    return Tensor._op("matmul", out, (a, b), vjps, stop_slots)


def transpose(x):
    x = _lift(x)
    if x.data.ndim != 2:
        raise ShapeError("transpose", next(_node_ids), [x.data.shape])
    return Tensor._op("transpose", x.data.T.copy(), (x,), (lambda g: g.T,))


def reshape(x, shape):
    x = _lift(x)
    old = x.data.shape
    out = x.data.reshape(shape)
    return Tensor._op("reshape", out, (x,), (lambda g: g.reshape(old),))


def concat(parts: Sequence, axis: int = 0):
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat", next(_node_ids), [])
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]

        return vjp

    return Tensor._op(
        "concat", out, parts, tuple(make_vjp(i) for i in range(len(parts)))
    )


# -- nonlinear blocks ------------------------------------------------------


def softmax(x):
    """Softmax over the last axis (numerically stabilized)."""
    x = _lift(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return s * (g - (g * s).sum(axis=-1, keepdims=True))

    return Tensor._op("softmax", s, (x,), (vjp,))


def layer_norm(x, gain, shift):
    """Normalize over the last axis, then apply a learned gain and shift.

    The epsilon is added to the variance before the square root, so a
    zero-variance row maps to ``shift`` exactly.
    """
    x, gain, shift = _lift(x), _lift(gain), _lift(shift)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or shift.data.shape != (d,):
        raise ShapeError(
            "layer_norm", next(_node_ids), [x.data.shape, gain.data.shape, shift.data.shape]
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    y = xc * inv
    out = y * gain.data + shift.data

    def vjp_x(g):
        gy = g * gain.data
        return inv * (
            gy - gy.mean(axis=-1, keepdims=True) - y * (gy * y).mean(axis=-1, keepdims=True)
        )

    def vjp_gain(g):
        gy = g * y
        return gy.reshape(-1, d).sum(axis=0) if gy.ndim > 1 else gy

    def vjp_shift(g):
        return g.reshape(-1, d).sum(axis=0) if g.ndim > 1 else g

    return Tensor._op("layer_norm", out, (x, gain, shift), (vjp_x, vjp_gain, vjp_shift))


def conv1d(x, w, b):
    """Same-padded 1D convolution on a channels-first map.

    x: (C_in, L), w: (C_out, C_in, K) with odd K, b: (C_out,).  Output is
    (C_out, L) with zero padding of (K-1)/2 on both sides.
    """
    x, w, b = _lift(x), _lift(w), _lift(b)
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 2 or wd.ndim != 3 or bd.ndim != 1:
        raise ShapeError("conv1d", next(_node_ids), [xd.shape, wd.shape, bd.shape])
    c_out, c_in, k = wd.shape
    if xd.shape[0] != c_in or bd.shape[0] != c_out or k % 2 == 0:
        raise ShapeError("conv1d", next(_node_ids), [xd.shape, wd.shape, bd.shape])
    pad = (k - 1) // 2
    length = xd.shape[1]
    xp = np.pad(xd, ((0, 0), (pad, pad)))
    out = np.broadcast_to(bd[:, None], (c_out, length)).copy()
    for j in range(k):
        out += wd[:, :, j] @ xp[:, j : j + length]

    def vjp_x(g):
        gx = np.zeros_like(xp)
        for j in range(k):
            gx[:, j : j + length] += wd[:, :, j].T @ g
        return gx[:, pad : pad + length]

    def vjp_w(g):
        gw = np.empty_like(wd)
        for j in range(k):
            gw[:, :, j] = g @ xp[:, j : j + length].T
        return gw

    def vjp_b(g):
        return g.sum(axis=1)

    return Tensor._op("conv1d", out, (x, w, b), (vjp_x, vjp_w, vjp_b))


def global_avg_pool(x):
    """Mean over the spatial axis of a (C, L) map, yielding (C,)."""
    x = _lift(x)
    if x.data.ndim != 2:
        raise ShapeError("global_avg_pool", next(_node_ids), [x.data.shape])
    length = x.data.shape[1]
    out = x.data.mean(axis=1)
    return Tensor._op(
        "global_avg_pool",
        out,
        (x,),
        (lambda g: np.repeat(g[:, None], length, axis=1) / length,),
    )


# -- reductions ------------------------------------------------------------


def sum_all(x):
    x = _lift(x)
    shape = x.data.shape
    return Tensor._op(
        "sum", np.asarray(x.data.sum()), (x,), (lambda g: np.broadcast_to(g, shape).copy(),)
    )


def l1_norm(x):
    x = _lift(x)
    sign = np.sign(x.data)
    return Tensor._op(
        "l1_norm", np.asarray(np.abs(x.data).sum()), (x,), (lambda g: g * sign,)
    )


def sq_l2_norm(x):
    x = _lift(x)
    xd = x.data
    return Tensor._op(
        "sq_l2_norm", np.asarray((xd * xd).sum()), (x,), (lambda g: 2.0 * g * xd,)
    )


# -- backward pass ---------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative DFS topological order; parents precede consumers."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for i, p in enumerate(node._parents):
            if i in node._stops or not p._needs_grad:
                continue
            if p.node_id not in seen:
                stack.append((p, False))
    return order


def _accumulate(parts: list[np.ndarray]) -> np.ndarray:
    # Canonical summation order: sort sibling contributions by content so the
    # result is independent of the order in which branches were recorded.
    if len(parts) == 1:
        return parts[0]
    parts = sorted(parts, key=lambda a: a.tobytes())
    total = parts[0].copy()
    for p in parts[1:]:
        total += p
    return total


def backprop(root: Tensor, leaves: Iterable[Tensor] = ()) -> None:
    """Run reverse-mode differentiation from a scalar ``root``.

    Fills ``grad`` on every reachable node that needs a gradient.  Leaves
    passed explicitly get a zero gradient when unreachable (e.g. behind a
    stopped edge) instead of ``None``.
    """
    if root.data.size != 1:
        raise ValueError(f"backward seed must be scalar, got shape {root.data.shape}")
    order = _topo_order(root)
    contribs: dict[int, list[np.ndarray]] = {
        root.node_id: [np.ones_like(root.data)]
    }
    for node in reversed(order):
        parts = contribs.pop(node.node_id, None)
        if parts is None:
            continue
        g = _accumulate(parts)
        node.grad = g
        for i, p in enumerate(node._parents):
            if i in node._stops or not p._needs_grad:
                continue
            contribs.setdefault(p.node_id, []).append(node._vjps[i](g))
    for leaf in leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)


# -- named-graph surface ----------------------------------------------------


class ComputeGraph:
    """A differentiable computation from named inputs to named outputs.

    ``build`` is a pure function mapping a dict of leaf Tensors to a dict of
    output Tensors; it is re-executed on every :func:`forward`, which records
    a fresh tape.  Inputs listed in ``trainable`` receive gradients.
    """

    def __init__(self, build: Callable[[dict], dict], trainable: Iterable[str] | None = None):
        self.build = build
        self.trainable = None if trainable is None else set(trainable)
        self.inputs: dict[str, Tensor] = {}
        self.outputs: dict[str, Tensor] = {}

    def _wants_grad(self, name: str) -> bool:
        return self.trainable is None or name in self.trainable


def forward(graph: ComputeGraph, inputs: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    """Execute the graph on ``inputs`` and return its named outputs."""
    leaves = {
        name: Tensor(np.asarray(value, dtype=np.float64), requires_grad=graph._wants_grad(name), name=name)
        for name, value in inputs.items()
    }
    outputs = graph.build(leaves)
    for name, out in outputs.items():
        if not np.all(np.isfinite(out.data)):
            raise FloatingPointError(f"non-finite values in graph output {name!r}")
    graph.inputs = leaves
    graph.outputs = dict(outputs)
    return graph.outputs


def backward(graph: ComputeGraph, seed: str) -> dict[str, np.ndarray]:
    """Gradients of the named scalar output w.r.t. every trainable input."""
    if not graph.outputs:
        raise RuntimeError("backward called before forward")
    root = graph.outputs[seed]
    if root.data.size != 1:
        raise ValueError(f"seed output {seed!r} is not scalar: shape {root.data.shape}")
    trainable = [t for t in graph.inputs.values() if t.requires_grad]
    backprop(root, leaves=trainable)
    return {t.name: t.grad for t in trainable}


def finite_diff_check(
    graph: ComputeGraph,
    input_name: str,
    epsilon: float,
    seed: str | None = None,
) -> float:
    """Central-difference validation of backward() for one input.

    Returns the max elementwise relative error, with the denominator floored
    at 1e-8.  The graph must produce a scalar output (named by ``seed``, or
    the single output when omitted).
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    if seed is None:
        if len(graph.outputs) != 1:
            raise ValueError("graph has multiple outputs; pass seed explicitly")
        seed = next(iter(graph.outputs))
    base = {name: t.data for name, t in graph.inputs.items()}
    if graph.outputs[seed].data.size != 1:
        raise ValueError(f"output {seed!r} is not scalar")
    if not graph.inputs[input_name].requires_grad:
        raise ValueError(f"input {input_name!r} is not trainable")
    analytic = backward(graph, seed)[input_name]

    def eval_at(vec: np.ndarray) -> float:
        probe = dict(base)
        probe[input_name] = vec.reshape(base[input_name].shape)
        return float(forward(graph, probe)[seed].data)

    x0 = base[input_name]
    flat = x0.ravel()
    fd = np.empty_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += epsilon
        down = flat.copy()
        down[i] -= epsilon
        fd[i] = (eval_at(up) - eval_at(down)) / (2.0 * epsilon)
    # restore the original recording so later calls see the unperturbed state
    forward(graph, base)
    err = np.abs(fd.reshape(x0.shape) - analytic)
    denom = np.maximum(np.abs(analytic), 1e-8)
    return float((err / denom).max()) if err.size else 0.0


def finite_diff_check_all(
    graph: ComputeGraph, epsilon: float, seed: str | None = None
) -> dict[str, float]:
    """Run :func:`finite_diff_check` for every trainable input."""
    names = [n for n, t in graph.inputs.items() if t.requires_grad]
    return {n: finite_diff_check(graph, n, epsilon, seed=seed) for n in names}


def cross_entropy_logits(logits: Tensor, target: int) -> Tensor:
    """Negative log-softmax probability of the target class."""
    p = softmax(logits)
    return neg(log(p[target]))
