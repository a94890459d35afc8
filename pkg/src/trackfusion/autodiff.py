"""Small reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built symbolically from :class:`Node` objects and evaluated with
:func:`forward`; :func:`backward` then returns gradients for every named
leaf. A built graph can be re-evaluated with new bindings, which is how the
models reuse one graph per batch shape across training steps.

The op set is closed: matmul, add, mul, concat, slice, reshape, sum, mean,
sigmoid, tanh, exp, log, relu. ``step`` (the unit step function) is the one
extra forward-only op; it passes zero gradient and is flagged by
:func:`grad_check`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs, shape mismatches and unbound inputs."""


class NonFiniteError(FloatingPointError):
    """A forward pass produced NaN or Inf."""


class Node:
    """One vertex of a computation graph.

    Leaves are either named variables (``op == "var"``) bound at forward
    time, or constants (``op == "const"``) carrying their own value.
    """

    __slots__ = ("op", "inputs", "attrs", "name", "value", "grad", "_order")

    def __init__(self, op: str, inputs: Sequence["Node"] = (), attrs=None, name: str | None = None,
                 value: np.ndarray | None = None):
        self.op = op
        self.inputs = tuple(inputs)
        self.attrs = attrs
        self.name = name
        self.value = value
        self.grad = None
        self._order = None

    def __repr__(self):
        if self.op == "var":
            return f"Node(var {self.name!r})"
        return f"Node({self.op}, {len(self.inputs)} inputs)"

    # operator sugar; everything lowers onto the closed op set
    def __add__(self, other):
        return add(self, _as_node(other))

    def __radd__(self, other):
        return add(_as_node(other), self)

    def __sub__(self, other):
        return add(self, mul(_as_node(other), const(-1.0)))

    def __rsub__(self, other):
        return add(_as_node(other), mul(self, const(-1.0)))

    def __mul__(self, other):
        return mul(self, _as_node(other))

    def __rmul__(self, other):
        return mul(_as_node(other), self)

    def __neg__(self):
        return mul(self, const(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


# --------------------------------------------------------------------------
# graph constructors

def var(name: str) -> Node:
    return Node("var", name=name)


def const(value) -> Node:
    return Node("const", value=np.asarray(value, dtype=np.float64))


def matmul(a: Node, b: Node) -> Node:
    return Node("matmul", (a, b))


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; the smaller operand's shape must be a suffix of the other's (bias-add)."""
    return Node("add", (a, b))


def mul(a: Node, b: Node) -> Node:
    """Elementwise product with the same suffix broadcasting rule as :func:`add`."""
    return Node("mul", (a, b))


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    return Node("concat", nodes, attrs=axis)


def slice_(a: Node, index) -> Node:
    if not isinstance(index, tuple):
        index = (index,)
    return Node("slice", (a,), attrs=index)


def reshape(a: Node, shape: Sequence[int]) -> Node:
    return Node("reshape", (a,), attrs=tuple(shape))


def sum_(a: Node, axis: int | None = None) -> Node:
    return Node("sum", (a,), attrs=axis)


def mean(a: Node, axis: int | None = None) -> Node:
    return Node("mean", (a,), attrs=axis)


def sigmoid(a: Node) -> Node:
    return Node("sigmoid", (a,))


def tanh(a: Node) -> Node:
    return Node("tanh", (a,))


def exp(a: Node) -> Node:
    return Node("exp", (a,))


def log(a: Node) -> Node:
    return Node("log", (a,))


def relu(a: Node) -> Node:
    return Node("relu", (a,))


def step(a: Node) -> Node:
    """Unit step ``u(a)`` with ``u(0) = 1``. Forward-only: gradient is zero."""
    return Node("step", (a,))


# --------------------------------------------------------------------------
# op kernels: forward(values, attrs) and vjp(g, values, out, attrs)

def _suffix_ok(a: tuple, b: tuple) -> bool:
    return len(b) <= len(a) and tuple(a[len(a) - len(b):]) == tuple(b)


def _check_binary(a: np.ndarray, b: np.ndarray, op: str):
    if not (_suffix_ok(a.shape, b.shape) or _suffix_ok(b.shape, a.shape)):
        raise GraphError(f"{op}: shapes {a.shape} and {b.shape} do not align on trailing axes")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    return g


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise GraphError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return a @ b


def _vjp_matmul(g, vals, out, attrs):
    a, b = vals
    return g @ b.T, a.T @ g


def _fwd_add(vals, attrs):
    _check_binary(*vals, "add")
    return vals[0] + vals[1]


def _vjp_add(g, vals, out, attrs):
    return _unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)


def _fwd_mul(vals, attrs):
    _check_binary(*vals, "mul")
    return vals[0] * vals[1]


def _vjp_mul(g, vals, out, attrs):
    a, b = vals
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _fwd_concat(vals, attrs):
    try:
        return np.concatenate(vals, axis=attrs)
    except ValueError as exc:
        raise GraphError(f"concat: {exc}") from None


def _vjp_concat(g, vals, out, attrs):
    axis = attrs % g.ndim
    edges = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tuple(np.split(g, edges, axis=axis))


def _fwd_slice(vals, attrs):
    try:
        return np.array(vals[0][attrs], dtype=np.float64)
    except IndexError as exc:
        raise GraphError(f"slice: {exc}") from None


def _vjp_slice(g, vals, out, attrs):
    full = np.zeros_like(vals[0])
    full[attrs] = g
    return (full,)


def _fwd_reshape(vals, attrs):
    try:
        return vals[0].reshape(attrs)
    except ValueError as exc:
        raise GraphError(f"reshape: {exc}") from None


def _vjp_reshape(g, vals, out, attrs):
    return (g.reshape(vals[0].shape),)


def _fwd_sum(vals, attrs):
    return np.asarray(vals[0].sum(axis=attrs))


def _vjp_sum(g, vals, out, attrs):
    x = vals[0]
    if attrs is not None:
        g = np.expand_dims(g, attrs)
    return (np.broadcast_to(g, x.shape).copy(),)


def _fwd_mean(vals, attrs):
    return np.asarray(vals[0].mean(axis=attrs))


def _vjp_mean(g, vals, out, attrs):
    x = vals[0]
    n = x.size if attrs is None else x.shape[attrs]
    if attrs is not None:
        g = np.expand_dims(g, attrs)
    return (np.broadcast_to(g / n, x.shape).copy(),)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _fwd_log(vals, attrs):
    x = vals[0]
    if np.any(x <= 0):
        raise NonFiniteError("log of non-positive value")
    return np.log(x)


_OPS: dict[str, tuple[Callable, Callable | None]] = {
    "matmul": (_fwd_matmul, _vjp_matmul),
    "add": (_fwd_add, _vjp_add),
    "mul": (_fwd_mul, _vjp_mul),
    "concat": (_fwd_concat, _vjp_concat),
    "slice": (_fwd_slice, _vjp_slice),
    "reshape": (_fwd_reshape, _vjp_reshape),
    "sum": (_fwd_sum, _vjp_sum),
    "mean": (_fwd_mean, _vjp_mean),
    "sigmoid": (lambda v, a: _sigmoid(v[0]), lambda g, v, o, a: (g * o * (1.0 - o),)),
    "tanh": (lambda v, a: np.tanh(v[0]), lambda g, v, o, a: (g * (1.0 - o * o),)),
    "exp": (lambda v, a: np.exp(v[0]), lambda g, v, o, a: (g * o,)),
    "log": (_fwd_log, lambda g, v, o, a: (g / v[0],)),
    "relu": (lambda v, a: np.maximum(v[0], 0.0), lambda g, v, o, a: (g * (v[0] > 0),)),
    "step": (lambda v, a: (v[0] >= 0).astype(np.float64), None),
}


# --------------------------------------------------------------------------
# evaluation

def topo_order(root: Node) -> list[Node]:
    """Post-order of every node reachable from ``root`` (cached on the root)."""
    if root._order is not None:
        return root._order
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for child in reversed(node.inputs):
            if id(child) not in seen:
                stack.append((child, False))
    root._order = order
    return order


def forward(root: Node, bindings: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate ``root``, caching every node's value for :func:`backward`."""
    for node in topo_order(root):
        node.grad = None
        if node.op == "var":
            try:
                value = bindings[node.name]
            except KeyError:
                raise GraphError(f"unbound input {node.name!r}") from None
            node.value = np.asarray(value, dtype=np.float64)
            continue
        if node.op == "const":
            continue
        fwd, _ = _OPS[node.op]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = fwd([child.value for child in node.inputs], node.attrs)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite output from {node.op}")
        node.value = out
    return root.value


class Graph:
    """Several named outputs over one shared graph, evaluated in one pass."""

    def __init__(self, **outputs: Node):
        self.outputs = outputs
        self._sink = Node("sink", tuple(outputs.values()))

    def __getitem__(self, name: str) -> Node:
        return self.outputs[name]

    def run(self, bindings: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        forward(self._sink, bindings)
        return {k: n.value for k, n in self.outputs.items()}


_OPS["sink"] = (lambda v, a: np.zeros(()), None)


def forward_many(roots: Sequence[Node], bindings: Mapping[str, np.ndarray]) -> list[np.ndarray]:
    out = Graph(**{f"o{i}": r for i, r in enumerate(roots)}).run(bindings)
    return [out[f"o{i}"] for i in range(len(roots))]


def backward(root: Node) -> dict[str, np.ndarray]:
    """Gradient of the scalar ``root`` with respect to every named leaf.

    Variables that appear under the same name in several places have their
    gradients summed.
    """
    order = topo_order(root)
    if root.value is None:
        raise GraphError("forward has not been run on this graph")
    if root.value.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.value.shape}")
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    grads: dict[str, np.ndarray] = {}
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        if node.op == "var":
            if node.name in grads:
                grads[node.name] = grads[node.name] + g
            else:
                grads[node.name] = g
            continue
        if node.op == "const":
            continue
        _, vjp = _OPS[node.op]
        if vjp is None:
            in_grads = tuple(np.zeros_like(c.value) for c in node.inputs)
        else:
            in_grads = vjp(g, [c.value for c in node.inputs], node.value, node.attrs)
        for child, cg in zip(node.inputs, in_grads):
            if cg is None:
                continue
            child.grad = cg if child.grad is None else child.grad + cg
    for node in order:
        if node.op == "var" and node.grad is None and node.name not in grads:
            grads[node.name] = np.zeros_like(node.value)
    return grads


def value_and_grad(root: Node, bindings: Mapping[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    val = forward(root, bindings)
    return float(val), backward(root)


# --------------------------------------------------------------------------
# gradient checking

def blocked_variables(root: Node) -> set[str]:
    """Names of variables that reach ``root`` only through a ``step`` op."""
    order = topo_order(root)
    # a var is "live" if some path to root avoids step nodes
    live: set[int] = {id(root)}
    for node in reversed(order):
        if id(node) not in live or node.op == "step":
            continue
        for child in node.inputs:
            live.add(id(child))
    names_all = {n.name for n in order if n.op == "var"}
    names_live = {n.name for n in order if n.op == "var" and id(n) in live}
    return names_all - names_live


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float
    non_differentiable: bool = False
    excluded: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(err <= self.tol for err in self.max_rel_error.values())

    @property
    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.max_rel_error.items() if v > self.tol}

    def __str__(self):
        lines = [f"grad_check tol={self.tol:g} passed={self.passed}"]
        for k, v in self.max_rel_error.items():
            lines.append(f"  {k}: {v:.3e}")
        if self.non_differentiable:
            lines.append(f"  non-differentiable; excluded: {', '.join(self.excluded)}")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The effective floor is at least 1e-3 of the tensor's largest gradient
    magnitude (and 1e-12), so entries that are zero up to finite-difference
    round-off do not dominate the score.
    """
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    floor = max(floor, 1e-3 * scale, 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))


def fd_resolution(f_value: float, eps: float) -> float:
    """Smallest gradient a central difference can resolve at this loss value.

    Round-off in ``f(x + eps) - f(x - eps)`` is a few ulps of ``|f|``; below
    ``1e3 * ulp(|f|) / eps`` the numeric estimate is noise.
    """
    return 1e3 * np.finfo(np.float64).eps * max(abs(f_value), 1.0) / eps


def numeric_grad(root: Node, bindings: Mapping[str, np.ndarray], name: str, eps: float = 1e-5) -> np.ndarray:
    base = {k: np.array(v, dtype=np.float64) for k, v in bindings.items()}
    x = base[name]
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(forward(root, base))
        flat[i] = orig - eps
        fm = float(forward(root, base))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def grad_check(root: Node, bindings: Mapping[str, np.ndarray], params: Iterable[str] | None = None,
               eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    Variables that reach the root only through a ``step`` node are listed in
    ``excluded`` and not compared; their analytic gradient is identically 0.
    """
    f0 = float(forward(root, bindings))
    analytic = backward(root)
    floor = fd_resolution(f0, eps)
    blocked = blocked_variables(root)
    has_step = any(n.op == "step" for n in topo_order(root))
    names = list(params) if params is not None else sorted(analytic)
    errors = {}
    for name in names:
        if name in blocked:
            continue
        errors[name] = relative_error(analytic[name], numeric_grad(root, bindings, name, eps), floor)
    forward(root, bindings)
    return GradCheckReport(errors, tol, non_differentiable=has_step,
                           excluded=sorted(n for n in names if n in blocked))


# --------------------------------------------------------------------------
# layer helpers

def dense(x: Node, prefix: str) -> Node:
    """``x @ W + b`` reading ``{prefix}.W`` and ``{prefix}.b``."""
    return matmul(x, var(f"{prefix}.W")) + var(f"{prefix}.b")


def dense_shapes(prefix: str, n_in: int, n_out: int) -> dict[str, tuple]:
    return {f"{prefix}.W": (n_in, n_out), f"{prefix}.b": (n_out,)}


LSTM_GATES = ("i", "f", "g", "o")


def lstm_shapes(prefix: str, input_dim: int, hidden_dim: int) -> dict[str, tuple]:
    """Per-gate weight matrices of shape (input_dim + hidden_dim, hidden_dim)."""
    shapes = {}
    for gate in LSTM_GATES:
        shapes[f"{prefix}.W_{gate}"] = (input_dim + hidden_dim, hidden_dim)
        shapes[f"{prefix}.b_{gate}"] = (hidden_dim,)
    return shapes


def lstm_step(x: Node, h: Node, c: Node, prefix: str) -> tuple[Node, Node]:
    """One LSTM cell update on batched rows ``x`` (n, in), ``h`` and ``c`` (n, hidden)."""
    xh = concat([x, h], axis=-1)
    gates = {g: matmul(xh, var(f"{prefix}.W_{g}")) + var(f"{prefix}.b_{g}") for g in LSTM_GATES}
    i = sigmoid(gates["i"])
    f = sigmoid(gates["f"])
    g = tanh(gates["g"])
    o = sigmoid(gates["o"])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


def lstm_cell(x: np.ndarray, h: np.ndarray, c: np.ndarray, params: Mapping[str, np.ndarray],
              prefix: str = "lstm") -> tuple[np.ndarray, np.ndarray]:
    """Numeric single step of :func:`lstm_step`; arrays may be 1-D or batched."""
    x, h, c = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (x, h, c))
    for gate in LSTM_GATES:
        w = params[f"{prefix}.W_{gate}"]
        if w.shape != (x.shape[1] + h.shape[1], h.shape[1]) or c.shape != h.shape:
            raise GraphError(f"lstm_cell: gate {gate} weight {w.shape} does not fit x {x.shape}, h {h.shape}, c {c.shape}")
    hn, cn = lstm_step(var("x"), var("h"), var("c"), prefix)
    out = forward_many([hn, cn], {**params, "x": x, "h": h, "c": c})
    return out[0], out[1]
