"""Static-graph reverse-mode automatic differentiation.

A :class:`Tape` records a computation once as a list of nodes in topological
order.  Evaluating it against a binding of input names to values (floats or
numpy arrays) runs one forward pass; :meth:`Tape.gradient` adds one backward
pass.  Second derivatives use forward-over-reverse: the forward and backward
passes are replayed with :class:`Dual` values whose tangent is seeded on one
input, so the tangent of an input's adjoint is a mixed second partial.

Example::

    tape = Tape()
    x1, x2, x3 = tape.var("x1"), tape.var("x2"), tape.var("x3")
    tape.set_output(8 * (x1 ** 3 + x2 * x3))
    tape.evaluate({"x1": 3, "x2": 5, "x3": 2})   # 296.0
    tape.gradient({"x1": 3, "x2": 5, "x3": 2})   # {'x1': 216.0, 'x2': 16.0, 'x3': 40.0}

The tape structure is never mutated by evaluation: each call allocates its own
value and adjoint buffers, so concurrent evaluations of a finished tape are
safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import NonDifferentiableError, NumericOverflowError, UnboundVariableError

__all__ = [
    "Dual",
    "Tape",
    "Var",
    "cos",
    "evaluate",
    "exp",
    "gradient",
    "log",
    "mean",
    "reduce_max",
    "second_derivative",
    "sin",
    "square",
    "sum",
    "take",
    "tanh",
]


class Dual:
    """Forward-mode carrier: a primal value and a tangent of the same shape."""

    __slots__ = ("primal", "tangent")
    __array_ufunc__ = None  # make numpy defer to the reflected Dual operators

    def __init__(self, primal, tangent=0.0):
        self.primal = primal
        self.tangent = tangent

    def __repr__(self):
        return f"Dual({self.primal!r}, {self.tangent!r})"

    @staticmethod
    def lift(v) -> "Dual":
        return v if isinstance(v, Dual) else Dual(v, 0.0)

    def __add__(self, other):
        o = Dual.lift(other)
        return Dual(self.primal + o.primal, self.tangent + o.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual.lift(other)
        return Dual(self.primal - o.primal, self.tangent - o.tangent)

    def __rsub__(self, other):
        return Dual.lift(other) - self

    def __mul__(self, other):
        o = Dual.lift(other)
        return Dual(self.primal * o.primal, self.tangent * o.primal + self.primal * o.tangent)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Dual.lift(other)
        q = self.primal / o.primal
        return Dual(q, (self.tangent - q * o.tangent) / o.primal)

    def __rtruediv__(self, other):
        return Dual.lift(other) / self

    def __neg__(self):
        return Dual(-self.primal, -self.tangent)

    def __pow__(self, p):
        if isinstance(p, Dual):
            raise TypeError("Dual exponent must be a constant")
        return Dual(self.primal ** p, p * self.primal ** (p - 1) * self.tangent)

    def __matmul__(self, other):
        o = Dual.lift(other)
        return Dual(self.primal @ o.primal, self.tangent @ o.primal + self.primal @ o.tangent)

    def __rmatmul__(self, other):
        return Dual.lift(other) @ self

    @property
    def T(self):
        return Dual(np.transpose(self.primal), np.transpose(self.tangent))


# -- generic elementwise helpers (numpy values or Dual) ---------------------

def _exp(v):
    if isinstance(v, Dual):
        e = np.exp(v.primal)
        return Dual(e, e * v.tangent)
    return np.exp(v)


def _log(v):
    if isinstance(v, Dual):
        return Dual(np.log(v.primal), v.tangent / v.primal)
    return np.log(v)


def _sin(v):
    if isinstance(v, Dual):
        return Dual(np.sin(v.primal), np.cos(v.primal) * v.tangent)
    return np.sin(v)


def _cos(v):
    if isinstance(v, Dual):
        return Dual(np.cos(v.primal), -np.sin(v.primal) * v.tangent)
    return np.cos(v)


def _tanh(v):
    if isinstance(v, Dual):
        t = np.tanh(v.primal)
        return Dual(t, (1.0 - t * t) * v.tangent)
    return np.tanh(v)


def _primal(v):
    return v.primal if isinstance(v, Dual) else v


def _map(v, fn):
    """Apply a linear, shape-only map to a value or to both parts of a Dual."""
    if isinstance(v, Dual):
        return Dual(fn(v.primal), fn(np.broadcast_to(v.tangent, np.shape(v.primal))))
    return fn(v)


def _unbroadcast(g, shape):
    def fn(a):
        a = np.asarray(a)
        if a.shape == shape:
            return a
        while a.ndim > len(shape):
            a = a.sum(axis=0)
        for ax, n in enumerate(shape):
            if n == 1 and a.shape[ax] != 1:
                a = a.sum(axis=ax, keepdims=True)
        return a.reshape(shape)

    return _map(g, fn)


def _finite(v) -> bool:
    if isinstance(v, Dual):
        return bool(np.all(np.isfinite(v.primal)) and np.all(np.isfinite(v.tangent)))
    return bool(np.all(np.isfinite(v)))


# -- op table ----------------------------------------------------------------
# forward(args, const) -> value; backward(g, args, out, const) -> input adjoints

def _fw(op, a, c):
    if op == "add":
        return a[0] + a[1]
    if op == "sub":
        return a[0] - a[1]
    if op == "mul":
        return a[0] * a[1]
    if op == "div":
        return a[0] / a[1]
    if op == "neg":
        return -a[0]
    if op == "powc":
        return a[0] ** c
    if op == "exp":
        return _exp(a[0])
    if op == "log":
        return _log(a[0])
    if op == "sin":
        return _sin(a[0])
    if op == "cos":
        return _cos(a[0])
    if op == "tanh":
        return _tanh(a[0])
    if op == "matmul":
        return a[0] @ a[1]
    if op == "transpose":
        return _map(a[0], np.transpose)
    if op == "sum":
        return _map(a[0], np.sum)
    if op == "mean":
        return _map(a[0], np.mean)
    if op == "take":
        return _map(a[0], lambda v: v[c])
    if op == "reduce_max":
        x = a[0]
        p = _primal(x)
        k = int(np.argmax(p))
        if isinstance(x, Dual):
            flat_t = np.broadcast_to(x.tangent, np.shape(p)).ravel()
            ties = np.flatnonzero(np.ravel(p) == np.ravel(p)[k])
            if len(ties) > 1 and np.ptp(flat_t[ties]) != 0.0:
                raise NonDifferentiableError("reduce_max has tied maxima with differing tangents")
            return Dual(np.ravel(p)[k], flat_t[k])
        return np.ravel(p)[k]
    raise ValueError(f"unknown op {op!r}")


def _bw(op, g, a, out, c):
    if op == "add":
        return (_unbroadcast(g, np.shape(_primal(a[0]))), _unbroadcast(g, np.shape(_primal(a[1]))))
    if op == "sub":
        return (_unbroadcast(g, np.shape(_primal(a[0]))), _unbroadcast(-g, np.shape(_primal(a[1]))))
    if op == "mul":
        return (_unbroadcast(g * a[1], np.shape(_primal(a[0]))), _unbroadcast(g * a[0], np.shape(_primal(a[1]))))
    if op == "div":
        ga = g / a[1]
        return (_unbroadcast(ga, np.shape(_primal(a[0]))), _unbroadcast(-ga * out, np.shape(_primal(a[1]))))
    if op == "neg":
        return (-g,)
    if op == "powc":
        return (g * (c * a[0] ** (c - 1)),)
    if op == "exp":
        return (g * out,)
    if op == "log":
        return (g / a[0],)
    if op == "sin":
        return (g * _cos(a[0]),)
    if op == "cos":
        return (-(g * _sin(a[0])),)
    if op == "tanh":
        return (g * (1.0 - out * out),)
    if op == "matmul":
        return (g @ _map(a[1], np.transpose), _map(a[0], np.transpose) @ g)
    if op == "transpose":
        return (_map(g, np.transpose),)
    if op == "sum":
        shape = np.shape(_primal(a[0]))
        return (_map(g, lambda v: np.broadcast_to(v, shape)),)
    if op == "mean":
        shape = np.shape(_primal(a[0]))
        n = max(1, int(np.prod(shape)))
        return (_map(g, lambda v: np.broadcast_to(v / n, shape)),)
    if op == "take":
        shape = np.shape(_primal(a[0]))

        def scatter(v):
            z = np.zeros(shape)
            if isinstance(c, slice):
                z[c] = v
            else:
                np.add.at(z, c, v)
            return z

        return (_map(g, scatter),)
    if op == "reduce_max":
        p = _primal(a[0])
        k = int(np.argmax(p))
        shape = np.shape(p)

        def onehot(v):
            z = np.zeros(int(np.prod(shape)) if shape else 1)
            z[k] = v
            return z.reshape(shape)

        return (_map(g, onehot),)
    raise ValueError(f"unknown op {op!r}")


@dataclass(frozen=True)
class Node:
    op: str
    args: tuple = ()
    const: Any = None


class Var:
    """Handle to a node on a tape; supports arithmetic operators."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    def __repr__(self):
        return f"Var({self.index}, {self.tape.nodes[self.index].op})"

    def _bin(self, op, other, reverse=False):
        o = self.tape.lift(other)
        return self.tape.push(op, (o, self) if reverse else (self, o))

    def __add__(self, other):
        return self._bin("add", other)

    def __radd__(self, other):
        return self._bin("add", other, True)

    def __sub__(self, other):
        return self._bin("sub", other)

    def __rsub__(self, other):
        return self._bin("sub", other, True)

    def __mul__(self, other):
        return self._bin("mul", other)

    def __rmul__(self, other):
        return self._bin("mul", other, True)

    def __truediv__(self, other):
        return self._bin("div", other)

    def __rtruediv__(self, other):
        return self._bin("div", other, True)

    def __matmul__(self, other):
        return self._bin("matmul", other)

    def __rmatmul__(self, other):
        return self._bin("matmul", other, True)

    def __neg__(self):
        return self.tape.push("neg", (self,))

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("only constant exponents are supported")
        return self.tape.push("powc", (self,), float(p))

    @property
    def T(self):
        return self.tape.push("transpose", (self,))


class Tape:
    """Append-only computational graph with named inputs."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: dict[str, int] = {}
        self.output: int | None = None
        self._live_cache: dict = {}

    def __len__(self):
        return len(self.nodes)

    # -- construction ------------------------------------------------------

    def push(self, op: str, args: Sequence[Var] = (), const=None) -> Var:
        for a in args:
            if a.tape is not self:
                raise ValueError("operands belong to a different tape")
        self.nodes.append(Node(op, tuple(a.index for a in args), const))
        return Var(self, len(self.nodes) - 1)

    def var(self, name: str) -> Var:
        if name in self.inputs:
            return Var(self, self.inputs[name])
        v = self.push("input", (), name)
        self.inputs[name] = v.index
        return v

    def constant(self, value) -> Var:
        return self.push("const", (), value if np.ndim(value) else np.float64(value))

    def lift(self, v) -> Var:
        return v if isinstance(v, Var) else self.constant(v)

    def set_output(self, v: Var) -> Var:
        self.output = v.index
        return v

    # -- evaluation --------------------------------------------------------

    def _out(self, output) -> int:
        if output is None:
            if self.output is None:
                if not self.nodes:
                    raise ValueError("empty tape")
                return len(self.nodes) - 1
            return self.output
        return output.index if isinstance(output, Var) else int(output)

    def forward(self, inputs: Mapping[str, Any], *, upto: int | None = None, check: bool = True,
                seed: str | None = None) -> list:
        """Run the forward pass and return the per-node value buffer.

        With ``seed`` set, values are :class:`Dual` with tangent 1 on that
        input (forward-mode sweep).
        """
        n = len(self.nodes) if upto is None else upto + 1
        vals: list = [None] * n
        with np.errstate(all="ignore"):
            self._forward_loop(inputs, vals, n, check, seed)
        return vals

    def _forward_loop(self, inputs, vals, n, check, seed):
        for i in range(n):
            node = self.nodes[i]
            if node.op == "input":
                if node.const not in inputs:
                    raise UnboundVariableError(node.const)
                v = inputs[node.const]
                v = np.asarray(v, dtype=float) if np.ndim(v) else np.float64(v)
                if seed is not None:
                    v = Dual(v, np.ones_like(v) if node.const == seed else np.zeros_like(v))
            elif node.op == "const":
                v = node.const
            else:
                args = [vals[j] for j in node.args]
                if seed is not None:
                    _check_smooth(node, args)
                v = _fw(node.op, args, node.const)
            if check and not _finite(v):
                raise NumericOverflowError(i, node.op)
            vals[i] = v

    def evaluate(self, inputs: Mapping[str, Any], output=None, *, check: bool = True):
        out = self._out(output)
        return self.forward(inputs, upto=out, check=check)[out]

    def backward(self, vals: list, output=None, wrt: Sequence[str] | None = None,
                 seed_adjoint=1.0) -> dict:
        """Reverse sweep over a value buffer produced by :meth:`forward`."""
        out = self._out(output)
        names = list(self.inputs) if wrt is None else list(wrt)
        for nm in names:
            if nm not in self.inputs:
                raise UnboundVariableError(nm)
        live = self._live(out, {self.inputs[nm] for nm in names})
        adj: list = [None] * (out + 1)
        adj[out] = seed_adjoint
        with np.errstate(all="ignore"):
            for i in range(out, -1, -1):
                g = adj[i]
                if g is None or not live[i]:
                    continue
                node = self.nodes[i]
                if node.op in ("input", "const"):
                    continue
                args = [vals[j] for j in node.args]
                grads = _bw(node.op, g, args, vals[i], node.const)
                for j, gj in zip(node.args, grads):
                    if not live[j]:
                        continue
                    adj[j] = gj if adj[j] is None else adj[j] + gj
        result = {}
        for nm in names:
            k = self.inputs[nm]
            g = adj[k] if k <= out else None
            if g is None:
                g = np.zeros_like(_primal(vals[k])) if k < len(vals) else 0.0
            elif isinstance(g, Dual):
                shape = np.shape(_primal(vals[k]))
                g = Dual(np.broadcast_to(g.primal, shape), np.broadcast_to(g.tangent, shape))
            else:
                g = np.broadcast_to(g, np.shape(_primal(vals[k]))).copy() if np.ndim(_primal(vals[k])) else float(g)
            result[nm] = g
        return result

    def _live(self, out: int, sources: set) -> list:
        # node is live if it depends on any requested input; cached per tape length
        key = (len(self.nodes), out, frozenset(sources))
        if key in self._live_cache:
            return self._live_cache[key]
        live = [False] * (out + 1)
        for i in range(out + 1):
            node = self.nodes[i]
            if i in sources:
                live[i] = True
            elif node.args:
                live[i] = any(live[j] for j in node.args)
        self._live_cache[key] = live
        return live

    def gradient(self, inputs: Mapping[str, Any], output=None, wrt: Sequence[str] | None = None,
                 *, check: bool = True) -> dict:
        out = self._out(output)
        vals = self.forward(inputs, upto=out, check=check)
        return self.backward(vals, out, wrt)

    def value_and_gradient(self, inputs, output=None, wrt=None, *, check=True):
        out = self._out(output)
        vals = self.forward(inputs, upto=out, check=check)
        return vals, self.backward(vals, out, wrt)

    def second_derivative(self, inputs: Mapping[str, Any], wrt: str, and_then: str, output=None):
        """Mixed partial d/d(wrt) of d f / d(and_then), by forward-over-reverse."""
        for nm in (wrt, and_then):
            if nm not in self.inputs:
                raise UnboundVariableError(nm)
        out = self._out(output)
        vals = self.forward(inputs, upto=out, seed=wrt)
        adj = self.backward(vals, out, [and_then], seed_adjoint=Dual(1.0, 0.0))[and_then]
        if isinstance(adj, Dual):
            t = adj.tangent
            return float(t) if np.ndim(t) == 0 else np.asarray(t)
        return 0.0 if np.ndim(adj) == 0 else np.zeros_like(adj)


def _check_smooth(node: Node, args) -> None:
    if node.op == "powc":
        p = node.const
        base = _primal(args[0])
        if p < 2 and p not in (0.0, 1.0) and np.any(np.asarray(base) == 0.0):
            raise NonDifferentiableError(f"x**{p} is not twice differentiable at 0")


# -- functional API ----------------------------------------------------------

def _unary(op):
    def f(v: Var) -> Var:
        return v.tape.push(op, (v,))

    f.__name__ = op
    return f


exp = _unary("exp")
log = _unary("log")
sin = _unary("sin")
cos = _unary("cos")
tanh = _unary("tanh")
sum = _unary("sum")  # noqa: A001
mean = _unary("mean")
reduce_max = _unary("reduce_max")


def square(v: Var) -> Var:
    return v * v


def take(v: Var, index) -> Var:
    """Row (first-axis) selection by slice or integer index array."""
    if not isinstance(index, slice):
        index = np.asarray(index, dtype=np.intp)
    return v.tape.push("take", (v,), index)


def evaluate(tape: Tape, inputs: Mapping[str, Any]):
    return tape.evaluate(inputs)


def gradient(tape: Tape, inputs: Mapping[str, Any]) -> dict:
    return tape.gradient(inputs)


def second_derivative(tape: Tape, inputs: Mapping[str, Any], wrt: str, and_then: str):
    return tape.second_derivative(inputs, wrt, and_then)

