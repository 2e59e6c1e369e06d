"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape: every operation produces a ``Var`` holding its value, the
parent ``Var``s it was computed from, and one vector-Jacobian-product
closure per parent.  ``backward`` walks the tape once in reverse
topological order and accumulates gradients into every node that
requires them.  All values and gradients are float64; evaluation is
single-threaded and deterministic.

The primitive set is deliberately small: affine maps, the elementwise
nonlinearities the coupling networks and losses use, reductions, and
concat/split plumbing.  New fused primitives can be registered through
``Var.from_op`` (value, parents, vjps) without touching this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LEAKY_SLOPE = 0.01


class EvalError(RuntimeError):
    """A primitive produced a non-finite value during evaluation."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise EvalError(f"non-finite value produced by primitive '{op}'")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Var:
    """One tape node: a float64 array plus backpropagation bookkeeping."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjps")

    def __init__(self, value, requires_grad: bool = False):
        self.value = _as_array(value)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._vjps: tuple = ()

    @classmethod
    def from_op(cls, value, parents: Sequence["Var"], vjps: Sequence[Callable], op: str) -> "Var":
        """Extension point: register the result of a (possibly fused) primitive.

        ``vjps[i]`` maps the output gradient to the gradient contribution of
        ``parents[i]``; it is only invoked when that parent requires a
        gradient.  The value is checked for finiteness against ``op``.
        """
        value = _as_array(value)
        _check_finite(value, op)
        out = cls(value, requires_grad=any(p.requires_grad for p in parents))
        out._parents = tuple(parents)
        out._vjps = tuple(vjps)
        return out

    def item(self) -> float:
        return float(self.value)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_var(x) -> Var:
    """Lift an array or scalar to a constant Var (no-op on Vars)."""
    return x if isinstance(x, Var) else Var(x)


def backward(root: Var) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for the whole tape.

    ``root`` must be scalar.  Nodes that do not require gradients are
    skipped entirely; traversal order is deterministic.
    """
    if root.value.ndim != 0:
        raise ValueError("backward expects a scalar root")
    if not root.requires_grad:
        return
    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        g = node.grad
        for parent, vjp in zip(node._parents, node._vjps):
            if parent.requires_grad:
                contrib = vjp(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib


# ---------------------------------------------------------------------------
# primitives

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var.from_op(
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(g, b.value.shape)),
        "add",
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var.from_op(
        a.value - b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(-g, b.value.shape)),
        "sub",
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var.from_op(
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
        "mul",
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.value / b.value
    return Var.from_op(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.value, a.value.shape),
            lambda g: _unbroadcast(-g * out / b.value, b.value.shape),
        ),
        "div",
    )


def matmul(a, b) -> Var:
    """Matrix product; ``a`` may be 1-D or 2-D, ``b`` must be 2-D."""
    a, b = as_var(a), as_var(b)
    if b.value.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")
    out = a.value @ b.value

    def vjp_a(g):
        return g @ b.value.T

    def vjp_b(g):
        if a.value.ndim == 1:
            return np.outer(a.value, g)
        return a.value.T @ g

    return Var.from_op(out, (a, b), (vjp_a, vjp_b), "matmul")


def exp(v) -> Var:
    v = as_var(v)
    with np.errstate(over="ignore"):
        out = np.exp(v.value)
    return Var.from_op(out, (v,), (lambda g: g * out,), "exp")


def tanh(v) -> Var:
    v = as_var(v)
    out = np.tanh(v.value)
    return Var.from_op(out, (v,), (lambda g: g * (1.0 - out * out),), "tanh")


def relu(v) -> Var:
    v = as_var(v)
    mask = v.value > 0
    return Var.from_op(np.where(mask, v.value, 0.0), (v,), (lambda g: g * mask,), "relu")


def leaky_relu(v, slope: float = LEAKY_SLOPE) -> Var:
    v = as_var(v)
    mask = v.value > 0
    out = np.where(mask, v.value, slope * v.value)
    return Var.from_op(out, (v,), (lambda g: g * np.where(mask, 1.0, slope),), "leaky_relu")


def sin(v) -> Var:
    v = as_var(v)
    return Var.from_op(np.sin(v.value), (v,), (lambda g: g * np.cos(v.value),), "sin")


def cos(v) -> Var:
    v = as_var(v)
    return Var.from_op(np.cos(v.value), (v,), (lambda g: -g * np.sin(v.value),), "cos")


def _expand(g: np.ndarray, shape: tuple, axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def vsum(v, axis=None) -> Var:
    v = as_var(v)
    return Var.from_op(
        v.value.sum(axis=axis),
        (v,),
        (lambda g: _expand(g, v.value.shape, axis),),
        "sum",
    )


def mean(v, axis=None) -> Var:
    v = as_var(v)
    n = v.value.size if axis is None else v.value.shape[axis]
    return Var.from_op(
        v.value.mean(axis=axis),
        (v,),
        (lambda g: _expand(g / n, v.value.shape, axis),),
        "mean",
    )


def square_norm(v, axis=None) -> Var:
    """Sum of squared entries, optionally along one axis."""
    v = as_var(v)
    return Var.from_op(
        (v.value * v.value).sum(axis=axis),
        (v,),
        (lambda g: _expand(g, v.value.shape, axis) * (2.0 * v.value),),
        "square_norm",
    )


def concat(parts: Sequence, axis: int = -1) -> Var:
    parts = [as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]

        return vjp

    return Var.from_op(
        np.concatenate([p.value for p in parts], axis=axis),
        tuple(parts),
        tuple(make_vjp(i) for i in range(len(parts))),
        "concat",
    )


def col_slice(v, start: int, stop: int) -> Var:
    """Slice columns [start, stop) of the last axis."""
    v = as_var(v)

    def vjp(g):
        full = np.zeros(v.value.shape, dtype=np.float64)
        full[..., start:stop] = g
        return full

    return Var.from_op(v.value[..., start:stop], (v,), (vjp,), "col_slice")


def split(v, at: int) -> tuple[Var, Var]:
    """Split the last axis at ``at``; inverse of concat on two parts."""
    v = as_var(v)
    width = v.value.shape[-1]
    return col_slice(v, 0, at), col_slice(v, at, width)


def permute_cols(v, perm: np.ndarray) -> Var:
    """Reorder the last axis: out[..., i] = v[..., perm[i]]."""
    v = as_var(v)
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return Var.from_op(v.value[..., perm], (v,), (lambda g: g[..., inv],), "permute_cols")


def reshape(v, shape) -> Var:
    v = as_var(v)
    return Var.from_op(
        v.value.reshape(shape), (v,), (lambda g: g.reshape(v.value.shape),), "reshape"
    )


def segment(v, offset: int, length: int) -> Var:
    """Contiguous slice of a flat vector (parameter unpacking)."""
    v = as_var(v)
    if v.value.ndim != 1:
        raise ValueError("segment expects a flat vector")

    def vjp(g):
        full = np.zeros(v.value.shape, dtype=np.float64)
        full[offset : offset + length] = g
        return full

    return Var.from_op(v.value[offset : offset + length], (v,), (vjp,), "segment")


# ---------------------------------------------------------------------------
# program-level interface

@dataclass
class Gradient:
    """Scalar program value and its gradient w.r.t. the chosen target."""

    value: float
    grad: np.ndarray


class DiffProgram:
    """A scalar-valued computation built from the primitives above.

    ``build`` receives Vars (an input vector, or a parameter vector plus a
    constant input batch) and must return a scalar Var.
    """

    def __init__(self, build: Callable[..., Var], input_dim: int | None = None,
                 param_dim: int | None = None):
        self.build = build
        self.input_dim = input_dim
        self.param_dim = param_dim

    def __call__(self, *args) -> Var:
        return self.build(*args)


def _finished_gradient(out: Var, target: Var) -> Gradient:
    grad = target.grad if target.grad is not None else np.zeros(target.value.shape)
    _check_finite(grad, "gradient")
    return Gradient(value=float(out.value), grad=grad)


def value_and_input_grad(prog: DiffProgram, x: np.ndarray) -> Gradient:
    """Evaluate a scalar program and differentiate it w.r.t. its input."""
    x = _as_array(x)
    if prog.input_dim is not None and x.shape[-1] != prog.input_dim:
        raise ValueError(f"program expects input dim {prog.input_dim}, got {x.shape[-1]}")
    xv = Var(x, requires_grad=True)
    out = prog(xv)
    backward(out)
    return _finished_gradient(out, xv)


def value_and_param_grad(prog: DiffProgram, params: np.ndarray, xs: np.ndarray) -> Gradient:
    """Evaluate a mean batch loss and differentiate it w.r.t. the parameters."""
    params = _as_array(params)
    if prog.param_dim is not None and params.shape[0] != prog.param_dim:
        raise ValueError(f"program expects {prog.param_dim} parameters, got {params.shape[0]}")
    pv = Var(params, requires_grad=True)
    out = prog(pv, _as_array(xs))
    backward(out)
    return _finished_gradient(out, pv)
