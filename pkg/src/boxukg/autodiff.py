"""Minimal reverse-mode differentiation over fixed-shape float64 arrays.

Every operation accepts either plain numpy values or :class:`Node` objects.
With plain values it just computes the result; as soon as a ``Node`` takes
part, the result is a ``Node`` recorded on the operand's :class:`Tape`, and
``tape.backward(root)`` fills in ``.grad`` for every node on that tape.

Operands of binary ops must share one shape; the single exception is a
plain Python number, which acts as a scalar constant.  There is no general
broadcasting.

    >>> tape = Tape()
    >>> a, b = tape.variable(2.0), tape.variable(3.0)
    >>> c = a * b
    >>> tape.backward(c)
    >>> float(a.grad), float(b.grad)
    (3.0, 2.0)
"""

from __future__ import annotations

import numbers
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericDomainError

__all__ = [
    "Node",
    "Tape",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "softplus",
    "log_softplus",
    "logsumexp",
    "sum",
    "prod",
    "take",
    "value_of",
]

DIV_FLOOR = 1e-300
# beyond |x/beta| > 30 softplus is replaced by its asymptote
SOFTPLUS_SATURATION = 30.0


class Node:
    """A value on a tape together with its accumulated gradient."""

    __slots__ = ("value", "grad", "tape", "_parents", "_vjp")
    # make ndarray (op) Node defer to the reflected Node methods
    __array_ufunc__ = None

    def __init__(self, value, tape: "Tape", parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"Node({self.value!r})"

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
        return neg(self)


class Tape:
    """Ordered record of the nodes created during one forward evaluation."""

    def __init__(self):
        self._nodes: list[Node] = []

    def __len__(self):
        return len(self._nodes)

    def variable(self, value) -> Node:
        """Leaf node whose gradient is wanted."""
        node = Node(np.array(value, dtype=np.float64), self)
        self._nodes.append(node)
        return node

    def constant(self, value) -> Node:
        # constants are leaves too; nothing distinguishes them except intent
        return self.variable(value)

    def clear(self):
        for node in self._nodes:
            node.grad = None
        self._nodes = []

    def backward(self, root: Node) -> None:
        """Seed ``root`` with 1 and propagate gradients in reverse tape order.

        Every node on the tape ends up with a gradient array of its own
        shape; nodes the root does not depend on get zeros.
        """
        if not isinstance(root, Node) or root.tape is not self:
            raise ConfigurationError("backward root must be a node on this tape")
        if root.value.ndim != 0:
            raise ConfigurationError(
                f"backward needs a scalar root, got shape {root.value.shape}"
            )
        for node in self._nodes:
            node.grad = None
        root.grad = np.ones((), dtype=np.float64)
        for node in reversed(self._nodes):
            if node.grad is None or node._vjp is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if parent is None or g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=np.float64)
                else:
                    parent.grad = parent.grad + g
        for node in self._nodes:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)


def value_of(x):
    """The numeric value of a node, or ``x`` itself as a float array."""
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _is_number(x) -> bool:
    return isinstance(x, numbers.Real) and not isinstance(x, Node)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ConfigurationError("operands live on different tapes")
    return tape


def _record(tape: Tape, value, inputs, vjp: Callable) -> Node:
    parents = tuple(x if isinstance(x, Node) else None for x in inputs)
    node = Node(value, tape, parents, vjp)
    tape._nodes.append(node)
    return node


def _check_same_shape(a, b):
    if _is_number(a) or _is_number(b):
        return
    sa, sb = np.shape(value_of(a)), np.shape(value_of(b))
    if sa != sb:
        raise ConfigurationError(f"shape mismatch: {sa} vs {sb}")


# -- elementwise binary ops -------------------------------------------------


def add(a, b):
    _check_same_shape(a, b)
    out = value_of(a) + value_of(b)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return _record(tape, out, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same_shape(a, b)
    out = value_of(a) - value_of(b)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return _record(tape, out, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same_shape(a, b)
    va, vb = value_of(a), value_of(b)
    out = va * vb
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return _record(tape, out, (a, b), lambda g: (g * vb, g * va))


def div(a, b):
    _check_same_shape(a, b)
    va, vb = value_of(a), value_of(b)
    if np.any(np.abs(vb) < DIV_FLOOR):
        raise NumericDomainError("division by a value below 1e-300 in magnitude")
    out = va / vb
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return _record(tape, out, (a, b), lambda g: (g / vb, -g * out / vb))


# -- elementwise unary ops --------------------------------------------------


def neg(a):
    out = -value_of(a)
    tape = _tape_of(a)
    if tape is None:
        return out
    return _record(tape, out, (a,), lambda g: (-g,))


def exp(a):
    out = np.exp(value_of(a))
    tape = _tape_of(a)
    if tape is None:
        return out
    return _record(tape, out, (a,), lambda g: (g * out,))


def log(a):
    va = value_of(a)
    if np.any(va <= 0):
        raise NumericDomainError("log of a non-positive value")
    out = np.log(va)
    tape = _tape_of(a)
    if tape is None:
        return out
    return _record(tape, out, (a,), lambda g: (g / va,))


def _sigmoid(z):
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def _check_scale(beta):
    if not beta > 0:
        raise ConfigurationError(f"scale must be positive, got {beta}")


def softplus(a, beta: float = 1.0):
    """``beta * log(1 + exp(a / beta))`` with saturated branches.

    The derivative is the logistic function of ``a / beta``.
    """
    _check_scale(beta)
    va = value_of(a)
    z = va / beta
    hi = z > SOFTPLUS_SATURATION
    lo = z < -SOFTPLUS_SATURATION
    zc = np.clip(z, -SOFTPLUS_SATURATION, SOFTPLUS_SATURATION)
    out = np.where(hi, va, np.where(lo, beta * np.exp(np.minimum(z, 0.0)), beta * np.log1p(np.exp(zc))))
    tape = _tape_of(a)
    if tape is None:
        return out
    return _record(tape, out, (a,), lambda g: (g * _sigmoid(z),))


def log_softplus(a, beta: float = 1.0):
    """``log(softplus(a, beta))`` evaluated without underflow.

    In the low branch this is ``log(beta) + a / beta`` exactly, so
    log-volumes of very thin boxes stay finite.
    """
    _check_scale(beta)
    va = value_of(a)
    z = va / beta
    hi = z > SOFTPLUS_SATURATION
    lo = z < -SOFTPLUS_SATURATION
    zc = np.clip(z, -SOFTPLUS_SATURATION, SOFTPLUS_SATURATION)
    mid_sp = np.log1p(np.exp(zc))
    safe_va = np.where(hi, va, 1.0)
    out = np.where(hi, np.log(safe_va), np.where(lo, np.log(beta) + z, np.log(beta) + np.log(mid_sp)))
    tape = _tape_of(a)
    if tape is None:
        return out
    dmid = _sigmoid(zc) / (beta * mid_sp)
    deriv = np.where(hi, 1.0 / safe_va, np.where(lo, 1.0 / beta, dmid))
    return _record(tape, out, (a,), lambda g: (g * deriv,))


def logsumexp(values: Sequence, beta: float = 1.0):
    """``beta * log(sum_i exp(v_i / beta))`` taken elementwise across ``values``.

    All entries of ``values`` must share one shape.  The gradient with
    respect to ``v_i`` is the i-th softmax weight of ``v / beta``.
    """
    values = list(values)
    if not values:
        raise ConfigurationError("logsumexp of an empty sequence")
    _check_scale(beta)
    for v in values[1:]:
        _check_same_shape(values[0], v)
    stacked = np.stack([value_of(v) for v in values])
    m = stacked.max(axis=0)
    e = np.exp((stacked - m) / beta)
    s = e.sum(axis=0)
    out = m + beta * np.log(s)
    tape = _tape_of(*values)
    if tape is None:
        return out
    weights = e / s
    return _record(tape, out, values, lambda g: tuple(g * w for w in weights))


# -- reductions and indexing -------------------------------------------------


def sum(a, axis: int | None = None):  # noqa: A001 - mirrors numpy naming
    va = value_of(a)
    out = va.sum(axis=axis)
    tape = _tape_of(a)
    if tape is None:
        return out

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, va.shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), va.shape),)

    return _record(tape, out, (a,), vjp)


def prod(a, axis: int = -1):
    """Product along ``axis``; the gradient uses leave-one-out products so
    zero factors are handled exactly."""
    va = value_of(a)
    out = va.prod(axis=axis)
    tape = _tape_of(a)
    if tape is None:
        return out

    def vjp(g):
        x = np.moveaxis(va, axis, -1)
        ones = np.ones(x.shape[:-1] + (1,))
        before = np.cumprod(np.concatenate([ones, x[..., :-1]], axis=-1), axis=-1)
        after = np.flip(
            np.cumprod(np.concatenate([ones, np.flip(x, -1)[..., :-1]], axis=-1), axis=-1), -1
        )
        loo = np.moveaxis(before * after, -1, axis)
        return (np.expand_dims(g, axis) * loo,)

    return _record(tape, out, (a,), vjp)


def take(a, index):
    """Rows of ``a`` at integer ``index`` (axis 0); repeated rows accumulate."""
    va = value_of(a)
    index = np.asarray(index, dtype=np.intp)
    out = va[index]
    tape = _tape_of(a)
    if tape is None:
        return out

    def vjp(g):
        full = np.zeros_like(va)
        np.add.at(full, index, g)
        return (full,)

    return _record(tape, out, (a,), vjp)
