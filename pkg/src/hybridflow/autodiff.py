"""Minimal reverse-mode tape over numpy arrays.

Built for the flow solver's unrolled adjoint: the forward solve records every
array operation on a tape, and one backward sweep in reverse creation order
yields exact gradients of the truncated iteration. The op set is exactly what
the solver needs (elementwise arithmetic, trig, gather/scatter, stacking).

All functions accept plain ndarrays as well as Vars and fall through to raw
numpy when no Var is involved, so the same solver code runs recorded or not.
"""

from __future__ import annotations

import numpy as np


class Tape:
    """Records Vars in creation order; backward() sweeps them in reverse."""

    __slots__ = ("_order",)

    def __init__(self):
        self._order: list[Var] = []

    def __len__(self):
        return len(self._order)

    def backward(self, output: "Var", seed) -> None:
        """Accumulate d(output . seed)/d(leaf) into each Var's .grad.

        Resets all gradients first, so calling backward twice on the same
        tape gives identical results.
        """
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != np.shape(output.value):
            raise ValueError(f"seed shape {seed.shape} != output shape {np.shape(output.value)}")
        for v in self._order:
            v.grad = None
        output.grad = seed
        for v in reversed(self._order):
            g = v.grad
            if g is None:
                continue
            for parent, vjp in v._edges:
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = np.array(contrib, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + contrib


class Var:
    """A tape-recorded array. Do not mutate .value after creation."""

    __slots__ = ("value", "tape", "grad", "_edges")

    # make ndarray <op> Var defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, tape: Tape, edges=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.grad = None
        self._edges = edges
        tape._order.append(self)

    @property
    def shape(self):
        return self.value.shape

    # arithmetic operators dispatch to the module-level functions
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting expanded it."""
    if grad.shape == shape:
        return grad
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(tape, value, edges):
    # drop edges to non-Var parents
    edges = [e for e in edges if type(e[0]) is Var]
    return Var(value, tape, edges)


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    tape = _tape_of(a, b)
    va, vb = value_of(a), value_of(b)
    out = va + vb
    if tape is None:
        return out
    return _make(tape, out, [
        (a, lambda g: _unbroadcast(g, va.shape)),
        (b, lambda g: _unbroadcast(g, vb.shape)),
    ])


def subtract(a, b):
    tape = _tape_of(a, b)
    va, vb = value_of(a), value_of(b)
    out = va - vb
    if tape is None:
        return out
    return _make(tape, out, [
        (a, lambda g: _unbroadcast(g, va.shape)),
        (b, lambda g: _unbroadcast(-g, vb.shape)),
    ])


def multiply(a, b):
    tape = _tape_of(a, b)
    va, vb = value_of(a), value_of(b)
    out = va * vb
    if tape is None:
        return out
    return _make(tape, out, [
        (a, lambda g: _unbroadcast(g * vb, va.shape)),
        (b, lambda g: _unbroadcast(g * va, vb.shape)),
    ])


def divide(a, b):
    tape = _tape_of(a, b)
    va, vb = value_of(a), value_of(b)
    out = va / vb
    if tape is None:
        return out
    return _make(tape, out, [
        (a, lambda g: _unbroadcast(g / vb, va.shape)),
        (b, lambda g: _unbroadcast(-g * va / (vb * vb), vb.shape)),
    ])


def negative(a):
    tape = _tape_of(a)
    va = value_of(a)
    if tape is None:
        return -va
    return _make(tape, -va, [(a, lambda g: -g)])


def power(a, exponent):
    """a ** exponent for a constant numeric exponent."""
    if isinstance(exponent, Var):
        raise TypeError("power() supports constant exponents only")
    tape = _tape_of(a)
    va = value_of(a)
    out = va ** exponent
    if tape is None:
        return out
    return _make(tape, out, [(a, lambda g: g * exponent * va ** (exponent - 1))])


def sqrt(a):
    tape = _tape_of(a)
    va = value_of(a)
    out = np.sqrt(va)
    if tape is None:
        return out
    return _make(tape, out, [(a, lambda g: g * (0.5 / out))])


def absolute(a):
    """|a|; subgradient 0 at exactly 0."""
    tape = _tape_of(a)
    va = value_of(a)
    out = np.abs(va)
    if tape is None:
        return out
    sign = np.sign(va)
    return _make(tape, out, [(a, lambda g: g * sign)])


def sin(a):
    tape = _tape_of(a)
    va = value_of(a)
    if tape is None:
        return np.sin(va)
    return _make(tape, np.sin(va), [(a, lambda g: g * np.cos(va))])


def cos(a):
    tape = _tape_of(a)
    va = value_of(a)
    if tape is None:
        return np.cos(va)
    return _make(tape, np.cos(va), [(a, lambda g: -g * np.sin(va))])


def maximum(a, b):
    """Elementwise max; on ties the gradient goes to the first argument."""
    tape = _tape_of(a, b)
    va, vb = value_of(a), value_of(b)
    out = np.maximum(va, vb)
    if tape is None:
        return out
    take_a = va >= vb
    return _make(tape, out, [
        (a, lambda g: _unbroadcast(g * take_a, va.shape)),
        (b, lambda g: _unbroadcast(g * ~take_a, vb.shape)),
    ])


def where(cond, a, b):
    """Select by a boolean (non-differentiated) condition array."""
    cond = np.asarray(value_of(cond), dtype=bool)
    tape = _tape_of(a, b)
    va, vb = value_of(a), value_of(b)
    out = np.where(cond, va, vb)
    if tape is None:
        return out
    return _make(tape, out, [
        (a, lambda g: _unbroadcast(g * cond, va.shape)),
        (b, lambda g: _unbroadcast(g * ~cond, vb.shape)),
    ])


def take(a, idx):
    """Row gather a[idx] for an integer (array) index."""
    tape = _tape_of(a)
    va = value_of(a)
    out = va[idx]
    if tape is None:
        return out

    def vjp(g):
        z = np.zeros_like(va)
        np.add.at(z, idx, g)
        return z

    return _make(tape, out, [(a, vjp)])


def column(a, j):
    """a[:, j] as a 1-D array."""
    tape = _tape_of(a)
    va = value_of(a)
    out = va[:, j]
    if tape is None:
        return out

    def vjp(g):
        z = np.zeros_like(va)
        z[:, j] = g
        return z

    return _make(tape, out, [(a, vjp)])


def scatter_add(idx, src, num_rows: int):
    """Rows of src accumulated at positions idx of a fresh zero array."""
    tape = _tape_of(src)
    vs = value_of(src)
    out = np.zeros((num_rows,) + vs.shape[1:], dtype=np.float64)
    np.add.at(out, idx, vs)
    if tape is None:
        return out
    return _make(tape, out, [(src, lambda g: g[idx])])


def stack_last(parts):
    """Stack 1-D (or scalar) arrays along a new trailing axis."""
    tape = _tape_of(*parts)
    values = [value_of(p) for p in parts]
    out = np.stack(values, axis=-1)
    if tape is None:
        return out
    edges = []
    for j, p in enumerate(parts):
        edges.append((p, lambda g, j=j: g[..., j]))
    return _make(tape, out, edges)


def reshape(a, shape):
    tape = _tape_of(a)
    va = value_of(a)
    out = va.reshape(shape)
    if tape is None:
        return out
    return _make(tape, out, [(a, lambda g: g.reshape(va.shape))])
