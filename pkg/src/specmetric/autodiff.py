"""Minimal reverse-mode differentiation over numpy arrays.

Only the operations needed to differentiate the pyramid, divisive
normalisation, the NLPD reduction and a Pearson correlation are provided.
Each operation records its parents and a closure mapping the output
gradient to parent gradients; :meth:`Var.backward` replays them in reverse
topological order.

Subgradient conventions: ``d|x|/dx = 0`` at 0 and ``d sqrt(x)/dx = 0`` at 0.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._filters import mirror_indices

__all__ = [
    "Var",
    "const",
    "absolute",
    "sqrt",
    "total",
    "mean",
    "stack",
    "filter2d",
    "correlate_valid",
    "downsample2",
    "upsample2",
    "pearson",
]


class Var:
    """A node on the tape: a value plus how to push gradients to its parents."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 1000  # keep ndarray <op> Var dispatching to Var

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        parents: Sequence["Var"] = (),
        backward: Callable | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf needing it."""
        order = []
        seen = set()
        pending = [(self, False)]
        while pending:
            node, done = pending.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            pending.append((node, True))
            pending.extend((p, False) for p in node._parents)

        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add, lambda g, a, b: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _binary(const(other), self, np.subtract, lambda g, a, b: (g, -g))

    def __mul__(self, other):
        return _binary(self, other, np.multiply, lambda g, a, b: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, np.divide, lambda g, a, b: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return const(other) / self

    def __neg__(self):
        return _unary(self, -self.value, lambda g: -g)


def const(value) -> Var:
    return value if isinstance(value, Var) else Var(value)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _unary(x: Var, value, backward) -> Var:
    return Var(value, x.requires_grad, (x,), lambda g: (backward(g),))


def _binary(a, b, fn, local) -> Var:
    a, b = const(a), const(b)
    value = fn(a.value, b.value)

    def backward(g):
        ga, gb = local(g, a.value, b.value)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Var(value, a.requires_grad or b.requires_grad, (a, b), backward)


def absolute(x: Var) -> Var:
    return _unary(x, np.abs(x.value), lambda g: g * np.sign(x.value))


def sqrt(x: Var) -> Var:
    root = np.sqrt(x.value)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(root > 0, 0.5 / root, 0.0)
        return g * d

    return _unary(x, root, backward)


def total(x: Var) -> Var:
    return _unary(x, np.sum(x.value), lambda g: np.broadcast_to(g, x.shape).copy())


def mean(x: Var) -> Var:
    n = x.value.size
    return _unary(x, np.mean(x.value), lambda g: np.full(x.shape, g / n))


def stack(items: Sequence[Var]) -> Var:
    items = [const(v) for v in items]
    value = np.stack([v.value for v in items])
    return Var(
        value,
        any(v.requires_grad for v in items),
        items,
        lambda g: tuple(g[i] for i in range(len(items))),
    )


def filter2d(x, kernel) -> Var:
    """Mirror-padded same-size correlation, differentiable in both arguments."""
    x, kernel = const(x), const(kernel)
    kh, kw = kernel.shape
    h, w = x.shape
    rows = mirror_indices(h, kh // 2)
    cols = mirror_indices(w, kw // 2)
    padded = x.value[rows][:, cols]
    windows = sliding_window_view(padded, (kh, kw))
    value = np.einsum("ijkl,kl->ij", windows, kernel.value)

    def backward(g):
        gk = np.einsum("ijkl,ij->kl", windows, g) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            # adjoint of correlation: full convolution, then fold the padding back
            gpad = np.zeros((h + 2 * (kh - 1), w + 2 * (kw - 1)))
            gpad[kh - 1 : kh - 1 + h, kw - 1 : kw - 1 + w] = g
            full = np.einsum(
                "ijkl,kl->ij", sliding_window_view(gpad, (kh, kw)), kernel.value[::-1, ::-1]
            )
            flat = (rows[:, None] * w + cols[None, :]).ravel()
            gx = np.bincount(flat, weights=full.ravel(), minlength=h * w).reshape(h, w)
        return gx, gk

    return Var(value, x.requires_grad or kernel.requires_grad, (x, kernel), backward)


def correlate_valid(x, kernel) -> Var:
    """Correlation over positions where the kernel lies wholly inside ``x``."""
    x, kernel = const(x), const(kernel)
    kh, kw = kernel.shape
    windows = sliding_window_view(x.value, (kh, kw))
    value = np.einsum("ijkl,kl->ij", windows, kernel.value)

    def backward(g):
        gk = np.einsum("ijkl,ij->kl", windows, g) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = np.zeros(x.shape)
            for a in range(kh):
                for b in range(kw):
                    gx[a : a + g.shape[0], b : b + g.shape[1]] += kernel.value[a, b] * g
        return gx, gk

    return Var(value, x.requires_grad or kernel.requires_grad, (x, kernel), backward)


def downsample2(x: Var) -> Var:
    def backward(g):
        out = np.zeros(x.shape)
        out[::2, ::2] = g
        return out

    return _unary(x, x.value[::2, ::2], backward)


def upsample2(x: Var, shape: tuple[int, int]) -> Var:
    value = np.zeros(shape)
    value[::2, ::2] = x.value
    return _unary(x, value, lambda g: g[::2, ::2].copy())


def pearson(x, y) -> Var:
    """Product-moment correlation of two vectors on the tape."""
    x, y = const(x), const(y)
    dx = x - mean(x)
    dy = y - mean(y)
    return total(dx * dy) / sqrt(total(dx * dx) * total(dy * dy))
