"""Minimal reverse-mode accumulation for the diffusion refiner.

Private: just enough ops for Chebyshev feature mixing, the recurrent cell,
and the training objective, on float64 ndarrays. Not a general autodiff
surface.
"""

import numpy as np


class Var:
    """A node in the tape: value, accumulated gradient, backward closure."""

    __slots__ = ("v", "grad", "_prev", "_backward")

    def __init__(self, value, prev=()):
        self.v = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._prev = prev
        self._backward = None

    def backward(self):
        order, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._prev:
                visit(p)
            order.append(node)

        visit(self)
        self.grad = np.ones_like(self.v)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()


def _as_var(x):
    return x if isinstance(x, Var) else Var(x)


def _acc(node, g):
    node.grad = g if node.grad is None else node.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _as_var(a), _as_var(b)
    out = Var(a.v + b.v, (a, b))

    def back():
        _acc(a, _unbroadcast(out.grad, a.v.shape))
        _acc(b, _unbroadcast(out.grad, b.v.shape))

    out._backward = back
    return out


def sub(a, b):
    a, b = _as_var(a), _as_var(b)
    out = Var(a.v - b.v, (a, b))

    def back():
        _acc(a, _unbroadcast(out.grad, a.v.shape))
        _acc(b, _unbroadcast(-out.grad, b.v.shape))

    out._backward = back
    return out


def mul(a, b):
    a, b = _as_var(a), _as_var(b)
    out = Var(a.v * b.v, (a, b))

    def back():
        _acc(a, _unbroadcast(out.grad * b.v, a.v.shape))
        _acc(b, _unbroadcast(out.grad * a.v, b.v.shape))

    out._backward = back
    return out


def cmul(c, a):
    """Constant scalar times variable."""
    a = _as_var(a)
    out = Var(c * a.v, (a,))
    out._backward = lambda: _acc(a, c * out.grad)
    return out


def matmul(a, b):
    a, b = _as_var(a), _as_var(b)
    out = Var(a.v @ b.v, (a, b))

    def back():
        _acc(a, out.grad @ b.v.T)
        _acc(b, a.v.T @ out.grad)

    out._backward = back
    return out


def transpose(a):
    a = _as_var(a)
    out = Var(a.v.T, (a,))
    out._backward = lambda: _acc(a, out.grad.T)
    return out


def spmm(mat, a):
    """Constant sparse matrix times variable; mat must be symmetric or the
    caller accounts for the transpose itself (ours are symmetric)."""
    a = _as_var(a)
    out = Var(mat @ a.v, (a,))
    out._backward = lambda: _acc(a, mat.T @ out.grad)
    return out


def sigmoid(a):
    a = _as_var(a)
    s = _stable_sigmoid(a.v)
    out = Var(s, (a,))
    out._backward = lambda: _acc(a, out.grad * s * (1.0 - s))
    return out


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def tanh(a):
    a = _as_var(a)
    t = np.tanh(a.v)
    out = Var(t, (a,))
    out._backward = lambda: _acc(a, out.grad * (1.0 - t * t))
    return out


def slice_cols(a, start, stop):
    a = _as_var(a)
    out = Var(a.v[:, start:stop], (a,))

    def back():
        g = np.zeros_like(a.v)
        g[:, start:stop] = out.grad
        _acc(a, g)

    out._backward = back
    return out


def gather_rows(a, rows):
    a = _as_var(a)
    out = Var(a.v[rows], (a,))

    def back():
        g = np.zeros_like(a.v)
        np.add.at(g, rows, out.grad)
        _acc(a, g)

    out._backward = back
    return out


def sum_all(a):
    a = _as_var(a)
    out = Var(a.v.sum(), (a,))
    out._backward = lambda: _acc(a, np.broadcast_to(out.grad, a.v.shape).copy())
    return out


def sum_axis1(a):
    a = _as_var(a)
    out = Var(a.v.sum(axis=1), (a,))
    out._backward = lambda: _acc(a, np.repeat(out.grad[:, None], a.v.shape[1], axis=1))
    return out


def cheb_mix(terms, coeffs):
    """Mix Chebyshev basis terms into channel blocks.

    terms: list of p+1 (N, R) vars; coeffs: (p+1, C) var. Output (N, C*R)
    with block c equal to sum_j coeffs[j, c] * terms[j].
    """
    n, r = terms[0].v.shape
    p1, c = coeffs.v.shape
    val = np.empty((n, c * r))
    for ch in range(c):
        block = np.zeros((n, r))
        for j in range(p1):
            block += coeffs.v[j, ch] * terms[j].v
        val[:, ch * r:(ch + 1) * r] = block
    out = Var(val, tuple(terms) + (coeffs,))

    def back():
        gc = np.zeros_like(coeffs.v)
        for ch in range(c):
            g_block = out.grad[:, ch * r:(ch + 1) * r]
            for j in range(p1):
                gc[j, ch] = float(np.sum(terms[j].v * g_block))
                _acc(terms[j], coeffs.v[j, ch] * g_block)
        _acc(coeffs, gc)

    out._backward = back
    return out
