"""Minimal reverse-mode autodiff over float64 numpy arrays.

The graph topology is fixed per forward pass (no dynamic capture): each op
returns a Tensor holding its parents and a vector-Jacobian closure.
Every op rejects non-finite outputs so divergence surfaces immediately.
"""

from __future__ import annotations

import numpy as np

_FINITE_CHECK = True


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        arr = np.asarray(data, dtype=np.float64)
        if _FINITE_CHECK and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is not None:
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    if id(parent) in grads:
                        grads[id(parent)] = grads[id(parent)] + pg
                    else:
                        grads[id(parent)] = pg
            elif node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data)


def _out(data, parents, vjp):
    if any(p.requires_grad for p in parents):
        return Tensor(data, _parents=tuple(parents), _vjp=vjp)
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _out(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _out(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _out(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, s: float) -> Tensor:
    return _out(x.data * s, (x,), lambda g: (g * s,))


def mul_const(x: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    return _out(x.data * c, (x,), lambda g: (g * c,))


def add_const(x: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    return _out(x.data + c, (x,), lambda g: (g,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.data.shape != (x.data.shape[-1],):
        raise ValueError(f"bias shape {b.data.shape} does not match width {x.data.shape[-1]}")
    return _out(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    bd = b.data.T if transpose_b else b.data
    if a.data.shape[-1] != bd.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = a.data @ bd

    def vjp(g):
        if transpose_b:
            return g @ b.data, g.T @ a.data
        return g @ b.data.T, a.data.T @ g

    return _out(out, (a, b), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _out(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _out(out, (x,), lambda g: (g * out,))


def log1p(x: Tensor) -> Tensor:
    return _out(np.log1p(x.data), (x,), lambda g: (g / (1.0 + x.data),))


def sqrt_clamped(x: Tensor, floor: float = 1e-12) -> Tensor:
    clamped = np.maximum(x.data, floor)
    out = np.sqrt(clamped)
    mask = x.data > floor
    return _out(out, (x,), lambda g: (g * mask * 0.5 / out,))


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _out(out, (x,), vjp)


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def vjp(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _out(out, (x,), vjp)


def rowsum(x: Tensor) -> Tensor:
    return _out(x.data.sum(axis=-1), (x,), lambda g: (np.repeat(g[..., None], x.data.shape[-1], axis=-1),))


def sum_all(x: Tensor) -> Tensor:
    return _out(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _out(x.data.mean(), (x,), lambda g: (np.broadcast_to(g / n, x.data.shape).copy(),))


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    raw = np.linalg.norm(x.data, axis=-1, keepdims=True)
    n = np.maximum(raw, eps)
    out = x.data / n
    live = raw > eps

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - live * (out * dot)) / n,)

    return _out(out, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (x.data - mu) / sigma
    out = xhat * gain.data + bias.data

    def vjp(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) / sigma
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _out(out, (x, gain, bias), vjp)


def take_rows(x: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)

    def vjp(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return (dx,)

    return _out(x.data[idx], (x,), vjp)


def place_rows(base: Tensor, indices, rows: Tensor) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    out = base.data.copy()
    out[idx] = rows.data

    def vjp(g):
        dbase = g.copy()
        dbase[idx] = 0.0
        return dbase, g[idx]

    return _out(out, (base, rows), vjp)


def slice_cols(x: Tensor, j0: int, j1: int) -> Tensor:
    def vjp(g):
        dx = np.zeros_like(x.data)
        dx[:, j0:j1] = g
        return (dx,)

    return _out(x.data[:, j0:j1].copy(), (x,), vjp)


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    widths = [t.data.shape[1] for t in tensors]
    offs = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offs[i]:offs[i + 1]] for i in range(len(tensors)))

    return _out(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b with exact reverse-mode gradients."""
    return add_bias(matmul(x, w), b)


def mlp2(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer perceptron: linear -> relu -> linear."""
    return linear(relu(linear(x, w1, b1)), w2, b2)


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, params, heads: int) -> Tensor:
    """Scaled dot-product attention with per-head splits and output projection.

    params maps wq/bq/wk/bk/wv/bv/wo/bo to Tensors of width D; D must be
    divisible by heads.
    """
    d = q_in.data.shape[1]
    if d % heads != 0:
        raise ValueError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    q = linear(q_in, params["wq"], params["bq"])
    k = linear(k_in, params["wk"], params["bk"])
    v = linear(v_in, params["wv"], params["bv"])
    outs = []
    inv = 1.0 / np.sqrt(dh)
    for h in range(heads):
        qh = slice_cols(q, h * dh, (h + 1) * dh)
        kh = slice_cols(k, h * dh, (h + 1) * dh)
        vh = slice_cols(v, h * dh, (h + 1) * dh)
        w = softmax_rows(scale(matmul(qh, kh, transpose_b=True), inv))
        outs.append(matmul(w, vh))
    merged = outs[0] if heads == 1 else concat_cols(outs)
    return linear(merged, params["wo"], params["bo"])


def grad_check(f, inputs, step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The output of f is reduced through a fixed random linear functional so
    constant-sum outputs (e.g. softmax rows) still exercise the gradient.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    out = f(*inputs)
    rng = np.random.default_rng(0xC0FFEE)
    weights = rng.standard_normal(out.data.shape)

    def scalar_of(o):
        return float((o.data * weights).sum())

    sum_all(mul_const(out, weights)).backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = scalar_of(f(*inputs))
            flat[i] = orig - step
            lo = scalar_of(f(*inputs))
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * step)
        denom = max(1e-6, float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)))
        worst = max(worst, float(np.abs(analytic - numeric).max(initial=0.0)) / denom)
    return worst
