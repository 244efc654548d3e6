"""Dense float32 tensors with reverse-mode gradients.

This is a deliberately small autograd: numpy holds the arrays, each op
builds a closure for its vector-Jacobian product, and ``backward`` walks the
graph in reverse topological order. Everything is 32-bit; masks and token
ids are plain numpy arrays, not graph nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward_fn: Callable | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.grad is not None else 'no'})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(DTYPE, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate gradients of a scalar root into every reachable tensor."""
    if root.data.size != 1:
        raise ValueError("backward needs a scalar root")
    order = _topo(root)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=back)


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant array that takes no gradient."""
    c = np.asarray(c, dtype=DTYPE)
    out_data = a.data * c

    def back(g):
        _accum(a, _unbroadcast(g * c, a.data.shape))

    return Tensor(out_data, parents=(a,), backward_fn=back)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out_data = a.data * DTYPE(s)

    def back(g):
        _accum(a, g * DTYPE(s))

    return Tensor(out_data, parents=(a,), backward_fn=back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def back(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return add(out, b) if b is not None else out


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    out_data = np.where(keep, x.data, DTYPE(0))

    def back(g):
        _accum(x, g * keep)

    return Tensor(out_data, parents=(x,), backward_fn=back)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = x.data.reshape(shape)

    def back(g):
        _accum(x, g.reshape(x.data.shape))

    return Tensor(out_data, parents=(x,), backward_fn=back)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    out_data = x.data.transpose(axes)

    def back(g):
        _accum(x, g.transpose(inverse))

    return Tensor(out_data, parents=(x,), backward_fn=back)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return Tensor(out_data, parents=tuple(parts), backward_fn=back)


def concat_last_dim(parts: Sequence[Tensor]) -> Tensor:
    return concat(parts, axis=-1)


def sum_all(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum(), dtype=DTYPE)

    def back(g):
        _accum(x, np.broadcast_to(g, x.data.shape).astype(DTYPE))

    return Tensor(out_data, parents=(x,), backward_fn=back)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    out_data = table.data[ids]

    def back(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))

    return Tensor(out_data, parents=(table,), backward_fn=back)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p is zero."""
    if not training or p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError("dropout probability must be below 1")
    keep = (rng.random(x.data.shape) >= p).astype(DTYPE) / DTYPE(1.0 - p)
    return mul_const(x, keep)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + DTYPE(eps))
    xhat = (x.data - mu) * inv
    out_data = gain.data * xhat + bias.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        _accum(bias, g.sum(axis=lead))
        _accum(gain, (g * xhat).sum(axis=lead))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (dxhat - m1 - xhat * m2))

    return Tensor(out_data, parents=(x, gain, bias), backward_fn=back)


def softmax(x: Tensor, mask: np.ndarray | None = None, axis: int = -1,
            allow_empty: bool = False) -> Tensor:
    """Masked softmax; disallowed positions get zero probability.

    A row with no allowed positions is an error unless allow_empty, in which
    case the whole row is zero (no probability mass anywhere).
    """
    z = x.data
    if mask is not None:
        allowed = np.broadcast_to(np.asarray(mask).astype(bool), z.shape)
        masked = np.where(allowed, z, -np.inf)
    else:
        masked = z
    rowmax = masked.max(axis=axis, keepdims=True)
    safe_max = np.where(np.isfinite(rowmax), rowmax, 0.0).astype(DTYPE)
    e = np.exp(masked - safe_max, dtype=DTYPE)
    if mask is not None:
        e = np.where(allowed, e, 0.0).astype(DTYPE)
    total = e.sum(axis=axis, keepdims=True)
    empty = total == 0
    if empty.any() and not allow_empty:
        raise ValueError("softmax over a fully masked row")
    p = e / np.where(empty, 1.0, total).astype(DTYPE)

    def back(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        _accum(x, p * (g - inner))

    return Tensor(p, parents=(x,), backward_fn=back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data
    rowmax = z.max(axis=axis, keepdims=True)
    shifted = z - rowmax
    lse = np.log(np.exp(shifted, dtype=DTYPE).sum(axis=axis, keepdims=True), dtype=DTYPE)
    out_data = shifted - lse

    def back(g):
        p = np.exp(out_data, dtype=DTYPE)
        _accum(x, g - p * g.sum(axis=axis, keepdims=True))

    return Tensor(out_data, parents=(x,), backward_fn=back)


def gather_last(x: Tensor, ids: np.ndarray) -> Tensor:
    """Pick one entry along the last axis per leading position."""
    ids = np.asarray(ids)
    vocab = x.data.shape[-1]
    flat = x.data.reshape(-1, vocab)
    picked = flat[np.arange(flat.shape[0]), ids.reshape(-1)]
    out_data = picked.reshape(ids.shape)

    def back(g):
        gf = np.zeros_like(flat)
        gf[np.arange(flat.shape[0]), ids.reshape(-1)] = g.reshape(-1)
        _accum(x, gf.reshape(x.data.shape))

    return Tensor(out_data, parents=(x,), backward_fn=back)


# ---------------------------------------------------------------------------
# composite blocks


@dataclass
class AttentionParams:
    """Stacked per-head projections: wq/wk/wv are (d_model, heads*d_k)."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    def tensors(self) -> list[Tensor]:
        return [self.wq, self.wk, self.wv, self.wo]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.data.shape
    return transpose(reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dk = x.data.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, t, h * dk))


def multi_head_attention(
    q_in: Tensor,
    kv_in: Tensor,
    params: AttentionParams,
    key_mask: np.ndarray | None = None,
    causal: bool = False,
    allow_empty_rows: bool = False,
    return_weights: bool = False,
):
    """Scaled dot-product attention over stacked heads.

    key_mask is (batch, key_len) with 1 for usable keys; causal additionally
    hides keys beyond each query position. Inputs are (batch, len, d_model).
    """
    heads = params.heads
    d_model = q_in.data.shape[-1]
    d_k = d_model // heads
    q = _split_heads(matmul(q_in, params.wq), heads)
    k = _split_heads(matmul(kv_in, params.wk), heads)
    v = _split_heads(matmul(kv_in, params.wv), heads)
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d_k))

    tq = q_in.data.shape[1]
    tk = kv_in.data.shape[1]
    mask = None
    if key_mask is not None:
        mask = np.asarray(key_mask).astype(bool).reshape(-1, 1, 1, tk)
    if causal:
        tri = np.tril(np.ones((tq, tk), dtype=bool)).reshape(1, 1, tq, tk)
        mask = tri if mask is None else (mask & tri)

    probs = softmax(scores, mask=mask, allow_empty=allow_empty_rows)
    ctx = _merge_heads(matmul(probs, v))
    out = matmul(ctx, params.wo)
    if return_weights:
        return out, probs.data.copy()
    return out


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise feed-forward: max(0, x W1 + b1) W2 + b2."""
    return linear(relu(linear(x, w1, b1)), w2, b2)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-3,
    floor: float = 1e-4,
    samples: int | None = None,
    seed: int = 0,
    wide: bool = False,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The relative error denominator is floored: below the floor, float32
    evaluation noise dominates the quotient and absolute agreement is what
    is actually being measured. Set samples to probe that many entries per
    tensor instead of all of them.

    wide=True runs the whole check in float64. Deep compositions need this:
    a float32 central difference carries noise above any useful tolerance
    once a relu kink falls inside the probe interval. The backward closures
    under test are the same code either way; only the array width changes.
    """
    if wide:
        global DTYPE
        prev_dtype = DTYPE
        prev_data = [t.data for t in tensors]
        DTYPE = np.float64
        for t in tensors:
            t.data = t.data.astype(np.float64)
        try:
            return grad_check(f, tensors, eps=eps, floor=floor,
                              samples=samples, seed=seed)
        finally:
            DTYPE = prev_dtype
            for t, d in zip(tensors, prev_data):
                t.data = d
    for t in tensors:
        if not t.requires_grad:
            raise ValueError("grad_check needs requires_grad tensors")
        t.zero_grad()
    out = f()
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if samples is None or samples >= n:
            picks = range(n)
        else:
            picks = rng.choice(n, size=samples, replace=False)
        for j in picks:
            orig = flat[j]
            flat[j] = orig + DTYPE(eps)
            f_plus = float(f().data)
            flat[j] = orig - DTYPE(eps)
            f_minus = float(f().data)
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            ana = float(a.reshape(-1)[j])
            denom = max(abs(ana), abs(numeric), floor)
            worst = max(worst, abs(ana - numeric) / denom)
    return worst
