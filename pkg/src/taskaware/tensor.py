"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is implicit: every operation returns a new Tensor
holding its parents and a backward closure. Tensors carry a monotonically
increasing creation id, so creation order is already a topological order
(an op node cannot exist before its inputs). `backward` walks the nodes
reachable from the loss once, in reverse creation order.

Only float payloads live in Tensors. Integer token ids, boolean masks and
gold labels are plain numpy arrays: they are not differentiable and stay
outside the graph.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "EmptySequenceError",
    "tensor",
    "param",
    "add",
    "multiply",
    "scale",
    "matmul",
    "relu",
    "reshape",
    "transpose",
    "concat",
    "embedding_lookup",
    "layer_norm",
    "masked_softmax",
    "mean_pool",
    "max_pool",
    "dropout",
    "softmax_cross_entropy",
    "sum_all",
    "backward",
    "zero_grads",
    "gradcheck",
    "gradcheck_params",
]


class ShapeError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class EmptySequenceError(ValueError):
    """A pooling or softmax row has zero valid (unmasked) positions."""


_ids = itertools.count()


class Tensor:
    """A dense float64 array that may participate in a gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_nid")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), backward_fn: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward_fn
        self._nid = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions are the real implementation.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return multiply(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def tensor(data) -> Tensor:
    """A constant (non-trainable) tensor."""
    return Tensor(data, requires_grad=False)


def param(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


def _result(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=needs,
        op=op,
        parents=tuple(parents) if needs else (),
        backward_fn=backward_fn if needs else None,
    )


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None
    out_data = a.data + b.data

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(out_data, (a, b), backward_fn, "add")


def multiply(a: Tensor, b: Tensor) -> Tensor:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"multiply: cannot broadcast {a.shape} with {b.shape}") from None
    out_data = a.data * b.data

    def backward_fn(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(out_data, (a, b), backward_fn, "multiply")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward_fn(g):
        _accum(a, s * g)

    return _result(s * a.data, (a,), backward_fn, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with stacked (batched) leading dimensions.

    1-D operands follow numpy matmul semantics; higher-rank operands
    broadcast over leading axes, with gradients summed back accordingly.
    """
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: operands must be at least 1-D, got {a.shape} x {b.shape}")
    a_inner = a.shape[-1]
    b_inner = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a_inner != b_inner:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} x {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} x {b.shape}") from None

    def backward_fn(g):
        ad, bd = a.data, b.data
        a2 = ad[np.newaxis, :] if ad.ndim == 1 else ad
        b2 = bd[:, np.newaxis] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, axis=-2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, axis=-1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        _accum(a, _unbroadcast(ga, a2.shape).reshape(a.shape))
        _accum(b, _unbroadcast(gb, b2.shape).reshape(b.shape))

    return _result(out_data, (a, b), backward_fn, "matmul")


def relu(x: Tensor) -> Tensor:
    # Subgradient at exactly 0 is defined as 0.
    keep = x.data > 0

    def backward_fn(g):
        _accum(x, g * keep)

    return _result(np.maximum(x.data, 0.0), (x,), backward_fn, "relu")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward_fn(g):
        _accum(x, g.reshape(x.shape))

    return _result(out_data, (x,), backward_fn, "reshape")


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)

    def backward_fn(g):
        _accum(x, g.transpose(inverse))

    return _result(x.data.transpose(axes), (x,), backward_fn, "transpose")


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Last-axis concatenation; all leading dimensions must match."""
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: leading dimensions differ for {a.shape} and {b.shape}")
    d1 = a.shape[-1]
    out_data = np.concatenate([a.data, b.data], axis=-1)

    def backward_fn(g):
        _accum(a, g[..., :d1])
        _accum(b, g[..., d1:])

    return _result(out_data, (a, b), backward_fn, "concat")


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a [vocab, dim] table by id; backward scatter-adds."""
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding_lookup: id out of range [0, {table.shape[0]}) "
            f"(min={ids.min()}, max={ids.max()})"
        )
    out_data = table.data[ids]

    def backward_fn(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.ravel(), g.reshape(-1, table.shape[1]))

    return _result(out_data, (table,), backward_fn, "embedding_lookup")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then gain*x+bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = gain.data * xhat + bias.data

    def backward_fn(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=reduce_axes))
        _accum(bias, g.sum(axis=reduce_axes))
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accum(x, dx)

    return _result(out_data, (x, gain, bias), backward_fn, "layer_norm")


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to valid positions.

    Equivalent to adding -inf to masked positions before a softmax, but
    computed so the output tensor stays finite: masked positions get
    probability exactly 0 and receive no gradient.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not m.any(axis=-1).all():
        raise EmptySequenceError("masked_softmax: a row has no valid positions")
    shifted = np.where(m, scores.data, -np.inf)
    rowmax = shifted.max(axis=-1, keepdims=True)
    e = np.exp(np.where(m, scores.data - rowmax, -np.inf))
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(scores, out_data * (g - inner))

    return _result(out_data, (scores,), backward_fn, "masked_softmax")


# ---------------------------------------------------------------------------
# pooling


def _check_pool_args(seq: Tensor, mask: np.ndarray) -> np.ndarray:
    if seq.ndim < 2:
        raise ShapeError(f"pool: sequence must be at least 2-D, got {seq.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != seq.shape[:-1]:
        raise ShapeError(f"pool: mask shape {mask.shape} does not match sequence {seq.shape}")
    if not mask.any(axis=-1).all():
        raise EmptySequenceError("pool: a sequence has zero valid positions")
    return mask


def mean_pool(seq: Tensor, mask: np.ndarray) -> Tensor:
    """Per-dimension mean over valid positions of the next-to-last axis."""
    mask = _check_pool_args(seq, mask)
    counts = mask.sum(axis=-1)
    out_data = (seq.data * mask[..., np.newaxis]).sum(axis=-2) / counts[..., np.newaxis]

    def backward_fn(g):
        spread = np.expand_dims(g, axis=-2) * mask[..., np.newaxis]
        _accum(seq, spread / counts[..., np.newaxis, np.newaxis])

    return _result(out_data, (seq,), backward_fn, "mean_pool")


def max_pool(seq: Tensor, mask: np.ndarray) -> Tensor:
    """Per-dimension max over valid positions; ties route the gradient to
    the first (lowest-index) occurrence."""
    mask = _check_pool_args(seq, mask)
    guarded = np.where(mask[..., np.newaxis], seq.data, -np.inf)
    idx = guarded.argmax(axis=-2)
    out_data = np.take_along_axis(seq.data, np.expand_dims(idx, axis=-2), axis=-2)
    out_data = out_data.squeeze(axis=-2)

    def backward_fn(g):
        dseq = np.zeros_like(seq.data)
        np.put_along_axis(dseq, np.expand_dims(idx, axis=-2), np.expand_dims(g, axis=-2), axis=-2)
        _accum(seq, dseq)

    return _result(out_data, (seq,), backward_fn, "max_pool")


# ---------------------------------------------------------------------------
# regularization / loss


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward_fn(g):
        _accum(x, g * keep)

    return _result(x.data * keep, (x,), backward_fn, "dropout")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], stabilized by
    max subtraction. Gradient is (softmax - one_hot) / batch."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be 2-D, got {logits.shape}")
    n, c = logits.shape
    if n < 1:
        raise ShapeError("softmax_cross_entropy: empty batch")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= c:
        raise IndexError(f"softmax_cross_entropy: label out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    logprob = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = -logprob[np.arange(n), labels].mean()

    def backward_fn(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        _accum(logits, float(g) * d / n)

    return _result(loss, (logits,), backward_fn, "softmax_cross_entropy")


def sum_all(x: Tensor) -> Tensor:
    def backward_fn(g):
        _accum(x, np.full(x.shape, float(g)))

    return _result(x.data.sum(), (x,), backward_fn, "sum_all")


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    Multiple consumers of one tensor accumulate gradients by sum.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(node._parents)
    nodes.sort(key=lambda t: t._nid, reverse=True)
    loss.grad = np.ones_like(loss.data)
    for node in nodes:
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def _max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Compare the analytic gradient of scalar f at x against central
    differences; returns max over coordinates of
    |analytic - numeric| / max(1, |analytic|, |numeric|)."""
    if eps <= 0:
        raise ValueError(f"gradcheck: eps must be positive, got {eps}")
    prior = x.requires_grad
    x.requires_grad = True
    x.grad = None
    out = f(x)
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.requires_grad = prior

    flat = x.data.ravel()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)
    return _max_rel_error(analytic.ravel(), numeric)


def gradcheck_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                     eps: float = 1e-5) -> float:
    """gradcheck for a zero-argument loss closed over `params`, perturbing
    each parameter coordinate in place."""
    zero_grads(params)
    backward(loss_fn())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.ravel()
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_fn().item()
            flat[i] = orig - eps
            fm = loss_fn().item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * eps)
        worst = max(worst, _max_rel_error(a.ravel(), numeric))
    return worst
