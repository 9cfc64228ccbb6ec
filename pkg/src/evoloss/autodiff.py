"""Reverse-mode automatic differentiation over dense float64 arrays.

The op set is deliberately small: exactly what the encoders and their loss
heads need. A Graph records one eagerly-evaluated forward pass; node creation
order is a valid topological order, which makes the backward sweep a single
reverse iteration and lets the finite-difference checker replay the forward
pass after perturbing a parameter.

Everything is float64. Tensors are treated as immutable once built; training
code mutates the underlying parameter arrays only between graphs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform."""


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """One graph node: a float64 ndarray plus backward/replay metadata."""

    __slots__ = ("graph", "id", "data", "op", "inputs", "needs_grad", "is_param",
                 "_forward", "_backward")

    def __init__(self, graph: "Graph", data: np.ndarray, op: str,
                 inputs: tuple["Tensor", ...], needs_grad: bool, is_param: bool,
                 forward: Callable[[], np.ndarray] | None,
                 backward: Callable[[np.ndarray], tuple] | None):
        self.graph = graph
        self.data = data
        self.op = op
        self.inputs = inputs
        self.needs_grad = needs_grad
        self.is_param = is_param
        self._forward = forward
        self._backward = backward
        self.id = graph._register(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(id={self.id}, op={self.op!r}, shape={self.data.shape})"


class Graph:
    """Ordered record of one forward pass.

    Nodes appear in creation order, which is a valid topological order because
    an op's inputs must exist before the op is applied.
    """

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []
        self.params: dict[int, Tensor] = {}

    def _register(self, t: Tensor) -> int:
        nid = len(self.nodes)
        self.nodes.append(t)
        if t.is_param:
            self.params[nid] = t
        return nid

    def param(self, data) -> Tensor:
        """Leaf node whose gradient is wanted. Does not copy float64 input."""
        return Tensor(self, _f64(data), "param", (), True, True, None, None)

    def const(self, data) -> Tensor:
        """Leaf node treated as a constant; gradients never flow into it."""
        return Tensor(self, _f64(data), "const", (), False, False, None, None)

    def replay(self) -> None:
        """Recompute every non-leaf node from current leaf values, in order."""
        for node in self.nodes:
            if node._forward is not None:
                node.data = node._forward()


def make_op(graph: Graph, name: str, inputs: Sequence[Tensor],
            forward: Callable[[], np.ndarray],
            backward: Callable[[np.ndarray], tuple]) -> Tensor:
    """Register an op node. `backward(out_grad)` returns one gradient (or
    None) per input, evaluated against the inputs' current data."""
    needs = any(t.needs_grad for t in inputs)
    return Tensor(graph, forward(), name, tuple(inputs), needs, False,
                  forward, backward)


def _same_graph(*tensors: Tensor) -> Graph:
    g = tensors[0].graph
    for t in tensors[1:]:
        if t.graph is not g:
            raise ValueError("operands belong to different graphs")
    return g


# ---------------------------------------------------------------------------
# ops


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[B,I] @ w[I,O] + b[O] -> [B,O]."""
    g = _same_graph(x, w, b)
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1 \
            or x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"affine shapes do not conform: x{x.data.shape} w{w.data.shape} b{b.data.shape}")

    def forward():
        return x.data @ w.data + b.data

    def backward(go):
        gx = go @ w.data.T if x.needs_grad else None
        gw = x.data.T @ go if w.needs_grad else None
        gb = go.sum(axis=0) if b.needs_grad else None
        return gx, gw, gb

    return make_op(g, "affine", (x, w, b), forward, backward)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """x[B,I] @ w[I,O], no bias."""
    g = _same_graph(x, w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"linear shapes do not conform: x{x.data.shape} w{w.data.shape}")

    def forward():
        return x.data @ w.data

    def backward(go):
        gx = go @ w.data.T if x.needs_grad else None
        gw = x.data.T @ go if w.needs_grad else None
        return gx, gw

    return make_op(g, "linear", (x, w), forward, backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); subgradient at 0 is fixed to 0."""

    def forward():
        return np.maximum(x.data, 0.0)

    def backward(go):
        return (go * (x.data > 0.0),)

    return make_op(x.graph, "relu", (x,), forward, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")

    def forward():
        return a.data + b.data

    def backward(go):
        return go, go

    return make_op(g, "add", (a, b), forward, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")

    def forward():
        return a.data * b.data

    def backward(go):
        ga = go * b.data if a.needs_grad else None
        gb = go * a.data if b.needs_grad else None
        return ga, gb

    return make_op(g, "mul", (a, b), forward, backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def forward():
        return x.data * c

    def backward(go):
        return (go * c,)

    return make_op(x.graph, "scale", (x,), forward, backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def forward():
        return np.asarray(x.data.mean())

    def backward(go):
        return (np.full(x.data.shape, float(go) / n),)

    return make_op(x.graph, "mean", (x,), forward, backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of (pred - target)^2; gradients reach both sides."""
    g = _same_graph(pred, target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse shapes differ: {pred.data.shape} vs {target.data.shape}")
    n = pred.data.size

    def forward():
        d = pred.data - target.data
        return np.asarray(np.mean(d * d))

    def backward(go):
        gp = (2.0 * float(go) / n) * (pred.data - target.data)
        return (gp if pred.needs_grad else None,
                -gp if target.needs_grad else None)

    return make_op(g, "mse", (pred, target), forward, backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function."""

    def forward():
        return _sigmoid(x.data)

    def backward(go):
        y = _sigmoid(x.data)
        return (go * y * (1.0 - y),)

    return make_op(x.graph, "sigmoid", (x,), forward, backward)


def binary_ce(logit: Tensor, label: np.ndarray) -> Tensor:
    """Mean of log(1 + exp(-s*logit)) with s = 2*label - 1.

    Stable for |logit| up to at least 1e3 (computed via logaddexp). Labels are
    constants and must be 0/1.
    """
    label = np.asarray(label, dtype=np.float64)
    if label.shape != logit.data.shape:
        raise ShapeError(f"binary_ce shapes differ: {logit.data.shape} vs {label.shape}")
    bad = ~np.isin(label, (0.0, 1.0))
    if bad.any():
        raise ValueError(f"binary_ce labels must be 0 or 1, got {label[bad][:5]}")
    s = 2.0 * label - 1.0
    n = label.size

    def forward():
        return np.asarray(np.logaddexp(0.0, -s * logit.data).mean())

    def backward(go):
        return ((float(go) / n) * (-s) * _sigmoid(-s * logit.data),)

    return make_op(logit.graph, "binary_ce", (logit,), forward, backward)


def softmax_ce(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over rows; labels are constant class ids."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"softmax_ce shapes do not conform: logits{logits.data.shape} labels{labels.shape}")
    n, k = logits.data.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("softmax_ce labels out of range")
    rows = np.arange(n)

    def forward():
        z = logits.data
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        return np.asarray(np.mean(lse - z[rows, labels]))

    def backward(go):
        z = logits.data
        zmax = z.max(axis=1, keepdims=True)
        ez = np.exp(z - zmax)
        p = ez / ez.sum(axis=1, keepdims=True)
        p[rows, labels] -= 1.0
        return ((float(go) / n) * p,)

    return make_op(logits.graph, "softmax_ce", (logits,), forward, backward)


def margin_mismatch(e1: Tensor, e2: Tensor, margin: float) -> Tensor:
    """Mean over ordered pairs i != j of max(0, margin - ||e1_i - e2_j||)^2.

    The distance uses a 1e-12 floor under the square root so the gradient
    stays finite when a mismatched pair collapses onto the same point.
    """
    g = _same_graph(e1, e2)
    if e1.data.shape != e2.data.shape or e1.data.ndim != 2:
        raise ShapeError(f"margin_mismatch shapes: {e1.data.shape} vs {e2.data.shape}")
    b = e1.data.shape[0]
    if b < 2:
        raise ShapeError("margin_mismatch needs a batch of at least 2")
    margin = float(margin)
    npairs = b * (b - 1)
    off = ~np.eye(b, dtype=bool)
    eps = 1e-12

    def _pieces():
        diff = e1.data[:, None, :] - e2.data[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2) + eps)
        m = np.maximum(0.0, margin - d) * off
        return diff, d, m

    def forward():
        _, _, m = _pieces()
        return np.asarray((m * m).sum() / npairs)

    def backward(go):
        diff, d, m = _pieces()
        # dL/dd = -2m/npairs where the hinge is active; chain through sqrt.
        dd2 = (-2.0 * float(go) / npairs) * m * (0.5 / d)
        gdiff = (2.0 * dd2)[:, :, None] * diff
        g1 = gdiff.sum(axis=1) if e1.needs_grad else None
        g2 = -gdiff.sum(axis=0) if e2.needs_grad else None
        return g1, g2

    return make_op(g, "margin_mismatch", (e1, e2), forward, backward)


def wsum(terms: Sequence[Tensor], coeffs: Sequence[float]) -> Tensor:
    """Weighted sum of scalar nodes."""
    if len(terms) != len(coeffs) or not terms:
        raise ValueError("wsum needs matching, non-empty terms and coeffs")
    g = _same_graph(*terms)
    for t in terms:
        if t.data.size != 1:
            raise ShapeError(f"wsum term has shape {t.data.shape}, expected scalar")
    cs = [float(c) for c in coeffs]

    def forward():
        return np.asarray(sum(c * float(t.data) for c, t in zip(cs, terms)))

    def backward(go):
        return tuple(np.asarray(c * float(go)) if t.needs_grad else None
                     for c, t in zip(cs, terms))

    return make_op(g, "wsum", tuple(terms), forward, backward)


# ---------------------------------------------------------------------------
# backward sweep and finite-difference check


def backward(graph: Graph, loss: Tensor) -> dict[int, np.ndarray]:
    """Gradient of a scalar loss node w.r.t. every parameter in the graph.

    Parameters the loss does not depend on get exact zero gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss node must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    out: dict[int, np.ndarray] = {}
    for node in reversed(graph.nodes[: loss.id + 1]):
        go = grads.pop(node.id, None)
        if go is None:
            continue
        if node.is_param:
            out[node.id] = go
            continue
        if node._backward is None:
            continue  # const leaf
        for t, gin in zip(node.inputs, node._backward(go)):
            if gin is None or not t.needs_grad:
                continue
            prev = grads.get(t.id)
            grads[t.id] = gin if prev is None else prev + gin
    for pid, p in graph.params.items():
        if pid not in out:
            out[pid] = np.zeros_like(p.data)
    return out


def fd_check(graph: Graph, loss: Tensor, eps: float = 1e-5) -> float:
    """Central finite differences per parameter coordinate.

    Returns max over coordinates of |analytic - numeric| / max(1, |numeric|).
    Mutates parameters in place during the sweep and restores them; not safe
    to run concurrently with other users of the same graph.
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    analytic = backward(graph, loss)
    worst = 0.0
    for pid, p in graph.params.items():
        flat = p.data.reshape(-1)
        an = analytic[pid].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            graph.replay()
            hi = float(loss.data)
            flat[i] = orig - eps
            graph.replay()
            lo = float(loss.data)
            flat[i] = orig
            num = (hi - lo) / (2.0 * eps)
            err = abs(float(an[i]) - num) / max(1.0, abs(num))
            if err > worst:
                worst = err
    graph.replay()
    return worst
