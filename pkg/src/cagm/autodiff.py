"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records one DiffNode per primitive operation, in creation order.
Creation order is already a topological order of the computation graph
(an operation can only consume nodes that exist), so the backward pass
walks the record in reverse and pushes adjoints to parents through each
node's closure. Adjoints accumulate additively when a node feeds several
consumers.

Tapes are single-use: build a graph, call backward once, read gradients
off the leaves. Nothing here mutates arrays in place, so adjoint arrays
may be shared between nodes safely.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, EvaluationError


class DiffNode:
    """A value in the computation graph plus its accumulated adjoint."""

    __slots__ = ("value", "grad", "_push")

    def __init__(self, value: np.ndarray, push=None):
        self.value = value
        self.grad: np.ndarray | None = None
        self._push = push

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"DiffNode(shape={self.value.shape})"


def _acc(node: DiffNode, g: np.ndarray) -> None:
    # additive accumulation, never in place
    node.grad = g if node.grad is None else node.grad + g


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # evaluate on the safe side of the exponential for either sign
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Tape:
    """Ordered record of primitive operations on differentiable arrays."""

    def __init__(self):
        self._nodes: list[DiffNode] = []

    def __len__(self):
        return len(self._nodes)

    def _record(self, value, push=None) -> DiffNode:
        node = DiffNode(value, push)
        self._nodes.append(node)
        return node

    def leaf(self, value) -> DiffNode:
        """Bring an array onto the tape as a differentiable input."""
        return self._record(np.asarray(value, dtype=np.float64))

    @staticmethod
    def _check_same_shape(a: DiffNode, b: DiffNode, op: str) -> None:
        if a.value.shape != b.value.shape:
            raise DimensionError(
                f"{op}: operand shapes {a.value.shape} and {b.value.shape} differ"
            )

    # ---- elementwise arithmetic ----

    def add(self, a: DiffNode, b: DiffNode) -> DiffNode:
        self._check_same_shape(a, b, "add")

        def push(g):
            _acc(a, g)
            _acc(b, g)

        return self._record(a.value + b.value, push)

    def sub(self, a: DiffNode, b: DiffNode) -> DiffNode:
        self._check_same_shape(a, b, "sub")

        def push(g):
            _acc(a, g)
            _acc(b, -g)

        return self._record(a.value - b.value, push)

    def mul(self, a: DiffNode, b: DiffNode) -> DiffNode:
        self._check_same_shape(a, b, "mul")

        def push(g):
            _acc(a, g * b.value)
            _acc(b, g * a.value)

        return self._record(a.value * b.value, push)

    def scale(self, a: DiffNode, c: float) -> DiffNode:
        c = float(c)

        def push(g):
            _acc(a, c * g)

        return self._record(c * a.value, push)

    def shift(self, a: DiffNode, c: float) -> DiffNode:
        def push(g):
            _acc(a, g)

        return self._record(a.value + float(c), push)

    def neg(self, a: DiffNode) -> DiffNode:
        def push(g):
            _acc(a, -g)

        return self._record(-a.value, push)

    # ---- nonlinearities ----

    def tanh(self, a: DiffNode) -> DiffNode:
        out_val = np.tanh(a.value)

        def push(g):
            _acc(a, g * (1.0 - out_val * out_val))

        return self._record(out_val, push)

    def sigmoid(self, a: DiffNode) -> DiffNode:
        out_val = _sigmoid(a.value)

        def push(g):
            _acc(a, g * out_val * (1.0 - out_val))

        return self._record(out_val, push)

    def log(self, a: DiffNode) -> DiffNode:
        def push(g):
            _acc(a, g / a.value)

        return self._record(np.log(a.value), push)

    def square(self, a: DiffNode) -> DiffNode:
        def push(g):
            _acc(a, 2.0 * a.value * g)

        return self._record(a.value * a.value, push)

    def clip(self, a: DiffNode, lo: float, hi: float) -> DiffNode:
        # gradient passes only where the input was strictly inside the band
        inside = (a.value >= lo) & (a.value <= hi)

        def push(g):
            _acc(a, np.where(inside, g, 0.0))

        return self._record(np.clip(a.value, lo, hi), push)

    # ---- structural ----

    def affine(self, x: DiffNode, w: DiffNode, b: DiffNode) -> DiffNode:
        """x @ w + b for x (n, p), w (p, q), b (q,)."""
        if x.value.ndim != 2 or w.value.ndim != 2:
            raise DimensionError("affine expects 2-d input and weight")
        if x.value.shape[1] != w.value.shape[0]:
            raise DimensionError(
                f"affine: input width {x.value.shape[1]} != weight rows {w.value.shape[0]}"
            )
        if b.value.shape != (w.value.shape[1],):
            raise DimensionError(
                f"affine: bias shape {b.value.shape} != ({w.value.shape[1]},)"
            )

        def push(g):
            _acc(x, g @ w.value.T)
            _acc(w, x.value.T @ g)
            _acc(b, g.sum(axis=0))

        return self._record(x.value @ w.value + b.value, push)

    def concat_cols(self, parts) -> DiffNode:
        """Concatenate 2-d nodes along axis 1."""
        parts = list(parts)
        rows = {p.value.shape[0] for p in parts}
        if len(rows) != 1:
            raise DimensionError(f"concat_cols: row counts differ: {sorted(rows)}")
        widths = [p.value.shape[1] for p in parts]
        offsets = np.concatenate([[0], np.cumsum(widths)])

        def push(g):
            for p, s, e in zip(parts, offsets[:-1], offsets[1:]):
                _acc(p, g[:, s:e])

        return self._record(np.concatenate([p.value for p in parts], axis=1), push)

    # ---- reductions ----

    def sum(self, a: DiffNode) -> DiffNode:
        def push(g):
            _acc(a, np.full(a.value.shape, float(g)))

        return self._record(np.asarray(a.value.sum()), push)

    def sum_rows(self, a: DiffNode) -> DiffNode:
        """Row sums of a 2-d node: (n, m) -> (n,)."""
        if a.value.ndim != 2:
            raise DimensionError("sum_rows expects a 2-d node")

        def push(g):
            _acc(a, np.repeat(g[:, None], a.value.shape[1], axis=1))

        return self._record(a.value.sum(axis=1), push)

    def mean(self, a: DiffNode) -> DiffNode:
        n = a.value.size

        def push(g):
            _acc(a, np.full(a.value.shape, float(g) / n))

        return self._record(np.asarray(a.value.mean()), push)


def backward(tape: Tape, output: DiffNode) -> None:
    """Propagate adjoints from a scalar output back to every tape node."""
    if output.value.size != 1:
        raise DimensionError(
            f"backward requires a scalar output, got shape {output.value.shape}"
        )
    if output not in tape._nodes:
        raise ValueError("output was not produced on this tape")
    output.grad = np.ones_like(output.value)
    for node in reversed(tape._nodes):
        if node.grad is not None and node._push is not None:
            node._push(node.grad)


def grad_check(function, params, perturbation: float = 1e-6) -> float:
    """Worst relative disagreement between analytic and central-difference gradients.

    ``function(params)`` must return ``(value, grads)`` with ``grads`` matching
    ``params`` in structure; ``params`` are mutated in place to form the
    difference stencils and restored afterwards. The relative error of one
    component uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]
    value, grads = function(params)
    if not np.isfinite(value):
        raise EvaluationError(f"function value is not finite: {value!r}")
    worst = 0.0
    for p, grad in zip(params, grads):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != p.shape:
            raise DimensionError(
                f"gradient shape {grad.shape} != parameter shape {p.shape}"
            )
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + perturbation
            f_plus = function(params)[0]
            p[idx] = orig - perturbation
            f_minus = function(params)[0]
            p[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise EvaluationError("perturbed evaluation is not finite")
            numeric = (f_plus - f_minus) / (2.0 * perturbation)
            analytic = float(grad[idx])
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
