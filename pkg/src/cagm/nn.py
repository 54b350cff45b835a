"""Dense feed-forward networks and the optimizer that trains them.

Hidden layers use tanh; the output layer is affine. Parameters live in
plain float64 arrays, so the same network runs as fast NumPy during
prediction and is re-wrapped on a Tape when gradients are needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DiffNode, Tape
from .errors import ConfigError, DimensionError, DivergenceError


@dataclass
class MLP:
    """Layer widths plus one weight matrix and one bias vector per layer."""

    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        """Interleaved [W0, b0, W1, b1, ...], the canonical flattening order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params())


def xavier_init(widths, seed) -> MLP:
    """Network with weights ~ N(0, 2 / (fan_in + fan_out)) and zero biases.

    ``seed`` may be an integer or a Generator; the result is fully
    determined by it.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ConfigError(f"need at least input and output widths, got {widths}")
    if any(w <= 0 for w in widths):
        raise ConfigError(f"layer widths must be positive, got {widths}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(widths=widths, weights=weights, biases=biases)


def forward(net: MLP, x) -> np.ndarray:
    """Plain NumPy forward pass for a batch (n, in_width)."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2:
        raise DimensionError(f"expected a 2-d batch, got shape {h.shape}")
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if h.shape[1] != w.shape[0]:
            raise DimensionError(
                f"layer {i}: input width {h.shape[1]} != expected {w.shape[0]}"
            )
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
    return h


def wrap_params(tape: Tape, net: MLP) -> list[DiffNode]:
    """Put every parameter of ``net`` on the tape, in canonical order."""
    return [tape.leaf(p) for p in net.params()]


def forward_graph(net: MLP, x: DiffNode, tape: Tape, params: list[DiffNode]) -> DiffNode:
    """Forward pass recorded on ``tape`` using pre-wrapped parameter nodes.

    Reusing ``params`` across several calls applies the same weights each
    time, so their adjoints accumulate over all uses.
    """
    if len(params) != 2 * net.n_layers:
        raise DimensionError(
            f"expected {2 * net.n_layers} parameter nodes, got {len(params)}"
        )
    h = x
    last = net.n_layers - 1
    for i in range(net.n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        if h.value.shape[1] != w.value.shape[0]:
            raise DimensionError(
                f"layer {i}: input width {h.value.shape[1]} != expected {w.value.shape[0]}"
            )
        h = tape.affine(h, w, b)
        if i < last:
            h = tape.tanh(h)
    return h


@dataclass
class AdamState:
    """First/second moment accumulators and step counter for one parameter set."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, learning_rate: float, **kwargs) -> "AdamState":
        state = cls(learning_rate=learning_rate, **kwargs)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place.

    A zero gradient leaves parameters untouched (the step counter still
    advances). Non-finite gradients abort with the offending iteration.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError(
            f"param/grad/state length mismatch: {len(params)}, {len(grads)}, {len(state.m)}"
        )
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                "non-finite gradient in optimizer step", iteration=state.t + 1
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state
