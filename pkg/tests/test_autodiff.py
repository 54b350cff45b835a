"""Tape engine: frozen derivative oracles, per-primitive checks, graph shapes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cagm.autodiff import Tape, backward, grad_check
from cagm.errors import DimensionError, EvaluationError


def _scalar_leaf(tape, v):
    return tape.leaf(np.array([[float(v)]]))


class TestFrozenDerivatives:
    def test_square_at_three(self):
        """d/dw w^2 = 2w: value 9, gradient 6 at w = 3."""
        tape = Tape()
        w = _scalar_leaf(tape, 3.0)
        out = tape.sum(tape.square(w))
        assert float(out.value) == 9.0
        backward(tape, out)
        np.testing.assert_allclose(w.grad, [[6.0]], rtol=1e-15)

    def test_tanh_prime_at_zero(self):
        tape = Tape()
        w = _scalar_leaf(tape, 0.0)
        out = tape.sum(tape.tanh(w))
        backward(tape, out)
        np.testing.assert_allclose(w.grad, [[1.0]], rtol=1e-15)

    def test_log_sigmoid_prime_at_zero(self):
        """d/dw log(sigmoid(w)) = 1 - sigmoid(w) = 0.5 at w = 0."""
        tape = Tape()
        w = _scalar_leaf(tape, 0.0)
        out = tape.sum(tape.log(tape.sigmoid(w)))
        backward(tape, out)
        np.testing.assert_allclose(w.grad, [[0.5]], rtol=1e-14)

    def test_quadratic_matches_central_difference_tightly(self):
        # central differences are exact on quadratics, so only roundoff remains
        def f(params):
            tape = Tape()
            w = tape.leaf(params[0])
            out = tape.sum(tape.square(w))
            backward(tape, out)
            return float(out.value), [w.grad]

        worst = grad_check(f, [np.array([[3.0, -1.5], [0.25, 2.0]])])
        assert worst < 1e-7


class TestAccumulation:
    def test_reused_node_accumulates_adjoints(self):
        # w appears twice: d/dw (w + w)^2-ish diamond, dy/dw = 2
        tape = Tape()
        w = _scalar_leaf(tape, 1.25)
        out = tape.sum(tape.add(w, w))
        backward(tape, out)
        np.testing.assert_allclose(w.grad, [[2.0]], rtol=1e-15)

    def test_mul_self_equals_square(self):
        tape = Tape()
        w = _scalar_leaf(tape, -0.7)
        out = tape.sum(tape.mul(w, w))
        backward(tape, out)
        np.testing.assert_allclose(w.grad, [[-1.4]], rtol=1e-15)

    def test_parameter_shared_across_two_forward_passes(self):
        # same leaf consumed by two affine applications: adjoints add up
        tape = Tape()
        w = tape.leaf(np.array([[2.0]]))
        b = tape.leaf(np.array([0.0]))
        x1 = tape.leaf(np.array([[1.0]]))
        x2 = tape.leaf(np.array([[3.0]]))
        out = tape.sum(tape.add(tape.affine(x1, w, b), tape.affine(x2, w, b)))
        backward(tape, out)
        np.testing.assert_allclose(w.grad, [[4.0]], rtol=1e-15)
        np.testing.assert_allclose(b.grad, [2.0], rtol=1e-15)


class TestPrimitiveGradients:
    """Every primitive agrees with central differences below 1e-5."""

    def _check(self, build, arrays, tol=1e-5):
        def f(params):
            tape = Tape()
            leaves = [tape.leaf(p) for p in params]
            out = build(tape, leaves)
            backward(tape, out)
            return float(out.value), [leaf.grad for leaf in leaves]

        worst = grad_check(f, arrays)
        assert worst < tol, f"grad_check discrepancy {worst:.3g}"

    def test_affine(self):
        rng = np.random.default_rng(0)
        self._check(
            lambda t, l: t.sum(t.affine(l[0], l[1], l[2])),
            [rng.normal(size=(3, 2)), rng.normal(size=(2, 4)), rng.normal(size=4)],
        )

    def test_tanh(self):
        self._check(
            lambda t, l: t.sum(t.tanh(l[0])),
            [np.random.default_rng(1).normal(size=(2, 3))],
        )

    def test_sigmoid(self):
        self._check(
            lambda t, l: t.sum(t.sigmoid(l[0])),
            [np.random.default_rng(2).normal(size=(2, 3))],
        )

    def test_log(self):
        self._check(
            lambda t, l: t.sum(t.log(l[0])),
            [np.random.default_rng(3).uniform(0.5, 3.0, size=(2, 3))],
        )

    def test_square(self):
        self._check(
            lambda t, l: t.sum(t.square(l[0])),
            [np.random.default_rng(4).normal(size=(2, 3))],
        )

    def test_mul_sub_scale_shift_neg(self):
        rng = np.random.default_rng(5)
        self._check(
            lambda t, l: t.sum(
                t.scale(t.shift(t.neg(t.mul(t.sub(l[0], l[1]), l[0])), 0.3), 1.7)
            ),
            [rng.normal(size=(2, 2)), rng.normal(size=(2, 2))],
        )

    def test_mean_and_sum_rows(self):
        self._check(
            lambda t, l: t.mean(t.sum_rows(t.square(l[0]))),
            [np.random.default_rng(6).normal(size=(3, 4))],
        )

    def test_concat_cols(self):
        rng = np.random.default_rng(7)
        self._check(
            lambda t, l: t.sum(t.square(t.concat_cols([l[0], l[1]]))),
            [rng.normal(size=(3, 2)), rng.normal(size=(3, 3))],
        )

    def test_clip_inside_band(self):
        self._check(
            lambda t, l: t.sum(t.clip(l[0], -2.0, 2.0)),
            [np.random.default_rng(8).uniform(-1.5, 1.5, size=(2, 3))],
        )

    def test_composite_mlp_style_graph(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(4, 3))

        def build(t, l):
            h = t.tanh(t.affine(t.leaf(x), l[0], l[1]))
            out = t.affine(h, l[2], l[3])
            return t.mean(t.square(out))

        self._check(
            build,
            [rng.normal(size=(3, 5)), rng.normal(size=5),
             rng.normal(size=(5, 1)), rng.normal(size=1)],
        )


class TestClipSemantics:
    def test_gradient_blocked_outside_band(self):
        tape = Tape()
        w = tape.leaf(np.array([[-35.0, 0.5, 42.0]]))
        out = tape.sum(tape.clip(w, -30.0, 30.0))
        np.testing.assert_allclose(out.value, -30.0 + 0.5 + 30.0)
        backward(tape, out)
        np.testing.assert_allclose(w.grad, [[0.0, 1.0, 0.0]])


class TestContracts:
    def test_backward_rejects_non_scalar(self):
        tape = Tape()
        w = tape.leaf(np.ones((2, 2)))
        out = tape.square(w)
        with pytest.raises(DimensionError):
            backward(tape, out)

    def test_backward_rejects_foreign_node(self):
        tape_a, tape_b = Tape(), Tape()
        out = tape_b.sum(tape_b.leaf(np.ones((1, 1))))
        with pytest.raises(ValueError):
            backward(tape_a, out)

    def test_mismatched_shapes_rejected(self):
        tape = Tape()
        a = tape.leaf(np.ones((2, 2)))
        b = tape.leaf(np.ones((2, 3)))
        with pytest.raises(DimensionError):
            tape.add(a, b)

    def test_grad_check_rejects_non_finite(self):
        def f(params):
            return float("nan"), [np.zeros_like(params[0])]

        with pytest.raises(EvaluationError):
            grad_check(f, [np.ones(2)])


@settings(max_examples=25, deadline=None)
@given(
    rows=st.integers(1, 4),
    cols=st.integers(1, 4),
    seed=st.integers(0, 10_000),
)
def test_property_random_graph_gradients(rows, cols, seed):
    """Random smooth compositions stay within the 1e-5 agreement bound."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(rows, cols))

    def f(params):
        tape = Tape()
        w = tape.leaf(params[0])
        h = tape.tanh(tape.mul(w, tape.leaf(x)))
        out = tape.mean(tape.square(tape.shift(h, 0.25)))
        backward(tape, out)
        return float(out.value), [w.grad]

    assert grad_check(f, [rng.normal(size=(rows, cols))]) < 1e-5
