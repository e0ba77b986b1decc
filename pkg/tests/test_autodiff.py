import numpy as np
import pytest

from csrobust.core import ops
from csrobust.core.autodiff import (
    Tape,
    finite_diff_gradient,
    from_pair,
    relative_error,
    to_pair,
    value_and_grad,
)
from csrobust.core.errors import InvalidSpecError, NumericalFailureError, ShapeMismatchError

H = 1e-4
TOL = 1e-4


def _check(fn, *arrays):
    """Compare backward() with central differences for a scalar fn(tape, *leaves)."""
    _, grads = value_and_grad(fn, *arrays)
    for index, array in enumerate(arrays):

        def partial(x, index=index):
            args = list(arrays)
            args[index] = x
            tape = Tape()
            return fn(tape, *[tape.constant(a) for a in args]).item()

        numeric = finite_diff_gradient(partial, array, h=H, central=True)
        assert relative_error(grads[index], numeric) <= TOL, f"argument {index}"


def _project(tape, out, rng_seed=0):
    """Random linear functional so every output entry contributes to the loss."""
    w = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return ops.total(ops.mul(out, w))


def test_add_sub_scale_mul(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    _check(lambda t, x, y: _project(t, ops.add(x, y)), a, b)
    _check(lambda t, x, y: _project(t, ops.sub(x, y)), a, b)
    _check(lambda t, x: _project(t, ops.scale(x, -2.5)), a)
    _check(lambda t, x, y: _project(t, ops.mul(x, y)), a, b)


def test_reshape_concat(rng):
    a, b = rng.standard_normal((1, 2, 2)), rng.standard_normal((2, 2, 2))
    _check(lambda t, x: _project(t, ops.reshape(x, (4,))), a)
    _check(lambda t, x, y: _project(t, ops.concat([x, y], axis=0)), a, b)


def test_activations(rng):
    # Keep entries away from the kink at zero.
    a = rng.uniform(0.1, 1.0, (2, 2, 2)) * rng.choice([-1.0, 1.0], (2, 2, 2))
    _check(lambda t, x: _project(t, ops.relu(x)), a)
    _check(lambda t, x: _project(t, ops.leaky_relu(x, 0.2)), a)


def test_channel_affine(rng):
    x, g, b = rng.standard_normal((2, 2, 2)), rng.standard_normal(2), rng.standard_normal(2)
    _check(lambda t, xx, gg, bb: _project(t, ops.channel_affine(xx, gg, bb)), x, g, b)


def test_conv2d(rng):
    x, w, b = rng.standard_normal((2, 4, 4)), rng.standard_normal((1, 2, 3, 3)), rng.standard_normal(1)
    _check(lambda t, xx, ww, bb: _project(t, ops.conv2d(xx, ww, bb)), x, w, b)
    _check(lambda t, xx, ww: _project(t, ops.conv2d(xx, ww)), x, rng.standard_normal((2, 2, 1, 1)))


@pytest.mark.parametrize("mode", ["nearest", "bilinear"])
def test_upsample(mode, rng):
    _check(lambda t, x: _project(t, ops.upsample2x(x, mode)), rng.standard_normal((1, 2, 3)))


def test_avg_pool(rng):
    _check(lambda t, x: _project(t, ops.avg_pool2x(x)), rng.standard_normal((1, 4, 4)))


def test_fft_ops(rng):
    x = rng.standard_normal((2, 2, 4))
    _check(lambda t, v: _project(t, ops.fft2(v)), x)
    _check(lambda t, v: _project(t, ops.ifft2(v)), x)


def test_column_mask_and_complex_mul(rng):
    x = rng.standard_normal((2, 2, 4))
    keep = np.array([1.0, 0.0, 1.0, 0.0])
    _check(lambda t, v: _project(t, ops.column_mask(v, keep)), x)
    factor = rng.standard_normal((2, 2, 4)) + 1j * rng.standard_normal((2, 2, 4))
    _check(lambda t, v: _project(t, ops.complex_mul(v, factor)), rng.standard_normal((2, 2, 4)))


def test_magnitude_rss_and_reductions(rng):
    _check(lambda t, v: _project(t, ops.magnitude(v)), rng.standard_normal((2, 2, 2)))
    _check(lambda t, v: _project(t, ops.rss(v)), rng.standard_normal((2, 2, 2, 2)))
    _check(lambda t, v: ops.sum_squares(v), rng.standard_normal((2, 4)))
    _check(lambda t, v: ops.total(v), rng.standard_normal((3, 3)))


def test_every_registered_op_is_covered():
    covered = {
        "add", "sub", "scale", "mul", "reshape", "concat", "relu", "leaky_relu", "channel_affine",
        "conv2d", "upsample2x", "avg_pool2x", "fft2", "ifft2", "column_mask", "complex_mul",
        "magnitude", "rss", "sum_squares", "sum",
    }
    assert set(ops.OPSET) == covered


def test_composites(rng):
    sens = rng.standard_normal((2, 4, 4)) + 1j * rng.standard_normal((2, 4, 4))
    keep = np.array([1.0, 1.0, 0.0, 1.0])

    def acquisition(t, x):
        return ops.sum_squares(ops.column_mask(ops.fft2(ops.complex_mul(x, sens)), keep))

    def decoder_block(t, x, w):
        return _project(t, ops.relu(ops.upsample2x(ops.conv2d(x, w), "bilinear")), 3)

    def magnitude_loss(t, x):
        return ops.sum_squares(ops.sub(ops.rss(ops.ifft2(x)), np.ones((2, 2))))

    _check(acquisition, rng.standard_normal((2, 4, 4)))
    _check(decoder_block, rng.standard_normal((2, 2, 2)), rng.standard_normal((2, 2, 3, 3)))
    _check(magnitude_loss, rng.standard_normal((2, 2, 2, 2)))


def test_fan_out_accumulates():
    value, (grad,) = value_and_grad(lambda t, x: ops.total(ops.add(ops.mul(x, x), x)), np.array([1.0, 2.0]))
    assert value == pytest.approx(8.0)
    np.testing.assert_allclose(grad, [3.0, 5.0])


def test_reset_clears_graph_and_gradients():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]), name="x")
    grads = tape.backward(ops.total(ops.mul(x, x)))
    np.testing.assert_allclose(grads[x], [2.0, 4.0])

    tape.reset()
    assert x.grad is None
    # A fresh graph on the same leaf does not accumulate onto the old gradient.
    grads = tape.backward(ops.total(ops.scale(x, 3.0)))
    np.testing.assert_allclose(grads[x], [3.0, 3.0])


def test_finite_diff_closed_form():
    grad = finite_diff_gradient(lambda x: float(np.sum(x ** 2)), np.array([1.0, 2.0]), h=1e-6)
    np.testing.assert_allclose(grad, [2.0, 4.0], atol=1e-4)
    with pytest.raises(InvalidSpecError):
        finite_diff_gradient(lambda x: 0.0, np.zeros(2), h=0.0)


def test_magnitude_gradient_defined_at_zero():
    _, (grad,) = value_and_grad(lambda t, x: ops.total(ops.magnitude(x)), np.zeros((2, 2, 2)))
    assert np.all(np.isfinite(grad))
    assert np.max(np.abs(grad)) <= 1.0


def test_backward_rejects_non_scalar_and_foreign_tapes():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ShapeMismatchError):
        tape.backward(ops.scale(x, 2.0))
    other = Tape().leaf(np.ones(3))
    with pytest.raises(InvalidSpecError):
        ops.add(x, other)


def test_non_finite_values_raise():
    tape = Tape()
    with pytest.raises(NumericalFailureError):
        tape.leaf(np.array([np.inf]))
    x = tape.leaf(np.array([1e308]))
    with pytest.raises(NumericalFailureError):
        ops.scale(x, 10.0)


def test_shape_errors():
    tape = Tape()
    with pytest.raises(ShapeMismatchError):
        ops.add(tape.leaf(np.ones(2)), tape.leaf(np.ones(3)))
    with pytest.raises(ShapeMismatchError):
        ops.fft2(tape.leaf(np.ones((3, 2, 2))))
    with pytest.raises(InvalidSpecError):
        ops.conv2d(tape.leaf(np.ones((1, 4, 4))), tape.leaf(np.ones((1, 1, 2, 2))))


def test_constant_only_graph_records_nothing():
    tape = Tape()
    out = ops.sum_squares(tape.constant(np.ones(4)))
    assert out.item() == 4.0
    assert len(tape) == 0


def test_pair_layout_round_trip(rng):
    z = rng.standard_normal((3, 4, 4)) + 1j * rng.standard_normal((3, 4, 4))
    pair = to_pair(z)
    assert pair.shape == (3, 2, 4, 4)
    np.testing.assert_array_equal(from_pair(pair), z)
    with pytest.raises(ShapeMismatchError):
        from_pair(np.zeros((3, 4, 4)))
