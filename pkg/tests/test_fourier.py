import math

import numpy as np
import pytest

from csrobust.core.datagen import CoilSensitivities, PhantomSpec, generate_phantom, generate_sensitivities
from csrobust.core.errors import InvalidSpecError, ShapeMismatchError, UndefinedRatioError
from csrobust.core.fourier import (
    SamplingMask,
    add_noise,
    adjoint,
    apply_mask,
    center_band,
    coil_images,
    column_energy_profile,
    fft2c,
    forward,
    ifft2c,
    low_frequency_proportion,
    make_mask,
    measured_snr_db,
    operator_norm_sq,
    rss,
)


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_centered_dft_is_unitary(rng):
    x = _complex(rng, (16, 16))
    k = fft2c(x)
    assert np.linalg.norm(k) == pytest.approx(np.linalg.norm(x), rel=1e-12)
    np.testing.assert_allclose(ifft2c(k), x, atol=1e-12)


def test_single_coil_unit_sensitivity_round_trip(rng):
    x = _complex(rng, (16, 16))
    sens = CoilSensitivities(maps=np.ones((1, 16, 16)))
    y = forward(x, sens, SamplingMask.full(16))
    np.testing.assert_allclose(coil_images(y)[0], x, atol=1e-12)


def test_adjoint_dot_product(rng):
    sens = generate_sensitivities(4, 64, seed=1)
    mask = make_mask(64, acceleration=4.0, center_fraction=0.08)
    for _ in range(100):
        x = _complex(rng, (64, 64))
        y = _complex(rng, (4, 64, 64))
        ax = forward(x, sens, mask)
        lhs = np.vdot(y, ax)
        rhs = np.vdot(adjoint(y, sens, mask), x)
        assert abs(lhs - rhs) <= 1e-6 * np.linalg.norm(ax) * np.linalg.norm(y)


def test_forward_and_adjoint_are_linear(rng):
    sens = generate_sensitivities(2, 16, seed=2)
    mask = make_mask(16, acceleration=2.0, center_fraction=0.125)
    a, b = _complex(rng, (16, 16)), _complex(rng, (16, 16))
    np.testing.assert_allclose(
        forward(2 * a - 3j * b, sens, mask), 2 * forward(a, sens, mask) - 3j * forward(b, sens, mask), atol=1e-10
    )
    ya, yb = _complex(rng, (2, 16, 16)), _complex(rng, (2, 16, 16))
    np.testing.assert_allclose(
        adjoint(ya + yb, sens, mask), adjoint(ya, sens, mask) + adjoint(yb, sens, mask), atol=1e-10
    )


def test_full_sampling_identity():
    x = generate_phantom(PhantomSpec(family="shepp_logan", size=32))
    sens = generate_sensitivities(4, 32, seed=0)
    y = forward(x, sens, SamplingMask.full(32))
    np.testing.assert_allclose(adjoint(y, sens, SamplingMask.full(32)), x, atol=1e-10)
    np.testing.assert_allclose(rss(coil_images(y)), np.abs(x), atol=1e-10)


def test_shape_mismatches_raise(rng):
    sens = generate_sensitivities(2, 16)
    with pytest.raises(ShapeMismatchError):
        forward(np.zeros((8, 8)), sens, SamplingMask.full(16))
    with pytest.raises(ShapeMismatchError):
        forward(np.zeros((16, 16)), sens, SamplingMask.full(8))
    with pytest.raises(ShapeMismatchError):
        adjoint(np.zeros((3, 16, 16)), sens, SamplingMask.full(16))
    with pytest.raises(ShapeMismatchError):
        rss([np.zeros((4, 4)), np.zeros((4, 5))])
    with pytest.raises(ShapeMismatchError):
        rss([])


def test_mask_keeps_center_band_and_budget():
    mask = make_mask(64, acceleration=4.0, center_fraction=0.08)
    band = center_band(64, 0.08)
    assert mask.keep[band].all()
    assert mask.n_kept == 16


def test_random_mask_is_seeded():
    a = make_mask(64, acceleration=4.0, pattern="random", seed=3)
    b = make_mask(64, acceleration=4.0, pattern="random", seed=3)
    np.testing.assert_array_equal(a.keep, b.keep)
    assert a.n_kept == 16


def test_acceleration_one_keeps_everything():
    assert make_mask(32, acceleration=1.0, center_fraction=0.5).n_kept == 32


@pytest.mark.parametrize(
    "kwargs",
    [
        {"acceleration": 0.5},
        {"center_fraction": 0.0},
        {"center_fraction": 0.01},
        {"pattern": "radial"},
        {"acceleration": 16.0, "center_fraction": 0.5},
    ],
)
def test_invalid_masks(kwargs):
    with pytest.raises(InvalidSpecError):
        make_mask(32, **kwargs)


def test_apply_mask_is_idempotent(rng):
    mask = make_mask(16, acceleration=4.0, center_fraction=0.125)
    y = _complex(rng, (2, 16, 16))
    once = apply_mask(y, mask)
    np.testing.assert_array_equal(apply_mask(once, mask), once)


def test_noise_matches_requested_snr(rng):
    y = _complex(rng, (4, 128, 256))
    noisy = add_noise(y, 20.0, seed=1)
    assert abs(measured_snr_db(y, noisy) - 20.0) <= 0.5


def test_noiseless_snr_returns_copy(rng):
    y = _complex(rng, (2, 4, 4))
    for snr in (None, math.inf):
        out = add_noise(y, snr)
        np.testing.assert_array_equal(out, y)
        assert out is not y
    assert measured_snr_db(y, y) == math.inf
    with pytest.raises(InvalidSpecError):
        add_noise(y, math.nan)


def test_low_frequency_proportion_bounds(rng):
    y = _complex(rng, (2, 16, 16))
    value = low_frequency_proportion(y, 0.25)
    assert 0.0 < value < 1.0
    assert low_frequency_proportion(y, 1.0) == 1.0
    with pytest.raises(UndefinedRatioError):
        low_frequency_proportion(np.zeros((1, 4, 4)), 0.5)


def test_constant_image_has_all_energy_at_dc():
    sens = CoilSensitivities(maps=np.ones((1, 16, 16)))
    y = forward(np.ones((16, 16)), sens, SamplingMask.full(16))
    assert low_frequency_proportion(y, 0.125) == pytest.approx(1.0)
    assert column_energy_profile(y)[8] == pytest.approx(1.0)


def test_operator_norm_is_one_under_full_sampling():
    sens = generate_sensitivities(3, 16)
    assert operator_norm_sq(sens, SamplingMask.full(16), iterations=5) == pytest.approx(1.0, rel=1e-9)
    assert operator_norm_sq(sens, make_mask(16, 4.0, 0.125)) <= 1.0 + 1e-9
