import numpy as np
import pytest

from csrobust.core.datagen import (
    FAMILIES,
    CoilSensitivities,
    PhantomSpec,
    generate_phantom,
    generate_sensitivities,
)
from csrobust.core.errors import InvalidSpecError
from csrobust.core.fourier import SamplingMask, forward, low_frequency_proportion
from csrobust.core.transforms import TransformSpec, analyze


@pytest.mark.parametrize("family", FAMILIES)
def test_phantoms_are_deterministic_and_peak_normalized(family):
    spec = PhantomSpec(family=family, size=32, seed=[1, 2])
    first = generate_phantom(spec)
    second = generate_phantom(spec)

    assert first.shape == (32, 32)
    assert np.iscomplexobj(first)
    np.testing.assert_array_equal(first, second)
    assert np.max(np.abs(first)) == pytest.approx(1.0)


def test_different_seeds_give_different_random_phantoms():
    a = generate_phantom(PhantomSpec(family="ellipses", size=32, seed=1))
    b = generate_phantom(PhantomSpec(family="ellipses", size=32, seed=2))
    assert not np.allclose(a, b)


def test_sparsified_phantom_has_requested_support():
    spec = PhantomSpec(family="ellipses", size=64, seed=0, sparsity_basis="haar", sparsity_fraction=0.05)
    image = generate_phantom(spec)
    coeffs = analyze(image, TransformSpec("wavelet-haar", 4).for_size(64))
    assert int(np.ceil(0.05 * 64 * 64)) == 205
    assert np.count_nonzero(np.abs(coeffs) > 1e-9) == 205


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_textured_phantoms_carry_less_low_frequency_energy_than_smooth(seed):
    sens = generate_sensitivities(4, 64, seed=seed)
    full = SamplingMask.full(64)
    textured = forward(generate_phantom(PhantomSpec(family="textured", size=64, seed=seed)), sens, full)
    smooth = forward(generate_phantom(PhantomSpec(family="smooth", size=64, seed=seed)), sens, full)
    assert low_frequency_proportion(textured, 0.08) < low_frequency_proportion(smooth, 0.08)


@pytest.mark.parametrize(
    "spec",
    [
        PhantomSpec(family="brain", size=32),
        PhantomSpec(family="smooth", size=48),
        PhantomSpec(family="smooth", size=32, sparsity_basis="haar"),
        PhantomSpec(family="smooth", size=32, sparsity_basis="haar", sparsity_fraction=1.5),
        PhantomSpec(family="smooth", size=32, sparsity_basis="curvelet", sparsity_fraction=0.1),
    ],
)
def test_invalid_phantom_specs(spec):
    with pytest.raises(InvalidSpecError):
        generate_phantom(spec)


@pytest.mark.parametrize("n_coils", [1, 4, 8])
def test_sensitivities_have_unit_sum_of_squares(n_coils):
    sens = generate_sensitivities(n_coils, 64, seed=3)
    assert sens.maps.shape == (n_coils, 64, 64)
    assert np.max(np.abs(sens.sum_of_squares() - 1.0)) <= 1e-12


def test_sensitivity_maps_are_read_only():
    sens = generate_sensitivities(2, 8)
    with pytest.raises(ValueError):
        sens.maps[0, 0, 0] = 0


def test_sensitivities_validate_shape_and_count():
    with pytest.raises(InvalidSpecError):
        generate_sensitivities(0, 16)
    with pytest.raises(InvalidSpecError):
        CoilSensitivities(maps=np.ones((4, 4)))
    with pytest.raises(InvalidSpecError):
        CoilSensitivities(maps=np.full((1, 2, 2), np.nan))
