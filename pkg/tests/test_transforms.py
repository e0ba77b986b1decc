import numpy as np
import pytest

from csrobust.core.errors import InvalidSpecError, ShapeMismatchError
from csrobust.core.transforms import KINDS, TransformSpec, analyze, l1_norm, soft_threshold, synthesize


def _random_image(rng, size=32):
    return rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))


@pytest.mark.parametrize("kind", KINDS)
def test_every_basis_is_orthonormal(kind, rng):
    spec = TransformSpec(kind=kind, levels=2)
    x = _random_image(rng)
    c = analyze(x, spec)

    assert c.shape == x.shape
    assert abs(np.linalg.norm(c) - np.linalg.norm(x)) <= 1e-10 * np.linalg.norm(x)
    np.testing.assert_allclose(synthesize(c, spec), x, atol=1e-10)
    np.testing.assert_allclose(analyze(synthesize(c, spec), spec), c, atol=1e-10)


def test_real_input_gives_real_coefficients_for_real_bases(rng):
    x = rng.standard_normal((16, 16))
    for kind in ("wavelet-haar", "wavelet-db4", "dct"):
        c = analyze(x, TransformSpec(kind=kind, levels=1))
        assert np.max(np.abs(c.imag)) == 0.0


def test_haar_constant_image_is_one_coefficient():
    spec = TransformSpec(kind="wavelet-haar", levels=4)
    c = analyze(np.ones((16, 16)), spec)
    assert np.count_nonzero(np.abs(c) > 1e-12) == 1


def test_too_many_levels_is_invalid():
    with pytest.raises(InvalidSpecError):
        analyze(np.zeros((16, 16)), TransformSpec(kind="wavelet-haar", levels=5))


def test_for_size_caps_levels():
    assert TransformSpec("wavelet-haar", 10).for_size(16).levels == 4
    assert TransformSpec("dct", 10).for_size(16).levels == 10


def test_unknown_kind_and_bad_shape():
    with pytest.raises(InvalidSpecError):
        analyze(np.zeros((8, 8)), TransformSpec(kind="curvelet"))
    with pytest.raises(ShapeMismatchError):
        analyze(np.zeros((2, 8, 8)), TransformSpec(kind="dct"))


def test_soft_threshold_matches_scalar_prox(rng):
    c = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    tau = 0.7
    out = soft_threshold(c, tau)
    for value, shrunk in zip(c, out):
        magnitude = abs(value)
        expected = 0j if magnitude <= tau else value * (magnitude - tau) / magnitude
        assert abs(shrunk - expected) <= 1e-9


def test_soft_threshold_zeroes_small_entries():
    c = np.array([0.1 + 0.1j, -0.2, 0.0])
    np.testing.assert_array_equal(soft_threshold(c, 0.5), np.zeros(3))


def test_soft_threshold_rejects_negative_tau():
    with pytest.raises(InvalidSpecError):
        soft_threshold(np.ones(3), -1.0)


def test_l1_norm():
    assert l1_norm(np.array([3 + 4j, -1.0])) == pytest.approx(6.0)
