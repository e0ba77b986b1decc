import logging

import numpy as np
import pytest

from csrobust.core.datagen import PhantomSpec, generate_phantom, generate_sensitivities
from csrobust.core.dataset import DomainSpec, generate_dataset
from csrobust.core.fourier import SamplingMask, make_mask


@pytest.fixture
def quiet_logger():
    logger = logging.getLogger("csrobust.tests")
    logger.setLevel(logging.WARNING)
    return logger


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_case():
    """16 x 16 ellipse phantom, 2 coils, 4x equispaced mask."""
    target = generate_phantom(PhantomSpec(family="ellipses", size=16, seed=3))
    sens = generate_sensitivities(2, 16, seed=4)
    mask = make_mask(16, acceleration=4.0, center_fraction=0.125)
    return target, sens, mask


@pytest.fixture
def full_case():
    target = generate_phantom(PhantomSpec(family="smooth", size=16, seed=5))
    sens = generate_sensitivities(3, 16, seed=6)
    return target, sens, SamplingMask.full(16)


@pytest.fixture
def tiny_case():
    """8 x 8 problem for finite-difference checks."""
    target = generate_phantom(PhantomSpec(family="ellipses", size=8, seed=7))
    sens = generate_sensitivities(2, 8, seed=8)
    mask = make_mask(8, acceleration=2.0, center_fraction=0.25)
    return target, sens, mask


@pytest.fixture
def make_dataset(tmp_path):
    """Factory writing a small dataset under tmp_path; returns its manifest."""

    def build(name="smooth", families=None, n_images=4, size=16, n_coils=2, snr_db=None, seed=0):
        domain = DomainSpec(name=name, families=families or {"smooth": 1.0}, snr_db=snr_db)
        return generate_dataset(domain, n_images, tmp_path / "data", size=size, n_coils=n_coils, seed=seed)

    return build
