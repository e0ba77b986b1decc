"""
End-to-end checks at working resolution. Deselected by default; run with ``-m slow``.
"""

import numpy as np
import pytest

from csrobust.core.attacks import AttackCase, JointAttackConfig, PgdConfig, attack_curve
from csrobust.core.datagen import PhantomSpec, generate_phantom, generate_sensitivities
from csrobust.core.dataset import DomainSpec, generate_dataset
from csrobust.core.fourier import forward, make_mask
from csrobust.core.jobs import JobRunner
from csrobust.core.metrics import nmse
from csrobust.reconstructors import L1Reconstructor, ZeroFilledReconstructor
from csrobust.reconstructors.cnn import CnnReconstructor, TrainedCnnConfig, cnn_train

pytestmark = pytest.mark.slow


def test_sparse_image_is_recovered_from_quarter_sampling():
    spec = PhantomSpec(family="ellipses", size=64, seed=11, sparsity_basis="wavelet-haar", sparsity_fraction=0.05)
    target = generate_phantom(spec)
    sens = generate_sensitivities(4, 64, seed=12)
    mask = make_mask(64, acceleration=4.0, center_fraction=0.08, pattern="random", seed=13)

    recon = L1Reconstructor(
        {"lam": 1e-4, "transform": {"kind": "wavelet-haar", "levels": 4}, "max_iters": 500, "tolerance": 0.0}
    )
    image = recon.reconstruct(forward(target, sens, mask), mask, sens)
    assert nmse(np.abs(target), image) <= 1e-3


def _cases(n, size=32, family="smooth"):
    cases = []
    for index in range(n):
        target = generate_phantom(PhantomSpec(family=family, size=size, seed=100 + index))
        cases.append(AttackCase(f"case-{index}", target, generate_sensitivities(4, size, seed=200 + index)))
    return cases


def test_adversarial_directions_hurt_more_than_noise():
    mask = make_mask(32, acceleration=4.0, center_fraction=0.125)
    rows, _ = attack_curve(
        ZeroFilledReconstructor(),
        _cases(4),
        mask,
        [0.08],
        PgdConfig(iterations=20),
        JointAttackConfig(),
        runner=JobRunner(2),
        resamples=200,
    )
    by_attack = {row["attack"]: row["psnr_mean"] for row in rows}
    assert by_attack["adversarial"] < by_attack["random"]


def _gap(rows, epsilon):
    by_attack = {row["attack"]: row["psnr_mean"] for row in rows if row["epsilon"] == epsilon}
    return by_attack["random"] - by_attack["adversarial"]


def test_trained_network_loses_three_db_to_pgd(tmp_path):
    train = generate_dataset(DomainSpec("train", {"smooth": 1.0}), 8, tmp_path, size=64, n_coils=4, seed=1)
    mask_spec = {"acceleration": 2.0, "center_fraction": 0.5}
    model = cnn_train(train, TrainedCnnConfig(depth=3, width=8, epochs=10, lr=1e-3), mask_spec)
    mask = make_mask(64, **mask_spec)

    rows, _ = attack_curve(
        CnnReconstructor(model=model),
        _cases(10, size=64),
        mask,
        [0.05],
        PgdConfig(iterations=20),
        JointAttackConfig(),
        runner=JobRunner(4),
        resamples=200,
    )
    assert _gap(rows, 0.05) >= 3.0


def test_l1_loses_three_db_to_the_joint_attack():
    mask = make_mask(64, acceleration=4.0, center_fraction=0.08)
    rows, perturbations = attack_curve(
        L1Reconstructor({"lam": 1e-3}),
        _cases(10, size=64, family="ellipses"),
        mask,
        [0.05],
        PgdConfig(),
        JointAttackConfig(),
        runner=JobRunner(4),
        resamples=200,
    )
    assert all(p is not None for p in perturbations[0.05])
    assert _gap(rows, 0.05) >= 3.0


def test_l1_joint_attack_completes_on_every_image():
    mask = make_mask(32, acceleration=4.0, center_fraction=0.125)
    recon = L1Reconstructor({"lam": 1e-3, "max_iters": 100})
    rows, perturbations = attack_curve(
        recon,
        _cases(2),
        mask,
        [0.04],
        PgdConfig(),
        JointAttackConfig(outer_iterations=30),
        resamples=200,
    )
    assert all(p is not None and p.relative_norm <= 0.04 + 1e-9 for p in perturbations[0.04])
    assert all(np.isfinite(row["psnr_mean"]) for row in rows)
