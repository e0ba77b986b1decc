import math

import numpy as np
import pytest

from csrobust.core.attacks import (
    ATTACK_COLUMNS,
    AttackCase,
    JointAttackConfig,
    PgdConfig,
    attack,
    attack_curve,
    joint_attack,
    l1_joint_grad_z,
    l1_joint_objective,
    pgd_attack,
    project_ball,
    random_perturbation,
    select_beta,
    transfer_evaluate,
)
from csrobust.core.autodiff import finite_diff_gradient, from_pair, relative_error, to_pair
from csrobust.core.datagen import PhantomSpec, generate_phantom, generate_sensitivities
from csrobust.core.errors import CapabilityError, InvalidSpecError, NumericalFailureError
from csrobust.core.fourier import adjoint, forward, make_mask
from csrobust.core.jobs import JobRunner
from csrobust.core.metrics import nmse, psnr
from csrobust.core.transforms import TransformSpec
from csrobust.reconstructors import DecoderReconstructor, L1Reconstructor, ZeroFilledReconstructor


def _off_support(z, mask):
    return z[..., ~mask.keep.astype(bool)]


def test_project_ball():
    z = np.array([3.0 + 0j, 4.0 + 0j])
    np.testing.assert_allclose(project_ball(z, 10.0), z)
    np.testing.assert_allclose(np.linalg.norm(project_ball(z, 1.0)), 1.0)


def test_random_perturbation_has_exact_norm(small_case):
    _, sens, mask = small_case
    support = np.broadcast_to(mask.keep, (2, 16, 16))
    p = random_perturbation((2, 16, 16), 0.05, 40.0, seed=3, support=support)
    assert abs(p.norm - 2.0) <= 1e-12
    assert p.relative_norm == pytest.approx(0.05)
    assert np.all(_off_support(p.z, mask) == 0)
    assert random_perturbation((2, 4, 4), 0.0, 40.0).norm == 0.0
    with pytest.raises(InvalidSpecError):
        random_perturbation((2, 4, 4), -0.1, 1.0)


def test_zero_budget_gives_zero_perturbation(tiny_case):
    target, sens, mask = tiny_case
    p = pgd_attack(ZeroFilledReconstructor(), target, sens, mask, PgdConfig(epsilon=0.0))
    assert p.norm == 0.0
    q = joint_attack(L1Reconstructor({"max_iters": 5}), target, sens, mask,
                     JointAttackConfig(epsilon=0.0, outer_iterations=3))
    assert q.norm == 0.0


def test_pgd_lies_on_the_sphere_and_the_sampled_columns(small_case):
    target, sens, mask = small_case
    p = pgd_attack(ZeroFilledReconstructor(), target, sens, mask, PgdConfig(epsilon=0.05, iterations=5))
    reference = np.linalg.norm(forward(target, sens, mask))
    assert abs(p.norm - 0.05 * reference) <= 1e-6 * 0.05 * reference
    assert np.all(_off_support(p.z, mask) == 0)
    assert len(p.objective_trace) == 6
    assert p.objective_trace == sorted(p.objective_trace)


def test_pgd_beats_random_noise(small_case):
    target, sens, mask = small_case
    recon = ZeroFilledReconstructor()
    y = forward(target, sens, mask)
    adversarial = pgd_attack(recon, target, sens, mask, PgdConfig(epsilon=0.1, iterations=10))
    noise = random_perturbation(y.shape, 0.1, np.linalg.norm(y), seed=5,
                                support=np.broadcast_to(mask.keep, y.shape))
    clean = recon.reconstruct(y, mask, sens)
    damage = np.sum((recon.reconstruct(y + adversarial.z, mask, sens) - clean) ** 2)
    assert damage >= np.sum((recon.reconstruct(y + noise.z, mask, sens) - clean) ** 2)


def test_pgd_is_seeded(tiny_case):
    target, sens, mask = tiny_case
    cfg = PgdConfig(epsilon=0.05, iterations=3, seed=[1, 2])
    a = pgd_attack(ZeroFilledReconstructor(), target, sens, mask, cfg)
    b = pgd_attack(ZeroFilledReconstructor(), target, sens, mask, cfg)
    np.testing.assert_array_equal(a.z, b.z)


def test_attack_capabilities(tiny_case):
    target, sens, mask = tiny_case
    with pytest.raises(CapabilityError):
        pgd_attack(L1Reconstructor(), target, sens, mask, PgdConfig(epsilon=0.05))
    with pytest.raises(CapabilityError):
        joint_attack(ZeroFilledReconstructor(), target, sens, mask, JointAttackConfig(epsilon=0.05, beta=0.1))
    with pytest.raises(InvalidSpecError):
        JointAttackConfig(x_update="newton").validate()


def test_joint_gradient_in_z_matches_finite_differences(tiny_case, rng):
    target, sens, mask = tiny_case
    y = forward(target, sens, mask)
    x = adjoint(y, sens, mask) + 0.05 * rng.standard_normal(target.shape)
    z0 = 0.01 * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    spec = TransformSpec("wavelet-haar", 1)

    def objective(pair):
        return l1_joint_objective(from_pair(pair), x, y, target, sens, mask, 1e-3, spec, 0.5)

    numeric = finite_diff_gradient(objective, to_pair(z0), h=1e-4, central=True)
    analytic = to_pair(l1_joint_grad_z(z0, x, y, sens, mask))
    assert relative_error(analytic, numeric) <= 1e-3


def test_l1_joint_attack_respects_the_ball(tiny_case):
    target, sens, mask = tiny_case
    recon = L1Reconstructor({"lam": 1e-3, "max_iters": 20})
    cfg = JointAttackConfig(epsilon=0.05, beta=0.1, outer_iterations=10, block_size=2)
    p = joint_attack(recon, target, sens, mask, cfg)
    assert p.norm <= 0.05 * p.reference_norm * (1 + 1e-9)
    assert p.beta == 0.1
    assert len(p.objective_trace) == 10
    assert np.all(_off_support(p.z, mask) == 0)


def test_large_beta_diverges_and_selection_falls_back(tiny_case):
    target, sens, mask = tiny_case
    recon = L1Reconstructor({"lam": 1e-3, "max_iters": 20})
    with pytest.raises(NumericalFailureError):
        joint_attack(recon, target, sens, mask, JointAttackConfig(epsilon=0.05, beta=1e6, outer_iterations=20))

    chosen = select_beta(recon, target, sens, mask, JointAttackConfig(epsilon=0.05, outer_iterations=5),
                         betas=(1e6, 0.0))
    assert chosen.beta == 0.0


def test_selection_falls_back_to_zero_when_every_beta_diverges(tiny_case):
    target, sens, mask = tiny_case
    recon = L1Reconstructor({"lam": 1e-3, "max_iters": 20})
    cfg = JointAttackConfig(epsilon=0.05, outer_iterations=20)
    chosen = select_beta(recon, target, sens, mask, cfg, betas=(1e6, 1e7))
    assert chosen.beta == 0.0
    assert chosen.norm <= 0.05 * chosen.reference_norm * (1 + 1e-9)
    assert np.all(np.isfinite(chosen.z))


def test_decoder_joint_attack_respects_the_ball(tiny_case):
    target, sens, mask = tiny_case
    recon = DecoderReconstructor({"layers": 2, "channels": 4, "iterations": 5})
    cfg = JointAttackConfig(epsilon=0.05, beta=0.01, outer_iterations=3, z_step=0.5)
    p = joint_attack(recon, target, sens, mask, cfg)
    assert p.norm <= 0.05 * p.reference_norm * (1 + 1e-9)
    assert len(p.objective_trace) == 3
    assert np.all(np.isfinite(p.z))


def test_attack_dispatches_by_capability(tiny_case):
    target, sens, mask = tiny_case
    pgd = PgdConfig(iterations=2)
    joint = JointAttackConfig(beta=0.0, outer_iterations=2)
    assert attack(ZeroFilledReconstructor(), target, sens, mask, 0.05, pgd, joint).beta is None
    assert attack(L1Reconstructor({"max_iters": 5}), target, sens, mask, 0.05, pgd, joint).beta == 0.0


def test_attack_curve_rows(tiny_case):
    target, sens, mask = tiny_case
    cases = [AttackCase("a", target, sens), AttackCase("b", target * 0.5, sens)]
    rows, perturbations = attack_curve(
        ZeroFilledReconstructor(),
        cases,
        mask,
        [0.05, 0.0],
        PgdConfig(iterations=2),
        JointAttackConfig(),
        runner=JobRunner(2),
        resamples=50,
    )
    assert len(rows) == 4
    assert [(r["epsilon"], r["attack"]) for r in rows] == [
        (0.0, "adversarial"), (0.0, "random"), (0.05, "adversarial"), (0.05, "random"),
    ]
    assert all(set(ATTACK_COLUMNS) <= set(r) for r in rows)
    assert rows[0]["psnr_mean"] == pytest.approx(rows[1]["psnr_mean"])
    assert rows[2]["psnr_mean"] <= rows[0]["psnr_mean"]
    assert [len(v) for v in perturbations.values()] == [2, 2]


def test_transfer_rows_and_clean_baseline(tiny_case):
    target, sens, mask = tiny_case
    case = AttackCase("a", target, sens)
    zero_filled = ZeroFilledReconstructor()
    l1 = L1Reconstructor({"lam": 1e-3, "max_iters": 10})
    perturbations = {
        "zero_filled": {
            0.0: [pgd_attack(zero_filled, target, sens, mask, PgdConfig(epsilon=0.0))],
            0.05: [pgd_attack(zero_filled, target, sens, mask, PgdConfig(epsilon=0.05, iterations=2))],
        }
    }
    rows = transfer_evaluate(perturbations, {"zero_filled": zero_filled, "l1": l1}, [case], mask, resamples=20)

    assert len(rows) == 4
    y = forward(target, sens, mask)
    for row in rows:
        if row["epsilon"] == 0.0:
            recon = zero_filled if row["target_method"] == "zero_filled" else l1
            assert row["psnr_mean"] == pytest.approx(psnr(np.abs(target), recon.reconstruct(y, mask, sens)))
            assert row["n_images"] == 1


def test_transfer_skips_missing_perturbations(tiny_case):
    target, sens, mask = tiny_case
    rows = transfer_evaluate({"l1": {0.05: [None]}}, {"zero_filled": ZeroFilledReconstructor()},
                             [AttackCase("a", target, sens)], mask)
    assert rows[0]["n_images"] == 0
    assert math.isnan(rows[0]["psnr_mean"])


def _haar_problems(n):
    for index in range(n):
        target = generate_phantom(PhantomSpec(family="ellipses", size=64, seed=40 + index))
        yield target, generate_sensitivities(4, 64, seed=60 + index)


def _step_two_nmse(recon, target, sens, mask, z):
    return nmse(np.abs(target), recon.reconstruct(forward(target, sens, mask) + z, mask, sens))


@pytest.mark.slow
def test_zero_beta_leaves_l1_reconstruction_unchanged():
    mask = make_mask(64, 4.0, 0.08)
    recon = L1Reconstructor({"lam": 1e-3})
    clean, attacked = [], []
    for target, sens in _haar_problems(3):
        p = joint_attack(recon, target, sens, mask, JointAttackConfig(epsilon=0.01, beta=0.0))
        clean.append(_step_two_nmse(recon, target, sens, mask, np.zeros_like(p.z)))
        attacked.append(_step_two_nmse(recon, target, sens, mask, p.z))
    assert abs(np.mean(attacked) / np.mean(clean) - 1.0) <= 0.1


@pytest.mark.slow
def test_tuned_beta_at_least_doubles_l1_error():
    mask = make_mask(64, 4.0, 0.08)
    recon = L1Reconstructor({"lam": 1e-3, "transform": {"kind": "wavelet-haar", "levels": 4}})
    for target, sens in _haar_problems(3):
        p = joint_attack(recon, target, sens, mask, JointAttackConfig(epsilon=0.08))
        assert p.norm <= 0.08 * p.reference_norm * (1 + 1e-9)
        clean = _step_two_nmse(recon, target, sens, mask, np.zeros_like(p.z))
        assert _step_two_nmse(recon, target, sens, mask, p.z) >= 2.0 * clean
