"""
Adversarial measurement perturbations.

Perturbations live on the sampled k-space columns and are bounded by
||z|| <= epsilon * ||A x*||. Differentiable methods are attacked with projected gradient
ascent on 1/2 ||Psi(A x*) - Psi(A x* + z)||^2. Optimization-based methods are attacked
in two steps: first alternate descent in the image (or decoder parameters) and projected
descent in z on

    L(z, x) = data_loss(x, A x* + z) + regularizer(x) - beta ||x - x*||^2,

then discard the step-one image and re-run the reconstructor on A x* + z.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from csrobust.core import ops
from csrobust.core.autodiff import DiffTensor, Tape, from_pair, to_pair
from csrobust.core.datagen import CoilSensitivities
from csrobust.core.errors import CapabilityError, InvalidSpecError, NumericalFailureError
from csrobust.core.fourier import SamplingMask, adjoint, forward, operator_norm_sq
from csrobust.core.jobs import JobRunner, job_seed
from csrobust.core.metrics import bootstrap_ci, psnr
from csrobust.core.transforms import TransformSpec, analyze, soft_threshold, synthesize
from csrobust.reconstructors.base import BaseReconstructor
from csrobust.reconstructors.decoder import DecoderNetwork, DecoderReconstructor
from csrobust.reconstructors.optim import Adam
from csrobust.reconstructors.sparse import L1Reconstructor

logger = logging.getLogger(__name__)

DEFAULT_BETAS = (10.0, 1.0, 0.1, 0.01)
DIVERGENCE_RATIO = 1e3
ATTACK_COLUMNS = ["method", "epsilon", "attack", "psnr_mean", "psnr_ci_lo", "psnr_ci_hi", "n_images"]
TRANSFER_COLUMNS = [
    "source_method",
    "target_method",
    "epsilon",
    "psnr_mean",
    "psnr_ci_lo",
    "psnr_ci_hi",
    "n_images",
]


@dataclass
class Perturbation:
    """Complex k-space increment ``z`` (n_coils, N, N) with its relative size."""

    z: np.ndarray
    epsilon: float
    reference_norm: float
    method: str
    attack: str = "adversarial"
    beta: Optional[float] = None
    objective_trace: List[float] = field(default_factory=list)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.z))

    @property
    def relative_norm(self) -> float:
        return self.norm / self.reference_norm if self.reference_norm > 0 else 0.0


@dataclass(frozen=True)
class PgdConfig:
    epsilon: float = 0.05
    iterations: int = 20
    step: Optional[float] = None
    init_scale: float = 0.5
    seed: Any = 0

    def validate(self) -> None:
        if self.epsilon < 0:
            raise InvalidSpecError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 0:
            raise InvalidSpecError(f"PGD iterations must be >= 0, got {self.iterations}")
        if not 0 <= self.init_scale <= 1:
            raise InvalidSpecError(f"init_scale must be in [0, 1], got {self.init_scale}")


@dataclass(frozen=True)
class JointAttackConfig:
    epsilon: float = 0.05
    beta: Optional[float] = None
    outer_iterations: int = 100
    x_step: Optional[float] = None
    z_step: float = 0.25
    block_size: int = 1
    x_update: str = "subgradient"
    seed: Any = 0

    def validate(self) -> None:
        if self.epsilon < 0:
            raise InvalidSpecError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.beta is not None and self.beta < 0:
            raise InvalidSpecError(f"beta must be >= 0, got {self.beta}")
        if self.outer_iterations < 0 or self.block_size < 1:
            raise InvalidSpecError("outer_iterations must be >= 0 and block_size >= 1")
        if self.x_update not in ("subgradient", "prox"):
            raise InvalidSpecError(f"x_update must be subgradient or prox, got {self.x_update!r}")
        if self.z_step <= 0:
            raise InvalidSpecError(f"z_step must be > 0, got {self.z_step}")


def project_ball(z: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(z))
    if norm <= radius or norm == 0:
        return z
    return z * (radius / norm)


def _to_sphere(z: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(z))
    if norm == 0:
        return z
    return z * (radius / norm)


def _support(mask: SamplingMask, n_coils: int, size: int) -> np.ndarray:
    return np.broadcast_to(mask.keep, (n_coils, size, mask.width))


def random_perturbation(
    shape: Tuple[int, ...],
    epsilon: float,
    reference_norm: float,
    seed: Any = 0,
    support: Optional[np.ndarray] = None,
    method: str = "random",
) -> Perturbation:
    """Gaussian direction (on ``support`` when given) scaled to exactly epsilon * reference_norm."""
    if epsilon < 0:
        raise InvalidSpecError(f"epsilon must be >= 0, got {epsilon}")
    radius = float(epsilon) * float(reference_norm)
    z = np.zeros(shape, dtype=np.complex128)
    if radius > 0:
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        if support is not None:
            z = z * support
        z = _to_sphere(z, radius)
    return Perturbation(z=z, epsilon=float(epsilon), reference_norm=float(reference_norm),
                        method=method, attack="random")


def pgd_attack(
    recon: BaseReconstructor,
    x_star: np.ndarray,
    sens: CoilSensitivities,
    mask: SamplingMask,
    cfg: PgdConfig,
    log: Optional[logging.Logger] = None,
) -> Perturbation:
    """
    Projected gradient ascent with normalized gradients; step 2 * radius / iterations
    unless configured. Returns the best-objective iterate, scaled onto the sphere.
    """
    log = log or logger
    cfg.validate()
    if not recon.differentiable:
        raise CapabilityError(
            f"pgd_attack needs a differentiable method; {recon.method_id} must use joint_attack"
        )
    y0 = forward(x_star, sens, mask)
    reference = float(np.linalg.norm(y0))
    radius = cfg.epsilon * reference
    if radius == 0:
        return Perturbation(np.zeros_like(y0), cfg.epsilon, reference, recon.method_id, objective_trace=[0.0])

    support = _support(mask, sens.n_coils, sens.shape[0])
    y_pair = to_pair(y0)
    clean = recon.reconstruct_tensor(Tape().constant(y_pair), mask, sens).value
    pair_support = to_pair(support.astype(np.complex128))

    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal(y0.shape) + 1j * rng.standard_normal(y0.shape)
    z = _to_sphere(z * support, cfg.init_scale * radius)
    z_pair = to_pair(z)
    step = cfg.step if cfg.step is not None else 2.0 * radius / max(1, cfg.iterations)

    best_value, best_pair = -math.inf, z_pair
    trace: List[float] = []
    for iteration in range(cfg.iterations + 1):
        tape = Tape()
        z_leaf = tape.leaf(z_pair, name="z")
        output = recon.reconstruct_tensor(ops.add(tape.constant(y_pair), z_leaf), mask, sens)
        loss = ops.scale(ops.sum_squares(ops.sub(output, clean)), 0.5)
        value = loss.item()
        if value > best_value:
            best_value, best_pair = value, z_pair
        trace.append(best_value)
        if iteration == cfg.iterations:
            break
        grad = tape.backward(loss)[z_leaf] * pair_support
        grad_norm = float(np.linalg.norm(grad))
        if not math.isfinite(grad_norm):
            raise NumericalFailureError(f"PGD gradient is not finite at iteration {iteration}")
        if grad_norm == 0:
            log.debug("PGD gradient vanished at iteration %d", iteration)
            break
        z_pair = to_pair(project_ball(from_pair(z_pair + step * grad / grad_norm), radius))

    z_best = _to_sphere(from_pair(best_pair), radius)
    log.debug("PGD on %s: objective %.6g after %d iterations", recon.method_id, best_value, len(trace) - 1)
    return Perturbation(z_best, cfg.epsilon, reference, recon.method_id, objective_trace=trace)


def l1_joint_objective(
    z: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    x_star: np.ndarray,
    sens: CoilSensitivities,
    mask: SamplingMask,
    lam: float,
    transform: TransformSpec,
    beta: float,
) -> float:
    """||M(y + z) - A x||^2 + lam ||H x||_1 - beta ||x - x*||^2."""
    residual = (y + z) * mask.keep - forward(x, sens, mask)
    spec = transform.for_size(x.shape[-1])
    return (
        float(np.sum(np.abs(residual) ** 2))
        + lam * float(np.sum(np.abs(analyze(x, spec))))
        - beta * float(np.sum(np.abs(x - x_star) ** 2))
    )


def l1_joint_grad_z(z: np.ndarray, x: np.ndarray, y: np.ndarray, sens: CoilSensitivities, mask: SamplingMask) -> np.ndarray:
    """Gradient of the joint objective in z, as a complex array (real part d/dRe, imag d/dIm)."""
    return 2.0 * ((y + z) * mask.keep - forward(x, sens, mask)) * mask.keep


def _complex_sign(c: np.ndarray) -> np.ndarray:
    magnitude = np.abs(c)
    return np.where(magnitude > 0, c / np.where(magnitude > 0, magnitude, 1.0), 0.0)


def _check_bounded(norm: float, bound: float, beta: float, outer: int) -> None:
    if not math.isfinite(norm) or norm > bound:
        raise NumericalFailureError(
            f"Joint attack diverged at outer iteration {outer}: image norm {norm:.4g} exceeds "
            f"{DIVERGENCE_RATIO:g} x ||x*|| with beta={beta:g}; choose a smaller beta"
        )


def _joint_l1(
    recon: L1Reconstructor,
    x_star: np.ndarray,
    sens: CoilSensitivities,
    mask: SamplingMask,
    cfg: JointAttackConfig,
    beta: float,
) -> Tuple[np.ndarray, List[float]]:
    rc = recon.recon_config
    spec = rc.transform.for_size(sens.shape[-1])
    y = forward(x_star, sens, mask)
    radius = cfg.epsilon * float(np.linalg.norm(y))
    x_step = cfg.x_step if cfg.x_step is not None else 0.9 / (2.0 * operator_norm_sq(sens, mask))
    bound = DIVERGENCE_RATIO * max(float(np.linalg.norm(x_star)), np.finfo(float).tiny)

    x = adjoint(y, sens, mask)
    z = np.zeros_like(y)
    trace: List[float] = []
    for outer in range(cfg.outer_iterations):
        for _ in range(cfg.block_size):
            residual = (y + z) * mask.keep - forward(x, sens, mask)
            smooth = -2.0 * adjoint(residual, sens, mask) - 2.0 * beta * (x - x_star)
            if cfg.x_update == "prox":
                coeffs = soft_threshold(analyze(x - x_step * smooth, spec), x_step * rc.lam)
                x = synthesize(coeffs, spec)
            else:
                sub = rc.lam * synthesize(_complex_sign(analyze(x, spec)), spec)
                x = x - x_step * (smooth + sub)
            _check_bounded(float(np.linalg.norm(x)), bound, beta, outer)
        for _ in range(cfg.block_size):
            z = project_ball(z - cfg.z_step * l1_joint_grad_z(z, x, y, sens, mask), radius)
        trace.append(l1_joint_objective(z, x, y, x_star, sens, mask, rc.lam, rc.transform, beta))
    return z, trace


def _joint_decoder(
    recon: DecoderReconstructor,
    x_star: np.ndarray,
    sens: CoilSensitivities,
    mask: SamplingMask,
    cfg: JointAttackConfig,
    beta: float,
) -> Tuple[np.ndarray, List[float]]:
    dc = recon.decoder_config
    y = forward(x_star, sens, mask)
    radius = cfg.epsilon * float(np.linalg.norm(y))
    target = np.abs(x_star)
    bound = DIVERGENCE_RATIO * max(float(np.linalg.norm(x_star)), np.finfo(float).tiny)
    network = DecoderNetwork(dc, sens.shape[-1], sens.n_coils, cfg.seed)
    optimizer = Adam(lr=cfg.x_step if cfg.x_step is not None else dc.lr, beta1=dc.beta1, beta2=dc.beta2)
    keep_pair = to_pair(np.broadcast_to(mask.keep, y.shape).astype(np.complex128))

    z = np.zeros_like(y)
    trace: List[float] = []
    for outer in range(cfg.outer_iterations):
        for _ in range(cfg.block_size):
            tape = Tape()
            leaves = network.leaves(tape)
            measured = tape.constant(to_pair(y + z))
            loss, image = _decoder_joint_loss(tape, network, leaves, measured, target, mask, beta)
            grads = tape.backward(loss)
            optimizer.step(network.params, {name: grads[leaf] for name, leaf in leaves.items()})
            _check_bounded(float(np.linalg.norm(image.value)), bound, beta, outer)
        for _ in range(cfg.block_size):
            tape = Tape()
            z_leaf = tape.leaf(to_pair(z), name="z")
            leaves = {name: tape.constant(value) for name, value in network.params.items()}
            measured = ops.add(tape.constant(to_pair(y)), z_leaf)
            loss, _ = _decoder_joint_loss(tape, network, leaves, measured, target, mask, beta)
            grad = tape.backward(loss)[z_leaf] * keep_pair
            z = project_ball(z - cfg.z_step * from_pair(grad), radius)
            trace.append(loss.item())
    return z, trace


def _decoder_joint_loss(
    tape: Tape,
    network: DecoderNetwork,
    leaves: Dict[str, DiffTensor],
    measured: DiffTensor,
    target: np.ndarray,
    mask: SamplingMask,
    beta: float,
) -> Tuple[DiffTensor, DiffTensor]:
    """1/2 sum_i ||M(y + z) - M F G_i||^2 - beta || rss(G) - |x*| ||^2."""
    coils = network.forward(tape, leaves)
    predicted = ops.column_mask(ops.fft2(coils), mask.keep)
    data = ops.scale(ops.sum_squares(ops.sub(predicted, ops.column_mask(measured, mask.keep))), 0.5)
    image = ops.rss(coils)
    repulsion = ops.scale(ops.sum_squares(ops.sub(image, target)), -beta)
    return ops.add(data, repulsion), image


def joint_attack(
    recon: BaseReconstructor,
    x_star: np.ndarray,
    sens: CoilSensitivities,
    mask: SamplingMask,
    cfg: JointAttackConfig,
    log: Optional[logging.Logger] = None,
) -> Perturbation:
    """
    Step one of the two-step attack on l1 or decoder reconstruction; returns z.

    Step two, re-running ``recon`` on A x* + z, is left to the caller. With
    ``cfg.beta`` unset, beta is chosen by :func:`select_beta`.
    """
    log = log or logger
    cfg.validate()
    if cfg.beta is None:
        return select_beta(recon, x_star, sens, mask, cfg, log=log)
    reference = float(np.linalg.norm(forward(x_star, sens, mask)))
    if cfg.epsilon == 0 or reference == 0:
        z0 = np.zeros((sens.n_coils,) + tuple(sens.shape), dtype=np.complex128)
        return Perturbation(z0, cfg.epsilon, reference, recon.method_id, beta=cfg.beta)
    if isinstance(recon, L1Reconstructor):
        z, trace = _joint_l1(recon, x_star, sens, mask, cfg, float(cfg.beta))
    elif isinstance(recon, DecoderReconstructor):
        z, trace = _joint_decoder(recon, x_star, sens, mask, cfg, float(cfg.beta))
    else:
        raise CapabilityError(f"joint_attack supports l1 and decoder methods, not {recon.method_id}")
    log.debug("Joint attack on %s (beta=%g): |z|/|Ax*| = %.4g", recon.method_id, cfg.beta,
              float(np.linalg.norm(z)) / reference)
    return Perturbation(z, cfg.epsilon, reference, recon.method_id, beta=float(cfg.beta), objective_trace=trace)


def select_beta(
    recon: BaseReconstructor,
    x_star: np.ndarray,
    sens: CoilSensitivities,
    mask: SamplingMask,
    cfg: JointAttackConfig,
    betas: Sequence[float] = DEFAULT_BETAS,
    log: Optional[logging.Logger] = None,
) -> Perturbation:
    """Largest beta in ``betas`` whose step-one image stays bounded; beta 0 when none does."""
    log = log or logger
    failures = []
    candidates = sorted(set(float(b) for b in betas), reverse=True)
    if 0.0 not in candidates:
        candidates.append(0.0)
    for beta in candidates:
        try:
            chosen = joint_attack(recon, x_star, sens, mask, replace(cfg, beta=beta), log=log)
        except NumericalFailureError as exc:
            log.debug("beta=%g rejected: %s", beta, exc)
            failures.append(f"beta={beta:g}")
            continue
        if failures and beta == 0.0:
            log.warning("Joint attack on %s rejected %s; using beta=%g", recon.method_id, ", ".join(failures), beta)
        return chosen
    raise NumericalFailureError(f"Joint attack diverged for every beta tried ({', '.join(failures)})")


def attack(
    recon: BaseReconstructor,
    x_star: np.ndarray,
    sens: CoilSensitivities,
    mask: SamplingMask,
    epsilon: float,
    pgd: PgdConfig,
    joint: JointAttackConfig,
    betas: Sequence[float] = DEFAULT_BETAS,
    seed: Any = 0,
    log: Optional[logging.Logger] = None,
) -> Perturbation:
    """PGD for differentiable methods, the joint attack otherwise."""
    if recon.differentiable:
        return pgd_attack(recon, x_star, sens, mask, replace(pgd, epsilon=epsilon, seed=seed), log=log)
    joint_cfg = replace(joint, epsilon=epsilon, seed=seed)
    if joint_cfg.beta is None:
        return select_beta(recon, x_star, sens, mask, joint_cfg, betas=betas, log=log)
    return joint_attack(recon, x_star, sens, mask, joint_cfg, log=log)


@dataclass(frozen=True)
class AttackCase:
    """One ground-truth image with its coil maps."""

    image_id: str
    target: np.ndarray
    sens: CoilSensitivities


def _summarize(values: Sequence[float], seed: Any, resamples: int, level: float) -> Dict[str, Any]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return {"psnr_mean": math.nan, "psnr_ci_lo": math.nan, "psnr_ci_hi": math.nan, "n_images": 0}
    report = bootstrap_ci(finite, level=level, resamples=resamples, seed=seed, metric="psnr")
    return {
        "psnr_mean": report.value,
        "psnr_ci_lo": report.ci_lo,
        "psnr_ci_hi": report.ci_hi,
        "n_images": report.n,
    }


def _psnr_after(recon: BaseReconstructor, case: AttackCase, mask: SamplingMask, z: np.ndarray) -> float:
    measured = forward(case.target, case.sens, mask) + z
    return psnr(np.abs(case.target), recon.reconstruct(measured, mask, case.sens))


def attack_curve(
    recon: BaseReconstructor,
    cases: Sequence[AttackCase],
    mask: SamplingMask,
    epsilons: Sequence[float],
    pgd: PgdConfig,
    joint: JointAttackConfig,
    betas: Sequence[float] = DEFAULT_BETAS,
    seed: Any = 0,
    runner: Optional[JobRunner] = None,
    resamples: int = 1000,
    level: float = 0.95,
    log: Optional[logging.Logger] = None,
) -> Tuple[List[Dict[str, Any]], Dict[float, List[Optional[Perturbation]]]]:
    """
    PSNR versus epsilon for adversarial and equal-norm random perturbations.

    Returns the CSV rows and the adversarial perturbations per epsilon (None where the
    attack failed), aligned with ``cases``.
    """
    log = log or logger
    runner = runner or JobRunner(1)
    eps_grid = sorted(float(e) for e in epsilons)

    def run(indexed: Tuple[int, AttackCase]) -> Dict[float, Tuple[Optional[Perturbation], float, float]]:
        index, case = indexed
        image_seed = job_seed(seed, index)
        support = _support(mask, case.sens.n_coils, case.sens.shape[0])
        out: Dict[float, Tuple[Optional[Perturbation], float, float]] = {}
        for eps in eps_grid:
            noise = random_perturbation(support.shape, eps, float(np.linalg.norm(
                forward(case.target, case.sens, mask))), seed=image_seed + [1], support=support)
            random_psnr = _psnr_after(recon, case, mask, noise.z)
            try:
                perturbation = attack(recon, case.target, case.sens, mask, eps, pgd, joint,
                                      betas=betas, seed=image_seed, log=log)
                adversarial_psnr = _psnr_after(recon, case, mask, perturbation.z)
            except NumericalFailureError as exc:
                log.warning("Attack on %s (%s, eps=%g) failed: %s", case.image_id, recon.method_id, eps, exc)
                perturbation, adversarial_psnr = None, math.nan
            out[eps] = (perturbation, adversarial_psnr, random_psnr)
        return out

    results = runner.map(run, list(enumerate(cases)))
    rows: List[Dict[str, Any]] = []
    perturbations: Dict[float, List[Optional[Perturbation]]] = {}
    for eps in eps_grid:
        perturbations[eps] = [result[eps][0] for result in results]
        for kind, column in (("adversarial", 1), ("random", 2)):
            values = [result[eps][column] for result in results]
            row = {"method": recon.method_id, "epsilon": eps, "attack": kind}
            row.update(_summarize(values, seed, resamples, level))
            rows.append(row)
    return rows, perturbations


def transfer_evaluate(
    perturbations: Mapping[str, Mapping[float, Sequence[Optional[Perturbation]]]],
    methods: Mapping[str, BaseReconstructor],
    cases: Sequence[AttackCase],
    mask: SamplingMask,
    seed: Any = 0,
    runner: Optional[JobRunner] = None,
    resamples: int = 1000,
    level: float = 0.95,
    log: Optional[logging.Logger] = None,
) -> List[Dict[str, Any]]:
    """
    Apply every source method's perturbations to every image and reconstruct with every
    target method. One row per (source, target, epsilon); failed reconstructions are
    logged and left out of that row's mean and count.
    """
    log = log or logger
    runner = runner or JobRunner(1)
    sources = list(perturbations)
    eps_grid = sorted({float(e) for per_eps in perturbations.values() for e in per_eps})

    def run(indexed: Tuple[int, AttackCase]) -> Dict[Tuple[str, str, float], float]:
        index, case = indexed
        scores: Dict[Tuple[str, str, float], float] = {}
        clean: Dict[str, float] = {}
        for source in sources:
            for eps in eps_grid:
                perturbation = perturbations[source].get(eps, [None] * len(cases))[index]
                for target_id, recon in methods.items():
                    if perturbation is None:
                        scores[(source, target_id, eps)] = math.nan
                        continue
                    try:
                        if perturbation.norm == 0:
                            if target_id not in clean:
                                clean[target_id] = _psnr_after(recon, case, mask, perturbation.z)
                            value = clean[target_id]
                        else:
                            value = _psnr_after(recon, case, mask, perturbation.z)
                    except NumericalFailureError as exc:
                        log.warning("Transfer %s -> %s on %s failed: %s", source, target_id, case.image_id, exc)
                        value = math.nan
                    scores[(source, target_id, eps)] = value
        return scores

    per_image = runner.map(run, list(enumerate(cases)))
    rows: List[Dict[str, Any]] = []
    for source in sources:
        for target_id in methods:
            for eps in eps_grid:
                values = [scores[(source, target_id, eps)] for scores in per_image]
                row = {"source_method": source, "target_method": target_id, "epsilon": eps}
                row.update(_summarize(values, seed, resamples, level))
                rows.append(row)
    return rows
