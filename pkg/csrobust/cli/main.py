"""
CLI entry point for csrobust experiments.

    csrobust <command> --config <path> [--jobs N] [--out DIR]

Experiments are configured in JSON (or YAML) files; flags only pick the command,
the config, concurrency, the output directory and logging.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import traceback
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from csrobust import __version__
from csrobust.core.artifacts import ArtifactWriter, dumps_json
from csrobust.core.attacks import (
    ATTACK_COLUMNS,
    TRANSFER_COLUMNS,
    AttackCase,
    JointAttackConfig,
    PgdConfig,
    attack_curve,
    transfer_evaluate,
)
from csrobust.core.config import KNOWN_METHODS, ConfigManager
from csrobust.core.dataset import DatasetManifest, DomainSpec, generate_dataset, load_manifest, write_manifest
from csrobust.core.errors import AggregateError, CsRobustError, InvalidSpecError, MissingInputError
from csrobust.core.fourier import SamplingMask, apply_mask, mask_from_dict
from csrobust.core.jobs import JobRunner
from csrobust.core.metrics import METRIC_COLUMNS, METRICS, bootstrap_ci, score
from csrobust.core.probe import HEATMAP_COLUMNS, SWEEP_COLUMNS, ProbeSpec, heatmap, window_size_sweep
from csrobust.core.shift import (
    FILTER_COLUMNS,
    HARDNESS_COLUMNS,
    SCATTER_COLUMNS,
    SPECTRUM_COLUMNS,
    SPECTRUM_SUMMARY_COLUMNS,
    MethodVariant,
    ShiftResult,
    VariantBuilder,
    adversarial_filter,
    evaluate_shift,
    hardness_transfer,
    scatter_rows,
    shift_fit,
    spectrum_report,
    tune,
)
from csrobust.core.volume_io import Volume, read_volume
from csrobust.reconstructors import BaseReconstructor
from csrobust.utils.logger import log_stage, setup_logger

COMMANDS = ("gen", "recon", "attack", "transfer", "shift", "filter", "spectrum", "probe", "sweep", "metrics")
SUMMARY_COLUMNS = ["method", "metric", "mean", "ci_lo", "ci_hi", "n_images"]


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(
        prog="csrobust",
        description="Robustness experiments for compressive-sensing MRI reconstruction",
    )
    parser.add_argument("command", choices=COMMANDS, help="Experiment to run")
    parser.add_argument(
        "--config",
        type=str,
        required=True,
        help="Path to the JSON/YAML experiment config",
    )
    parser.add_argument("--jobs", type=int, default=None, help="Maximum concurrent jobs (default: run.jobs)")
    parser.add_argument("--out", type=str, default=None, help="Output directory (default: run.out_dir)")
    parser.add_argument(
        "--log-file",
        type=str,
        default=None,
        help="Path to log file (default: none)",
    )
    parser.add_argument(
        "--log-level",
        type=str,
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: INFO, CSROBUST_LOG overrides)",
    )
    return parser.parse_args(argv)


class Experiment:
    """Shared plumbing for one command: config, writer, job runner, mask and methods."""

    def __init__(self, config: ConfigManager, writer: ArtifactWriter, runner: JobRunner, logger: logging.Logger):
        self.config = config
        self.writer = writer
        self.runner = runner
        self.logger = logger
        self._builder: Optional[VariantBuilder] = None

    @property
    def seed(self) -> int:
        return self.config.SEED

    @property
    def resamples(self) -> int:
        return int(self.config.get("metrics", "resamples", 1000))

    @property
    def level(self) -> float:
        return float(self.config.get("metrics", "level", 0.95))

    @property
    def ssim_window(self) -> int:
        return int(self.config.get("metrics", "ssim_window", 7))

    def manifest(self, key: str = "manifest", section: str = "data") -> DatasetManifest:
        path = self.config.get(section, key) or ""
        if not path:
            raise MissingInputError(f"Config {section}.{key} must point to a manifest")
        manifest = load_manifest(path)
        self.logger.info("Loaded %s: %d volumes of %s", path, len(manifest), manifest.domain)
        return manifest

    def mask(self, size: int) -> SamplingMask:
        return mask_from_dict(size, self.config.section("mask"))

    def builder(self, mask: SamplingMask) -> VariantBuilder:
        if self._builder is None:
            train_path = self.config.get("cnn", "train_manifest") or ""
            train = load_manifest(train_path) if train_path else None
            defaults = {method: self.config.section(method) for method in KNOWN_METHODS}
            self._builder = VariantBuilder(defaults, mask, train_manifest=train, logger=self.logger)
        return self._builder

    def methods(self, mask: SamplingMask, names: Optional[Sequence[str]] = None) -> Dict[str, BaseReconstructor]:
        builder = self.builder(mask)
        return {name: builder.build(MethodVariant(method=name, label=name)) for name in (names or self.config.METHODS)}

    def volume(self) -> Tuple[str, Volume]:
        path = self.config.get("data", "volume") or ""
        if path:
            return Path(path).stem, read_volume(path)
        manifest = self.manifest()
        index = int(self.config.get("data", "image_index", 0))
        if not 0 <= index < len(manifest):
            raise InvalidSpecError(f"data.image_index={index} is outside the manifest of {len(manifest)}")
        return manifest.ids[index], manifest.load(index)


def _metric_rows(method: str, domain: str, image_id: str, target: np.ndarray, image: np.ndarray,
                 ssim_window: int) -> List[Dict[str, Any]]:
    return [
        {"method": method, "domain": domain, "image_id": image_id, "metric": metric,
         "value": score(metric, np.abs(target), image, ssim_window=ssim_window)}
        for metric in METRICS
    ]


def cmd_gen(exp: Experiment) -> Dict[str, Any]:
    """Generate one dataset per configured domain."""
    data = exp.config.section("data")
    summary = {}
    for name, payload in sorted(data["domains"].items()):
        payload = payload or {}
        domain = DomainSpec.from_dict(name, payload, snr_db=data.get("snr_db"))
        manifest = generate_dataset(
            domain,
            int(payload.get("n_images", data["n_images"])),
            exp.writer.out_dir,
            size=int(data["size"]),
            n_coils=int(data["n_coils"]),
            seed=exp.seed,
            sparsity_basis=payload.get("sparsity_basis", data.get("sparsity_basis")),
            sparsity_fraction=payload.get("sparsity_fraction", data.get("sparsity_fraction")),
            runner=exp.runner,
        )
        summary[name] = {"n_images": len(manifest), "manifest": f"{name}/manifest.json"}
    return summary


def cmd_recon(exp: Experiment) -> Dict[str, Any]:
    image_id, volume = exp.volume()
    mask = exp.mask(volume.n)
    method = str(exp.config.get("recon", "method", "zero_filled"))
    recon = exp.methods(mask, [method])[method]
    image = recon.reconstruct(apply_mask(volume.kspace, mask), mask, volume.sens)
    rows = _metric_rows(method, "", image_id, volume.target, image, exp.ssim_window)
    exp.writer.write_csv("metrics.csv", rows, METRIC_COLUMNS)
    peak = float(np.max(image))
    exp.writer.write_pgm("recon.pgm", image / peak if peak > 0 else image)
    for row in rows:
        exp.logger.info("%s %s: %s = %.6g", method, image_id, row["metric"], row["value"])
    return {"image_id": image_id, "method": method, "metrics": {r["metric"]: r["value"] for r in rows}}


def _attack_setup(exp: Experiment) -> Tuple[List[AttackCase], SamplingMask, PgdConfig, JointAttackConfig, List[float]]:
    manifest = exp.manifest()
    n_images = min(int(exp.config.get("attack", "n_images", 10)), len(manifest))
    cases = []
    for index in range(n_images):
        volume = manifest.load(index)
        cases.append(AttackCase(manifest.ids[index], volume.target, volume.sens))
    size, _ = manifest.shape()
    pgd_section = exp.config.get("attack", "pgd") or {}
    joint_section = exp.config.get("attack", "joint") or {}
    pgd = PgdConfig(
        iterations=int(pgd_section.get("iterations", 20)),
        step=pgd_section.get("step"),
        init_scale=float(pgd_section.get("init_scale", 0.5)),
    )
    joint = JointAttackConfig(
        beta=joint_section.get("beta"),
        outer_iterations=int(joint_section.get("outer_iterations", 100)),
        x_step=joint_section.get("x_step"),
        z_step=float(joint_section.get("z_step", 0.25)),
        block_size=int(joint_section.get("block_size", 1)),
        x_update=str(joint_section.get("x_update", "subgradient")),
    )
    betas = [float(b) for b in joint_section.get("betas", [1e-2, 1e-1, 1.0, 10.0])]
    return cases, exp.mask(size), pgd, joint, betas


def _run_attacks(exp: Experiment) -> Tuple[List[Dict[str, Any]], Dict[str, Any], Dict[str, BaseReconstructor], Any]:
    cases, mask, pgd, joint, betas = _attack_setup(exp)
    methods = exp.methods(mask)
    rows: List[Dict[str, Any]] = []
    perturbations = {}
    for method_id, recon in methods.items():
        exp.logger.info("Attacking %s on %d images", method_id, len(cases))
        method_rows, per_eps = attack_curve(
            recon, cases, mask, exp.config.EPSILONS, pgd, joint, betas=betas, seed=exp.seed,
            runner=exp.runner, resamples=exp.resamples, level=exp.level, log=exp.logger,
        )
        rows.extend(method_rows)
        perturbations[method_id] = per_eps
    return rows, perturbations, methods, (cases, mask)


def cmd_attack(exp: Experiment) -> Dict[str, Any]:
    rows, _, _, _ = _run_attacks(exp)
    exp.writer.write_csv("attack.csv", rows, ATTACK_COLUMNS)
    return {"rows": len(rows)}


def cmd_transfer(exp: Experiment) -> Dict[str, Any]:
    rows, perturbations, methods, (cases, mask) = _run_attacks(exp)
    exp.writer.write_csv("attack.csv", rows, ATTACK_COLUMNS)
    matrix = transfer_evaluate(
        perturbations, methods, cases, mask, seed=exp.seed, runner=exp.runner,
        resamples=exp.resamples, level=exp.level, log=exp.logger,
    )
    exp.writer.write_csv("transfer.csv", matrix, TRANSFER_COLUMNS)
    return {"rows": len(matrix), "methods": list(methods)}


def cmd_shift(exp: Experiment) -> Dict[str, Any]:
    domain_a = exp.manifest("domain_a", section="shift")
    domain_b = exp.manifest("domain_b", section="shift")
    fraction = float(exp.config.get("shift", "tune_fraction", 0.5))
    tune_a, test_a = domain_a.split(fraction)
    _, test_b = domain_b.split(fraction)
    size, _ = domain_a.shape()
    mask = exp.mask(size)
    builder = exp.builder(mask)
    builder.train_manifest = builder.train_manifest or tune_a
    metric = str(exp.config.get("shift", "metric", "ssim"))

    tuned = []
    untuned: List[ShiftResult] = []
    for payload in exp.config.get("shift", "variants"):
        variant = MethodVariant.from_dict(payload)
        try:
            tuned.append(
                tune(variant.candidates(), tune_a, builder, mask, metric, exp.runner, exp.ssim_window, exp.logger)
            )
        except AggregateError as exc:
            exp.logger.warning("Variant %s could not be tuned: %s", variant.label, exc)
            untuned.append(ShiftResult.failure(variant, metric, str(exc)))
    if not tuned:
        raise AggregateError("Every shift variant failed tuning", [(r.variant.label, r.error) for r in untuned])
    results = evaluate_shift(
        tuned, test_a, test_b, builder, mask, metric, exp.runner, exp.resamples, exp.level, exp.seed,
        exp.ssim_window, exp.logger,
    ) + untuned
    exp.writer.write_csv("scatter.csv", scatter_rows(results), SCATTER_COLUMNS)
    fit = shift_fit(results, exp.logger)
    exp.writer.write_json("fit.json", fit)
    exp.writer.write_json("tuned.json", [variant.to_dict() for variant in tuned])
    return {"variants": len(results), "failed": [r.variant.label for r in results if r.failed], "fit": fit}


def _filter_variants(exp: Experiment) -> Tuple[MethodVariant, List[MethodVariant]]:
    section = exp.config.section("filter")
    params = dict(section.get("overrides") or {})
    params.setdefault("seed", section.get("seed", 0))
    filter_variant = MethodVariant(method=section["method"], label="filter", params=params)
    evaluated = [MethodVariant(method=m, label=m) for m in section.get("evaluate", [])]
    return filter_variant, evaluated


def _effective_identity(builder: VariantBuilder, variant: MethodVariant) -> str:
    params = builder.params_for(variant)
    params.setdefault("seed", 0)
    return MethodVariant(variant.method, variant.label, params).identity


def cmd_filter(exp: Experiment) -> Dict[str, Any]:
    manifest = exp.manifest()
    size, _ = manifest.shape()
    mask = exp.mask(size)
    builder = exp.builder(mask)
    filter_variant, evaluated = _filter_variants(exp)
    result = adversarial_filter(
        manifest,
        builder.build(filter_variant),
        mask,
        fraction=float(exp.config.get("filter", "fraction", 0.10)),
        filter_id=_effective_identity(builder, filter_variant),
        evaluated_ids=[_effective_identity(builder, v) for v in evaluated],
        allow_evaluated=bool(exp.config.get("filter", "allow_evaluated", False)),
        runner=exp.runner,
        ssim_window=exp.ssim_window,
        log=exp.logger,
    )
    exp.writer.write_csv("filter.csv", result.rows(), FILTER_COLUMNS)
    write_manifest(exp.writer.path("hard") / "manifest.json", result.subset)

    methods = {v.label: builder.build(v) for v in evaluated}
    hardness = hardness_transfer(
        manifest, result.subset, methods, mask, exp.runner, exp.resamples, exp.level, exp.seed,
        exp.ssim_window, exp.logger,
    )
    exp.writer.write_csv("hardness.csv", hardness, HARDNESS_COLUMNS)
    _write_spectrum(exp, manifest, result.subset)
    return {"selected": result.subset.ids, "n_images": len(manifest)}


def _write_spectrum(exp: Experiment, manifest: DatasetManifest, filtered: Optional[DatasetManifest]) -> Dict[str, Any]:
    rows, summary = spectrum_report(
        manifest,
        float(exp.config.get("spectrum", "center_fraction", 0.08)),
        filtered=filtered,
        runner=exp.runner,
        resamples=exp.resamples,
        level=exp.level,
        seed=exp.seed,
        log=exp.logger,
    )
    exp.writer.write_csv("spectrum.csv", rows, SPECTRUM_COLUMNS)
    exp.writer.write_csv("spectrum_summary.csv", summary, SPECTRUM_SUMMARY_COLUMNS)
    return {row["group"]: row["mean"] for row in summary}


def cmd_spectrum(exp: Experiment) -> Dict[str, Any]:
    manifest = exp.manifest()
    filtered_path = exp.config.get("data", "filtered") or ""
    filtered = load_manifest(filtered_path) if filtered_path else None
    return _write_spectrum(exp, manifest, filtered)


def cmd_probe(exp: Experiment) -> Dict[str, Any]:
    image_id, volume = exp.volume()
    mask = exp.mask(volume.n)
    payload = exp.config.section("probe")
    payload.setdefault("seed", exp.seed)
    spec = ProbeSpec.from_dict(payload)
    summary = {"image_id": image_id, "probe": spec.to_dict(), "maps": {}}
    for method_id, recon in exp.methods(mask).items():
        result = heatmap(recon, volume.target, volume.sens, mask, spec, exp.runner, exp.logger)
        exp.writer.write_csv(f"heatmap_{method_id}.csv", result.rows(), HEATMAP_COLUMNS)
        exp.writer.write_pgm(f"heatmap_{method_id}.pgm", result.image())
        record = result.record()
        record["argmax"] = result.argmax()
        exp.writer.write_json(f"heatmap_{method_id}.json", record)
        summary["maps"][method_id] = record
    return summary


def cmd_sweep(exp: Experiment) -> Dict[str, Any]:
    manifest = exp.manifest()
    size, _ = manifest.shape()
    mask = exp.mask(size)
    rows, summary = window_size_sweep(
        exp.methods(mask),
        manifest,
        mask,
        sizes=[int(k) for k in exp.config.get("probe", "sizes", [2, 3, 4, 5])],
        n_random_locations=int(exp.config.get("probe", "n_random_locations", 4)),
        seed=exp.seed,
        runner=exp.runner,
        resamples=exp.resamples,
        level=exp.level,
        ssim_window=exp.ssim_window,
        log=exp.logger,
    )
    exp.writer.write_csv("sweep.csv", rows, SWEEP_COLUMNS)
    exp.writer.write_json("sweep_summary.json", summary)
    return {"rows": len(rows)}


def cmd_metrics(exp: Experiment) -> Dict[str, Any]:
    """Score every method on every volume of the manifest."""
    manifest = exp.manifest()
    size, _ = manifest.shape()
    mask = exp.mask(size)
    rows: List[Dict[str, Any]] = []
    summary_rows = []
    for method_id, recon in exp.methods(mask).items():

        def run(index: int, recon: BaseReconstructor = recon, method_id: str = method_id) -> List[Dict[str, Any]]:
            volume = manifest.load(index)
            image = recon.reconstruct(apply_mask(volume.kspace, mask), mask, volume.sens)
            return _metric_rows(method_id, manifest.domain, manifest.ids[index], volume.target, image,
                                exp.ssim_window)

        outcomes = exp.runner.map_flagged(run, list(range(len(manifest))), tags=manifest.ids)
        method_rows = [row for o in outcomes if o.ok for row in o.value]
        rows.extend(method_rows)
        for metric in METRICS:
            values = [r["value"] for r in method_rows if r["metric"] == metric and math.isfinite(r["value"])]
            if values:
                report = bootstrap_ci(values, exp.level, exp.resamples, exp.seed, metric)
                stats = (report.value, report.ci_lo, report.ci_hi)
            else:
                stats = (math.nan, math.nan, math.nan)
            summary_rows.append({"method": method_id, "metric": metric, "mean": stats[0],
                                 "ci_lo": stats[1], "ci_hi": stats[2], "n_images": len(values)})
    exp.writer.write_csv("metrics.csv", rows, METRIC_COLUMNS)
    exp.writer.write_csv("metrics_summary.csv", summary_rows, SUMMARY_COLUMNS)
    return {"rows": len(rows)}


HANDLERS: Dict[str, Callable[[Experiment], Dict[str, Any]]] = {
    "gen": cmd_gen,
    "recon": cmd_recon,
    "attack": cmd_attack,
    "transfer": cmd_transfer,
    "shift": cmd_shift,
    "filter": cmd_filter,
    "spectrum": cmd_spectrum,
    "probe": cmd_probe,
    "sweep": cmd_sweep,
    "metrics": cmd_metrics,
}


def report_error(exc: CsRobustError) -> int:
    sys.stderr.write(dumps_json(exc.to_dict()))
    return exc.exit_code


def run(command: str, config: ConfigManager, logger: logging.Logger) -> Dict[str, Any]:
    """Run one validated command and write its run.json next to the artifacts."""
    writer = ArtifactWriter(config.OUT_DIR, logger)
    exp = Experiment(config, writer, JobRunner(config.JOBS, logger), logger)
    with log_stage(logger, command):
        summary = HANDLERS[command](exp)
    artifacts = sorted(p.relative_to(writer.out_dir).as_posix() for p in writer.written)
    writer.write_json(
        "run.json",
        {"command": command, "version": __version__, "config": config.as_dict(),
         "artifacts": artifacts, "summary": summary},
    )
    return summary


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit status."""
    args = parse_args(argv)
    logger = setup_logger("csrobust", args.log_file, args.log_level)

    logger.info("=" * 60)
    logger.info("csrobust %s: %s", __version__, args.command)
    logger.info("=" * 60)

    try:
        config_path = Path(args.config).resolve()
        logger.info("Loading configuration from: %s", config_path)
        overrides: Dict[str, Any] = {}
        if args.jobs is not None:
            overrides.setdefault("run", {})["jobs"] = args.jobs
        if args.out is not None:
            overrides.setdefault("run", {})["out_dir"] = args.out
        config = ConfigManager(config_path=str(config_path), config_dict=overrides)
        config.validate()

        logger.info("Output directory: %s", config.OUT_DIR)
        logger.info("Seed: %s | Jobs: %s", config.SEED, config.JOBS)
        run(args.command, config, logger)
        logger.info("Done: %s", args.command)
        return 0
    except CsRobustError as exc:
        logger.error("%s failed (%s): %s", args.command, exc.code, exc)
        return report_error(exc)
    except FileNotFoundError as exc:
        logger.error("Missing input: %s", exc)
        return report_error(MissingInputError(str(exc)))
    except Exception as exc:  # noqa: BLE001
        logger.error("Unexpected error: %s", exc)
        logger.debug(traceback.format_exc())
        sys.stderr.write(dumps_json({"code": "INTERNAL_ERROR", "message": str(exc), "exit_code": 1}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
