"""
Distribution-shift experiments.

Variants are tuned on the tune split of domain A, then scored on the test splits of
A (in-domain) and B (out-of-domain). The adversarial filter keeps the images a
separate filter method reconstructs worst; the spectrum report compares their
low-frequency energy with the full corpus.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import simplejson

from csrobust.core.dataset import DatasetManifest
from csrobust.core.errors import (
    AggregateError,
    CsRobustError,
    DegenerateFitError,
    InvalidSpecError,
)
from csrobust.core.fourier import SamplingMask, apply_mask, low_frequency_proportion
from csrobust.core.jobs import JobOutcome, JobRunner
from csrobust.core.metrics import MetricReport, bootstrap_ci, fit_line, higher_is_better, score
from csrobust.reconstructors import RECONSTRUCTORS, BaseReconstructor, build_reconstructor
from csrobust.reconstructors.cnn import TrainedCnnConfig, cnn_train

logger = logging.getLogger(__name__)

SCATTER_COLUMNS = ["variant", "family", "in_mean", "in_lo", "in_hi", "out_mean", "out_lo", "out_hi"]
SPECTRUM_COLUMNS = ["image_id", "family", "proportion", "filtered"]
SPECTRUM_SUMMARY_COLUMNS = ["group", "mean", "ci_lo", "ci_hi", "n_images"]
HARDNESS_COLUMNS = ["method", "full_mean", "full_lo", "full_hi", "filtered_mean", "filtered_lo", "filtered_hi"]
FILTER_COLUMNS = ["image_id", "ssim", "selected"]


@dataclass(frozen=True)
class MethodVariant:
    """
    One reconstructor configuration.

    ``params`` override the method's config section; ``grid`` maps a parameter name to
    the candidate values :func:`tune` searches over.
    """

    method: str
    label: str
    params: Dict[str, Any] = field(default_factory=dict)
    grid: Dict[str, List[Any]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "MethodVariant":
        method = str(payload.get("method", ""))
        return cls(
            method=method,
            label=str(payload.get("label") or method),
            params=dict(payload.get("params") or {}),
            grid={str(k): list(v) for k, v in (payload.get("grid") or {}).items()},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"method": self.method, "label": self.label, "params": dict(self.params), "grid": dict(self.grid)}

    def validate(self) -> None:
        if self.method not in RECONSTRUCTORS:
            raise InvalidSpecError(f"Variant {self.label!r}: unknown method {self.method!r}")
        for name, values in self.grid.items():
            if not values:
                raise InvalidSpecError(f"Variant {self.label!r}: empty grid for {name!r}")

    @property
    def identity(self) -> str:
        """Stable id of (method, params); two variants with equal ids build the same method."""
        canonical = simplejson.dumps(self.params, sort_keys=True, separators=(",", ":"))
        return f"{self.method}:{hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]}"

    def candidates(self) -> List["MethodVariant"]:
        """Grid points in product order (first grid key varies slowest)."""
        self.validate()
        if not self.grid:
            return [self]
        names = list(self.grid)
        points = []
        for values in itertools.product(*(self.grid[name] for name in names)):
            params = dict(self.params)
            params.update(zip(names, values))
            points.append(replace(self, params=params, grid={}))
        return points


@dataclass
class ShiftResult:
    variant: MethodVariant
    metric: str
    in_domain: MetricReport
    out_domain: MetricReport
    error: Optional[str] = None

    @classmethod
    def failure(cls, variant: MethodVariant, metric: str, error: str) -> "ShiftResult":
        missing = MetricReport(metric, math.nan, math.nan, math.nan, 0)
        return cls(variant, metric, missing, missing, error=error)

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def gap(self) -> float:
        return self.in_domain.value - self.out_domain.value

    def to_row(self) -> Dict[str, Any]:
        return {
            "variant": self.variant.label,
            "family": self.variant.method,
            "in_mean": self.in_domain.value,
            "in_lo": self.in_domain.ci_lo,
            "in_hi": self.in_domain.ci_hi,
            "out_mean": self.out_domain.value,
            "out_lo": self.out_domain.ci_lo,
            "out_hi": self.out_domain.ci_hi,
        }


@dataclass
class FilterResult:
    subset: DatasetManifest
    scores: List[Tuple[str, float]]

    def rows(self) -> List[Dict[str, Any]]:
        selected = set(self.subset.ids)
        return [{"image_id": i, "ssim": s, "selected": int(i in selected)} for i, s in self.scores]


class VariantBuilder:
    """
    Builds reconstructors for variants on top of per-method default params.

    CNN variants without ``weights`` are trained on ``train_manifest``; trained models
    are cached by variant identity.
    """

    def __init__(
        self,
        defaults: Mapping[str, Mapping[str, Any]],
        mask: SamplingMask,
        train_manifest: Optional[DatasetManifest] = None,
        logger: Optional[logging.Logger] = None,
    ):
        self.defaults = {method: dict(params) for method, params in defaults.items()}
        self.mask = mask
        self.train_manifest = train_manifest
        self.logger = logger or logging.getLogger(__name__)
        self._models: Dict[str, Any] = {}

    def params_for(self, variant: MethodVariant) -> Dict[str, Any]:
        params = dict(self.defaults.get(variant.method, {}))
        params.update(variant.params)
        return params

    def build(self, variant: MethodVariant) -> BaseReconstructor:
        params = self.params_for(variant)
        if variant.method != "cnn" or params.get("weights"):
            return build_reconstructor(variant.method, params, logger=self.logger)
        if variant.identity not in self._models:
            if self.train_manifest is None:
                raise InvalidSpecError(f"Variant {variant.label!r} needs weights or a training manifest")
            self.logger.info("Training %s on %d volumes", variant.label, len(self.train_manifest))
            self._models[variant.identity] = cnn_train(
                self.train_manifest, TrainedCnnConfig.from_dict(params), self.mask.to_dict(), log=self.logger
            )
        return build_reconstructor("cnn", params, model=self._models[variant.identity], logger=self.logger)


def score_manifest(
    recon: BaseReconstructor,
    manifest: DatasetManifest,
    mask: SamplingMask,
    metric: str,
    runner: Optional[JobRunner] = None,
    ssim_window: int = 7,
) -> List[JobOutcome[float]]:
    """Per-volume metric of ``recon`` against |x*|, in manifest order; failures are flagged."""
    runner = runner or JobRunner(1)

    def run(index: int) -> float:
        volume = manifest.load(index)
        image = recon.reconstruct(apply_mask(volume.kspace, mask), mask, volume.sens)
        return score(metric, np.abs(volume.target), image, ssim_window=ssim_window)

    return runner.map_flagged(run, list(range(len(manifest))), tags=manifest.ids)


def _values(outcomes: Sequence[JobOutcome[float]]) -> List[float]:
    return [o.value for o in outcomes if o.ok and o.value is not None and math.isfinite(o.value)]


def _report(metric: str, values: Sequence[float], resamples: int, level: float, seed: Any) -> MetricReport:
    if not values:
        return MetricReport(metric, math.nan, math.nan, math.nan, 0)
    return bootstrap_ci(values, level=level, resamples=resamples, seed=seed, metric=metric)


def grid_scores(
    candidates: Sequence[MethodVariant],
    manifest: DatasetManifest,
    builder: VariantBuilder,
    mask: SamplingMask,
    metric: str,
    runner: Optional[JobRunner] = None,
    ssim_window: int = 7,
    log: Optional[logging.Logger] = None,
) -> Tuple[List[float], List[Tuple[str, str]]]:
    """Mean metric per candidate (NaN when it failed) and the failures as (label, error)."""
    log = log or logger
    means: List[float] = []
    failures: List[Tuple[str, str]] = []
    for index, candidate in enumerate(candidates):
        tag = f"{candidate.label}#{index} {candidate.params}"
        try:
            recon = builder.build(candidate)
            values = _values(score_manifest(recon, manifest, mask, metric, runner, ssim_window))
        except CsRobustError as exc:
            log.warning("Variant %s failed: %s", tag, exc)
            failures.append((tag, str(exc)))
            means.append(math.nan)
            continue
        if not values:
            failures.append((tag, "no volume reconstructed"))
            means.append(math.nan)
            continue
        means.append(float(np.mean(values)))
        log.debug("Variant %s: mean %s %.6g over %d volumes", tag, metric, means[-1], len(values))
    return means, failures


def tune(
    candidates: Sequence[MethodVariant],
    manifest: DatasetManifest,
    builder: VariantBuilder,
    mask: SamplingMask,
    metric: str = "ssim",
    runner: Optional[JobRunner] = None,
    ssim_window: int = 7,
    log: Optional[logging.Logger] = None,
) -> MethodVariant:
    """Exhaustive search for the best mean metric; ties go to the smaller grid index."""
    log = log or logger
    if len(manifest) == 0:
        raise InvalidSpecError("Cannot tune on an empty manifest")
    if not candidates:
        raise InvalidSpecError("Cannot tune an empty grid")
    higher = higher_is_better(metric)
    means, failures = grid_scores(candidates, manifest, builder, mask, metric, runner, ssim_window, log)

    best_index: Optional[int] = None
    for index, value in enumerate(means):
        if not math.isfinite(value):
            continue
        if best_index is None:
            best_index = index
            continue
        better = value > means[best_index] if higher else value < means[best_index]
        if better:
            best_index = index
    if best_index is None:
        raise AggregateError(f"All {len(candidates)} variants failed during tuning", failures)
    best = candidates[best_index]
    log.info("Tuned %s: %s (mean %s %.6g)", best.label, best.params, metric, means[best_index])
    return best


def evaluate_shift(
    variants: Sequence[MethodVariant],
    test_a: DatasetManifest,
    test_b: DatasetManifest,
    builder: VariantBuilder,
    mask: SamplingMask,
    metric: str = "ssim",
    runner: Optional[JobRunner] = None,
    resamples: int = 1000,
    level: float = 0.95,
    seed: Any = 0,
    ssim_window: int = 7,
    log: Optional[logging.Logger] = None,
) -> List[ShiftResult]:
    """
    In-domain (A test) and out-of-domain (B test) scores with bootstrap CIs, one per variant.

    A variant that cannot be built or scored keeps its row with NaN scores and the error;
    only a run where every variant fails raises.
    """
    log = log or logger
    results: List[ShiftResult] = []
    for variant in variants:
        try:
            recon = builder.build(variant)
            reports = []
            for manifest in (test_a, test_b):
                outcomes = score_manifest(recon, manifest, mask, metric, runner, ssim_window)
                failed = [o.tag for o in outcomes if not o.ok]
                if failed:
                    log.warning(
                        "%s: %d volume(s) of %s failed: %s", variant.label, len(failed), manifest.domain, failed
                    )
                reports.append(_report(metric, _values(outcomes), resamples, level, seed))
        except CsRobustError as exc:
            log.warning("Variant %s failed: %s", variant.label, exc)
            results.append(ShiftResult.failure(variant, metric, str(exc)))
            continue
        results.append(ShiftResult(variant, metric, reports[0], reports[1]))
        log.info(
            "%s: %s in=%.4f out=%.4f",
            variant.label,
            metric,
            reports[0].value,
            reports[1].value,
        )
    if results and all(result.failed for result in results):
        raise AggregateError(
            f"All {len(results)} variants failed evaluation", [(r.variant.label, r.error) for r in results]
        )
    return results


def scatter_rows(results: Sequence[ShiftResult]) -> List[Dict[str, Any]]:
    return [result.to_row() for result in results]


def shift_fit(results: Sequence[ShiftResult], log: Optional[logging.Logger] = None) -> Dict[str, Any]:
    """Line through (in, out) points plus the mean of in - out."""
    log = log or logger
    points = [
        (r.in_domain.value, r.out_domain.value)
        for r in results
        if math.isfinite(r.in_domain.value) and math.isfinite(r.out_domain.value)
    ]
    summary: Dict[str, Any] = {
        "slope": None,
        "intercept": None,
        "mean_identity_gap": float(np.mean([x - y for x, y in points])) if points else None,
    }
    try:
        fit = fit_line(points)
        summary["slope"], summary["intercept"] = fit.slope, fit.intercept
    except DegenerateFitError as exc:
        log.warning("No shift line fit: %s", exc)
    return summary


def filter_count(n: int, fraction: float) -> int:
    if not 0 < fraction < 1:
        raise InvalidSpecError(f"Filter fraction must be in (0, 1), got {fraction}")
    # round first so 0.1 * 100 does not become 11
    return int(math.ceil(round(fraction * n, 9)))


def adversarial_filter(
    manifest: DatasetManifest,
    filter_recon: BaseReconstructor,
    mask: SamplingMask,
    fraction: float = 0.10,
    filter_id: Optional[str] = None,
    evaluated_ids: Sequence[str] = (),
    allow_evaluated: bool = False,
    runner: Optional[JobRunner] = None,
    ssim_window: int = 7,
    log: Optional[logging.Logger] = None,
) -> FilterResult:
    """
    Keep the ceil(fraction * n) images with the lowest SSIM under ``filter_recon``.

    The filter method must not be one of the evaluated methods (compared by id);
    ``allow_evaluated`` downgrades that to a warning. Failed images are left out of
    the ranking.
    """
    log = log or logger
    if len(manifest) == 0:
        raise InvalidSpecError("Cannot filter an empty manifest")
    count = filter_count(len(manifest), fraction)
    if count == 0:
        raise InvalidSpecError(f"fraction={fraction} selects no image out of {len(manifest)}")
    filter_id = filter_id or filter_recon.method_id
    if filter_id in set(evaluated_ids):
        if not allow_evaluated:
            raise InvalidSpecError(
                f"Filter method {filter_id} is also evaluated; pick a distinct method or set allow_evaluated"
            )
        log.warning("Filter method %s is among the evaluated methods", filter_id)

    outcomes = score_manifest(filter_recon, manifest, mask, "ssim", runner, ssim_window)
    scores = [(o.tag, float(o.value)) for o in outcomes if o.ok and o.value is not None]
    if not scores:
        raise AggregateError("Filter method failed on every image", [(o.tag, o.error) for o in outcomes])
    ranked = sorted(scores, key=lambda item: (item[1], item[0]))
    selected = [image_id for image_id, _ in ranked[:count]]
    subset = manifest.subset(selected, domain=f"{manifest.domain}-hard")
    log.info("Filtered %d of %d images of %s with %s", len(subset), len(manifest), manifest.domain, filter_id)
    return FilterResult(subset=subset, scores=scores)


def spectrum_report(
    manifest: DatasetManifest,
    center_fraction: float = 0.08,
    filtered: Optional[DatasetManifest] = None,
    runner: Optional[JobRunner] = None,
    resamples: int = 1000,
    level: float = 0.95,
    seed: Any = 0,
    log: Optional[logging.Logger] = None,
) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    """
    Per-image low-frequency proportion of the fully sampled k-space, and group means
    for the full set and (when given) the filtered subset.
    """
    log = log or logger
    runner = runner or JobRunner(1)
    hard = set(filtered.ids) if filtered is not None else set()

    def run(index: int) -> float:
        return low_frequency_proportion(manifest.load(index).kspace, center_fraction)

    outcomes = runner.map_flagged(run, list(range(len(manifest))), tags=manifest.ids)
    rows = []
    for entry, outcome in zip(manifest.entries, outcomes):
        if not outcome.ok:
            log.warning("No spectrum for %s: %s", entry.image_id, outcome.error)
        rows.append(
            {
                "image_id": entry.image_id,
                "family": entry.family,
                "proportion": outcome.value if outcome.ok else math.nan,
                "filtered": int(entry.image_id in hard),
            }
        )

    frame = pd.DataFrame(rows, columns=SPECTRUM_COLUMNS)
    groups = [("full", frame)]
    if filtered is not None:
        groups.append(("filtered", frame[frame["filtered"] == 1]))
    summary = []
    for name, group in groups:
        values = [v for v in group["proportion"].tolist() if math.isfinite(v)]
        report = _report("proportion", values, resamples, level, seed)
        summary.append(
            {"group": name, "mean": report.value, "ci_lo": report.ci_lo, "ci_hi": report.ci_hi, "n_images": report.n}
        )
    return rows, summary


def hardness_transfer(
    manifest: DatasetManifest,
    filtered: DatasetManifest,
    methods: Mapping[str, BaseReconstructor],
    mask: SamplingMask,
    runner: Optional[JobRunner] = None,
    resamples: int = 1000,
    level: float = 0.95,
    seed: Any = 0,
    ssim_window: int = 7,
    log: Optional[logging.Logger] = None,
) -> List[Dict[str, Any]]:
    """Mean SSIM of every evaluated method on the full set versus the filtered subset."""
    log = log or logger
    hard = set(filtered.ids)
    if not hard <= set(manifest.ids):
        raise InvalidSpecError("The filtered manifest is not a subset of the full manifest")
    rows = []
    for method_id, recon in methods.items():
        outcomes = score_manifest(recon, manifest, mask, "ssim", runner, ssim_window)
        full = _report("ssim", _values(outcomes), resamples, level, seed)
        subset = _report("ssim", _values([o for o in outcomes if o.tag in hard]), resamples, level, seed)
        rows.append(
            {
                "method": method_id,
                "full_mean": full.value,
                "full_lo": full.ci_lo,
                "full_hi": full.ci_hi,
                "filtered_mean": subset.value,
                "filtered_lo": subset.ci_lo,
                "filtered_hi": subset.ci_hi,
            }
        )
        log.info("%s: SSIM full %.4f, filtered %.4f", method_id, full.value, subset.value)
    return rows
