"""
Small-feature recovery probes.

A k x k window of the ground truth is set to the image's peak magnitude (phase 0),
the edited image is measured again, reconstructed, and the reconstruction error is
read off inside the window only. Sliding the window gives a heat map; random windows
of several sizes give the window-size sweep.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from csrobust.core.datagen import CoilSensitivities
from csrobust.core.dataset import DatasetManifest
from csrobust.core.errors import CsRobustError, DegenerateFitError, InvalidSpecError
from csrobust.core.fourier import SamplingMask, forward
from csrobust.core.jobs import JobRunner
from csrobust.core.metrics import bootstrap_ci, fit_line, region_mse, ssim
from csrobust.reconstructors.base import BaseReconstructor

logger = logging.getLogger(__name__)

LOCATION_MODES = ("grid", "list", "random")
FILL_RULE = "max-magnitude-real"
HEATMAP_COLUMNS = ["row", "col", "raw_mse", "normalized"]
SWEEP_COLUMNS = ["method", "window_size", "mean", "ci_lo", "ci_hi"]


@dataclass(frozen=True)
class ProbeSpec:
    window: int = 3
    stride: int = 8
    locations: str = "grid"
    points: Tuple[Tuple[int, int], ...] = ()
    n_random: int = 8
    seed: Any = 0

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ProbeSpec":
        return cls(
            window=int(payload.get("window", 3)),
            stride=int(payload.get("stride", 8)),
            locations=str(payload.get("locations", "grid")),
            points=tuple((int(p[0]), int(p[1])) for p in payload.get("points", [])),
            n_random=int(payload.get("n_random", 8)),
            seed=payload.get("seed", 0),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "window": self.window,
            "stride": self.stride,
            "locations": self.locations,
            "points": [list(p) for p in self.points],
            "n_random": self.n_random,
            "seed": self.seed,
            "fill": FILL_RULE,
        }

    def validate(self, size: int) -> None:
        if self.window < 1:
            raise InvalidSpecError(f"Probe window must be >= 1, got {self.window}")
        if self.window > size:
            raise InvalidSpecError(f"Probe window {self.window} exceeds image size {size}")
        if self.stride < 1:
            raise InvalidSpecError(f"Probe stride must be >= 1, got {self.stride}")
        if self.locations not in LOCATION_MODES:
            raise InvalidSpecError(f"Unknown location mode {self.locations!r}; expected one of {LOCATION_MODES}")
        if self.locations == "list":
            if not self.points:
                raise InvalidSpecError("Location mode 'list' needs points")
            for top, left in self.points:
                _check_window(size, top, left, self.window)
        if self.locations == "random" and self.n_random < 1:
            raise InvalidSpecError(f"n_random must be >= 1, got {self.n_random}")

    def location_set(self, size: int) -> List[Tuple[int, int]]:
        """Window corners; the grid is aligned at 0 and covers ceil((N - k + 1) / stride)^2 cells."""
        self.validate(size)
        if self.locations == "grid":
            starts = range(0, size - self.window + 1, self.stride)
            return [(top, left) for top in starts for left in starts]
        if self.locations == "list":
            return list(self.points)
        return random_locations(size, self.window, self.n_random, self.seed)


def random_locations(size: int, k: int, n: int, seed: Any) -> List[Tuple[int, int]]:
    rng = np.random.default_rng(seed)
    corners = rng.integers(0, size - k + 1, size=(n, 2))
    return [(int(top), int(left)) for top, left in corners]


def _check_window(size: int, top: int, left: int, k: int) -> None:
    if k < 1:
        raise InvalidSpecError(f"Window size must be >= 1, got {k}")
    if top < 0 or left < 0 or top + k > size or left + k > size:
        raise InvalidSpecError(f"Window ({top}, {left}, k={k}) is outside the {size}x{size} image")


@dataclass
class HeatMap:
    """
    Region errors on the grid of probed corners.

    ``raw`` is NaN where a location was not probed or failed. ``vmin``/``vmax`` record
    the range used for the [0, 1] scaling; a constant field maps to 0.
    """

    tops: List[int]
    lefts: List[int]
    raw: np.ndarray
    window: int
    vmin: float = math.nan
    vmax: float = math.nan
    failures: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        finite = self.raw[np.isfinite(self.raw)]
        if finite.size:
            self.vmin, self.vmax = float(finite.min()), float(finite.max())

    @property
    def span(self) -> float:
        return self.vmax - self.vmin

    def normalize(self) -> np.ndarray:
        if not self.span > 0:
            return np.where(np.isfinite(self.raw), 0.0, np.nan)
        return (self.raw - self.vmin) / self.span

    def denormalize(self, normalized: np.ndarray) -> np.ndarray:
        normalized = np.asarray(normalized, dtype=np.float64)
        if not self.span > 0:
            return np.where(np.isfinite(normalized), self.vmin, np.nan)
        return normalized * self.span + self.vmin

    def argmax(self) -> Optional[Tuple[int, int]]:
        if not np.isfinite(self.raw).any():
            return None
        i, j = np.unravel_index(int(np.nanargmax(self.raw)), self.raw.shape)
        return self.tops[i], self.lefts[j]

    def rows(self) -> List[Dict[str, Any]]:
        normalized = self.normalize()
        out = []
        for i, top in enumerate(self.tops):
            for j, left in enumerate(self.lefts):
                if np.isnan(self.raw[i, j]) and (top, left) not in self.failures:
                    continue
                out.append(
                    {"row": top, "col": left, "raw_mse": float(self.raw[i, j]), "normalized": float(normalized[i, j])}
                )
        return out

    def image(self) -> np.ndarray:
        """Normalized map for PGM output; missing cells are black."""
        return np.nan_to_num(self.normalize(), nan=0.0)

    def record(self) -> Dict[str, Any]:
        return {"min": self.vmin, "max": self.vmax, "window": self.window, "fill": FILL_RULE,
                "missing": [list(p) for p in self.failures]}


def insert_feature(x_star: np.ndarray, top: int, left: int, k: int) -> np.ndarray:
    """Copy of ``x_star`` with the k x k window at (top, left) set to max|x*| + 0j."""
    x_star = np.asarray(x_star)
    _check_window(x_star.shape[-1], top, left, k)
    if x_star.shape[-2] != x_star.shape[-1]:
        raise InvalidSpecError(f"Expected a square image, got {x_star.shape}")
    out = np.array(x_star, dtype=np.complex128)
    out[top:top + k, left:left + k] = complex(float(np.max(np.abs(x_star))), 0.0)
    return out


def probe_location(
    recon: BaseReconstructor,
    x_star: np.ndarray,
    sens: CoilSensitivities,
    mask: SamplingMask,
    top: int,
    left: int,
    k: int,
) -> float:
    """Region MSE inside the inserted window after measuring and reconstructing."""
    perturbed = insert_feature(x_star, top, left, k)
    try:
        image = recon.reconstruct(forward(perturbed, sens, mask), mask, sens)
    except CsRobustError as exc:
        exc.args = (f"probe ({top}, {left}, k={k}) with {recon.method_id}: {exc}",) + exc.args[1:]
        raise
    return region_mse(np.abs(perturbed), image, top, left, k)


def heatmap(
    recon: BaseReconstructor,
    x_star: np.ndarray,
    sens: CoilSensitivities,
    mask: SamplingMask,
    spec: ProbeSpec,
    runner: Optional[JobRunner] = None,
    log: Optional[logging.Logger] = None,
) -> HeatMap:
    """One feature at a time over the spec's location set; failed cells stay NaN."""
    log = log or logger
    runner = runner or JobRunner(1)
    size = int(np.shape(x_star)[-1])
    locations = spec.location_set(size)

    def run(location: Tuple[int, int]) -> float:
        return probe_location(recon, x_star, sens, mask, location[0], location[1], spec.window)

    outcomes = runner.map_flagged(run, locations, tags=[f"({t}, {l})" for t, l in locations])
    tops = sorted({t for t, _ in locations})
    lefts = sorted({l for _, l in locations})
    raw = np.full((len(tops), len(lefts)), np.nan)
    failures = []
    for (top, left), outcome in zip(locations, outcomes):
        if outcome.ok:
            raw[tops.index(top), lefts.index(left)] = outcome.value
        else:
            failures.append((top, left))
    result = HeatMap(tops=tops, lefts=lefts, raw=raw, window=spec.window, failures=failures)
    log.info(
        "Heat map for %s: %d locations, %d failed, region MSE in [%.4g, %.4g]",
        recon.method_id,
        len(locations),
        len(failures),
        result.vmin,
        result.vmax,
    )
    return result


def window_size_sweep(
    methods: Mapping[str, BaseReconstructor],
    manifest: DatasetManifest,
    mask: SamplingMask,
    sizes: Sequence[int] = (2, 3, 4, 5),
    n_random_locations: int = 4,
    seed: Any = 0,
    runner: Optional[JobRunner] = None,
    resamples: int = 1000,
    level: float = 0.95,
    ssim_window: int = 7,
    log: Optional[logging.Logger] = None,
) -> Tuple[List[Dict[str, Any]], Dict[str, Any]]:
    """
    Mean region MSE per (method, window size) over random windows on every image.

    All methods see the same windows: image i and size k draw corners from
    ``[seed, i, k]``. The summary relates each image's clean-reconstruction SSIM to its
    mean region MSE with a least-squares line per method.
    """
    log = log or logger
    runner = runner or JobRunner(1)
    if len(manifest) == 0:
        raise InvalidSpecError("Cannot sweep an empty manifest")
    if n_random_locations < 1:
        raise InvalidSpecError(f"n_random_locations must be >= 1, got {n_random_locations}")
    size, _ = manifest.shape()
    for k in sizes:
        _check_window(size, 0, 0, int(k))
    base_seed = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]

    def run(index: int) -> Dict[str, Any]:
        volume = manifest.load(index)
        target = np.abs(volume.target)
        errors: Dict[Tuple[str, int], List[float]] = {}
        quality: Dict[str, float] = {}
        for method_id, recon in methods.items():
            clean = recon.reconstruct(forward(volume.target, volume.sens, mask), mask, volume.sens)
            quality[method_id] = ssim(target, clean, window=ssim_window)
            for k in sizes:
                corners = random_locations(size, int(k), n_random_locations, base_seed + [index, int(k)])
                errors[(method_id, int(k))] = [
                    probe_location(recon, volume.target, volume.sens, mask, top, left, int(k))
                    for top, left in corners
                ]
        return {"errors": errors, "quality": quality}

    outcomes = runner.map_flagged(run, list(range(len(manifest))), tags=manifest.ids)
    done = [o.value for o in outcomes if o.ok and o.value is not None]
    if len(done) < len(outcomes):
        log.warning("Sweep skipped %d image(s): %s", len(outcomes) - len(done), [o.tag for o in outcomes if not o.ok])

    rows = []
    for method_id in methods:
        for k in sizes:
            samples = [e for result in done for e in result["errors"][(method_id, int(k))]]
            if samples:
                report = bootstrap_ci(samples, level=level, resamples=resamples, seed=seed, metric="region_mse")
                values = (report.value, report.ci_lo, report.ci_hi)
            else:
                values = (math.nan, math.nan, math.nan)
            rows.append({"method": method_id, "window_size": int(k), "mean": values[0],
                         "ci_lo": values[1], "ci_hi": values[2]})

    summary: Dict[str, Any] = {}
    for method_id in methods:
        points = [
            (result["quality"][method_id],
             float(np.mean([e for k in sizes for e in result["errors"][(method_id, int(k))]])))
            for result in done
        ]
        entry: Dict[str, Any] = {"n_images": len(points), "slope": None, "intercept": None}
        try:
            fit = fit_line(points)
            entry["slope"], entry["intercept"] = fit.slope, fit.intercept
        except DegenerateFitError as exc:
            log.debug("No SSIM/feature-error fit for %s: %s", method_id, exc)
        summary[method_id] = entry
    return rows, {"ssim_vs_region_mse": summary, "sizes": [int(k) for k in sizes],
                  "n_random_locations": int(n_random_locations), "fill": FILL_RULE}
