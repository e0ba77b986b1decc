"""
Image-quality metrics, bootstrap confidence intervals and linear fits.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from skimage.metrics import mean_squared_error, structural_similarity

from csrobust.core.errors import DegenerateFitError, InvalidSpecError, ShapeMismatchError, UndefinedRatioError

METRICS = ("ssim", "psnr", "nmse", "mse")
METRIC_COLUMNS = ["method", "domain", "image_id", "metric", "value"]

# scipy renamed random_state to rng; both accept a Generator.
_BOOTSTRAP_RNG_KW = "rng" if "rng" in inspect.signature(stats.bootstrap).parameters else "random_state"


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float
    ci_lo: float
    ci_hi: float
    n: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    residuals: np.ndarray

    def predict(self, x: Any) -> np.ndarray:
        return self.slope * np.asarray(x, dtype=np.float64) + self.intercept


def _pair(reference: np.ndarray, test: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ShapeMismatchError(f"Image shapes differ: {reference.shape} vs {test.shape}")
    return reference, test


def mse(reference: np.ndarray, test: np.ndarray) -> float:
    reference, test = _pair(reference, test)
    return float(mean_squared_error(reference, test))


def nmse(reference: np.ndarray, test: np.ndarray) -> float:
    reference, test = _pair(reference, test)
    energy = float(np.sum(reference ** 2))
    if energy == 0:
        raise UndefinedRatioError("NMSE is undefined for an all-zero reference")
    return float(np.sum((reference - test) ** 2)) / energy


def psnr(reference: np.ndarray, test: np.ndarray, data_range: Optional[float] = None) -> float:
    """10 log10(max(ref)^2 / mse); identical images give ``math.inf``."""
    reference, test = _pair(reference, test)
    error = mse(reference, test)
    peak = float(np.max(reference)) if data_range is None else float(data_range)
    if error == 0:
        return math.inf
    if peak <= 0:
        raise UndefinedRatioError("PSNR is undefined for a reference with non-positive peak")
    return 10.0 * math.log10(peak ** 2 / error)


def ssim(
    reference: np.ndarray,
    test: np.ndarray,
    window: int = 7,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: Optional[float] = None,
) -> float:
    """
    Mean SSIM over all fully contained uniform ``window`` x ``window`` patches.

    ``data_range`` defaults to the reference maximum; an all-zero reference falls back
    to the test maximum and then to 1.
    """
    reference, test = _pair(reference, test)
    if reference.ndim != 2:
        raise ShapeMismatchError(f"SSIM expects 2D images, got {reference.shape}")
    if window < 1 or window % 2 == 0:
        raise InvalidSpecError(f"SSIM window must be odd and >= 1, got {window}")
    if window > min(reference.shape):
        raise InvalidSpecError(f"SSIM window {window} exceeds image size {reference.shape}")
    if data_range is None:
        data_range = float(np.max(reference))
        if data_range <= 0:
            data_range = float(np.max(test)) if np.max(test) > 0 else 1.0
    return float(
        structural_similarity(
            reference,
            test,
            win_size=window,
            K1=k1,
            K2=k2,
            data_range=data_range,
            gaussian_weights=False,
            use_sample_covariance=False,
        )
    )


def region_mse(reference: np.ndarray, test: np.ndarray, top: int, left: int, k: int) -> float:
    reference, test = _pair(reference, test)
    height, width = reference.shape[-2:]
    if k < 1 or top < 0 or left < 0 or top + k > height or left + k > width:
        raise InvalidSpecError(f"Window ({top}, {left}, k={k}) is outside the {height}x{width} image")
    window = (slice(top, top + k), slice(left, left + k))
    return mse(reference[window], test[window])


def higher_is_better(metric: str) -> bool:
    if metric not in METRICS:
        raise InvalidSpecError(f"Unknown metric {metric!r}; expected one of {METRICS}")
    return metric in ("ssim", "psnr")


def score(metric: str, reference: np.ndarray, test: np.ndarray, ssim_window: int = 7) -> float:
    """Dispatch by metric id."""
    higher_is_better(metric)
    if metric == "ssim":
        return ssim(reference, test, window=ssim_window)
    if metric == "psnr":
        return psnr(reference, test)
    if metric == "nmse":
        return nmse(reference, test)
    return mse(reference, test)


def finite_mean(values: Iterable[float]) -> Tuple[float, int]:
    """Mean of the finite values and the number of excluded infinities/NaNs."""
    array = np.asarray(list(values), dtype=np.float64)
    finite = array[np.isfinite(array)]
    excluded = int(array.size - finite.size)
    if finite.size == 0:
        return math.nan, excluded
    return float(np.mean(finite)), excluded


def bootstrap_ci(
    samples: Sequence[float],
    level: float = 0.95,
    resamples: int = 1000,
    seed: Any = 0,
    metric: str = "mean",
) -> MetricReport:
    """Percentile bootstrap interval for the sample mean."""
    data = np.asarray(samples, dtype=np.float64).ravel()
    if data.size == 0:
        raise InvalidSpecError("bootstrap_ci needs at least one sample")
    if not 0 < level < 1:
        raise InvalidSpecError(f"Confidence level must be in (0, 1), got {level}")
    value = float(np.mean(data))
    if data.size == 1 or np.ptp(data) == 0:
        return MetricReport(metric, value, value, value, int(data.size))

    result = stats.bootstrap(
        (data,),
        np.mean,
        confidence_level=level,
        n_resamples=int(resamples),
        method="percentile",
        vectorized=True,
        **{_BOOTSTRAP_RNG_KW: np.random.default_rng(seed)},
    )
    low = min(float(result.confidence_interval.low), value)
    high = max(float(result.confidence_interval.high), value)
    return MetricReport(metric, value, low, high, int(data.size))


def fit_line(points: Sequence[Tuple[float, float]]) -> LineFit:
    """Ordinary least squares y = slope * x + intercept."""
    array = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if array.shape[0] < 2:
        raise DegenerateFitError(f"fit_line needs at least two points, got {array.shape[0]}")
    x, y = array[:, 0], array[:, 1]
    if np.ptp(x) == 0:
        raise DegenerateFitError("fit_line is degenerate for constant x")
    fit = stats.linregress(x, y)
    slope, intercept = float(fit.slope), float(fit.intercept)
    return LineFit(slope=slope, intercept=intercept, residuals=y - (slope * x + intercept))
