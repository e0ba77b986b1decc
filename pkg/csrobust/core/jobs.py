"""
Ordered concurrent dispatch of independent jobs.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Generic, Iterable, List, Optional, Sequence, TypeVar

import numpy as np

from csrobust.core.errors import CsRobustError

T = TypeVar("T")
R = TypeVar("R")


def job_rng(base_seed: Any, index: int) -> np.random.Generator:
    """Independent RNG stream for job ``index``."""
    seed = list(base_seed) if isinstance(base_seed, (list, tuple)) else [int(base_seed)]
    return np.random.default_rng(seed + [int(index)])


def job_seed(base_seed: Any, index: int) -> List[int]:
    seed = list(base_seed) if isinstance(base_seed, (list, tuple)) else [int(base_seed)]
    return seed + [int(index)]


@dataclass
class JobOutcome(Generic[R]):
    """Result of one job; ``error`` is set instead of ``value`` when it failed."""

    index: int
    tag: str
    value: Optional[R] = None
    error: Optional[str] = None
    code: str = ""

    @property
    def ok(self) -> bool:
        return self.error is None


class JobRunner:
    """
    Maps a function over items with up to ``jobs`` worker threads.

    Results come back in submission order whatever the completion order, so
    aggregated artifacts do not depend on the job count.
    """

    def __init__(self, jobs: int = 1, logger: Optional[logging.Logger] = None):
        self.jobs = max(1, int(jobs))
        self.logger = logger or logging.getLogger(__name__)

    def map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """Ordered map; the first exception propagates."""
        if self.jobs == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(fn, items))

    def map_flagged(
        self,
        fn: Callable[[T], R],
        items: Sequence[T],
        tags: Optional[Iterable[str]] = None,
    ) -> List[JobOutcome[R]]:
        """Ordered map that records per-item failures instead of aborting the run."""
        tag_list = list(tags) if tags is not None else [str(i) for i in range(len(items))]

        def guarded(indexed: Any) -> JobOutcome[R]:
            index, item = indexed
            tag = tag_list[index]
            try:
                return JobOutcome(index=index, tag=tag, value=fn(item))
            except (CsRobustError, ArithmeticError, ValueError) as exc:
                code = getattr(exc, "code", type(exc).__name__)
                self.logger.warning("Job %s failed (%s): %s", tag, code, exc)
                return JobOutcome(index=index, tag=tag, error=str(exc), code=code)

        return self.map(guarded, list(enumerate(items)))
