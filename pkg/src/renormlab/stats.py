"""Monte Carlo aggregates with order-insensitive summation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
U = TypeVar("U")


def exact_mean(values: Iterable[float]) -> float:
    """Correctly rounded-sum mean, centred on the smallest value so constants are exact
    and the result does not depend on the order of ``values``."""
    vals = [float(v) for v in values]
    x0 = min(vals)
    return x0 + math.fsum(v - x0 for v in vals) / len(vals)


@dataclass(frozen=True)
class Estimate:
    """Sample mean with standard error std/sqrt(count)."""

    mean: float
    stderr: float
    count: int
    seed_lineage: tuple = field(default=())

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"an estimate needs at least 2 samples, got {self.count}")

    @classmethod
    def from_samples(cls, samples: Sequence[float], seed_lineage: tuple = ()) -> "Estimate":
        x = [float(v) for v in samples]
        n = len(x)
        if n < 2:
            raise ValueError(f"an estimate needs at least 2 samples, got {n}")
        m = exact_mean(x)
        var = math.fsum((v - m) ** 2 for v in x) / (n - 1)
        return cls(mean=m, stderr=math.sqrt(var / n), count=n, seed_lineage=tuple(seed_lineage))

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "count": self.count, "seed_lineage": list(self.seed_lineage)}


def paired_difference(a: Sequence[float], b: Sequence[float], seed_lineage: tuple = ()) -> Estimate:
    """Estimate of E[a - b] from matched samples."""
    if len(a) != len(b):
        raise ValueError("paired samples must have equal length")
    return Estimate.from_samples([x - y for x, y in zip(a, b)], seed_lineage)


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def pooled(means: Sequence[float], stderrs: Sequence[float], counts: Sequence[int]) -> tuple[float, float, int]:
    """Count-weighted pooling of independent estimates of one quantity."""
    n = sum(counts)
    mean = math.fsum(c * m for c, m in zip(counts, means)) / n
    se = math.sqrt(math.fsum((c * s) ** 2 for c, s in zip(counts, stderrs))) / n
    return mean, se, n


def bootstrap_std_band(
    samples: np.ndarray, n_boot: int, rng: np.random.Generator, q: float = 0.95
) -> tuple[float, float]:
    """Percentile band for the sample standard deviation."""
    samples = np.asarray(samples, dtype=float)
    idx = rng.integers(0, len(samples), size=(n_boot, len(samples)))
    stds = samples[idx].std(axis=1, ddof=1)
    lo, hi = np.quantile(stds, [(1 - q) / 2, (1 + q) / 2])
    return float(lo), float(hi)


def map_units(fn: Callable[[T], U], units: Sequence[T], workers: int = 1) -> list[U]:
    """Apply ``fn`` to independent work units, returning results in unit order."""
    if workers <= 1 or len(units) <= 1:
        return [fn(u) for u in units]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, units))
