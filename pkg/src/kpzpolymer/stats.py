"""Single-pass Monte Carlo summaries."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable


@dataclass(frozen=True)
class RunStats:
    n: int
    mean: float
    variance: float
    se: float

    def to_dict(self) -> dict:
        return asdict(self)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.se


class Welford:
    """Running mean and unbiased variance (Welford's update)."""

    def __init__(self):
        self.n = 0
        self._mean = 0.0
        self._m2 = 0.0

    def push(self, x: float) -> None:
        self.n += 1
        delta = x - self._mean
        self._mean += delta / self.n
        self._m2 += delta * (x - self._mean)

    def extend(self, xs: Iterable[float]) -> "Welford":
        for x in xs:
            self.push(float(x))
        return self

    def result(self) -> RunStats:
        if self.n < 2:
            raise ValueError(f"need at least 2 samples, got {self.n}")
        var = max(self._m2 / (self.n - 1), 0.0)
        return RunStats(self.n, self._mean, var, math.sqrt(var / self.n))


def stats(samples: Iterable[float]) -> RunStats:
    return Welford().extend(samples).result()


def combined_se(*parts: RunStats) -> float:
    return math.sqrt(sum(p.se ** 2 for p in parts))
