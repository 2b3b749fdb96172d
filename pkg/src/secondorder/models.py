"""Shared value types."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SecondOrderModel:
    """Long-run mean and temporal variance of a binary process.

    ``mean`` is a per-slot rate (deliveries or ON slots per slot) and
    ``variance`` is the limit of Var[(sum_t X(t) - T*mean) / sqrt(T)].
    """

    mean: float
    variance: float

    def __post_init__(self):
        if not (0.0 <= self.mean <= 1.0) or math.isnan(self.mean):
            raise ValueError(f"mean must lie in [0, 1], got {self.mean}")
        if not self.variance >= 0.0:
            raise ValueError(f"variance must be >= 0, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)
