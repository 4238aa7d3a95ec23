from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PositionSolution:
    positions: np.ndarray
    delay_t1: float
    it_t2: float


@dataclass
class ThroughputReport:
    sinr: np.ndarray
    throughput: np.ndarray
    delay_t1: float
    it_t2: float
    positions: np.ndarray
    trace: list[float] = field(default_factory=list)
    iterations: int = 0
    status: str = "ok"

    @property
    def min_throughput(self) -> float:
        return float(np.min(self.throughput))
