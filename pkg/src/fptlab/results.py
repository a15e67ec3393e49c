"""Result containers shared by the analytic and Monte Carlo routes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DensityCurve:
    """Per-horizon density values of one route.

    ``verdict`` is per point: "converged", "diverging", "oscillating" or
    "override" for the closed form, "mc" for simulated routes.
    """

    s: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    verdict: list[str]
    route: str
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.s)

    def at(self, s: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.s - s)))
        return float(self.value[i]), float(self.stderr[i])

    @property
    def nonconvergent(self) -> np.ndarray:
        return np.array([v in ("diverging", "oscillating") for v in self.verdict], dtype=bool)
