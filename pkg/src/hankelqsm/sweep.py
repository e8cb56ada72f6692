"""Hyper-parameter selection by the discrepancy principle.

The grid is scanned with the coupling weight ascending in the outer loop
and the rank-penalty weight ascending in the inner loop; the first pair
whose phase-consistency error reaches the noise level is selected. The
evaluation callback is injected so the selection rule can be exercised
without running reconstructions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "SweepConfig",
    "SweepRow",
    "SweepResult",
    "geometric_range",
    "measure_noise_sigma",
    "phase_rms_error",
    "run_sweep",
]

DEFAULT_STEP = 10.0**0.2


def geometric_range(start: float, stop: float, step: float = DEFAULT_STEP) -> list[float]:
    """Ascending multiplicative grid from ``start`` to ``stop`` inclusive.

    The end point is included when it lies within half a step of the grid,
    so ``geometric_range(1e-3, 1, 10**0.2)`` has exactly 16 points.
    """
    if start <= 0 or stop < start:
        raise ValueError(f"need 0 < start <= stop, got ({start}, {stop})")
    if step <= 1:
        raise ValueError(f"step must be > 1, got {step}")
    n = int(round(np.log(stop / start) / np.log(step))) + 1
    values = [start * step**k for k in range(max(n, 1))]
    return [v for v in values if v <= stop * (1.0 + 1e-9)]


@dataclass(frozen=True)
class SweepConfig:
    """Grid and target for a discrepancy sweep."""

    mu_values: tuple[float, ...]
    lambda_values: tuple[float, ...]
    noise_sigma: float

    def __post_init__(self) -> None:
        for name, values in (("mu", self.mu_values), ("lambda", self.lambda_values)):
            arr = np.asarray(values, dtype=float)
            if arr.size == 0 or np.any(arr <= 0):
                raise ValueError(f"{name} grid must be nonempty and positive")
            if np.any(np.diff(arr) <= 0):
                raise ValueError(f"{name} grid must be strictly ascending")
        if self.noise_sigma <= 0:
            raise ValueError(f"noise_sigma must be positive, got {self.noise_sigma}")

    @classmethod
    def default_grid(cls, noise_sigma: float, step: float = DEFAULT_STEP) -> "SweepConfig":
        return cls(
            tuple(geometric_range(1e-3, 1.0, step)),
            tuple(geometric_range(1.0, 1e4, step)),
            noise_sigma,
        )


@dataclass(frozen=True)
class SweepRow:
    mu: float
    lam: float
    rmse: float
    selected: bool


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    selected: SweepRow | None = None
    closest: SweepRow | None = None
    sigma: float = 0.0

    @property
    def crossed(self) -> bool:
        return self.selected is not None


def measure_noise_sigma(phase: np.ndarray, region: np.ndarray) -> float:
    """Noise level as the standard deviation of phase in a uniform region."""
    region = np.asarray(region, dtype=bool)
    values = np.asarray(phase).real[region]
    if values.size < 2:
        raise ValueError("noise region must contain at least 2 voxels")
    sigma = float(values.std())
    if sigma == 0.0:
        raise ValueError("noise region has zero variance")
    return sigma


def phase_rms_error(phi: np.ndarray, phi_sim: np.ndarray, mask: np.ndarray) -> float:
    """Root-mean-square phase mismatch over the mask (absolute units)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask is empty")
    diff = (np.asarray(phi).real - np.asarray(phi_sim).real)[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def run_sweep(
    config: SweepConfig,
    evaluate: Callable[[float, float], float],
    progress: Callable[[SweepRow], None] | None = None,
) -> SweepResult:
    """Evaluate the full grid and select the first discrepancy crossing.

    ``evaluate(mu, lam)`` returns the phase-consistency error for one grid
    point. The scan order is mu ascending, then lambda ascending within
    each mu; the first row with error >= ``noise_sigma`` is flagged. When
    no row crosses, ``selected`` stays None and ``closest`` holds the row
    nearest the target.
    """
    result = SweepResult(sigma=config.noise_sigma)
    found = False
    best_gap = np.inf
    for mu in config.mu_values:
        for lam in config.lambda_values:
            value = float(evaluate(mu, lam))
            selected = not found and value >= config.noise_sigma
            row = SweepRow(mu, lam, value, selected)
            result.rows.append(row)
            if selected:
                result.selected = row
                found = True
            gap = abs(value - config.noise_sigma)
            if gap < best_gap:
                best_gap = gap
                result.closest = row
            if progress is not None:
                progress(row)
    return result
