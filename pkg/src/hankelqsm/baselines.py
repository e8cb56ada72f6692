"""Threshold-based k-space division, direct inversion, and metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .kspace import DipoleKernel, GridMismatchError, Volume, fft3, ifft3, _require_same_grid

__all__ = [
    "RegressionResult",
    "RoiStats",
    "tkd_kernel",
    "tkd_invert",
    "direct_invert",
    "rmse",
    "linregress",
    "roi_stats",
]


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    n_samples: int


@dataclass(frozen=True)
class RoiStats:
    label: int
    mean: float
    std: float
    count: int


def tkd_kernel(kernel: DipoleKernel, a: float) -> DipoleKernel:
    """Truncate the dipole filter: keep ``|D| > a``, floor the rest to
    ``a * sign(D)`` with ``sign(0) := +1``."""
    if a <= 0:
        raise ValueError(f"threshold must be positive, got {a}")
    if a >= 2.0 / 3.0:
        raise ValueError(f"threshold {a} exceeds the kernel range [-2/3, 1/3]")
    if a >= 1.0 / 3.0:
        warnings.warn(
            f"threshold {a} >= 1/3 floors the kernel's entire positive side",
            RuntimeWarning,
        )
    d = kernel.values
    sign = np.where(d >= 0.0, 1.0, -1.0)
    values = np.where(np.abs(d) > a, d, a * sign)
    return DipoleKernel(values, kernel.voxel_size, kernel.b0_dir)


def tkd_invert(phi: Volume, kernel: DipoleKernel, a: float) -> Volume:
    """Truncated k-space division: ``chi_hat = phi_hat / D_a`` elementwise."""
    _require_same_grid(phi, kernel)
    floored = tkd_kernel(kernel, a)
    phi_hat = fft3(phi.with_data(phi.data.real))
    chi = ifft3(phi_hat.with_data(phi_hat.data / floored.values))
    return chi.with_data(chi.data.real)


def direct_invert(phi: Volume, kernel: DipoleKernel) -> Volume:
    """Plain division by the dipole filter; rejects kernels with zeros."""
    _require_same_grid(phi, kernel)
    n_zero = int(np.count_nonzero(kernel.values == 0.0))
    if n_zero:
        raise ZeroDivisionError(
            f"dipole kernel has {n_zero} zero sample(s); direct inversion undefined"
        )
    phi_hat = fft3(phi.with_data(phi.data.real))
    chi = ifft3(phi_hat.with_data(phi_hat.data / kernel.values))
    return chi.with_data(chi.data.real)


def _masked_pair(
    x_r: Volume | np.ndarray, x_t: Volume | np.ndarray, mask: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray]:
    xr = (x_r.data if isinstance(x_r, Volume) else np.asarray(x_r)).real
    xt = (x_t.data if isinstance(x_t, Volume) else np.asarray(x_t)).real
    if xr.shape != xt.shape:
        raise GridMismatchError(f"volume shapes differ: {xr.shape} vs {xt.shape}")
    if mask is None:
        mask = np.ones(xr.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != xr.shape:
        raise GridMismatchError(f"mask shape {mask.shape} does not match {xr.shape}")
    if not mask.any():
        raise ValueError("mask is empty")
    return xr[mask], xt[mask]


def rmse(
    x_r: Volume | np.ndarray,
    x_t: Volume | np.ndarray,
    mask: np.ndarray | None = None,
    definition: str = "norm_ratio",
) -> float:
    """Error of ``x_r`` against the reference ``x_t``, in percent.

    ``norm_ratio`` (default) is ``100 * ||x_r - x_t|| / ||x_t||`` over the
    mask. ``sum_denominator`` keeps the squared-difference numerator but
    divides by the plain sum of the reference before the square root, for
    comparison against conventions that normalize by total intensity.
    """
    xr, xt = _masked_pair(x_r, x_t, mask)
    diff_sq = float(np.sum((xr - xt) ** 2))
    if definition == "norm_ratio":
        ref = float(np.sum(xt**2))
        if ref == 0.0:
            raise ValueError("reference has zero norm inside the mask")
        return 100.0 * np.sqrt(diff_sq / ref)
    if definition == "sum_denominator":
        ref = float(np.sum(xt))
        if ref <= 0.0:
            raise ValueError("reference sum must be positive for sum_denominator")
        return 100.0 * np.sqrt(diff_sq / ref)
    raise ValueError(f"unknown rmse definition {definition!r}")


def linregress(
    x_t: Volume | np.ndarray,
    x_r: Volume | np.ndarray,
    mask: np.ndarray | None = None,
) -> RegressionResult:
    """Ordinary least squares (with intercept) of ``x_r`` on ``x_t``."""
    xr, xt = _masked_pair(x_r, x_t, mask)
    n = xt.size
    if n < 2:
        raise ValueError(f"regression needs at least 2 samples, got {n}")
    xt_mean = xt.mean()
    xr_mean = xr.mean()
    var_t = float(np.sum((xt - xt_mean) ** 2))
    if var_t == 0.0:
        raise ValueError("reference is constant inside the mask; slope undefined")
    cov = float(np.sum((xt - xt_mean) * (xr - xr_mean)))
    slope = cov / var_t
    intercept = xr_mean - slope * xt_mean
    ss_res = float(np.sum((xr - (slope * xt + intercept)) ** 2))
    ss_tot = float(np.sum((xr - xr_mean) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return RegressionResult(slope, intercept, r_squared, n)


def roi_stats(chi: Volume | np.ndarray, labels: np.ndarray) -> list[RoiStats]:
    """Mean/std susceptibility per positive label id, ascending by id."""
    data = (chi.data if isinstance(chi, Volume) else np.asarray(chi)).real
    labels = np.asarray(labels)
    if labels.shape != data.shape:
        raise GridMismatchError(f"labels shape {labels.shape} does not match {data.shape}")
    ids = np.unique(labels)
    ids = ids[ids > 0]
    if ids.size == 0:
        raise ValueError("label volume contains no positive labels")
    stats = []
    for label in ids:
        values = data[labels == label]
        stats.append(
            RoiStats(int(label), float(values.mean()), float(values.std()), int(values.size))
        )
    return stats
