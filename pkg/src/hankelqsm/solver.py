"""Reconstruction by per-plane low-rank Hankel completion in k-space.

The volume solver initializes k-space with truncated division, then sweeps
the three frequency axes once each. Every 2-D plane perpendicular to the
current axis is weighted by the separable Haar detail spectrum, completed
by a factorized ADMM under a data-consistency term against the matching
measured-phase plane, unweighted and written back. A global scale factor
from a zero-intercept phase regression compensates the systematic
underestimation left by the dipole cone.

The plane solver works with the pq-normalized lifting ``H(x)/sqrt(p*q)``,
which is an isometry under wrap-around lifting; this makes the elementwise
plane update exact as written. Its rank penalty is therefore
``lam * ||H(x)||_* / sqrt(p*q)`` in terms of the raw lifting.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .hankel import HankelConfig, default_filter_size, _wrap_tables
from .kspace import (
    DipoleKernel,
    GridMismatchError,
    Volume,
    fft3,
    forward_phase,
    ifft3,
    _require_same_grid,
)

__all__ = [
    "AdmmParams",
    "SolverReport",
    "AlohaDiagnostics",
    "haar_spectrum",
    "haar_weights",
    "haar_weight",
    "haar_unweight",
    "solve_plane",
    "correction_factor",
    "aloha_qsm",
]

AXIS_NAMES = ("kx", "ky", "kz")


@dataclass(frozen=True)
class AdmmParams:
    """Per-plane solver parameters.

    ``lam`` weighs the factorized rank penalty, ``mu`` the constraint
    coupling. ``rank_r`` is clamped to the lifted matrix width at solve
    time. Iteration stops early once the primal residual falls below
    ``tol`` times the lifted norm of the initialization. Samples whose
    Haar weight magnitude is below ``eps_weight`` times the maximum keep
    their initialization value when unweighting.
    """

    lam: float
    mu: float
    rank_r: int = 16
    max_iters: int = 50
    tol: float = 1e-4
    eps_weight: float = 1e-6

    def __post_init__(self) -> None:
        if self.lam <= 0 or self.mu <= 0:
            raise ValueError("lam and mu must be strictly positive")
        if self.rank_r < 1:
            raise ValueError("rank_r must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be strictly positive")
        if not 0.0 < self.eps_weight < 1.0:
            raise ValueError("eps_weight must lie in (0, 1)")


@dataclass
class AdmmState:
    """Solver variables for one plane: the weighted k-space estimate, the
    two factors of the lifted matrix, and the running multiplier."""

    chi_w: np.ndarray
    u: np.ndarray
    v: np.ndarray
    multiplier: np.ndarray

    def validate(self, plane_shape: tuple[int, int], cfg: HankelConfig) -> None:
        m, n = plane_shape
        rank = self.u.shape[1]
        lifted_shape = (m * n, cfg.p * cfg.q)
        if self.chi_w.shape != (m, n):
            raise ValueError(f"chi_w shape {self.chi_w.shape} != plane {plane_shape}")
        if self.u.shape != (m * n, rank) or self.v.shape != (cfg.p * cfg.q, rank):
            raise ValueError(
                f"factor shapes {self.u.shape}/{self.v.shape} inconsistent with "
                f"plane {plane_shape} and filter ({cfg.p}, {cfg.q})"
            )
        if self.multiplier.shape != lifted_shape:
            raise ValueError(
                f"multiplier shape {self.multiplier.shape} != lifted {lifted_shape}"
            )
        for name, arr in (
            ("chi_w", self.chi_w),
            ("u", self.u),
            ("v", self.v),
            ("multiplier", self.multiplier),
        ):
            if not np.all(np.isfinite(arr.view(np.float64))):
                raise ValueError(f"state field {name} contains non-finite entries")


def initial_state(init: np.ndarray, cfg: HankelConfig, params: AdmmParams) -> AdmmState:
    """Warm start: factors from the truncated SVD of the lifted init, zero
    multiplier."""
    init = np.asarray(init, dtype=np.complex128)
    m, n = init.shape
    gather, _ = _wrap_tables(m, n, cfg.p, cfg.q)
    lifted = init.ravel()[gather] / np.sqrt(cfg.p * cfg.q)
    rank = min(params.rank_r, cfg.p * cfg.q, m * n)
    u, sv, vh = np.linalg.svd(lifted, full_matrices=False)
    scale = np.sqrt(sv[:rank])
    return AdmmState(
        chi_w=init.copy(),
        u=u[:, :rank] * scale,
        v=vh[:rank].conj().T * scale,
        multiplier=np.zeros_like(lifted),
    )


@dataclass
class SolverReport:
    """Final objective terms and residuals of one plane solve."""

    fidelity: float
    penalty: float
    augmented: float
    primal_residual: float
    iterations: int
    fidelity_init: float = 0.0
    primal_residual_first: float = 0.0

    def __post_init__(self) -> None:
        values = (self.fidelity, self.penalty, self.augmented, self.primal_residual)
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise ValueError(f"report components must be finite and >= 0: {values}")


@dataclass
class AlohaDiagnostics:
    """Per-plane reports of a volume reconstruction, grouped by sweep axis."""

    s_m: float = 1.0
    s_m_degenerate: bool = False
    axis_order: tuple[int, ...] = (0, 1, 2)
    imag_residual_ratio: float = 0.0
    plane_reports: dict[int, list[SolverReport]] = field(default_factory=dict)

    def all_reports(self) -> list[SolverReport]:
        return [r for reports in self.plane_reports.values() for r in reports]


def haar_spectrum(n: int) -> np.ndarray:
    """Haar detail-filter spectrum on a centered length-``n`` axis.

    ``w(k) = (1 - exp(-2*pi*i*k/n)) / sqrt(2)`` evaluated at the centered
    integer frequencies; zero at DC, magnitude sqrt(2) at Nyquist.
    """
    k = np.arange(n) - n // 2
    return (1.0 - np.exp(-2j * np.pi * k / n)) / np.sqrt(2.0)


def haar_weights(plane_shape: tuple[int, int]) -> np.ndarray:
    """Separable 2-D Haar weighting ``W(k1, k2) = w(k1) * w(k2)``."""
    return np.outer(haar_spectrum(plane_shape[0]), haar_spectrum(plane_shape[1]))


def haar_weight(plane: np.ndarray) -> np.ndarray:
    """Multiply a centered k-space plane by the Haar detail spectrum."""
    plane = np.asarray(plane)
    return haar_weights(plane.shape) * plane


def haar_unweight(
    plane: np.ndarray, init_plane: np.ndarray, eps_weight: float = 1e-6
) -> np.ndarray:
    """Invert :func:`haar_weight`, keeping ``init_plane`` where it cannot be.

    Samples with ``|W|`` below ``eps_weight * max|W|`` (the DC cross, where
    the Haar spectrum vanishes) copy the corresponding initialization
    values instead of dividing.
    """
    plane = np.asarray(plane)
    init_plane = np.asarray(init_plane)
    w = haar_weights(plane.shape)
    ok = np.abs(w) >= eps_weight * np.abs(w).max()
    return np.where(ok, plane / np.where(ok, w, 1.0), init_plane)


def solve_plane(
    phi_w: np.ndarray,
    d_hat: np.ndarray,
    cfg: HankelConfig,
    params: AdmmParams,
    init: np.ndarray,
) -> tuple[np.ndarray, SolverReport]:
    """Complete one weighted k-space plane by factorized ADMM.

    Minimizes ``1/2 ||phi_w - d_hat * x||^2 + lam/2 (||U||_F^2 + ||V||_F^2)``
    subject to the normalized lift of ``x`` equaling ``U V^H``, starting
    from the warm state of :func:`initial_state`.
    """
    phi_w = np.asarray(phi_w, dtype=np.complex128)
    d_hat = np.asarray(d_hat, dtype=np.float64)
    init = np.asarray(init, dtype=np.complex128)
    if not (phi_w.shape == d_hat.shape == init.shape) or phi_w.ndim != 2:
        raise GridMismatchError(
            f"plane shapes differ: {phi_w.shape}, {d_hat.shape}, {init.shape}"
        )
    if not np.all(np.isfinite(init.view(np.float64))):
        raise ValueError("init plane contains non-finite samples")
    m, n = phi_w.shape
    cfg.validate_for((m, n))
    if not cfg.wrap:
        raise ValueError("solve_plane requires wrap-around lifting")
    p, q = cfg.p, cfg.q
    gather, scatter = _wrap_tables(m, n, p, q)
    root_pq = np.sqrt(p * q)

    state = initial_state(init, cfg, params)
    state.validate((m, n), cfg)
    u_fac, v_fac, lagr = state.u, state.v, state.multiplier
    r = u_fac.shape[1]
    factor_prod = u_fac @ v_fac.conj().T

    lam, mu = params.lam, params.mu
    denom = d_hat * d_hat + mu
    data_term = d_hat * phi_w  # d_hat is real, so conj(d) * phi == d * phi
    stop_ref = float(np.linalg.norm(init))  # equals the lifted norm of init
    eye = np.eye(r)

    fidelity_init = 0.5 * np.linalg.norm(phi_w - d_hat * init) ** 2
    x = state.chi_w
    residual = 0.0
    residual_first = 0.0
    iterations = 0
    for iterations in range(1, params.max_iters + 1):
        target = factor_prod - lagr
        adj = target.ravel()[scatter].sum(axis=1).reshape(m, n) / root_pq
        x = (data_term + mu * adj) / denom
        lifted_x = x.ravel()[gather] / root_pq
        shifted = lifted_x + lagr
        u_fac = mu * (shifted @ (v_fac @ np.linalg.inv(lam * eye + mu * (v_fac.conj().T @ v_fac))))
        v_fac = mu * (shifted.conj().T @ (u_fac @ np.linalg.inv(lam * eye + mu * (u_fac.conj().T @ u_fac))))
        factor_prod = u_fac @ v_fac.conj().T
        residual = float(np.linalg.norm(lifted_x - factor_prod))
        lagr = shifted - factor_prod
        if not np.isfinite(residual):
            raise RuntimeError(f"plane solve diverged at iteration {iterations}")
        if iterations == 1:
            residual_first = residual
        if residual <= params.tol * stop_ref:
            break

    report = SolverReport(
        fidelity=0.5 * float(np.linalg.norm(phi_w - d_hat * x) ** 2),
        penalty=0.5 * lam * float(np.linalg.norm(u_fac) ** 2 + np.linalg.norm(v_fac) ** 2),
        augmented=0.5 * mu * float(np.linalg.norm(lifted_x - factor_prod + lagr) ** 2),
        primal_residual=residual,
        iterations=iterations,
        fidelity_init=float(fidelity_init),
        primal_residual_first=residual_first,
    )
    return x, report


def correction_factor(
    phi: Volume, chi: Volume, kernel: DipoleKernel, mask: np.ndarray
) -> float:
    """Zero-intercept regression slope of the re-simulated phase on ``phi``.

    Returns 1 (and warns) when the measured phase has no energy inside the
    mask, leaving the caller's scale untouched.
    """
    _require_same_grid(phi, kernel)
    _require_same_grid(chi, kernel)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != phi.dims:
        raise GridMismatchError(f"mask shape {mask.shape} does not match {phi.dims}")
    if not mask.any():
        raise ValueError("correction_factor mask is empty")
    phi_sim = forward_phase(chi, kernel)
    ref = phi.data.real[mask]
    sim = phi_sim.data[mask]
    denom = float(np.sum(ref * ref))
    if denom == 0.0:
        warnings.warn(
            "phase has zero energy inside the mask; correction factor degenerates to 1",
            RuntimeWarning,
        )
        return 1.0
    return float(np.sum(ref * sim) / denom)


def _sweep_axis(
    chi_hat: np.ndarray,
    phi_hat: np.ndarray,
    d_values: np.ndarray,
    axis: int,
    cfg: HankelConfig | None,
    params: AdmmParams,
    workers: int,
) -> list[SolverReport]:
    plane_shape = tuple(s for k, s in enumerate(chi_hat.shape) if k != axis)
    plane_cfg = default_filter_size(plane_shape) if cfg is None else cfg
    weights = haar_weights(plane_shape)
    invertible = np.abs(weights) >= params.eps_weight * np.abs(weights).max()
    weights_safe = np.where(invertible, weights, 1.0)

    def solve_one(index: int) -> tuple[np.ndarray, SolverReport]:
        sl = [slice(None)] * 3
        sl[axis] = index
        sl = tuple(sl)
        current = chi_hat[sl]
        try:
            out_w, report = solve_plane(
                weights * phi_hat[sl], d_values[sl], plane_cfg, params, weights * current
            )
        except Exception as exc:
            raise RuntimeError(
                f"plane solve failed (axis {AXIS_NAMES[axis]}, plane {index}): {exc}"
            ) from exc
        return np.where(invertible, out_w / weights_safe, current), report

    indices = range(chi_hat.shape[axis])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve_one, indices))
    else:
        results = [solve_one(k) for k in indices]

    reports = []
    for index, (plane, report) in zip(indices, results):
        sl = [slice(None)] * 3
        sl[axis] = index
        chi_hat[tuple(sl)] = plane
        reports.append(report)
    return reports


def aloha_qsm(
    phi: Volume,
    kernel: DipoleKernel,
    params: AdmmParams,
    cfg: HankelConfig | None = None,
    tkd_threshold: float = 0.1,
    mask: np.ndarray | None = None,
    axis_order: tuple[int, int, int] = (0, 1, 2),
    average_orders: bool = False,
    workers: int = 1,
) -> tuple[Volume, float, AlohaDiagnostics]:
    """Full k-space low-rank reconstruction of a susceptibility map.

    Starts from the truncated-division solution, sweeps the axes in
    ``axis_order`` (every plane perpendicular to each axis is solved once),
    then rescales by the phase-regression correction factor measured over
    ``mask`` (everywhere, if omitted). With ``average_orders`` the sweep
    runs once per permutation of the axes and the k-spaces are averaged
    before correction, trading a 6x slowdown for order independence.

    Plane solves within one axis are independent; ``workers`` > 1 runs them
    in a thread pool. BLAS pools are pinned to one thread for the duration
    so results are bitwise reproducible at any worker count.
    """
    from .baselines import tkd_kernel  # local import; baselines imports this module's types

    if phi.domain != "image":
        raise GridMismatchError("aloha_qsm expects an image-domain phase volume")
    if np.iscomplexobj(phi.data) and np.abs(phi.data.imag).max() > 0:
        raise ValueError("aloha_qsm expects a real-valued phase volume")
    _require_same_grid(phi, kernel)
    if sorted(axis_order) != [0, 1, 2]:
        raise ValueError(f"axis_order must be a permutation of (0, 1, 2), got {axis_order}")
    if mask is None:
        mask = np.ones(phi.dims, dtype=bool)

    diagnostics = AlohaDiagnostics(axis_order=tuple(axis_order))
    orders = (
        [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
        if average_orders
        else [tuple(axis_order)]
    )

    with threadpool_limits(limits=1):
        phi_hat = fft3(phi.with_data(phi.data.real)).data
        d_a = tkd_kernel(kernel, tkd_threshold).values
        init_hat = phi_hat / d_a

        accumulated = np.zeros_like(init_hat)
        for order in orders:
            chi_hat = init_hat.copy()
            for axis in order:
                reports = _sweep_axis(chi_hat, phi_hat, kernel.values, axis, cfg, params, workers)
                diagnostics.plane_reports.setdefault(axis, []).extend(reports)
            accumulated += chi_hat
        chi_hat = accumulated / len(orders)

        chi_complex = ifft3(Volume(chi_hat, phi.voxel_size, "kspace")).data
        chi_raw = phi.with_data(chi_complex.real)
        real_norm = float(np.linalg.norm(chi_complex.real))
        if real_norm > 0.0:
            diagnostics.imag_residual_ratio = float(
                np.linalg.norm(chi_complex.imag) / real_norm
            )

        ref_sq = float(np.sum(phi.data.real[mask] ** 2))
        if ref_sq == 0.0:
            s_m = 1.0
            diagnostics.s_m_degenerate = True
        else:
            s_m = correction_factor(phi, chi_raw, kernel, mask)
        diagnostics.s_m = s_m

    return chi_raw.with_data(chi_raw.data / s_m), s_m, diagnostics
