"""Two-level Hankel lifting of 2-D k-space planes.

The default lifting wraps window offsets around the plane edges, so every
plane sample appears exactly ``p*q`` times in the lifted matrix and the
composition ``adjoint . lift`` equals ``p*q`` times the identity. That
constant multiplicity is what keeps the per-plane solver updates in closed
form. A classical non-wrapping mode is kept behind the ``wrap`` flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HankelConfig",
    "LiftedMatrix",
    "default_filter_size",
    "lift2",
    "adjoint2",
    "pseudo_inverse2",
    "numeric_rank",
]


@dataclass(frozen=True)
class HankelConfig:
    """Annihilating-filter window size per in-plane axis."""

    p: int
    q: int
    wrap: bool = True

    def __post_init__(self) -> None:
        if self.p < 1 or self.q < 1:
            raise ValueError(f"filter size must be positive, got ({self.p}, {self.q})")

    def validate_for(self, plane_shape: tuple[int, int]) -> None:
        m, n = plane_shape
        if self.p > m or self.q > n:
            raise ValueError(
                f"filter ({self.p}, {self.q}) larger than plane {plane_shape}"
            )


def default_filter_size(plane_shape: tuple[int, int]) -> HankelConfig:
    """8x8 window for planes of side >= 64, ceil(dim/8) below that."""
    p, q = (min(8, -(-int(n) // 8)) for n in plane_shape)
    return HankelConfig(p, q)


@dataclass(frozen=True)
class LiftedMatrix:
    """A lifted plane together with the provenance needed to project back."""

    entries: np.ndarray
    plane_shape: tuple[int, int]
    config: HankelConfig


# Index tables are pure functions of (plane shape, window); cache them since
# the solver lifts thousands of same-shaped planes.
_TABLES: dict[tuple[int, int, int, int], tuple[np.ndarray, np.ndarray]] = {}


def _wrap_tables(m: int, n: int, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """(gather, scatter) index tables for the wrap-around lifting.

    ``gather[row, col]`` is the flat plane index feeding lifted entry
    (row, col); ``scatter[pos, col]`` is the flat lifted index whose entry
    was sourced from plane position ``pos`` at window offset ``col``.
    """
    key = (m, n, p, q)
    cached = _TABLES.get(key)
    if cached is not None:
        return cached
    i = np.arange(m)[:, None, None, None]
    j = np.arange(n)[None, :, None, None]
    a = np.arange(p)[None, None, :, None]
    b = np.arange(q)[None, None, None, :]
    gather = (((i + a) % m) * n + ((j + b) % n)).reshape(m * n, p * q)
    scatter = (((((i - a) % m) * n + ((j - b) % n)) * (p * q)) + a * q + b).reshape(m * n, p * q)
    _TABLES[key] = (gather, scatter)
    return gather, scatter


def lift2(plane: np.ndarray, cfg: HankelConfig) -> LiftedMatrix:
    """Lift a 2-D plane into its two-level Hankel matrix.

    In wrap mode the result has shape ``(M*N, p*q)`` with entry
    ``[(i, j), (a, b)] = plane[(i+a) % M, (j+b) % N]``; rows/columns are
    enumerated row-major in (i, j)/(a, b). Without wrap only valid windows
    are kept, giving shape ``((M-p+1)*(N-q+1), p*q)``.
    """
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {plane.shape}")
    m, n = plane.shape
    cfg.validate_for((m, n))
    if cfg.wrap:
        gather, _ = _wrap_tables(m, n, cfg.p, cfg.q)
        entries = plane.ravel()[gather]
    else:
        windows = np.lib.stride_tricks.sliding_window_view(plane, (cfg.p, cfg.q))
        entries = windows.reshape((m - cfg.p + 1) * (n - cfg.q + 1), cfg.p * cfg.q)
        entries = np.array(entries)
    return LiftedMatrix(entries, (m, n), cfg)


def adjoint2(lifted: LiftedMatrix) -> np.ndarray:
    """Adjoint of ``lift2``: each plane position sums its lifted entries."""
    m, n = lifted.plane_shape
    cfg = lifted.config
    expected_rows = m * n if cfg.wrap else (m - cfg.p + 1) * (n - cfg.q + 1)
    if lifted.entries.shape != (expected_rows, cfg.p * cfg.q):
        raise ValueError(
            f"entries shape {lifted.entries.shape} inconsistent with "
            f"plane {lifted.plane_shape} and filter ({cfg.p}, {cfg.q})"
        )
    if cfg.wrap:
        _, scatter = _wrap_tables(m, n, cfg.p, cfg.q)
        return lifted.entries.ravel()[scatter].sum(axis=1).reshape(m, n)
    out = np.zeros((m, n), dtype=lifted.entries.dtype)
    blocks = lifted.entries.reshape(m - cfg.p + 1, n - cfg.q + 1, cfg.p, cfg.q)
    for a in range(cfg.p):
        for b in range(cfg.q):
            out[a : a + m - cfg.p + 1, b : b + n - cfg.q + 1] += blocks[:, :, a, b]
    return out


def _multiplicity(plane_shape: tuple[int, int], cfg: HankelConfig) -> np.ndarray:
    if cfg.wrap:
        return np.full(plane_shape, cfg.p * cfg.q, dtype=np.float64)
    ones = LiftedMatrix(
        np.ones(
            ((plane_shape[0] - cfg.p + 1) * (plane_shape[1] - cfg.q + 1), cfg.p * cfg.q)
        ),
        plane_shape,
        cfg,
    )
    return adjoint2(ones)


def pseudo_inverse2(lifted: LiftedMatrix) -> np.ndarray:
    """Left inverse of ``lift2``: the multiplicity-normalized adjoint."""
    mult = _multiplicity(lifted.plane_shape, lifted.config)
    return adjoint2(lifted) / mult


def numeric_rank(mat: np.ndarray | LiftedMatrix, tol: float) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    entries = mat.entries if isinstance(mat, LiftedMatrix) else np.asarray(mat)
    if entries.size == 0:
        return 0
    sv = np.linalg.svd(entries, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))
