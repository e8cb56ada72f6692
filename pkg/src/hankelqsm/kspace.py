"""Grid and FFT conventions, dipole kernel, forward phase model, noise.

All volumes use a centered k-space layout: the DC sample of a ``dims``
grid sits at index ``(Nx//2, Ny//2, Nz//2)``. Transforms are unitary, so
Parseval holds exactly and the forward model is self-adjoint. Frequency
coordinates are physical, ``k_i = n_i / (N_i * delta_i)`` in 1/mm, which
keeps the dipole cone geometry correct for anisotropic voxels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridMismatchError",
    "Volume",
    "ScanParams",
    "DipoleKernel",
    "fft3",
    "ifft3",
    "frequency_axes",
    "make_dipole_kernel",
    "forward_phase",
    "forward_phase_raw",
    "add_noise",
]

IMAGE = "image"
KSPACE = "kspace"


class GridMismatchError(ValueError):
    """Raised when volumes/kernels with incompatible grids are combined."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Volume:
    """A 3-D scalar field with physical voxel size and a domain tag.

    ``data`` is indexed ``[x, y, z]`` and is immutable once constructed.
    The flat sample order of the on-disk format (x fastest) corresponds to
    ``data.ravel(order="F")``.
    """

    data: np.ndarray
    voxel_size: tuple[float, float, float]
    domain: str = IMAGE

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {arr.shape}")
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        object.__setattr__(self, "data", _freeze(arr))
        vs = tuple(float(v) for v in self.voxel_size)
        if len(vs) != 3 or any(v <= 0 for v in vs):
            raise ValueError(f"voxel_size must be three positive lengths, got {self.voxel_size}")
        object.__setattr__(self, "voxel_size", vs)
        if self.domain not in (IMAGE, KSPACE):
            raise ValueError(f"domain must be {IMAGE!r} or {KSPACE!r}, got {self.domain!r}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray, domain: str | None = None) -> "Volume":
        return Volume(data, self.voxel_size, self.domain if domain is None else domain)

    def same_grid(self, other: "Volume | DipoleKernel") -> bool:
        return self.dims == other.dims and np.allclose(self.voxel_size, other.voxel_size)


@dataclass(frozen=True)
class ScanParams:
    """Gradient-echo acquisition constants for phase scaling.

    ``phase_scale`` is the factor between the normalized field and the raw
    phase in radians, for a dimensionless susceptibility. Susceptibilities
    stored in ppm pick up the extra 1e-6.
    """

    gamma_bar: float = 42.577478518e6  # Hz/T
    B0: float = 3.0  # T
    TE: float = 20e-3  # s

    def __post_init__(self) -> None:
        if self.gamma_bar <= 0 or self.B0 <= 0 or self.TE <= 0:
            raise ValueError("gamma_bar, B0 and TE must all be strictly positive")

    @property
    def phase_scale(self) -> float:
        """Radians of phase per unit of (dimensionless) normalized field."""
        return 2.0 * np.pi * self.gamma_bar * self.B0 * self.TE

    @property
    def rad_per_ppm(self) -> float:
        """Radians of phase per ppm of normalized field."""
        return self.phase_scale * 1e-6


@dataclass(frozen=True)
class DipoleKernel:
    """The k-space dipole filter on a specific grid.

    ``values`` is real, lives on the centered frequency grid and satisfies
    ``-2/3 <= values <= 1/3`` with ``values == 0`` at the k-space origin.
    """

    values: np.ndarray
    voxel_size: tuple[float, float, float]
    b0_dir: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _freeze(np.asarray(self.values, dtype=np.float64)))
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "b0_dir", tuple(float(v) for v in self.b0_dir))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape


def fft3(v: Volume) -> Volume:
    """Centered unitary 3-D FFT of an image-domain volume."""
    if v.domain != IMAGE:
        raise GridMismatchError("fft3 expects an image-domain volume")
    out = np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(v.data), norm="ortho"))
    return Volume(out, v.voxel_size, KSPACE)


def ifft3(v: Volume) -> Volume:
    """Centered unitary 3-D inverse FFT of a k-space volume."""
    if v.domain != KSPACE:
        raise GridMismatchError("ifft3 expects a k-space volume")
    out = np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(v.data), norm="ortho"))
    return Volume(out, v.voxel_size, IMAGE)


def frequency_axes(dims, voxel_size) -> list[np.ndarray]:
    """Centered physical frequency axes, ``k_i = n_i / (N_i * delta_i)``."""
    return [
        np.fft.fftshift(np.fft.fftfreq(int(n), d=float(dv)))
        for n, dv in zip(dims, voxel_size)
    ]


def make_dipole_kernel(dims, voxel_size, b0_dir=(0.0, 0.0, 1.0)) -> DipoleKernel:
    """Build the k-space dipole filter ``1/3 - (k.b0)^2 / |k|^2``.

    The value at the k-space origin is defined as 0 (the origin belongs to
    the degenerate cone). ``b0_dir`` is normalized internally.
    """
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or any(n < 2 for n in dims):
        raise ValueError(f"dims must be three integers >= 2, got {dims}")
    b0 = np.asarray(b0_dir, dtype=np.float64)
    norm = np.linalg.norm(b0)
    if norm == 0:
        raise ValueError("b0_dir must be a nonzero vector")
    b0 = b0 / norm

    kx, ky, kz = np.meshgrid(*frequency_axes(dims, voxel_size), indexing="ij")
    k_dot_b = kx * b0[0] + ky * b0[1] + kz * b0[2]
    k2 = kx * kx + ky * ky + kz * kz
    center = tuple(n // 2 for n in dims)
    k2[center] = 1.0  # avoid 0/0 at the origin; overwritten below
    values = 1.0 / 3.0 - (k_dot_b * k_dot_b) / k2
    values[center] = 0.0
    return DipoleKernel(values, tuple(float(v) for v in voxel_size), tuple(b0))


def _require_same_grid(v: Volume, kernel: DipoleKernel) -> None:
    if v.dims != kernel.dims or not np.allclose(v.voxel_size, kernel.voxel_size):
        raise GridMismatchError(
            f"volume grid {v.dims}/{v.voxel_size} does not match "
            f"kernel grid {kernel.dims}/{kernel.voxel_size}"
        )


def forward_phase(chi: Volume, kernel: DipoleKernel) -> Volume:
    """Normalized field from a susceptibility map: ``FT^-1(D * FT(chi))``.

    The result is real for real input (the kernel is real and even); the
    rounding-level imaginary residue is discarded.
    """
    if chi.domain != IMAGE:
        raise GridMismatchError("forward_phase expects an image-domain volume")
    if np.iscomplexobj(chi.data) and np.abs(chi.data.imag).max() > 0:
        raise ValueError("forward_phase expects a real-valued susceptibility map")
    _require_same_grid(chi, kernel)
    chi_hat = fft3(chi.with_data(chi.data.real))
    phi = ifft3(chi_hat.with_data(kernel.values * chi_hat.data))
    return phi.with_data(phi.data.real)


def forward_phase_raw(chi: Volume, kernel: DipoleKernel, params: ScanParams) -> Volume:
    """Raw phase in radians: ``phase_scale * forward_phase(chi)``.

    ``chi`` must be dimensionless here; divide ppm values by 1e6 first (or
    scale the result by 1e-6).
    """
    phi = forward_phase(chi, kernel)
    return phi.with_data(params.phase_scale * phi.data)


def add_noise(magnitude: Volume, phase: Volume, snr: float, seed: int) -> Volume:
    """Return the phase of ``m*exp(i*theta)`` plus circular Gaussian noise.

    The noise has per-component standard deviation ``mean(magnitude)/snr``,
    matching how thermal noise enters a complex MR signal. Deterministic
    for a given seed.
    """
    if snr <= 0:
        raise ValueError(f"snr must be positive, got {snr}")
    if magnitude.dims != phase.dims:
        raise GridMismatchError("magnitude and phase grids differ")
    rng = np.random.default_rng(seed)
    m = magnitude.data.real
    theta = phase.data.real
    sigma = float(np.mean(m)) / snr
    signal = m * np.exp(1j * theta)
    noise = rng.normal(0.0, sigma, theta.shape) + 1j * rng.normal(0.0, sigma, theta.shape)
    return phase.with_data(np.angle(signal + noise))
