"""QSM dipole inversion by k-space low-rank Hankel matrix completion.

The package provides the physics substrate (FFT conventions, dipole
kernel, forward phase model), the two-level Hankel lifting, the per-plane
factorized ADMM solver with its three-axis volume sweep, truncated
k-space division as a baseline, evaluation metrics, synthetic phantoms,
and a command-line pipeline.
"""

from .baselines import (
    RegressionResult,
    RoiStats,
    direct_invert,
    linregress,
    rmse,
    roi_stats,
    tkd_invert,
    tkd_kernel,
)
from .hankel import (
    HankelConfig,
    LiftedMatrix,
    adjoint2,
    default_filter_size,
    lift2,
    numeric_rank,
    pseudo_inverse2,
)
from .kspace import (
    DipoleKernel,
    GridMismatchError,
    ScanParams,
    Volume,
    add_noise,
    fft3,
    forward_phase,
    forward_phase_raw,
    frequency_axes,
    ifft3,
    make_dipole_kernel,
)
from .phantom import (
    Cylinder,
    Dataset,
    Ellipsoid,
    PhantomSpec,
    Sphere,
    default_brain_like_spec,
    make_dataset,
    phase_noise_sigma_ppm,
    render,
    render_labels,
)
from .solver import (
    AdmmParams,
    AlohaDiagnostics,
    SolverReport,
    aloha_qsm,
    correction_factor,
    haar_spectrum,
    haar_unweight,
    haar_weight,
    haar_weights,
    solve_plane,
)
from .sweep import (
    SweepConfig,
    SweepResult,
    SweepRow,
    geometric_range,
    measure_noise_sigma,
    phase_rms_error,
    run_sweep,
)
from .volio import read_nifti1, read_volume, write_pgm_slice, write_volume

__version__ = "0.1.0"
