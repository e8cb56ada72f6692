"""Volume file IO: raw payload + JSON sidecar, PGM slices, NIfTI-1 import.

A volume on disk is a little-endian binary payload (``f32`` scalars or
``c64`` interleaved real/imaginary float32 pairs, x fastest) next to a
JSON header ``<payload>.json`` carrying dims, voxel size, dtype and domain.
The header is parsed and validated before the payload is read.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .kspace import Volume

__all__ = [
    "write_volume",
    "read_volume",
    "write_pgm_slice",
    "read_nifti1",
]

_DTYPES = {"f32": np.dtype("<f4"), "c64": np.dtype("<c8")}


def _header_path(payload_path: Path) -> Path:
    return payload_path.with_name(payload_path.name + ".json")


def write_volume(
    path: str | Path,
    volume: Volume,
    dtype: str | None = None,
    extra_header: dict | None = None,
) -> Path:
    """Write payload and sidecar header; returns the payload path.

    ``dtype`` defaults to ``f32`` for real data and ``c64`` for complex.
    """
    path = Path(path)
    if dtype is None:
        dtype = "c64" if np.iscomplexobj(volume.data) else "f32"
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    if dtype == "f32" and np.iscomplexobj(volume.data):
        raise ValueError("cannot store complex data as f32")
    header = {
        "dims": list(volume.dims),
        "voxel_size_mm": list(volume.voxel_size),
        "dtype": dtype,
        "domain": volume.domain,
    }
    if extra_header:
        header.update(extra_header)
    payload = np.asarray(volume.data, dtype=_DTYPES[dtype]).tobytes(order="F")
    _header_path(path).write_text(json.dumps(header, indent=2) + "\n")
    path.write_bytes(payload)
    return path


def read_volume(path: str | Path) -> tuple[Volume, dict]:
    """Read a volume written by :func:`write_volume`; returns (volume, header)."""
    path = Path(path)
    header_path = _header_path(path)
    if not header_path.exists():
        raise FileNotFoundError(f"missing sidecar header {header_path}")
    header = json.loads(header_path.read_text())
    dims = tuple(int(n) for n in header["dims"])
    if len(dims) != 3:
        raise ValueError(f"header dims must have 3 entries, got {header['dims']}")
    dtype_name = header["dtype"]
    if dtype_name not in _DTYPES:
        raise ValueError(f"header dtype {dtype_name!r} not supported")
    dtype = _DTYPES[dtype_name]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = path.read_bytes()
    if len(payload) != expected:
        raise ValueError(
            f"payload length {len(payload)} does not match dims {dims} "
            f"({expected} bytes expected)"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    data = data.astype(np.complex128 if dtype_name == "c64" else np.float64)
    volume = Volume(data, tuple(header["voxel_size_mm"]), header.get("domain", "image"))
    return volume, header


def write_pgm_slice(
    path: str | Path,
    plane: np.ndarray,
    window: tuple[float, float],
) -> Path:
    """Write a 2-D array as a 16-bit binary PGM with linear windowing.

    Values are mapped ``[lo, hi] -> [0, 65535]`` and clamped; rows of the
    array become image rows, so width is the second axis.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D slice, got shape {plane.shape}")
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise ValueError(f"window must satisfy lo < hi, got ({lo}, {hi})")
    scaled = np.clip((plane - lo) / (hi - lo), 0.0, 1.0)
    samples = np.round(scaled * 65535.0).astype(">u2")
    height, width = plane.shape
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        fh.write(samples.tobytes(order="C"))
    return path


# NIfTI-1 header field offsets (348-byte header).
_NIFTI_HDR_SIZE = 348
_NIFTI_DATATYPES = {4: np.dtype("<i2"), 16: np.dtype("<f4")}


def read_nifti1(path: str | Path) -> Volume:
    """Read an uncompressed single-file NIfTI-1 volume (float32 or int16, 3-D).

    Applies ``scl_slope``/``scl_inter`` when the slope is nonzero. Rejects
    files whose magic is not ``n+1``.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _NIFTI_HDR_SIZE + 4:
        raise ValueError(f"file too short for a NIfTI-1 header ({len(raw)} bytes)")

    magic = raw[344:348]
    if magic[:3] != b"n+1":
        raise ValueError(f"magic field is {magic!r}, expected b'n+1\\x00' (single-file NIfTI-1)")

    endian = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != _NIFTI_HDR_SIZE:
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != _NIFTI_HDR_SIZE:
            raise ValueError("sizeof_hdr is not 348 in either byte order")
        endian = ">"

    dim = struct.unpack_from(endian + "8h", raw, 40)
    if dim[0] != 3:
        raise ValueError(f"dim[0] is {dim[0]}, only 3-D volumes are supported")
    dims = tuple(int(n) for n in dim[1:4])
    if any(n < 1 for n in dims):
        raise ValueError(f"invalid dims {dims}")

    (datatype,) = struct.unpack_from(endian + "h", raw, 70)
    if datatype not in _NIFTI_DATATYPES:
        raise ValueError(
            f"datatype code {datatype} unsupported (need 4=int16 or 16=float32)"
        )
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    voxel_size = tuple(float(v) for v in pixdim[1:4])
    (vox_offset,) = struct.unpack_from(endian + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(endian + "2f", raw, 112)

    offset = int(vox_offset)
    dtype = _NIFTI_DATATYPES[datatype].newbyteorder(endian)
    count = int(np.prod(dims))
    expected = offset + count * dtype.itemsize
    if len(raw) < expected:
        raise ValueError(f"file truncated: need {expected} bytes, have {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(dims, order="F").astype(np.float64)
    if scl_slope != 0.0:
        data = data * float(scl_slope) + float(scl_inter)
    return Volume(data, voxel_size, "image")
