"""Minimal NIfTI-1 reader/writer for BraTS-layout volumes.

Supports exactly what the pipeline needs: single-file ``.nii`` / ``.nii.gz``,
little-endian, 3-D volumes with datatype int16 (code 4) or float32 (code 16).
Orientation fields (qform/sform) are ignored; ``pixdim`` is kept only for
provenance. Voxels are returned as a C-contiguous float32 grid indexed
``[x, y, z]`` (the on-disk layout is x-fastest, i.e. Fortran order).

Intensity scaling headers are honoured only in their trivial form: a file
with ``scl_slope`` outside {0, 1} or nonzero ``scl_inter`` is rejected
rather than silently rescaled.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import DataError

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

DTYPE_INT16 = 4
DTYPE_FLOAT32 = 16
_DTYPES = {DTYPE_INT16: np.dtype("<i2"), DTYPE_FLOAT32: np.dtype("<f4")}


class BadMagic(DataError):
    """The stream is not a single-file NIfTI-1 image."""


class UnsupportedDatatype(DataError):
    """Datatype code outside the supported {int16, float32} set."""


class UnsupportedRank(DataError):
    """dim[0] != 3; only plain 3-D volumes are accepted."""


class UnsupportedScaling(DataError):
    """Nontrivial scl_slope/scl_inter would distort intensities."""


class Truncated(DataError):
    """Fewer bytes than the header promises."""


class BadHeader(DataError):
    """Header field violates a NIfTI-1 invariant (e.g. vox_offset < 352)."""


class NonFiniteVoxels(DataError):
    """Voxel payload contains NaN or infinity."""


@dataclass
class NiftiHeader:
    """Decoded subset of the 348-byte NIfTI-1 header."""

    dim: tuple[int, ...]  # 8 entries; dim[0] = rank, dim[1..3] = extents
    datatype_code: int
    pixdim: tuple[float, ...]  # 8 entries, per-axis spacing (mm)
    vox_offset: int = VOX_OFFSET
    magic: bytes = MAGIC

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.dim[1], self.dim[2], self.dim[3])

    @property
    def voxel_count(self) -> int:
        return self.dim[1] * self.dim[2] * self.dim[3]


@dataclass
class Volume:
    """A 3-D scalar grid plus its decoded header.

    ``voxels`` is float32, C-contiguous, indexed ``[x, y, z]``.
    """

    header: NiftiHeader
    voxels: np.ndarray = field(repr=False)

    def validate(self) -> None:
        if self.voxels.shape != self.header.shape:
            raise BadHeader(
                f"voxel grid {self.voxels.shape} does not match header dims "
                f"{self.header.shape}"
            )
        if not np.isfinite(self.voxels).all():
            raise NonFiniteVoxels("volume contains non-finite voxels")

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.header.pixdim[1], self.header.pixdim[2], self.header.pixdim[3])


def volume_from_array(
    voxels: np.ndarray, spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
) -> Volume:
    """Wrap a 3-D array as a Volume with a fresh float32 header."""
    if voxels.ndim != 3:
        raise UnsupportedRank(f"expected a 3-D array, got ndim={voxels.ndim}")
    arr = np.ascontiguousarray(voxels, dtype=np.float32)
    nx, ny, nz = arr.shape
    header = NiftiHeader(
        dim=(3, nx, ny, nz, 1, 1, 1, 1),
        datatype_code=DTYPE_FLOAT32,
        pixdim=(1.0, float(spacing[0]), float(spacing[1]), float(spacing[2]), 0.0, 0.0, 0.0, 0.0),
    )
    vol = Volume(header=header, voxels=arr)
    vol.validate()
    return vol


def read_nifti(stream: BinaryIO, gzipped: bool = False) -> Volume:
    """Decode a NIfTI-1 byte stream into a Volume.

    Raises BadMagic, UnsupportedDatatype, UnsupportedRank, UnsupportedScaling,
    Truncated or BadHeader on malformed input; each aborts the read.
    """
    raw = stream.read()
    if gzipped:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise Truncated(f"gzip container is damaged: {exc}") from exc
    if len(raw) < HEADER_SIZE:
        raise Truncated(f"only {len(raw)} bytes; a NIfTI-1 header needs {HEADER_SIZE}")

    magic = raw[344:348]
    if magic != MAGIC:
        raise BadMagic(f"magic {magic!r} is not {MAGIC!r} (single-file NIfTI-1)")

    dim = struct.unpack_from("<8h", raw, 40)
    datatype_code, _bitpix = struct.unpack_from("<2h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset_f, scl_slope, scl_inter = struct.unpack_from("<3f", raw, 108)

    if dim[0] != 3:
        raise UnsupportedRank(f"dim[0]={dim[0]}; only 3-D volumes are supported")
    if datatype_code not in _DTYPES:
        raise UnsupportedDatatype(f"datatype code {datatype_code} not in {{4, 16}}")
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        raise UnsupportedScaling(
            f"scl_slope={scl_slope}, scl_inter={scl_inter}: rescaling not supported"
        )
    vox_offset = int(vox_offset_f)
    if vox_offset < VOX_OFFSET or float(vox_offset) != vox_offset_f:
        raise BadHeader(f"vox_offset={vox_offset_f} (must be an integer >= {VOX_OFFSET})")
    if any(n <= 0 for n in dim[1:4]):
        raise BadHeader(f"non-positive spatial extent in dim={dim}")

    dtype = _DTYPES[datatype_code]
    nx, ny, nz = dim[1], dim[2], dim[3]
    nbytes = nx * ny * nz * dtype.itemsize
    payload = raw[vox_offset : vox_offset + nbytes]
    if len(payload) < nbytes:
        raise Truncated(f"voxel payload has {len(payload)} of {nbytes} promised bytes")

    # On-disk order is x-fastest; build an [x, y, z] grid and make it row-major.
    grid = np.frombuffer(payload, dtype=dtype).reshape((nx, ny, nz), order="F")
    voxels = np.ascontiguousarray(grid, dtype=np.float32)

    header = NiftiHeader(
        dim=tuple(int(d) for d in dim),
        datatype_code=int(datatype_code),
        pixdim=tuple(float(p) for p in pixdim),
        vox_offset=vox_offset,
        magic=magic,
    )
    vol = Volume(header=header, voxels=voxels)
    vol.validate()
    return vol


def write_nifti(volume: Volume, gzipped: bool = False) -> bytes:
    """Encode a Volume as single-file NIfTI-1 bytes (always float32 payload).

    Layout: 348-byte header, 4 padding bytes up to vox_offset=352, then the
    little-endian float32 voxels in x-fastest order. With ``gzipped`` the
    result is wrapped in a deterministic gzip container (mtime=0), so equal
    volumes always produce identical bytes.
    """
    volume.validate()
    nx, ny, nz = volume.voxels.shape

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)  # sizeof_hdr
    struct.pack_into("<8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", header, 70, DTYPE_FLOAT32, 32)  # datatype, bitpix
    pixdim = volume.header.pixdim
    struct.pack_into("<8f", header, 76, *pixdim)
    struct.pack_into("<3f", header, 108, float(VOX_OFFSET), 1.0, 0.0)
    header[344:348] = MAGIC

    payload = np.ascontiguousarray(volume.voxels, dtype="<f4").tobytes(order="F")
    raw = bytes(header) + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + payload
    if gzipped:
        import io

        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
            gz.write(raw)
        return buf.getvalue()
    return raw


def load_volume(path: str | Path) -> Volume:
    """Read a ``.nii`` or ``.nii.gz`` file (compression picked by suffix)."""
    path = Path(path)
    with open(path, "rb") as fh:
        return read_nifti(fh, gzipped=path.name.endswith(".gz"))


def save_volume(volume: Volume, path: str | Path) -> None:
    """Write a Volume to ``.nii`` or ``.nii.gz`` (compression by suffix)."""
    path = Path(path)
    data = write_nifti(volume, gzipped=path.name.endswith(".gz"))
    path.write_bytes(data)
