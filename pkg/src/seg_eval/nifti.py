"""Minimal single-file NIfTI-1 reader/writer.

Only what the evaluation pipeline needs: 3-D volumes, datatypes uint8,
int16 and float32, optional gzip container selected by a ``.gz``
suffix. The payload is stored x-fastest, which is how NIfTI defines
its on-disk order; arrays therefore round-trip through
``reshape(order="F")`` / ``tobytes(order="F")``.

Written files are deterministic: unused header fields are zeroed and
gzip members carry mtime 0, so identical volumes produce identical
bytes.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import (FormatError, InvalidLabelError, TruncatedFileError,
                     UnsupportedDataTypeError)
from .volume import BinaryMask, LabelVolume

__all__ = ["read_nifti", "write_nifti", "write_nifti_real"]

HEADER_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"

_DTYPE_BY_CODE = {2: np.uint8, 4: np.int16, 16: np.float32}
_BITPIX_BY_CODE = {2: 8, 4: 16, 16: 32}


def _read_container(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _write_container(path: Path, payload: bytes) -> None:
    if path.suffix == ".gz":
        with open(path, "wb") as fh:
            with gzip.GzipFile(filename="", mode="wb", fileobj=fh,
                               mtime=0) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)


def _round_half_away(values: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(values) + 0.5), values)


def read_nifti(path: str | Path) -> LabelVolume:
    """Read a single-file NIfTI-1 label volume.

    Big-endian headers are detected through the dim[0] range check and
    byte-swapped. Float payloads are rounded to the nearest integer,
    ties away from zero; non-finite or negative results are rejected.
    """
    path = Path(path)
    raw = _read_container(path)
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than a NIfTI-1 header")

    magic = raw[344:348]
    if magic not in (_MAGIC_SINGLE, _MAGIC_PAIR):
        raise FormatError(f"{path}: bad magic {magic!r}")

    ndim_le, = struct.unpack_from("<h", raw, 40)
    if 1 <= ndim_le <= 7:
        bo = "<"
    else:
        ndim_be, = struct.unpack_from(">h", raw, 40)
        if 1 <= ndim_be <= 7:
            bo = ">"
        else:
            raise FormatError(f"{path}: dim[0] = {ndim_le} is not in [1, 7]")

    dim = struct.unpack_from(bo + "8h", raw, 40)
    datatype, bitpix = struct.unpack_from(bo + "2h", raw, 70)
    pixdim = struct.unpack_from(bo + "8f", raw, 76)
    vox_offset, = struct.unpack_from(bo + "f", raw, 108)

    if datatype not in _DTYPE_BY_CODE:
        raise UnsupportedDataTypeError(
            f"{path}: unsupported NIfTI datatype code {datatype}")
    if bitpix != _BITPIX_BY_CODE[datatype]:
        raise FormatError(
            f"{path}: bitpix {bitpix} does not match datatype {datatype}")

    ndim = dim[0]
    if ndim < 3 or any(d > 1 for d in dim[4:4 + max(0, ndim - 3)]):
        raise FormatError(f"{path}: not a single 3-D volume, dim={dim}")
    nx, ny, nz = (int(d) for d in dim[1:4])
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{path}: non-positive spatial dims {(nx, ny, nz)}")

    spacing = tuple(abs(float(p)) for p in pixdim[1:4])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise FormatError(f"{path}: invalid voxel spacing {spacing}")

    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else 352
    dt = np.dtype(_DTYPE_BY_CODE[datatype]).newbyteorder(bo)
    nvox = nx * ny * nz
    nbytes = nvox * dt.itemsize
    if len(raw) < offset + nbytes:
        raise TruncatedFileError(
            f"{path}: payload needs {nbytes} bytes at offset {offset}, "
            f"file has {len(raw)}")

    flat = np.frombuffer(raw, dtype=dt, count=nvox, offset=offset)
    data = flat.reshape((nx, ny, nz), order="F")

    if datatype == 16:
        if not np.isfinite(data).all():
            raise InvalidLabelError(f"{path}: non-finite voxel value")
        rounded = _round_half_away(data.astype(np.float64))
        if rounded.size and rounded.min() < 0:
            raise InvalidLabelError(
                f"{path}: negative label after rounding "
                f"(min {rounded.min():g})", value=float(rounded.min()))
        data = rounded.astype(np.int32)

    return LabelVolume(np.ascontiguousarray(data), spacing)


def _pack_header(dims: tuple[int, int, int],
                 spacing: tuple[float, float, float],
                 datatype: int) -> bytes:
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")
    struct.pack_into("<8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, datatype, _BITPIX_BY_CODE[datatype])
    struct.pack_into("<8f", hdr, 76, 1.0, spacing[0], spacing[1], spacing[2],
                     0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)   # scl_slope / scl_inter
    struct.pack_into("<B", hdr, 123, 2)           # spatial units: mm
    hdr[344:348] = _MAGIC_SINGLE
    return bytes(hdr)


def _assemble(dims, spacing, datatype, payload: bytes) -> bytes:
    # four zero bytes after the header: no extensions
    return _pack_header(dims, spacing, datatype) + b"\x00" * 4 + payload


def write_nifti(volume: LabelVolume | BinaryMask, path: str | Path) -> None:
    """Write labels (or a mask as 0/1) as uint8, gzipped iff the path
    ends in .gz."""
    path = Path(path)
    data = volume.data
    if data.dtype == np.bool_:
        data = data.astype(np.uint8)
    else:
        if data.size and int(data.max()) > 255:
            raise InvalidLabelError(
                f"label {int(data.max())} does not fit the uint8 payload")
        data = data.astype(np.uint8)
    blob = _assemble(volume.dims, volume.spacing, 2, data.tobytes(order="F"))
    _write_container(path, blob)


def write_nifti_real(data: np.ndarray, spacing: tuple[float, float, float],
                     path: str | Path) -> None:
    """Write a real-valued 3-D map (rates, weights) as float32."""
    path = Path(path)
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3-D array, got shape {arr.shape}")
    spacing = tuple(float(s) for s in spacing)
    blob = _assemble(arr.shape, spacing, 16, arr.tobytes(order="F"))
    _write_container(path, blob)
