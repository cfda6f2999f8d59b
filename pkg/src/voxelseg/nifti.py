"""Native NIfTI-1 single-file (.nii) reader and writer.

Only the subset the pipeline needs: 3D volumes, datatypes uint8/int16/
float32/float64, sform affines, uncompressed single-file layout. Both byte
orders parse; the writer always emits little-endian with deterministic
bytes so outputs are golden-file testable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    NonFiniteHeaderField,
    UnsupportedDatatype,
    ValueOutOfRange,
)
from .orientation import orientation_of
from .volume import Volume

HEADER_SIZE = 348
SINGLE_FILE_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# field name, offset in bytes, base dtype, element count
_HEADER_FIELDS = [
    ("sizeof_hdr", 0, "i4", 1),
    ("dim", 40, "i2", 8),
    ("datatype", 70, "i2", 1),
    ("bitpix", 72, "i2", 1),
    ("pixdim", 76, "f4", 8),
    ("vox_offset", 108, "f4", 1),
    ("scl_slope", 112, "f4", 1),
    ("scl_inter", 116, "f4", 1),
    ("qform_code", 252, "i2", 1),
    ("sform_code", 254, "i2", 1),
    ("srow_x", 280, "f4", 4),
    ("srow_y", 296, "f4", 4),
    ("srow_z", 312, "f4", 4),
    ("magic", 344, "S4", 1),
]

DTYPE_CODES = {2: np.uint8, 4: np.int16, 16: np.float32, 64: np.float64}
DTYPE_NAMES = {2: "uint8", 4: "int16", 16: "float32", 64: "float64"}
_INT_RANGES = {2: (0, 255), 4: (-32768, 32767)}


@dataclass
class NiftiHeader:
    """The header fields this toolkit reads, after byte-order resolution."""

    sizeof_hdr: int
    dim: tuple[int, ...]
    datatype_code: int
    pixdim: tuple[float, ...]
    vox_offset: float
    scl_slope: float
    scl_inter: float
    sform_code: int
    srow_x: tuple[float, float, float, float]
    srow_y: tuple[float, float, float, float]
    srow_z: tuple[float, float, float, float]
    magic: bytes

    @property
    def spatial_extents(self) -> tuple[int, int, int]:
        return (int(self.dim[1]), int(self.dim[2]), int(self.dim[3]))

    @property
    def datatype_name(self) -> str:
        return DTYPE_NAMES[self.datatype_code]


def _unpack_fields(raw: bytes, byteorder: str) -> dict:
    out = {}
    for name, offset, base, count in _HEADER_FIELDS:
        dt = np.dtype(base if base.startswith("S") else byteorder + base)
        vals = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
        if base.startswith("S"):
            out[name] = vals[0]
        elif count == 1:
            out[name] = vals[0].item()
        else:
            out[name] = tuple(v.item() for v in vals)
    return out


def read_header(data: bytes) -> NiftiHeader:
    """Parse and validate the 348-byte header; accepts either byte order."""
    if len(data) < HEADER_SIZE:
        raise BadMagic(f"file too short for a NIfTI-1 header ({len(data)} bytes)")
    raw = data[:HEADER_SIZE]
    fields = None
    for byteorder in ("<", ">"):
        candidate = _unpack_fields(raw, byteorder)
        if candidate["sizeof_hdr"] == HEADER_SIZE:
            fields = candidate
            break
    if fields is None:
        raise BadMagic("sizeof_hdr is not 348 in either byte order; not a NIfTI-1 file")

    magic = bytes(fields["magic"])
    # numpy strips trailing NULs from S4 fields
    if magic == MAGIC_PAIR[:3]:
        raise BadMagic("two-file 'ni1' NIfTI pairs are not supported, expected 'n+1'")
    if magic != MAGIC_SINGLE[:3]:
        raise BadMagic(f"bad magic {magic!r}, expected 'n+1'")

    for name in ("pixdim", "srow_x", "srow_y", "srow_z"):
        if not all(np.isfinite(fields[name])):
            raise NonFiniteHeaderField(f"header field {name} contains non-finite values")
    for name in ("vox_offset", "scl_slope", "scl_inter"):
        if not np.isfinite(fields[name]):
            raise NonFiniteHeaderField(f"header field {name} is non-finite")

    if fields["datatype"] not in DTYPE_CODES:
        raise UnsupportedDatatype(
            f"datatype code {fields['datatype']} not in supported set {sorted(DTYPE_CODES)}"
        )

    dim = fields["dim"]
    rank_ok = dim[0] == 3 or (dim[0] == 4 and dim[4] == 1)
    if not rank_ok:
        raise DimensionMismatch(f"need a 3D volume, got dim={dim}")
    if any(d < 1 for d in dim[1:4]):
        raise DimensionMismatch(f"non-positive spatial extent in dim={dim[1:4]}")

    return NiftiHeader(
        sizeof_hdr=fields["sizeof_hdr"],
        dim=dim,
        datatype_code=fields["datatype"],
        pixdim=fields["pixdim"],
        vox_offset=fields["vox_offset"],
        scl_slope=fields["scl_slope"],
        scl_inter=fields["scl_inter"],
        sform_code=fields["sform_code"],
        srow_x=fields["srow_x"],
        srow_y=fields["srow_y"],
        srow_z=fields["srow_z"],
        magic=magic,
    )


def _resolve_byteorder(data: bytes) -> str:
    le = np.frombuffer(data, dtype="<i4", count=1)[0]
    return "<" if le == HEADER_SIZE else ">"


def read_nifti(data: bytes) -> Volume:
    """Decode a complete .nii byte sequence into a Volume.

    Voxel values pass through v * scl_slope + scl_inter when scl_slope is
    nonzero (slope 0 means "no scaling" by NIfTI convention). The affine
    comes from the srow rows when sform_code > 0; otherwise a diagonal
    spacing affine is substituted and flagged on the Volume.
    """
    header = read_header(data)
    byteorder = _resolve_byteorder(data)

    extents = header.spatial_extents
    n_vox = int(np.prod(extents))
    dtype = np.dtype(DTYPE_CODES[header.datatype_code]).newbyteorder(byteorder)

    offset = header.vox_offset
    if offset != int(offset) or offset < SINGLE_FILE_OFFSET:
        raise DimensionMismatch(f"vox_offset {offset} invalid for single-file NIfTI (needs integer >= 352)")
    offset = int(offset)
    expected = n_vox * dtype.itemsize
    actual = len(data) - offset
    if actual != expected:
        raise DimensionMismatch(
            f"data region holds {actual} bytes but dim {extents} x {dtype.itemsize} B needs {expected}"
        )

    flat = np.frombuffer(data, dtype=dtype, count=n_vox, offset=offset)
    # NIfTI stores x fastest; keep data indexed [x, y, z]
    values = flat.reshape(extents, order="F").astype(np.float64)
    if header.scl_slope != 0.0:
        values = values * header.scl_slope + header.scl_inter

    fallback = header.sform_code <= 0
    affine = np.eye(4, dtype=np.float64)
    if fallback:
        affine[0, 0], affine[1, 1], affine[2, 2] = header.pixdim[1:4]
    else:
        affine[0, :] = header.srow_x
        affine[1, :] = header.srow_y
        affine[2, :] = header.srow_z

    return Volume(values, affine, orientation_of(affine), fallback_affine=fallback)


def _encode_voxels(v: Volume, datatype_code: int) -> np.ndarray:
    target = DTYPE_CODES[datatype_code]
    data = v.data
    if datatype_code in _INT_RANGES:
        lo, hi = _INT_RANGES[datatype_code]
        if np.any(data != np.trunc(data)):
            raise ValueOutOfRange(f"non-integral voxel values cannot be stored as {DTYPE_NAMES[datatype_code]}")
        if np.any(data < lo) or np.any(data > hi):
            raise ValueOutOfRange(
                f"voxel values outside [{lo}, {hi}] cannot be stored as {DTYPE_NAMES[datatype_code]}"
            )
    return data.astype(target)


def write_nifti(v: Volume, datatype_code: int = 16) -> bytes:
    """Encode a Volume as little-endian single-file NIfTI-1 bytes.

    Always writes sform_code=1 with the affine in the srow rows, slope 1,
    intercept 0, and data at offset 352. Unused header bytes are zero, so
    identical volumes serialize to identical bytes.
    """
    if datatype_code not in DTYPE_CODES:
        raise UnsupportedDatatype(f"datatype code {datatype_code} not in supported set {sorted(DTYPE_CODES)}")
    voxels = _encode_voxels(v, datatype_code)
    itemsize = voxels.dtype.itemsize

    header = bytearray(SINGLE_FILE_OFFSET)  # includes the 4 padding bytes at 348

    def put(offset, dtype, values):
        arr = np.asarray(values, dtype=dtype)
        header[offset:offset + arr.nbytes] = arr.tobytes()

    put(0, "<i4", HEADER_SIZE)
    put(40, "<i2", [3, *v.extents, 1, 1, 1, 1])
    put(70, "<i2", datatype_code)
    put(72, "<i2", itemsize * 8)
    put(76, "<f4", [1.0, *v.spacing, 0.0, 0.0, 0.0, 0.0])
    put(108, "<f4", float(SINGLE_FILE_OFFSET))
    put(112, "<f4", 1.0)  # scl_slope
    put(116, "<f4", 0.0)  # scl_inter
    put(252, "<i2", 0)  # qform_code
    put(254, "<i2", 1)  # sform_code
    put(280, "<f4", v.affine[0])
    put(296, "<f4", v.affine[1])
    put(312, "<f4", v.affine[2])
    header[344:348] = MAGIC_SINGLE

    body = voxels.astype(voxels.dtype.newbyteorder("<")).tobytes(order="F")
    return bytes(header) + body
