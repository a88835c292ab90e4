"""NIfTI-1 single-file (.nii / .nii.gz) reader and writer.

Only the subset needed here: 3D/4D scalar payloads, datatypes u8/i16/i32/f32/f64,
sform preferred over qform. The float64 affine is additionally stored in a
comment extension so that save/load round trips are bit-exact; the float32
``srow`` fields stay authoritative for other readers.
"""
import gzip
import io
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, RangeError, UnsupportedDtype
from .core import LabelMap, MultiChannelVolume, Volume, spacing_of

HEADER_SIZE = 348
DATA_OFFSET = 352

DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
DTYPE_CODES = {v: k for k, v in DTYPES.items()}
DTYPE_ALIASES = {
    "u8": np.uint8, "uint8": np.uint8,
    "i16": np.int16, "int16": np.int16,
    "i32": np.int32, "int32": np.int32,
    "f32": np.float32, "float32": np.float32,
    "f64": np.float64, "float64": np.float64,
}

_EXT_CODE_COMMENT = 6
_EXT_TAG = b"hypseg:affine64:"


def _resolve_dtype(dtype):
    if isinstance(dtype, str):
        if dtype.lower() not in DTYPE_ALIASES:
            raise UnsupportedDtype(f"unsupported dtype {dtype!r}")
        return np.dtype(DTYPE_ALIASES[dtype.lower()])
    dt = np.dtype(dtype).newbyteorder("=")
    if dt not in DTYPE_CODES:
        raise UnsupportedDtype(f"unsupported dtype {dt}")
    return dt


def sidecar_path(path):
    """``foo.nii.gz`` -> ``foo.labels.json``."""
    p = Path(path)
    name = p.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return p.with_name(name + ".labels.json")


# ---------------------------------------------------------------- quaternions

def _quat_to_affine(b, c, d, qfac, pixdim, offset):
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 1e-7 else 0.0
    if a == 0.0:
        # renormalize (b, c, d) as the NIfTI reference code does
        n = np.sqrt(b * b + c * c + d * d)
        b, c, d = b / n, c / n, d / n
    R = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])
    zooms = np.array(pixdim, dtype=np.float64)
    zooms[zooms <= 0] = 1.0
    zooms[2] *= qfac
    out = np.eye(4)
    out[:3, :3] = R * zooms
    out[:3, 3] = offset
    return out


def _affine_to_quat(affine):
    M = np.asarray(affine, dtype=np.float64)[:3, :3]
    zooms = np.sqrt((M ** 2).sum(axis=0))
    R = M / zooms
    qfac = 1.0
    if np.linalg.det(R) < 0:
        R[:, 2] *= -1
        qfac = -1.0
    # nearest proper rotation
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        a, b = 0.25 * s, (R[2, 1] - R[1, 2]) / s
        c, d = (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        a, b = (R[2, 1] - R[1, 2]) / s, 0.25 * s
        c, d = (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        a, b = (R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s
        c, d = 0.25 * s, (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        a, b = (R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s
        c, d = (R[1, 2] + R[2, 1]) / s, 0.25 * s
    if a < 0:
        b, c, d = -b, -c, -d
    return (b, c, d), qfac, zooms


# ---------------------------------------------------------------------- read

def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_header(raw):
    if len(raw) < HEADER_SIZE:
        raise FormatError("file shorter than a NIfTI-1 header")
    if raw[344:348] != b"n+1\x00":
        raise FormatError(f"bad magic {raw[344:348]!r}; expected single-file NIfTI-1 'n+1'")
    for endian in "<>":
        if struct.unpack(endian + "i", raw[0:4])[0] == HEADER_SIZE:
            break
    else:
        raise FormatError("sizeof_hdr is not 348")

    def unpack(fmt, off):
        return struct.unpack_from(endian + fmt, raw, off)

    hdr = {
        "endian": endian,
        "dim": unpack("8h", 40),
        "datatype": unpack("h", 70)[0],
        "bitpix": unpack("h", 72)[0],
        "pixdim": unpack("8f", 76),
        "vox_offset": unpack("f", 108)[0],
        "scl_slope": unpack("f", 112)[0],
        "scl_inter": unpack("f", 116)[0],
        "qform_code": unpack("h", 252)[0],
        "sform_code": unpack("h", 254)[0],
        "quatern": unpack("3f", 256),
        "qoffset": unpack("3f", 268),
        "srow": np.array(unpack("12f", 280), dtype=np.float64).reshape(3, 4),
    }
    return hdr


def _parse_extensions(raw, hdr):
    exts = []
    off = HEADER_SIZE
    end = int(hdr["vox_offset"])
    if len(raw) < off + 4 or raw[off] == 0:
        return exts
    off += 4
    e = hdr["endian"]
    while off + 8 <= end:
        esize, ecode = struct.unpack_from(e + "ii", raw, off)
        if esize < 8 or off + esize > end:
            break
        exts.append((ecode, raw[off + 8: off + esize]))
        off += esize
    return exts


def _header_affine(hdr, exts):
    if hdr["sform_code"] > 0:
        affine = np.eye(4)
        affine[:3] = hdr["srow"]
        for code, payload in exts:
            if code == _EXT_CODE_COMMENT and payload.startswith(_EXT_TAG):
                body = payload[len(_EXT_TAG): len(_EXT_TAG) + 128]
                if len(body) == 128:
                    exact = np.frombuffer(body, dtype="<f8").reshape(4, 4).copy()
                    # trust the f64 copy only if srow still agrees with it
                    if np.array_equal(exact[:3].astype(np.float32).astype(np.float64), hdr["srow"]):
                        return exact
        return affine
    pixdim = hdr["pixdim"]
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    if hdr["qform_code"] > 0:
        b, c, d = (float(x) for x in hdr["quatern"])
        return _quat_to_affine(b, c, d, qfac, pixdim[1:4], hdr["qoffset"])
    # method 1 of the NIfTI standard: scaling only
    zooms = np.array([p if p > 0 else 1.0 for p in pixdim[1:4]])
    return np.diag(np.r_[zooms, 1.0])


def read_nifti(path):
    """Return (array, affine, header-dict). Arrays are float64."""
    path = Path(path)
    raw = _read_bytes(path)
    hdr = _parse_header(raw)
    code = hdr["datatype"]
    if code not in DTYPES:
        raise UnsupportedDtype(f"datatype code {code} not supported")
    ndim = hdr["dim"][0]
    if not 1 <= ndim <= 4:
        raise FormatError(f"dim[0]={ndim} not supported")
    shape = tuple(int(n) for n in hdr["dim"][1: ndim + 1])
    shape = shape + (1,) * (3 - len(shape)) if len(shape) < 3 else shape
    dtype = DTYPES[code].newbyteorder(hdr["endian"])
    offset = int(hdr["vox_offset"])
    count = int(np.prod(shape))
    if len(raw) < offset + count * dtype.itemsize:
        raise FormatError("truncated data block")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    arr = arr.reshape(shape, order="F").astype(np.float64)
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope != 0 and not (slope == 1 and inter == 0) and np.isfinite(slope):
        arr = arr * slope + inter
    affine = _header_affine(hdr, _parse_extensions(raw, hdr))
    hdr["stored_dtype"] = DTYPES[code]
    return arr, affine, hdr


def load_volume(path):
    """Load a NIfTI file as Volume, LabelMap (when a label sidecar exists) or
    MultiChannelVolume (4D payloads, channels last on disk)."""
    arr, affine, _ = read_nifti(path)
    if arr.ndim == 4:
        return MultiChannelVolume(np.moveaxis(arr, 3, 0), affine)
    vol = Volume(arr, affine)
    side = sidecar_path(path)
    if side.exists():
        names = {int(k): v for k, v in json.loads(side.read_text()).items()}
        return LabelMap(vol, names)
    return vol


def load_labelmap(path):
    """Like ``load_volume`` but always returns a LabelMap."""
    obj = load_volume(path)
    if isinstance(obj, LabelMap):
        return obj
    return LabelMap.from_array(obj.data, obj.affine)


# --------------------------------------------------------------------- write

def _quantize(data, dtype):
    if dtype.kind == "f":
        finite = data[np.isfinite(data)]
        if finite.size and np.abs(finite).max() > np.finfo(dtype).max:
            raise RangeError(f"values exceed the {dtype} range")
        return data.astype(dtype)
    if not np.all(np.isfinite(data)):
        raise RangeError("non-finite values cannot be stored as integers")
    q = np.rint(data)
    info = np.iinfo(dtype)
    if q.size and (q.min() < info.min or q.max() > info.max):
        raise RangeError(f"values outside [{info.min}, {info.max}] for {dtype}")
    return q.astype(dtype)


def _build_header(shape, dtype, affine, spacing):
    buf = bytearray(DATA_OFFSET)
    struct.pack_into("<i", buf, 0, HEADER_SIZE)
    buf[38] = ord("r")
    dim = [len(shape)] + list(shape) + [1] * (7 - len(shape))
    struct.pack_into("<8h", buf, 40, *dim)
    code = DTYPE_CODES[dtype.newbyteorder("=")]
    struct.pack_into("<hh", buf, 70, code, dtype.itemsize * 8)
    (b, c, d), qfac, _ = _affine_to_quat(affine)
    pixdim = [qfac] + [float(s) for s in spacing] + [1.0] * 4
    struct.pack_into("<8f", buf, 76, *pixdim)
    struct.pack_into("<f", buf, 108, float(DATA_OFFSET))
    struct.pack_into("<ff", buf, 112, 1.0, 0.0)
    buf[123] = 2  # mm
    struct.pack_into("<hh", buf, 252, 2, 2)
    struct.pack_into("<3f", buf, 256, b, c, d)
    struct.pack_into("<3f", buf, 268, *affine[:3, 3])
    struct.pack_into("<12f", buf, 280, *affine[:3].ravel())
    buf[344:348] = b"n+1\x00"
    return buf


def _extension_block(affine):
    payload = _EXT_TAG + np.asarray(affine, dtype="<f8").tobytes()
    esize = 8 + len(payload)
    esize += (-esize) % 16
    out = struct.pack("<ii", esize, _EXT_CODE_COMMENT) + payload
    return out + b"\x00" * (esize - len(out))


def write_nifti(path, array, affine, dtype):
    path = Path(path)
    dtype = _resolve_dtype(dtype)
    q = _quantize(np.asarray(array, dtype=np.float64), dtype)
    affine = np.asarray(affine, dtype=np.float64)
    ext = _extension_block(affine)
    hdr = _build_header(q.shape, dtype, affine, spacing_of(affine))
    hdr[348] = 1  # extension flag
    offset = DATA_OFFSET + len(ext)
    struct.pack_into("<f", hdr, 108, float(offset))
    body = bytes(hdr) + ext + q.astype(dtype.newbyteorder("<")).tobytes(order="F")
    if path.name.endswith(".gz"):
        out = io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=out, mtime=0) as gz:
            gz.write(body)
        body = out.getvalue()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body)


def save_volume(vol, path, dtype="f64"):
    """Write a Volume, LabelMap (+ JSON sidecar) or MultiChannelVolume."""
    if isinstance(vol, LabelMap):
        write_nifti(path, vol.data, vol.affine, dtype)
        side = sidecar_path(path)
        side.write_text(json.dumps({str(k): v for k, v in vol.labels.items()}, indent=1, sort_keys=False))
    elif isinstance(vol, MultiChannelVolume):
        write_nifti(path, np.moveaxis(vol.data, 0, 3), vol.affine, dtype)
    else:
        write_nifti(path, vol.data, vol.affine, dtype)
