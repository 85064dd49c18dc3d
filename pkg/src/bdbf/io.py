"""File formats: binary basis maps, text sparse depths, JSON priors and reports, CSV curves.

Basis file (version 1, little-endian)::

    offset  size  field
    0       4     magic b"BDBF"
    4       4     u32 format version (1)
    8       4     u32 height H
    12      4     u32 width W
    16      4     u32 channels M
    20      1     u8  bias flag
    21      1     u8  dtype tag (0 = f32, 1 = f64)
    22      4     u32 CRC32 of bytes 0..21
    26      ...   payload, value(u, v, c) at element ((u*W) + v)*M + c

Dense prediction maps reuse the container with M = 2 (latent mean,
latent variance) and ground truth with M = 1 (metric depth).
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .basis import DEPTH_FLOOR, BasisMap, SparseDepthSet
from .calibration import CalibrationState
from .errors import (
    BadMagicError,
    BdbfError,
    ChecksumError,
    FormatError,
    MeasurementError,
    ParseError,
    PriorInvalidError,
    TruncatedFileError,
    UnknownVersionError,
)
from .fitting import GaussianPrior, PredictiveField
from .metrics import CurveData

MAGIC = b"BDBF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIBB")
_CRC = struct.Struct("<I")
HEADER_SIZE = _HEADER.size + _CRC.size
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_TAGS = {"f32": 0, "f64": 1}


# -- atomic writes ----------------------------------------------------------


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write via a temp file in the target directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


# -- basis maps -------------------------------------------------------------


def encode_basis(basis: BasisMap, dtype: str = "f64") -> bytes:
    tag = DTYPE_TAGS[dtype]
    h, w, m = basis.shape
    header = _HEADER.pack(MAGIC, VERSION, h, w, m, int(basis.has_bias), tag)
    crc = _CRC.pack(zlib.crc32(header) & 0xFFFFFFFF)
    payload = np.ascontiguousarray(basis.values, dtype=DTYPES[tag]).tobytes()
    return header + crc + payload


def decode_basis(data: bytes) -> BasisMap:
    if len(data) < len(MAGIC):
        if MAGIC.startswith(data):
            raise TruncatedFileError("file shorter than the magic number")
        raise BadMagicError("not a basis file (bad magic)")
    if data[:4] != MAGIC:
        raise BadMagicError(f"not a basis file (magic {data[:4]!r})")
    if len(data) < HEADER_SIZE:
        raise TruncatedFileError(f"header truncated ({len(data)} of {HEADER_SIZE} bytes)")
    header = data[: _HEADER.size]
    (stored,) = _CRC.unpack_from(data, _HEADER.size)
    if zlib.crc32(header) & 0xFFFFFFFF != stored:
        raise ChecksumError("header checksum mismatch")
    _, version, h, w, m, bias, tag = _HEADER.unpack(header)
    if version != VERSION:
        raise UnknownVersionError(f"unsupported basis format version {version}")
    if tag not in DTYPES:
        raise FormatError(f"unknown dtype tag {tag}")
    if bias not in (0, 1):
        raise FormatError(f"bias flag must be 0 or 1, got {bias}")
    dt = DTYPES[tag]
    expected = h * w * m * dt.itemsize
    payload = data[HEADER_SIZE:]
    if len(payload) < expected:
        raise TruncatedFileError(f"payload truncated ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise FormatError(f"{len(payload) - expected} trailing bytes after payload")
    values = np.frombuffer(payload, dtype=dt).astype(np.float64).reshape(h, w, m)
    try:
        return BasisMap(values, has_bias=bool(bias))
    except BdbfError as exc:
        raise FormatError(f"invalid basis content: {exc}") from None


def write_basis(basis: BasisMap, path, dtype: str = "f64") -> Path:
    return atomic_write_bytes(path, encode_basis(basis, dtype))


def read_basis(path) -> BasisMap:
    return decode_basis(Path(path).read_bytes())


def write_prediction(pred: PredictiveField, path, dtype: str = "f64") -> Path:
    values = np.stack([pred.mean, pred.var], axis=-1)
    return write_basis(BasisMap(values), path, dtype)


def read_prediction(path) -> PredictiveField:
    b = read_basis(path)
    if b.num_bases != 2:
        raise FormatError(f"prediction file must have 2 channels (mean, variance), found {b.num_bases}")
    return PredictiveField(b.values[:, :, 0].copy(), b.values[:, :, 1].copy())


def write_depth_map(depth: np.ndarray, path, dtype: str = "f64") -> Path:
    return write_basis(BasisMap(np.asarray(depth, dtype=np.float64)[:, :, None]), path, dtype)


def read_depth_map(path) -> np.ndarray:
    b = read_basis(path)
    if b.num_bases != 1:
        raise FormatError(f"depth map must have 1 channel, found {b.num_bases}")
    return b.values[:, :, 0].copy()


# -- sparse depth -----------------------------------------------------------


def format_sparse(sparse: SparseDepthSet) -> str:
    lines = ["# row,col,depth"]
    lines += [f"{r},{c},{d!r}" for r, c, d in sparse.entries()]
    return "\n".join(lines) + "\n"


def parse_sparse(text: str) -> SparseDepthSet:
    rows, cols, depths = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ParseError(f"expected 'row,col,depth', got {raw!r}", lineno)
        try:
            r, c = int(parts[0]), int(parts[1])
            d = float(parts[2])
        except ValueError:
            raise ParseError(f"cannot parse {raw!r}", lineno) from None
        if not (math.isfinite(d) and d >= DEPTH_FLOOR):
            raise MeasurementError(f"line {lineno}: depth {d!r} must be finite and >= {DEPTH_FLOOR:g} m")
        rows.append(r)
        cols.append(c)
        depths.append(d)
    if not rows:
        return SparseDepthSet.empty()
    return SparseDepthSet(np.array(rows, np.int64), np.array(cols, np.int64), np.array(depths))


def write_sparse(sparse: SparseDepthSet, path) -> Path:
    return atomic_write_text(path, format_sparse(sparse))


def read_sparse(path) -> SparseDepthSet:
    return parse_sparse(Path(path).read_text(encoding="utf-8"))


# -- JSON documents ---------------------------------------------------------


def _json_clean(obj):
    """Replace non-finite floats by None and numpy scalars/arrays by Python values."""
    if isinstance(obj, dict):
        return {str(k): _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps_json(obj) -> str:
    # json emits repr() floats: 17 significant digits, exact round trip
    return json.dumps(_json_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(obj, path) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None


def prior_to_dict(prior: GaussianPrior) -> dict:
    return {
        "format": "bdbf-prior",
        "version": VERSION,
        "M": prior.n_bases,
        "m0": prior.mean.tolist(),
        "Sigma0": prior.cov.reshape(-1).tolist(),
    }


def prior_from_dict(d: dict) -> GaussianPrior:
    try:
        m = int(d["M"])
        mean = np.asarray(d["m0"], dtype=np.float64)
        cov = np.asarray(d["Sigma0"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise PriorInvalidError(f"malformed prior document: {exc}") from None
    if d.get("version", VERSION) != VERSION:
        raise UnknownVersionError(f"unsupported prior version {d.get('version')}")
    if mean.shape != (m,) or cov.size != m * m:
        raise PriorInvalidError(f"prior arrays do not match M={m}")
    return GaussianPrior(mean, cov.reshape(m, m))


def write_prior(prior: GaussianPrior, path) -> Path:
    return write_json(prior_to_dict(prior), path)


def read_prior(path) -> GaussianPrior:
    return prior_from_dict(read_json(path))


def write_calibration(state: CalibrationState, path) -> Path:
    doc = {"format": "bdbf-calibration", "version": VERSION, **state.to_dict()}
    return write_json(doc, path)


def read_calibration(path) -> CalibrationState:
    d = read_json(path)
    if "calibration" in d and isinstance(d["calibration"], dict):
        d = d["calibration"]
    try:
        return CalibrationState.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed calibration document: {exc}") from None


def write_report(report: dict, path) -> Path:
    return write_json(report, path)


def read_report(path) -> dict:
    return read_json(path)


# -- curves -----------------------------------------------------------------


def format_curve(curve: CurveData) -> str:
    lines = [",".join(curve.columns)]
    lines += [f"{x!r},{y!r}" for x, y in zip(curve.abscissa.tolist(), curve.ordinate.tolist())]
    return "\n".join(lines) + "\n"


def write_curve(curve: CurveData, path) -> Path:
    return atomic_write_text(path, format_curve(curve))


def read_curve(path) -> CurveData:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError("empty curve file", 1)
    columns = tuple(lines[0].split(","))
    xs, ys = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            x, y = line.split(",")
            xs.append(float(x))
            ys.append(float(y))
        except ValueError:
            raise ParseError(f"cannot parse {line!r}", lineno) from None
    return CurveData(np.array(xs), np.array(ys), columns)


# -- scenes -----------------------------------------------------------------


def write_scene(scene, directory, prefix: str = "") -> dict[str, Path]:
    """Export a synthetic scene as basis, sparse and ground-truth depth files."""
    directory = Path(directory)
    return {
        "basis": write_basis(scene.basis, directory / f"{prefix}basis.bdbf"),
        "sparse": write_sparse(scene.sparse, directory / f"{prefix}sparse.csv"),
        "truth": write_depth_map(scene.depth_true, directory / f"{prefix}truth.bdbf"),
    }
