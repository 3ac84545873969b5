"""Binary container for ensembles and fields.

Layout: a 40-byte little-endian header ``magic(4s) version(u4) n_paths(u8)
M(u8) n(u8) seed(u8)`` followed by tagged sections. Each section is a 3-byte
tag, a padding byte, a u4 rank, ``rank`` u8 dimensions and the C-ordered f64
payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import FieldSolution, PathEnsemble, TimeGrid
from .errors import DataError

MAGIC = b"VOLX"
VERSION = 1
_HEADER = struct.Struct("<4sIQQQQ")
assert _HEADER.size == 40

FIELD_TAGS = {"U": b"U__", "V": b"V__", "dU": b"dU_", "dV": b"dV_", "Ydiag": b"YD_", "Zdiag": b"ZD_"}


def _write_section(fh, tag: bytes, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(tag + b"\0")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def _read_sections(buf: bytes, offset: int) -> dict:
    out = {}
    while offset < len(buf):
        tag = buf[offset:offset + 3]
        (rank,) = struct.unpack_from("<I", buf, offset + 4)
        shape = struct.unpack_from(f"<{rank}Q", buf, offset + 8)
        offset += 8 + 8 * rank
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(shape)
        out[tag] = data.astype(float)
        offset += 8 * count
    return out


def _read_header(buf: bytes):
    if len(buf) < _HEADER.size:
        raise DataError("file too short for container header")
    magic, version, n_paths, M, n, seed = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"unsupported container version {version}")
    return n_paths, M, n, seed


def dump_ensemble(ens: PathEnsemble, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ens.n_paths, ens.grid.steps, ens.n, ens.seed))
        fh.write(struct.pack("<d", ens.grid.horizon))
        fh.write(np.ascontiguousarray(ens.states, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ens.increments, dtype="<f8").tobytes())


def load_ensemble(path) -> PathEnsemble:
    buf = Path(path).read_bytes()
    n_paths, M, n, seed = _read_header(buf)
    (T,) = struct.unpack_from("<d", buf, _HEADER.size)
    off = _HEADER.size + 8
    ns = n_paths * (M + 1) * n
    states = np.frombuffer(buf, "<f8", ns, off).reshape(n_paths, M + 1, n)
    inc = np.frombuffer(buf, "<f8", n_paths * M * n, off + 8 * ns).reshape(n_paths, M, n)
    return PathEnsemble(TimeGrid(T, M), n_paths, states.astype(float), inc.astype(float), seed)


def dump_field(field: FieldSolution, path, seed: int = 0) -> None:
    n_paths = field.Ydiag.shape[1]
    n = field.V.shape[3]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n_paths, field.tgrid.steps, n, seed))
        for name, tag in FIELD_TAGS.items():
            arr = getattr(field, name)
            if arr is not None:
                _write_section(fh, tag, arr)


def load_field_arrays(path) -> dict:
    """Return the header values and the tagged arrays keyed by field name."""
    buf = Path(path).read_bytes()
    n_paths, M, n, seed = _read_header(buf)
    raw = _read_sections(buf, _HEADER.size)
    names = {tag: name for name, tag in FIELD_TAGS.items()}
    out = {names[t]: a for t, a in raw.items() if t in names}
    out["header"] = {"n_paths": n_paths, "M": M, "n": n, "seed": seed}
    return out
