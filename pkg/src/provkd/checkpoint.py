"""Versioned binary checkpoints.

Two layouts share this module:

* signal files (embedding models and node signal matrices)::

      magic "PKDSIG" | u16 version | u8 flag | u8 n_mats | u32 n_rows | u32 d
      n_rows x (u16 len, utf-8 label)
      n_mats x (n_rows x d float64, row-major, little-endian)

  ``flag`` is 0 for a trained token model (labels = vocabulary, matrices =
  input and output vectors), 1 for raw node signals, 2 for denoised node
  signals (labels = node keys) and 3 for column statistics (labels = "mean",
  "std").

* parameter files (teacher and student models)::

      magic "PKDPRM" | u16 version | u32 meta_len | meta json (utf-8)
      arrays in the order of meta["arrays"], float64 little-endian

  ``meta["arrays"]`` is a list of ``[name, shape]``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

SIGNAL_MAGIC = b"PKDSIG"
PARAM_MAGIC = b"PKDPRM"
VERSION = 1

FLAG_MODEL, FLAG_RAW, FLAG_DENOISED, FLAG_SCALER = 0, 1, 2, 3
_SIG_HEADER = struct.Struct("<6sHBBII")
_PRM_HEADER = struct.Struct("<6sHI")


class CheckpointError(DataError, ValueError):
    pass


def write_signal_file(path: str | Path, labels: list[str], mats: list[np.ndarray], flag: int) -> None:
    n = len(labels)
    d = mats[0].shape[1] if mats else 0
    with open(path, "wb") as fh:
        fh.write(_SIG_HEADER.pack(SIGNAL_MAGIC, VERSION, flag, len(mats), n, d))
        for lab in labels:
            raw = lab.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        for m in mats:
            if m.shape != (n, d):
                raise CheckpointError(f"matrix shape {m.shape} != ({n}, {d})")
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def read_signal_file(path: str | Path) -> tuple[int, list[str], list[np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _SIG_HEADER.size:
        raise CheckpointError("truncated header")
    magic, version, flag, n_mats, n, d = _SIG_HEADER.unpack_from(data, 0)
    if magic != SIGNAL_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    off = _SIG_HEADER.size
    labels = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        labels.append(data[off:off + ln].decode("utf-8"))
        off += ln
    mats = []
    for _ in range(n_mats):
        size = n * d * 8
        if off + size > len(data):
            raise CheckpointError("truncated matrix block")
        mats.append(np.frombuffer(data, dtype="<f8", count=n * d, offset=off).reshape(n, d).copy())
        off += size
    return flag, labels, mats


def write_param_file(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    meta = dict(meta)
    meta["arrays"] = [[name, list(a.shape)] for name, a in arrays.items()]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PRM_HEADER.pack(PARAM_MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_param_file(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    magic, version, meta_len = _PRM_HEADER.unpack_from(data, 0)
    if magic != PARAM_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    off = _PRM_HEADER.size
    meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    off += meta_len
    arrays = {}
    for name, shape in meta.pop("arrays"):
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += count * 8
    if off != len(data):
        raise CheckpointError("trailing bytes in parameter file")
    return meta, arrays
