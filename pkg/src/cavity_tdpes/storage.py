"""Atomic file output, CSV tables and the binary snapshot format.

Snapshot file layout (all little-endian)::

    offset  size  field
    0       8     magic b"CTDPSNP1"
    8       4     uint32 format version (1)
    12      4     uint32 n_r
    16      4     uint32 n_R
    20      4     uint32 n_q   (1 for a photon-free grid)
    24      8     float64 r_min
    32      8     float64 r_max
    40      8     float64 R_min
    48      8     float64 R_max
    56      8     float64 q_min (NaN for a photon-free grid)
    64      8     float64 q_max (NaN for a photon-free grid)
    72      8     float64 time in atomic units
    80      ...   complex128 amplitudes, C order over (r, R, q)

A JSON sidecar with the same stem holds preset, parameters and the initial
state descriptor.
"""

from __future__ import annotations

import contextlib
import csv
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .grid import Grid1D, Grid3D

MAGIC = b"CTDPSNP1"
VERSION = 1
_HEADER = struct.Struct("<8sIIII7d")


@contextlib.contextmanager
def atomic_open(path, mode: str = "w", **kw):
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, columns) -> None:
    """Write equal-length ``columns`` under ``header`` using round-trip float repr."""
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("CSV columns differ in length")
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(n):
            w.writerow([_fmt(c[i]) for c in cols])


def read_csv(path) -> dict[str, np.ndarray]:
    """Columns by header name; numeric columns become float arrays, others stay strings."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for j, h in enumerate(header):
        col = [row[j] for row in body]
        try:
            out[h] = np.array(col, dtype=float)
        except ValueError:
            out[h] = np.array(col, dtype=str)
    return out


def write_json(path, payload) -> None:
    with atomic_open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_snapshot(path, grid3: Grid3D, time: float, psi: np.ndarray, meta: dict | None = None) -> None:
    path = Path(path)
    if psi.shape != grid3.shape:
        raise ValueError(f"psi shape {psi.shape} does not match grid {grid3.shape}")
    q = grid3.q
    header = _HEADER.pack(
        MAGIC, VERSION, grid3.r.n, grid3.R.n, grid3.shape[2],
        grid3.r.min, grid3.r.max, grid3.R.min, grid3.R.max,
        q.min if q else float("nan"), q.max if q else float("nan"), float(time),
    )
    data = np.ascontiguousarray(psi, dtype="<c16")
    with atomic_open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))
    side = dict(meta or {})
    side.update({"time_au": float(time), "shape": list(grid3.shape), "axis_order": ["r", "R", "q"]})
    write_json(path.with_suffix(".json"), side)


def read_snapshot(path) -> tuple[Grid3D, float, np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    magic, version, n_r, n_R, n_q, r0, r1, R0, R1, q0, q1, t = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"{path} is not a version-{VERSION} snapshot")
    q = None if np.isnan(q0) else Grid1D(q0, q1, n_q)
    grid3 = Grid3D(Grid1D(r0, r1, n_r), Grid1D(R0, R1, n_R), q)
    if len(raw) != _HEADER.size + 16 * n_r * n_R * n_q:
        raise ValueError(f"{path} is truncated or has trailing data")
    psi = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(grid3.shape).astype(np.complex128)
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return grid3, t, psi, meta
