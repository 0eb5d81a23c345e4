"""Self-describing binary snapshots of the prognostic state.

Layout: one fixed-size little-endian header record followed by the payload,
``n_fields x n_lat x n_lon x K`` float64 values in C order with fields
``v_theta, v_phi, T, q``.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from moistpe.core.errors import SnapshotFormatError
from moistpe.models.fields import Grids, State
from moistpe.numerics.sphere_ops import VectorField

MAGIC = b"MOISTPE"
VERSION = 1
FIELD_ORDER = b"v_theta,v_phi,T,q"
ENCODING = b"<f8"

HEADER_DTYPE = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("L", "<u4"),
        ("n_lat", "<u4"),
        ("n_lon", "<u4"),
        ("K", "<u4"),
        ("n_fields", "<u4"),
        ("field_order", "S32"),
        ("encoding", "S8"),
        ("time", "<f8"),
    ]
)


def payload_elements(header: np.void) -> int:
    return int(header["n_fields"]) * int(header["n_lat"]) * int(header["n_lon"]) * int(header["K"])


def make_header(grids: Grids, time: float) -> np.ndarray:
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["version"] = VERSION
    header["L"] = grids.sphere.truncation_L
    header["n_lat"] = grids.sphere.n_lat
    header["n_lon"] = grids.sphere.n_lon
    header["K"] = grids.vertical.n_levels
    header["n_fields"] = 4
    header["field_order"] = FIELD_ORDER
    header["encoding"] = ENCODING
    header["time"] = time
    return header


def write_snapshot(state: State, path: str | Path, grids: Grids) -> None:
    path = Path(path)
    payload = np.stack([state.v.theta, state.v.phi, state.T, state.q]).astype("<f8", copy=False)
    if payload.shape[1:] != grids.shape:
        raise SnapshotFormatError(
            "state does not match the grid",
            state_shape=list(payload.shape[1:]),
            grid_shape=list(grids.shape),
        )
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(make_header(grids, state.time).tobytes())
            f.write(np.ascontiguousarray(payload).tobytes())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _parse_header(blob: bytes, path: Path) -> np.void:
    if len(blob) < HEADER_DTYPE.itemsize:
        raise SnapshotFormatError(
            "file shorter than the snapshot header", path=str(path), size=len(blob)
        )
    header = np.frombuffer(blob[: HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    if bytes(header["magic"]) != MAGIC:
        raise SnapshotFormatError("bad magic tag", path=str(path))
    if int(header["version"]) != VERSION:
        raise SnapshotFormatError(
            "unsupported snapshot version",
            path=str(path),
            version=int(header["version"]),
            expected=VERSION,
        )
    if bytes(header["encoding"]) != ENCODING or bytes(header["field_order"]) != FIELD_ORDER:
        raise SnapshotFormatError("unsupported field order or encoding", path=str(path))
    return header


def read_snapshot_header(path: str | Path) -> dict:
    path = Path(path)
    with open(path, "rb") as f:
        header = _parse_header(f.read(HEADER_DTYPE.itemsize), path)
    return {
        "magic": bytes(header["magic"]).decode(),
        "version": int(header["version"]),
        "L": int(header["L"]),
        "n_lat": int(header["n_lat"]),
        "n_lon": int(header["n_lon"]),
        "K": int(header["K"]),
        "n_fields": int(header["n_fields"]),
        "field_order": bytes(header["field_order"]).decode().split(","),
        "encoding": bytes(header["encoding"]).decode(),
        "time": float(header["time"]),
        "payload_elements": payload_elements(header),
    }


def read_snapshot(path: str | Path) -> State:
    """State stored at ``path``; the header alone determines the payload layout."""
    path = Path(path)
    blob = path.read_bytes()
    header = _parse_header(blob, path)
    expected = payload_elements(header) * 8
    actual = len(blob) - HEADER_DTYPE.itemsize
    if actual != expected:
        raise SnapshotFormatError(
            "payload length does not match the header",
            path=str(path),
            expected=expected,
            actual=actual,
        )
    shape = (int(header["n_fields"]), int(header["n_lat"]), int(header["n_lon"]), int(header["K"]))
    data = np.frombuffer(blob, dtype="<f8", offset=HEADER_DTYPE.itemsize)
    data = data.reshape(shape).astype(float)
    return State(VectorField(data[0], data[1]), data[2], data[3], float(header["time"]))
