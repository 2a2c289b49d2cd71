"""Point-cloud and table writers. All output is byte-reproducible."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import numpy as np

from handforge.errors import InvalidInput
from handforge.hand import FINGER_SITES, FINGERS
from handforge.opposability import THUMB_LAYER, WorkspaceGrid
from handforge.selection import CandidateRecord

CLOUD_FORMATS = ("ply", "csv")
CSV_COLUMNS = ("x_mm", "y_mm", "z_mm", "theta_z_deg", "kapandji_pass", "toi", "sigma_r_pct", "stored")


def _num(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def layer_points(grid: WorkspaceGrid, chain: str, site: str) -> np.ndarray:
    key = (chain, site)
    valid = key == THUMB_LAYER or (chain in FINGERS and site in FINGER_SITES)
    if not valid:
        raise InvalidInput(f"unknown layer {chain}/{site}")
    return grid.cell_centers(key)


def ply_bytes(points: np.ndarray) -> bytes:
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4").reshape(-1, 3))
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    )
    return header.encode("ascii") + pts.tobytes()


def read_ply(data: bytes) -> np.ndarray:
    marker = b"end_header\n"
    end = data.index(marker) + len(marker)
    n = 0
    for line in data[:end].decode("ascii").splitlines():
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
    return np.frombuffer(data[end:], dtype="<f4", count=3 * n).reshape(n, 3)


def csv_cloud_bytes(points: np.ndarray) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x", "y", "z"))
    for p in np.asarray(points, dtype=float).reshape(-1, 3):
        w.writerow(repr(float(c)) for c in p)
    return buf.getvalue().encode()


def export_cloud(grid: WorkspaceGrid, chain: str, site: str, path: str | Path, fmt: str = "ply") -> int:
    """Write the occupied cell centres of one layer; returns the point count."""
    if fmt not in CLOUD_FORMATS:
        raise InvalidInput(f"cloud format must be one of {CLOUD_FORMATS}, got {fmt!r}")
    pts = layer_points(grid, chain, site)
    data = ply_bytes(pts) if fmt == "ply" else csv_cloud_bytes(pts)
    Path(path).write_bytes(data)
    return len(pts)


def candidates_csv(records: Sequence[CandidateRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        b = r.base
        w.writerow((
            _num(b.x), _num(b.y), _num(b.z), _num(b.theta_z),
            "true" if r.kapandji_pass else "false",
            _num(r.toi), _num(r.sigma_r),
            "true" if r.stored else "false",
        ))
    return buf.getvalue()
