"""On-disk formats: the ``ELAS1`` raster codec and the mode-basis directory.

A raster file is a one-line ASCII header ``ELAS1 <rows> <cols>\\n`` followed
by row-major little-endian float32 payload.  The same codec stores RF
frames, displacement fields, strain images, and mode/mean rasters.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .types import ModeBasis

MAGIC = "ELAS1"
MODES_MANIFEST = "modes.json"


class RasterError(ValueError):
    """Malformed header, truncated payload, or non-finite raster data."""


def write_raster(path, array) -> None:
    """Write a finite 2-D array as an ``ELAS1`` raster (float32 storage)."""
    a = np.asarray(array)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise RasterError(f"raster must be 2-D and non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise RasterError("refusing to write non-finite raster values")
    payload = np.ascontiguousarray(a, dtype="<f4")
    header = f"{MAGIC} {a.shape[0]} {a.shape[1]}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_raster(path) -> np.ndarray:
    """Read an ``ELAS1`` raster back as a float32 array."""
    with open(path, "rb") as fh:
        header = fh.readline(128)
        payload = fh.read()
    if not header.endswith(b"\n"):
        raise RasterError("missing or oversized raster header line")
    parts = header.decode("ascii", errors="replace").split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise RasterError(f"bad raster header: {header!r}")
    try:
        rows, cols = int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise RasterError(f"non-integer raster dimensions in {header!r}") from exc
    if rows < 1 or cols < 1:
        raise RasterError(f"raster dimensions must be positive, got {rows}x{cols}")
    expected = rows * cols * 4
    if len(payload) != expected:
        raise RasterError(
            f"payload is {len(payload)} bytes, expected {expected} for {rows}x{cols}"
        )
    a = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
    if not np.all(np.isfinite(a)):
        raise RasterError("raster payload contains non-finite values")
    return a


def raster_file_size(rows: int, cols: int) -> int:
    """Exact on-disk size in bytes of a rows x cols raster."""
    return len(f"{MAGIC} {rows} {cols}\n") + rows * cols * 4


def save_modes(basis: ModeBasis, directory) -> None:
    """Write a mode basis as one raster per mode plus ``modes.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    m, l = basis.source_dims
    manifest = {
        "n_modes": basis.n_modes,
        "m": m,
        "l": l,
        "eigenvalues": [float(v) for v in basis.eigenvalues],
        "explained_variance_ratio": float(basis.explained_variance_ratio),
    }
    with open(d / MODES_MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2)
    write_raster(d / "mean.raster", basis.mean.reshape(m, l))
    for n in range(basis.n_modes):
        write_raster(d / f"mode_{n:03d}.raster", basis.modes[n].reshape(m, l))


def load_modes(directory) -> ModeBasis:
    """Load a mode basis saved by :func:`save_modes`.

    float32 storage perturbs orthonormality beyond the basis invariants, so
    the loaded modes are re-orthonormalized (QR polish, sign convention
    re-applied) before construction.
    """
    d = Path(directory)
    with open(d / MODES_MANIFEST) as fh:
        manifest = json.load(fh)
    n, m, l = manifest["n_modes"], manifest["m"], manifest["l"]
    mean = read_raster(d / "mean.raster").astype(np.float64).reshape(-1)
    modes = np.empty((n, m * l))
    for k in range(n):
        r = read_raster(d / f"mode_{k:03d}.raster")
        if r.shape != (m, l):
            raise RasterError(f"mode {k} raster is {r.shape}, manifest says {(m, l)}")
        modes[k] = r.astype(np.float64).reshape(-1)
    q, r = np.linalg.qr(modes.T)
    modes = (q * np.sign(np.diag(r))).T
    for k in range(n):
        peak = np.argmax(np.abs(modes[k]))
        if modes[k, peak] < 0:
            modes[k] = -modes[k]
    return ModeBasis(
        modes=modes,
        mean=mean,
        eigenvalues=np.asarray(manifest["eigenvalues"], dtype=np.float64),
        explained_variance_ratio=manifest["explained_variance_ratio"],
        source_dims=(m, l),
    )
