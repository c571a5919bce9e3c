"""Coarse displacement estimation: sparse DP samples fitted by the mode basis.

The smoothed sparse estimates c on the chosen lines are explained as a
linear combination of the modes gathered at the same coordinates; the
resulting weights reconstruct a dense axial field.  Lateral displacement is
bilinearly interpolated between the processed lines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import interp1d

from .dp import DpConfig, sparse_tde
from .modes import reconstruct
from .types import DisplacementField, ModeBasis, RfFrame, WeightVector

TIKHONOV_SCALE = 1e-8


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Gathered mode values A and centered sparse estimates c at coords q_1..q_K."""

    a_matrix: np.ndarray
    c: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a_matrix, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        coords = np.asarray(self.coords, dtype=np.int64)
        if a.ndim != 2 or c.shape != (a.shape[0],) or coords.shape != (a.shape[0], 2):
            raise ValueError("inconsistent sparse-system shapes")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "coords", coords)


def build_system(basis: ModeBasis, coords, values) -> SparseSystem:
    """Gather each mode at every coordinate; the mean field is subtracted from the estimates."""
    coords = np.asarray(coords, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    m, l = basis.source_dims
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("coords must be (K, 2)")
    if np.any(coords[:, 0] < 0) or np.any(coords[:, 0] >= m) or np.any(coords[:, 1] < 0) or np.any(coords[:, 1] >= l):
        raise ValueError("coordinate outside frame")
    flat = coords[:, 0] * l + coords[:, 1]
    a_matrix = basis.modes[:, flat].T
    c = values - basis.mean[flat]
    return SparseSystem(a_matrix=a_matrix, c=c, coords=coords)


def solve_weights(system: SparseSystem) -> WeightVector:
    """Least-squares weights via normal equations with a Tikhonov floor.

    The floor lambda = 1e-8 * trace(A^T A) / N keeps the solve unique when
    the sparse coordinates under-sample a mode.
    """
    a, c = system.a_matrix, system.c
    k, n = a.shape
    if k < n:
        raise ValueError(f"need K >= N, got K={k}, N={n}")
    ata = a.T @ a
    trace = float(np.trace(ata))
    if trace == 0.0:
        return WeightVector(w=np.zeros(n), residual_norm=float(np.linalg.norm(c)))
    lam = TIKHONOV_SCALE * trace / n
    w = np.linalg.solve(ata + lam * np.eye(n), a.T @ c)
    residual = float(np.linalg.norm(a @ w - c))
    return WeightVector(w=w, residual_norm=residual)


def tikhonov_floor(a_matrix: np.ndarray) -> float:
    """The regularization weight solve_weights applies to a given matrix."""
    a = np.asarray(a_matrix, dtype=np.float64)
    return TIKHONOV_SCALE * float(np.sum(a * a)) / a.shape[1]


def coarse_axial(
    basis: ModeBasis, frame_1: RfFrame, frame_2: RfFrame, cfg: DpConfig
) -> tuple[DisplacementField, WeightVector]:
    """Sparse DP -> weight solve -> dense axial reconstruction (mean included)."""
    if basis.source_dims != frame_1.shape:
        raise ValueError(f"basis dims {basis.source_dims} != frame shape {frame_1.shape}")
    st = sparse_tde(frame_1, frame_2, cfg)
    system = build_system(basis, st.coords, st.values)
    weights = solve_weights(system)
    axial = reconstruct(basis, weights)
    return DisplacementField(axial=axial, provenance="pca-coarse"), weights


def coarse_lateral(
    line_indices, line_values, num_lines_total: int
) -> tuple[np.ndarray, bool]:
    """Interpolate per-line lateral profiles across the frame width.

    Linear between the known lines, constant extrapolation outside.  With a
    single line there is nothing to interpolate; the mean of its profile is
    broadcast and the fallback flag is set.
    """
    lines = np.asarray(line_indices, dtype=np.int64)
    values = np.asarray(line_values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != lines.size:
        raise ValueError("line_values must be (p, m)")
    if np.any(lines < 0) or np.any(lines >= num_lines_total):
        raise ValueError("line index outside frame")
    m = values.shape[1]
    if lines.size < 2:
        return np.full((m, num_lines_total), float(values.mean())), True
    order = np.argsort(lines)
    lines = lines[order]
    values = values[order]
    query = np.clip(np.arange(num_lines_total), lines[0], lines[-1])
    interp = interp1d(lines, values, axis=0, kind="linear")
    return interp(query).T, False
