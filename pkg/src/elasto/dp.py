"""Dynamic-programming integer time-delay estimation along RF lines.

Each line pair is costed as a squared amplitude difference plus a quadratic
transition penalty on neighbouring displacements; the globally optimal
integer path is found by a Viterbi-style sweep.  The integer staircases are
then relaxed to piecewise-linear profiles before feeding the mode solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import RfFrame


@dataclass(frozen=True)
class DpConfig:
    """Tuning for the sparse DP stage.

    ``line_indices`` overrides the equidistant placement when given; the
    lateral search happens only on the chosen lines and reuses the axial
    cost structure across columns.
    """

    alpha_dp: float = 0.2
    search_range: int = 32
    num_lines: int = 5
    line_indices: tuple[int, ...] | None = None
    lateral_search_range: int = 8

    def __post_init__(self):
        if self.alpha_dp < 0:
            raise ValueError("alpha_dp must be non-negative")
        if self.search_range < 1:
            raise ValueError("search_range must be >= 1")
        if self.num_lines < 1:
            raise ValueError("num_lines must be >= 1")
        if self.lateral_search_range < 1:
            raise ValueError("lateral_search_range must be >= 1")
        if self.line_indices is not None:
            object.__setattr__(self, "line_indices", tuple(int(i) for i in self.line_indices))

    def lines_for(self, num_lines_total: int) -> np.ndarray:
        """The RF-line indices to process on a frame with ``num_lines_total`` lines."""
        if self.line_indices is not None:
            lines = np.asarray(self.line_indices, dtype=int)
        else:
            lines = equidistant_lines(num_lines_total, self.num_lines)
        if np.any(lines < 0) or np.any(lines >= num_lines_total):
            raise ValueError(f"line indices {lines} out of range for l={num_lines_total}")
        return lines


def equidistant_lines(num_lines_total: int, p: int) -> np.ndarray:
    """``p`` equidistant line indices, centered away from the frame edges."""
    if not 1 <= p <= num_lines_total:
        raise ValueError(f"need 1 <= p <= {num_lines_total}, got p={p}")
    t = np.arange(p)
    lines = np.floor((t + 0.5) * num_lines_total / p + 0.5).astype(int)
    lines = np.clip(lines, 0, num_lines_total - 1)
    if len(np.unique(lines)) != p:
        raise ValueError(f"p={p} too dense for l={num_lines_total}; pass line_indices")
    return lines


def normalize_signal(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-RMS copy; all-constant input maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean()
    rms = np.sqrt(np.mean(centered**2))
    if rms < 1e-30:
        return np.zeros_like(centered)
    return centered / rms


def _priority_permutation(offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-target ordering of source states by (|step|, source displacement)."""
    s = offsets.size
    perm = np.empty((s, s), dtype=np.int32)
    for t in range(s):
        perm[t] = np.lexsort((offsets, np.abs(offsets - offsets[t])))
    return perm, offsets[perm]


def dp_path(data_cost: np.ndarray, alpha: float, offsets: np.ndarray) -> np.ndarray:
    """Minimum-cost integer displacement path for a per-state data cost table.

    ``data_cost[i, k]`` is the data term of taking displacement
    ``offsets[k]`` at row ``i``; successive rows pay
    ``alpha * (d_i - d_{i-1})**2``.  Ties prefer the smaller |step|, then
    the smaller displacement; the final state resolves equal costs to the
    smallest displacement.
    """
    data_cost = np.asarray(data_cost, dtype=np.float64)
    m, s = data_cost.shape
    if offsets.shape != (s,):
        raise ValueError("offsets must match the data-cost state axis")
    perm, perm_offsets = _priority_permutation(offsets)
    trans = alpha * (offsets[:, None] - perm_offsets) ** 2
    rows = np.arange(s)

    back = np.empty((m, s), dtype=np.int32)
    cost = data_cost[0].copy()
    for i in range(1, m):
        cand = cost[perm] + trans
        j = np.argmin(cand, axis=1)
        back[i] = perm[rows, j]
        cost = cand[rows, j] + data_cost[i]

    path = np.empty(m, dtype=np.int64)
    state = int(np.argmin(cost))
    path[m - 1] = state
    for i in range(m - 1, 0, -1):
        state = int(back[i, state])
        path[i - 1] = state
    return offsets[path]


def path_cost(path: np.ndarray, data_cost: np.ndarray, alpha: float, offsets: np.ndarray) -> float:
    """Total cost of a displacement path under the DP objective."""
    state = np.searchsorted(offsets, path)
    if np.any(offsets[state] != path):
        raise ValueError("path contains displacements outside the search range")
    total = float(data_cost[0, state[0]])
    for i in range(1, len(path)):
        total += float(data_cost[i, state[i]])
        total += alpha * float(path[i] - path[i - 1]) ** 2
    return total


def axial_data_cost(a: np.ndarray, b: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Squared-difference table for one line pair; out-of-bounds lookups get the max in-bounds penalty."""
    m = a.size
    cost = np.full((m, offsets.size), np.nan)
    idx = np.arange(m)
    for k, off in enumerate(offsets):
        j = idx + off
        valid = (j >= 0) & (j < m)
        cost[valid, k] = (a[valid] - b[j[valid]]) ** 2
    penalty = np.nanmax(cost)
    return np.where(np.isnan(cost), penalty, cost)


def dp_line(frame_1: RfFrame, frame_2: RfFrame, line_index: int, cfg: DpConfig) -> np.ndarray:
    """Integer axial displacement of one RF line, length m."""
    if frame_1.shape != frame_2.shape:
        raise ValueError(f"frame shapes differ: {frame_1.shape} vs {frame_2.shape}")
    m, l = frame_1.shape
    if not 0 <= line_index < l:
        raise ValueError(f"line {line_index} out of range for l={l}")
    if cfg.search_range >= m / 4:
        raise ValueError(f"search_range {cfg.search_range} too large for m={m}")
    a = normalize_signal(frame_1.samples[:, line_index])
    b = normalize_signal(frame_2.samples[:, line_index])
    offsets = np.arange(-cfg.search_range, cfg.search_range + 1)
    return dp_path(axial_data_cost(a, b, offsets), cfg.alpha_dp, offsets)


def _lateral_cost_table(f1, f2, line_index, offsets, rows_2):
    m, l = f1.shape
    cost = np.full((m, offsets.size), np.nan)
    for k, off in enumerate(offsets):
        j = line_index + off
        if 0 <= j < l:
            cost[:, k] = (f1[:, line_index] - f2[rows_2, j]) ** 2
    penalty = np.nanmax(cost)
    return np.where(np.isnan(cost), penalty, cost)


def lateral_dp_line(
    frame_1: RfFrame,
    frame_2: RfFrame,
    line_index: int,
    cfg: DpConfig,
    axial: np.ndarray | None = None,
) -> np.ndarray:
    """Integer lateral displacement (in lines) along one RF line, length m.

    When an axial estimate for the line is given, a second cost table reads
    the deformed frame at the axially displaced rows; the cheaper of the
    two optimal paths wins.  Compensation is essential under axial motion,
    but is poison when the axial path itself failed (pure lateral shifts),
    so neither variant can be used unconditionally.
    """
    if frame_1.shape != frame_2.shape:
        raise ValueError(f"frame shapes differ: {frame_1.shape} vs {frame_2.shape}")
    m, l = frame_1.shape
    if not 0 <= line_index < l:
        raise ValueError(f"line {line_index} out of range for l={l}")
    f1 = normalize_signal(frame_1.samples.reshape(-1)).reshape(m, l)
    f2 = normalize_signal(frame_2.samples.reshape(-1)).reshape(m, l)
    r = min(cfg.lateral_search_range, l - 1)
    offsets = np.arange(-r, r + 1)

    plain_rows = np.arange(m)
    tables = [_lateral_cost_table(f1, f2, line_index, offsets, plain_rows)]
    if axial is not None and np.any(np.round(axial) != 0):
        shifted_rows = np.clip(plain_rows + np.round(axial).astype(int), 0, m - 1)
        tables.append(_lateral_cost_table(f1, f2, line_index, offsets, shifted_rows))

    best_path, best_cost = None, np.inf
    for table in tables:
        path = dp_path(table, cfg.alpha_dp, offsets)
        cost = path_cost(path, table, cfg.alpha_dp, offsets)
        if cost < best_cost:
            best_path, best_cost = path, cost
    return best_path


def smooth_staircase(d: np.ndarray) -> np.ndarray:
    """Relax an integer staircase to a piecewise-linear profile.

    Knots sit at the midpoint of each constant run and the profile
    extrapolates flat past the outermost knots, so length-1 runs are
    preserved exactly.  Real-valued inputs (already smoothed) are returned
    unchanged, which makes the operation idempotent.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1:
        raise ValueError("expected a 1-D displacement vector")
    if d.size == 0:
        return d.copy()
    if np.any(d != np.round(d)):
        return d.copy()
    boundaries = np.flatnonzero(np.diff(d) != 0)
    starts = np.concatenate(([0], boundaries + 1))
    ends = np.concatenate((boundaries, [d.size - 1]))
    knots_x = (starts + ends) / 2.0
    knots_y = d[starts]
    return np.interp(np.arange(d.size, dtype=np.float64), knots_x, knots_y)


@dataclass(frozen=True, eq=False)
class SparseTde:
    """Sparse time-delay estimates on the processed lines.

    ``coords`` lists (row, line) for every sample on the chosen lines in
    line order, K = m * p entries; ``values`` holds the smoothed axial
    displacements in the same order.  ``lateral`` is one smoothed lateral
    profile per chosen line, shape (p, m).
    """

    coords: np.ndarray
    values: np.ndarray
    line_indices: np.ndarray
    lateral: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.int64))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "line_indices", np.asarray(self.line_indices, dtype=np.int64))
        object.__setattr__(self, "lateral", np.asarray(self.lateral, dtype=np.float64))


def sparse_tde(frame_1: RfFrame, frame_2: RfFrame, cfg: DpConfig) -> SparseTde:
    """Run axial and lateral DP on the configured lines of a frame pair."""
    if frame_1.shape != frame_2.shape:
        raise ValueError(f"frame shapes differ: {frame_1.shape} vs {frame_2.shape}")
    m, l = frame_1.shape
    lines = cfg.lines_for(l)
    coords = np.empty((m * len(lines), 2), dtype=np.int64)
    values = np.empty(m * len(lines))
    lateral = np.empty((len(lines), m))
    for t, line in enumerate(lines):
        sl = slice(t * m, (t + 1) * m)
        coords[sl, 0] = np.arange(m)
        coords[sl, 1] = line
        axial_int = dp_line(frame_1, frame_2, int(line), cfg)
        values[sl] = smooth_staircase(axial_int)
        lateral[t] = smooth_staircase(
            lateral_dp_line(frame_1, frame_2, int(line), cfg, axial=axial_int)
        )
    return SparseTde(coords=coords, values=values, line_indices=lines, lateral=lateral)
