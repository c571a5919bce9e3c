"""Global refinement of a coarse displacement into a sub-sample field.

The data term is linearized around the current estimate and combined with
first-order smoothness penalties on both displacement components, giving
one sparse symmetric linear system per outer iteration.  A backtracking
step keeps the full nonlinear cost non-increasing.  The module also hosts
the downstream consumers of refined fields: least-squares strain, SNR/CNR,
warping, and normalized cross correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RectBivariateSpline
from scipy.sparse.linalg import spsolve

from .types import DisplacementField, RfFrame, StrainImage


@dataclass(frozen=True)
class RefineConfig:
    """Smoothness weights: alpha* act on the axial component, beta* on the lateral.

    *1 weights penalize the axial derivative, *2 the lateral derivative.
    """

    alpha1: float = 5.0
    alpha2: float = 1.0
    beta1: float = 5.0
    beta2: float = 1.0
    max_iters: int = 10
    step_tolerance: float = 0.01

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.beta1, self.beta2) < 0:
            raise ValueError("smoothness weights must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_tolerance <= 0:
            raise ValueError("step_tolerance must be positive")


@dataclass(frozen=True)
class RefineInfo:
    cost_history: tuple[float, ...]
    converged: bool
    iterations: int


def _normalize(img: np.ndarray) -> np.ndarray:
    centered = img - img.mean()
    rms = np.sqrt(np.mean(centered**2))
    if rms < 1e-30:
        raise ValueError("cannot refine against a constant frame")
    return centered / rms


def _difference_ops(m: int, l: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Forward-difference operators along rows (axial) and columns (lateral) for row-major flattening."""
    def first_diff(n):
        return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))

    d_ax = sp.kron(first_diff(m), sp.eye(l), format="csr")
    d_lat = sp.kron(sp.eye(m), first_diff(l), format="csr")
    return d_ax, d_lat


def _smoothness_ops(m: int, l: int, cfg: RefineConfig) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    d_ax, d_lat = _difference_ops(m, l)
    ata = (d_ax.T @ d_ax).tocsr()
    atl = (d_lat.T @ d_lat).tocsr()
    smooth_axial = cfg.alpha1 * ata + cfg.alpha2 * atl
    smooth_lateral = cfg.beta1 * ata + cfg.beta2 * atl
    return smooth_axial.tocsr(), smooth_lateral.tocsr()


class _WarpModel:
    """Cubic-spline view of the deformed frame with in-bounds masking."""

    def __init__(self, img: np.ndarray):
        self.m, self.l = img.shape
        self.spline = RectBivariateSpline(
            np.arange(self.m), np.arange(self.l), img, kx=3, ky=3, s=0
        )
        grid_r, grid_c = np.meshgrid(np.arange(self.m), np.arange(self.l), indexing="ij")
        self.grid_r = grid_r.astype(np.float64)
        self.grid_c = grid_c.astype(np.float64)

    def sample(self, axial: np.ndarray, lateral: np.ndarray, derivatives: bool = False):
        rows = self.grid_r + axial
        cols = self.grid_c + lateral
        inb = (rows >= 0) & (rows <= self.m - 1) & (cols >= 0) & (cols <= self.l - 1)
        rows_c = np.clip(rows, 0, self.m - 1).reshape(-1)
        cols_c = np.clip(cols, 0, self.l - 1).reshape(-1)
        value = self.spline.ev(rows_c, cols_c).reshape(self.m, self.l)
        if not derivatives:
            return value, inb
        g_ax = self.spline.ev(rows_c, cols_c, dx=1).reshape(self.m, self.l)
        g_lat = self.spline.ev(rows_c, cols_c, dy=1).reshape(self.m, self.l)
        return value, inb, g_ax, g_lat


def _total_cost(
    ref: np.ndarray,
    model: _WarpModel,
    axial: np.ndarray,
    lateral: np.ndarray,
    smooth_axial: sp.csr_matrix,
    smooth_lateral: sp.csr_matrix,
) -> float:
    value, inb = model.sample(axial, lateral)
    residual = np.where(inb, ref - value, 0.0)
    a = axial.reshape(-1)
    u = lateral.reshape(-1)
    return float(
        np.sum(residual**2) + a @ (smooth_axial @ a) + u @ (smooth_lateral @ u)
    )


def linearized_system(
    ref: np.ndarray,
    model: _WarpModel,
    axial: np.ndarray,
    lateral: np.ndarray,
    smooth_axial: sp.csr_matrix,
    smooth_lateral: sp.csr_matrix,
):
    """Assemble H, b for the quadratic expansion around (axial, lateral).

    Returns (H, b, quad_cost) where quad_cost evaluates the quadratic in a
    stacked update vector; the gradient of quad_cost is 2*(H delta - b).
    """
    value, inb, g_ax, g_lat = model.sample(axial, lateral, derivatives=True)
    residual = np.where(inb, ref - value, 0.0).reshape(-1)
    ga = np.where(inb, g_ax, 0.0).reshape(-1)
    gl = np.where(inb, g_lat, 0.0).reshape(-1)
    a0 = axial.reshape(-1)
    u0 = lateral.reshape(-1)

    h = sp.bmat(
        [
            [sp.diags(ga * ga) + smooth_axial, sp.diags(ga * gl)],
            [sp.diags(ga * gl), sp.diags(gl * gl) + smooth_lateral],
        ],
        format="csc",
    )
    b = np.concatenate([ga * residual - smooth_axial @ a0, gl * residual - smooth_lateral @ u0])

    n = a0.size

    def quad_cost(delta: np.ndarray) -> float:
        da, du = delta[:n], delta[n:]
        data = residual - ga * da - gl * du
        sa = a0 + da
        su = u0 + du
        return float(
            np.sum(data**2) + sa @ (smooth_axial @ sa) + su @ (smooth_lateral @ su)
        )

    return h, b, quad_cost


def refine(
    frame_1: RfFrame,
    frame_2: RfFrame,
    initial: DisplacementField,
    cfg: RefineConfig | None = None,
    return_info: bool = False,
):
    """Iteratively re-linearized quadratic refinement of an initial field.

    Stops when the mean absolute update drops below ``step_tolerance``;
    hitting ``max_iters`` first returns the best iterate with a
    ``refine-max-iters`` flag.
    """
    cfg = cfg or RefineConfig()
    if frame_1.shape != frame_2.shape:
        raise ValueError(f"frame shapes differ: {frame_1.shape} vs {frame_2.shape}")
    if initial.shape != frame_1.shape:
        raise ValueError(f"initial field shape {initial.shape} != frame shape {frame_1.shape}")
    m, l = frame_1.shape
    ref = _normalize(frame_1.samples)
    model = _WarpModel(_normalize(frame_2.samples))
    smooth_axial, smooth_lateral = _smoothness_ops(m, l, cfg)

    axial = initial.axial.copy()
    lateral = initial.lateral_or_zeros().copy()
    costs = [_total_cost(ref, model, axial, lateral, smooth_axial, smooth_lateral)]
    converged = False
    iterations = 0
    for _ in range(cfg.max_iters):
        iterations += 1
        h, b, _ = linearized_system(ref, model, axial, lateral, smooth_axial, smooth_lateral)
        delta = spsolve(h, b)
        da = delta[: m * l].reshape(m, l)
        du = delta[m * l :].reshape(m, l)

        step = 1.0
        accepted = False
        base = costs[-1]
        for _ in range(8):
            cand = _total_cost(
                ref, model, axial + step * da, lateral + step * du, smooth_axial, smooth_lateral
            )
            if cand <= base + 1e-12 * max(1.0, abs(base)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        axial = axial + step * da
        lateral = lateral + step * du
        costs.append(cand)
        if float(np.mean(np.abs(step * delta))) < cfg.step_tolerance:
            converged = True
            break

    flags = () if converged else ("refine-max-iters",)
    out = DisplacementField(axial=axial, lateral=lateral, provenance="refined", flags=flags)
    if return_info:
        return out, RefineInfo(cost_history=tuple(costs), converged=converged, iterations=iterations)
    return out


def warp(image, field: DisplacementField) -> tuple[np.ndarray, np.ndarray]:
    """Sample an image at x + d(x) with cubic interpolation.

    Returns the warped image and the boolean mask of samples whose source
    position stayed inside the frame; masked-out samples are zeroed.
    """
    img = image.samples if isinstance(image, RfFrame) else np.asarray(image, dtype=np.float64)
    if field.shape != img.shape:
        raise ValueError(f"field shape {field.shape} != image shape {img.shape}")
    model = _WarpModel(img)
    value, inb = model.sample(field.axial, field.lateral_or_zeros())
    return np.where(inb, value, 0.0), inb


def ncc(image_1, image_2, mask: np.ndarray | None = None) -> float:
    """Normalized cross correlation over the (optionally masked) overlap."""
    a = image_1.samples if isinstance(image_1, RfFrame) else np.asarray(image_1, dtype=np.float64)
    b = image_2.samples if isinstance(image_2, RfFrame) else np.asarray(image_2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mask is not None:
        if mask.shape != a.shape:
            raise ValueError("mask shape mismatch")
        a = a[mask]
        b = b[mask]
    else:
        a = a.reshape(-1)
        b = b.reshape(-1)
    if a.size == 0:
        raise ValueError("empty overlap region")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.sum(da**2) * np.sum(db**2))
    if denom == 0.0:
        raise ValueError("NCC undefined: constant input over the overlap")
    return float(np.clip(np.sum(da * db) / denom, -1.0, 1.0))


def strain(field, window_len: int) -> StrainImage:
    """Axial strain as the per-column least-squares slope over a sliding window.

    Boundary rows use the truncated window that fits inside the column.
    """
    d = field.axial if isinstance(field, DisplacementField) else np.asarray(field, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError("displacement must be 2-D")
    m, l = d.shape
    if window_len < 3 or window_len % 2 == 0:
        raise ValueError("window_len must be odd and >= 3")
    if window_len > m:
        raise ValueError(f"window {window_len} longer than column of {m} samples")
    half = (window_len - 1) // 2
    rows = np.arange(m, dtype=np.float64)

    # prefix sums give exact LSQ slopes for every (possibly truncated) window
    ones = np.ones(m)
    cum_n = np.concatenate(([0.0], np.cumsum(ones)))
    cum_r = np.concatenate(([0.0], np.cumsum(rows)))
    cum_r2 = np.concatenate(([0.0], np.cumsum(rows**2)))
    cum_d = np.vstack([np.zeros(l), np.cumsum(d, axis=0)])
    cum_rd = np.vstack([np.zeros(l), np.cumsum(rows[:, None] * d, axis=0)])

    lo = np.maximum(np.arange(m) - half, 0)
    hi = np.minimum(np.arange(m) + half, m - 1) + 1
    n = (cum_n[hi] - cum_n[lo])[:, None]
    s_r = (cum_r[hi] - cum_r[lo])[:, None]
    s_r2 = (cum_r2[hi] - cum_r2[lo])[:, None]
    s_d = cum_d[hi] - cum_d[lo]
    s_rd = cum_rd[hi] - cum_rd[lo]
    denom = n * s_r2 - s_r**2
    slopes = (n * s_rd - s_r * s_d) / denom
    return StrainImage(strain=slopes, window_len=window_len)


@dataclass(frozen=True)
class SnrCnrResult:
    snr: float
    cnr: float
    saturated: bool


def snr_cnr(strain_image, target_window, background_window) -> SnrCnrResult:
    """Contrast and signal-to-noise of a strain image over two windows.

    Windows are (row_start, row_stop, col_start, col_stop) half-open index
    ranges; SNR uses the background statistics.  Zero variance saturates
    the affected metric to infinity and sets the flag.
    """
    s = strain_image.strain if isinstance(strain_image, StrainImage) else np.asarray(strain_image)

    def extract(win):
        r0, r1, c0, c1 = win
        if not (0 <= r0 < r1 <= s.shape[0] and 0 <= c0 < c1 <= s.shape[1]):
            raise ValueError(f"window {win} outside strain image {s.shape}")
        block = s[r0:r1, c0:c1]
        if block.size < 2:
            raise ValueError(f"window {win} is degenerate")
        return block

    target = extract(target_window)
    background = extract(background_window)
    mean_t, var_t = float(target.mean()), float(target.var())
    mean_b, var_b = float(background.mean()), float(background.var())

    saturated = False
    if var_b == 0.0:
        snr = np.inf
        saturated = True
    else:
        snr = mean_b / np.sqrt(var_b)
    if var_b + var_t == 0.0:
        cnr = np.inf
        saturated = True
    else:
        cnr = np.sqrt(2.0 * (mean_b - mean_t) ** 2 / (var_b + var_t))
    return SnrCnrResult(snr=float(snr), cnr=float(cnr), saturated=saturated)
