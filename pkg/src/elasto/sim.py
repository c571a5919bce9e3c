"""Synthetic phantom generator with known ground-truth displacement.

Point scatterers with Gaussian amplitudes are splatted onto the sample grid
and convolved with a separable Gaussian-modulated-cosine PSF.  The deformed
frame is produced by cubic interpolation of the scatterer-convolved image
at the inverse-mapped positions, so warping it back by the oracle field
recovers the first frame up to interpolation error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .types import DisplacementField, RfFrame

DEFORMATION_KINDS = ("axial_compression", "in_plane_rotation", "lateral_shift", "out_of_plane")

_MAGNITUDE_BOUNDS = {
    "axial_compression": (0.0, 0.06),
    "in_plane_rotation": (-0.1, 0.1),
    "lateral_shift": (-8.0, 8.0),
    "out_of_plane": (0.0, 1.0),
}


@dataclass(frozen=True)
class GaussianCosinePsf:
    """Separable PSF: Gaussian-modulated cosine axially, Gaussian laterally.

    Defaults mimic a 5 MHz pulse sampled at 40 MHz; the long carrier period
    keeps integer DP free of cycle-skip ambiguity at the default alpha_dp.
    """

    center_freq: float = 0.125  # cycles per axial sample
    sigma_axial: float = 3.0
    sigma_lateral: float = 1.0

    def __post_init__(self):
        if self.center_freq <= 0 or self.sigma_axial <= 0 or self.sigma_lateral <= 0:
            raise ValueError("PSF parameters must be positive")


@dataclass(frozen=True)
class Inclusion:
    """Circular stiffness anomaly; relative_stiffness > 1 means harder than background."""

    center: tuple[float, float]
    radius: float
    relative_stiffness: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("inclusion radius must be positive")
        if self.relative_stiffness <= 0:
            raise ValueError("relative stiffness must be positive")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int] = (256, 64)
    scatterer_density: float = 0.8  # scatterers per sample area
    psf: GaussianCosinePsf = field(default_factory=GaussianCosinePsf)
    background_stiffness: float = 1.0
    inclusions: tuple[Inclusion, ...] = ()

    def __post_init__(self):
        if self.scatterer_density <= 0:
            raise ValueError("scatterer density must be positive")
        if self.background_stiffness <= 0:
            raise ValueError("background stiffness must be positive")
        object.__setattr__(self, "inclusions", tuple(self.inclusions))


@dataclass(frozen=True)
class DeformationSpec:
    kind: str = "axial_compression"
    magnitude: float = 0.02
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFORMATION_KINDS:
            raise ValueError(f"unknown deformation kind {self.kind!r}")
        lo, hi = _MAGNITUDE_BOUNDS[self.kind]
        if not lo <= self.magnitude <= hi:
            raise ValueError(
                f"{self.kind} magnitude {self.magnitude} outside [{lo}, {hi}]"
            )


def _scatterer_image(rng: np.random.Generator, m: int, l: int, density: float) -> np.ndarray:
    n = max(1, int(round(density * m * l)))
    rows = rng.uniform(0.0, m - 1.0, n)
    cols = rng.uniform(0.0, l - 1.0, n)
    amps = rng.standard_normal(n)
    img = np.zeros((m, l))
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr = rows - r0
    fc = cols - c0
    r1 = np.minimum(r0 + 1, m - 1)
    c1 = np.minimum(c0 + 1, l - 1)
    np.add.at(img, (r0, c0), amps * (1 - fr) * (1 - fc))
    np.add.at(img, (r1, c0), amps * fr * (1 - fc))
    np.add.at(img, (r0, c1), amps * (1 - fr) * fc)
    np.add.at(img, (r1, c1), amps * fr * fc)
    return img


def _convolve_psf(img: np.ndarray, psf: GaussianCosinePsf) -> np.ndarray:
    half_ax = int(np.ceil(4 * psf.sigma_axial))
    t = np.arange(-half_ax, half_ax + 1, dtype=np.float64)
    k_ax = np.exp(-(t**2) / (2 * psf.sigma_axial**2)) * np.cos(2 * np.pi * psf.center_freq * t)
    half_lat = int(np.ceil(4 * psf.sigma_lateral))
    s = np.arange(-half_lat, half_lat + 1, dtype=np.float64)
    k_lat = np.exp(-(s**2) / (2 * psf.sigma_lateral**2))
    out = ndimage.convolve1d(img, k_ax, axis=0, mode="constant")
    return ndimage.convolve1d(out, k_lat, axis=1, mode="constant")


def _normalize_frame(img: np.ndarray) -> np.ndarray:
    centered = img - img.mean()
    rms = np.sqrt(np.mean(centered**2))
    if rms < 1e-30:
        raise ValueError("degenerate phantom image (zero RMS)")
    return centered / rms


def _stiffness_scale(spec: PhantomSpec, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Local displacement multiplier: 1 in background, 1/relative_stiffness at inclusion centers."""
    scale = np.ones_like(rows, dtype=np.float64)
    for inc in spec.inclusions:
        d2 = (rows - inc.center[0]) ** 2 + (cols - inc.center[1]) ** 2
        blend = np.exp(-2.0 * d2 / inc.radius**2)
        scale = scale + (1.0 / inc.relative_stiffness - 1.0) * blend
    return scale


def _displacement_fn(spec: PhantomSpec, deform: DeformationSpec):
    """Analytic oracle displacement, evaluable at fractional grid positions."""
    m, l = spec.dims
    kind, mag = deform.kind, deform.magnitude
    ci, cj = (m - 1) / 2.0, (l - 1) / 2.0

    if kind == "axial_compression":

        def fn(rows, cols):
            ax = mag * rows * _stiffness_scale(spec, rows, cols)
            return ax, np.zeros_like(ax)

    elif kind == "in_plane_rotation":
        cos_t, sin_t = np.cos(mag), np.sin(mag)

        def fn(rows, cols):
            ri, rj = rows - ci, cols - cj
            ax = (cos_t - 1.0) * ri - sin_t * rj
            lat = sin_t * ri + (cos_t - 1.0) * rj
            return ax, lat

    elif kind == "lateral_shift":

        def fn(rows, cols):
            z = np.zeros_like(np.asarray(rows, dtype=np.float64))
            return z, np.full_like(z, mag)

    else:  # out_of_plane: no in-plane motion, decorrelation handled separately

        def fn(rows, cols):
            z = np.zeros_like(np.asarray(rows, dtype=np.float64))
            return z, z.copy()

    return fn


def synthesize_pair(
    spec: PhantomSpec, deform: DeformationSpec
) -> tuple[RfFrame, RfFrame, DisplacementField]:
    """Generate a deformed RF frame pair plus its ground-truth displacement.

    The oracle maps sample x of the first frame to x + d(x) in the second,
    i.e. warping the second frame by the oracle recovers the first.
    """
    m, l = spec.dims
    rng = np.random.default_rng(deform.rng_seed)
    base = _convolve_psf(_scatterer_image(rng, m, l, spec.scatterer_density), spec.psf)

    fn = _displacement_fn(spec, deform)
    grid_r, grid_c = np.meshgrid(np.arange(m, dtype=np.float64), np.arange(l, dtype=np.float64), indexing="ij")
    d_ax, d_lat = fn(grid_r, grid_c)
    if np.max(np.abs(d_ax)) > m / 2 or np.max(np.abs(d_lat)) > l / 2:
        raise ValueError("deformation displaces samples beyond frame bounds")

    if deform.kind == "out_of_plane":
        other = _convolve_psf(_scatterer_image(rng, m, l, spec.scatterer_density), spec.psf)
        mag = deform.magnitude
        deformed = (1.0 - mag) * base + mag * other
        identical = mag == 0.0
    elif np.all(d_ax == 0.0) and np.all(d_lat == 0.0):
        deformed = base
        identical = True
    else:
        # invert x + d(x) = y by fixed-point iteration; |grad d| << 1 at the allowed magnitudes
        xr = grid_r - d_ax
        xc = grid_c - d_lat
        for _ in range(6):
            ax_i, lat_i = fn(xr, xc)
            xr = grid_r - ax_i
            xc = grid_c - lat_i
        deformed = ndimage.map_coordinates(base, [xr, xc], order=3, mode="mirror")
        identical = False

    i1 = _normalize_frame(base)
    i2 = i1.copy() if identical else _normalize_frame(deformed)
    tag = f"sim-{deform.kind}-{deform.rng_seed}"
    frame_1 = RfFrame(i1, frame_id=f"{tag}-a")
    frame_2 = RfFrame(i2, frame_id=f"{tag}-b")
    oracle = DisplacementField(axial=d_ax, lateral=d_lat, provenance="oracle")
    return frame_1, frame_2, oracle


def inject_line_noise(
    frame: RfFrame,
    fraction: float,
    sigma2: float,
    seed: int,
    exclude: tuple[int, ...] = (),
) -> RfFrame:
    """Add zero-mean Gaussian noise of variance ``sigma2`` to a random subset of lines.

    Exactly round(fraction * l) distinct lines are perturbed, drawn outside
    ``exclude``; all other lines stay bit-identical.  The frame is assumed
    normalized to unit RMS so ``sigma2`` is relative to signal power.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    m, l = frame.shape
    count = int(np.floor(fraction * l + 0.5))
    if count == 0:
        return RfFrame(frame.samples, frame.axial_spacing, frame.lateral_spacing, frame.frame_id)
    candidates = np.setdiff1d(np.arange(l), np.asarray(exclude, dtype=int))
    if count > candidates.size:
        raise ValueError(f"cannot pick {count} noisy lines from {candidates.size} candidates")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(candidates, size=count, replace=False))
    samples = frame.samples.copy()
    for line in chosen:
        samples[:, line] += rng.normal(0.0, np.sqrt(sigma2), m)
    return RfFrame(samples, frame.axial_spacing, frame.lateral_spacing, frame.frame_id + "+noise")
