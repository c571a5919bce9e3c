"""Shared domain types for the elastography pipeline.

All types are immutable after construction (frozen dataclasses holding
read-only numpy arrays), so they can be shared freely across threads.
Axial displacement is expressed in axial samples, lateral displacement in
RF-line indices; conversion to physical units is presentation-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROVENANCES = ("oracle", "dp-sparse", "pca-coarse", "refined")

MIN_AXIAL_SAMPLES = 64
MIN_RF_LINES = 8

MODE_NORM_TOL = 1e-9
MODE_ORTHO_TOL = 1e-8

NCC_SUITABILITY_THRESHOLD = 0.9


def _frozen_array(value, dtype=np.float64) -> np.ndarray:
    a = np.array(value, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RfFrame:
    """A 2-D raster of RF echo samples, axial samples (rows) x RF lines (cols)."""

    samples: np.ndarray
    axial_spacing: float = 1.0
    lateral_spacing: float = 1.0
    frame_id: str = ""

    def __post_init__(self):
        a = _frozen_array(self.samples)
        if a.ndim != 2:
            raise ValueError(f"RF frame must be 2-D, got shape {a.shape}")
        m, l = a.shape
        if m < MIN_AXIAL_SAMPLES or l < MIN_RF_LINES:
            raise ValueError(
                f"frame {m}x{l} below minimum {MIN_AXIAL_SAMPLES}x{MIN_RF_LINES}"
            )
        if not np.all(np.isfinite(a)):
            raise ValueError("RF frame contains non-finite samples")
        object.__setattr__(self, "samples", a)

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_lines(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-sample displacement between two RF frames.

    ``axial`` is in axial samples, ``lateral`` (optional) in RF lines.
    ``flags`` carries processing annotations such as a constant-lateral
    fallback or a refinement that stopped at the iteration cap.
    """

    axial: np.ndarray
    lateral: np.ndarray | None = None
    provenance: str = "oracle"
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        ax = _frozen_array(self.axial)
        if ax.ndim != 2:
            raise ValueError(f"axial displacement must be 2-D, got {ax.shape}")
        if not np.all(np.isfinite(ax)):
            raise ValueError("axial displacement contains non-finite values")
        object.__setattr__(self, "axial", ax)
        if self.lateral is not None:
            la = _frozen_array(self.lateral)
            if la.shape != ax.shape:
                raise ValueError(
                    f"lateral shape {la.shape} != axial shape {ax.shape}"
                )
            if not np.all(np.isfinite(la)):
                raise ValueError("lateral displacement contains non-finite values")
            object.__setattr__(self, "lateral", la)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def shape(self) -> tuple[int, int]:
        return self.axial.shape

    def lateral_or_zeros(self) -> np.ndarray:
        if self.lateral is None:
            return np.zeros_like(self.axial)
        return self.lateral


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """Orthonormal displacement modes learned from a corpus of fields.

    ``modes`` has one unit-norm mode per row, flattened to length m*l in
    row-major order; ``mean`` is the per-sample corpus mean in the same
    layout.  Eigenvalues are sorted descending.
    """

    modes: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray
    explained_variance_ratio: float
    source_dims: tuple[int, int]

    def __post_init__(self):
        modes = _frozen_array(self.modes)
        mean = _frozen_array(self.mean)
        eig = _frozen_array(self.eigenvalues)
        m, l = self.source_dims
        if modes.ndim != 2 or modes.shape[1] != m * l:
            raise ValueError(
                f"modes must be (N, {m * l}), got {modes.shape} for dims {self.source_dims}"
            )
        if mean.shape != (m * l,):
            raise ValueError(f"mean must have length {m * l}, got {mean.shape}")
        n = modes.shape[0]
        if eig.shape != (n,):
            raise ValueError("one eigenvalue per mode required")
        norms = np.linalg.norm(modes, axis=1)
        if np.any(np.abs(norms - 1.0) > MODE_NORM_TOL):
            raise ValueError("modes must have unit Euclidean norm")
        gram = modes @ modes.T
        off = gram - np.diag(np.diag(gram))
        if np.max(np.abs(off)) > MODE_ORTHO_TOL:
            raise ValueError("modes must be mutually orthogonal")
        if np.any(eig < 0) or np.any(np.diff(eig) > 0):
            raise ValueError("eigenvalues must be non-negative and descending")
        if not 0.0 <= self.explained_variance_ratio <= 1.0 + 1e-12:
            raise ValueError("explained_variance_ratio must lie in [0, 1]")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "eigenvalues", eig)
        object.__setattr__(self, "source_dims", (int(m), int(l)))

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Mode-decomposition coefficients plus the least-squares residual norm."""

    w: np.ndarray
    residual_norm: float

    def __post_init__(self):
        w = _frozen_array(self.w)
        if w.ndim != 1:
            raise ValueError("weights must be a 1-D vector")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite values")
        if not np.isfinite(self.residual_norm) or self.residual_norm < 0:
            raise ValueError("residual_norm must be finite and non-negative")
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True, eq=False)
class StrainImage:
    """Dimensionless axial strain with the differentiation window that produced it."""

    strain: np.ndarray
    window_len: int

    def __post_init__(self):
        s = _frozen_array(self.strain)
        if s.ndim != 2:
            raise ValueError("strain must be 2-D")
        if not np.all(np.isfinite(s)):
            raise ValueError("strain contains non-finite values")
        if self.window_len < 3 or self.window_len % 2 == 0:
            raise ValueError("window_len must be odd and >= 3")
        object.__setattr__(self, "strain", s)

    @property
    def shape(self) -> tuple[int, int]:
        return self.strain.shape


@dataclass(frozen=True)
class FramePairLabel:
    """Motion-compensated NCC of a frame pair and its binary suitability."""

    ncc: float
    suitable: bool

    def __post_init__(self):
        if not np.isfinite(self.ncc) or not -1.0 - 1e-9 <= self.ncc <= 1.0 + 1e-9:
            raise ValueError(f"ncc must lie in [-1, 1], got {self.ncc}")
        if self.suitable != (self.ncc > NCC_SUITABILITY_THRESHOLD):
            raise ValueError("suitable flag inconsistent with ncc threshold")

    @classmethod
    def from_ncc(cls, ncc: float) -> "FramePairLabel":
        return cls(ncc=float(ncc), suitable=bool(ncc > NCC_SUITABILITY_THRESHOLD))
