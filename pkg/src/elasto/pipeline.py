"""End-to-end estimation pipelines composed from the stage modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coarse import build_system, coarse_lateral, solve_weights
from .dp import DpConfig, dp_line, lateral_dp_line, smooth_staircase, sparse_tde
from .modes import reconstruct
from .refine import RefineConfig, refine
from .types import DisplacementField, ModeBasis, RfFrame, WeightVector


@dataclass(frozen=True)
class CoarseEstimate:
    field: DisplacementField
    weights: WeightVector


def coarse_estimate(
    frame_1: RfFrame, frame_2: RfFrame, basis: ModeBasis, cfg: DpConfig
) -> CoarseEstimate:
    """Sparse DP on the chosen lines, mode fit for axial, bilinear lateral."""
    if basis.source_dims != frame_1.shape:
        raise ValueError(f"basis dims {basis.source_dims} != frame shape {frame_1.shape}")
    st = sparse_tde(frame_1, frame_2, cfg)
    system = build_system(basis, st.coords, st.values)
    weights = solve_weights(system)
    axial = reconstruct(basis, weights)
    lateral, fallback = coarse_lateral(st.line_indices, st.lateral, frame_1.num_lines)
    flags = ("lateral-constant-fallback",) if fallback else ()
    field = DisplacementField(axial=axial, lateral=lateral, provenance="pca-coarse", flags=flags)
    return CoarseEstimate(field=field, weights=weights)


def full_dp_estimate(frame_1: RfFrame, frame_2: RfFrame, cfg: DpConfig) -> DisplacementField:
    """Per-line DP on every RF line (the expensive baseline initialization)."""
    m, l = frame_1.shape
    axial = np.empty((m, l))
    lateral = np.empty((m, l))
    for line in range(l):
        axial_int = dp_line(frame_1, frame_2, line, cfg)
        axial[:, line] = smooth_staircase(axial_int)
        lateral[:, line] = smooth_staircase(
            lateral_dp_line(frame_1, frame_2, line, cfg, axial=axial_int)
        )
    return DisplacementField(axial=axial, lateral=lateral, provenance="dp-sparse")


def refined_estimate(
    frame_1: RfFrame,
    frame_2: RfFrame,
    basis: ModeBasis,
    dp_cfg: DpConfig | None = None,
    refine_cfg: RefineConfig | None = None,
) -> tuple[DisplacementField, WeightVector]:
    """Coarse mode-based estimate refined to a sub-sample field."""
    dp_cfg = dp_cfg or DpConfig()
    refine_cfg = refine_cfg or RefineConfig()
    est = coarse_estimate(frame_1, frame_2, basis, dp_cfg)
    refined = refine(frame_1, frame_2, est.field, refine_cfg)
    return refined, est.weights
