"""Fast quasi-static elastography: sparse DP displacement estimates decomposed
onto learned principal displacement modes, refined globally, with an MLP
classifier that screens RF frame pairs before any dense estimation."""

__version__ = "0.1.0"

from .coarse import SparseSystem, build_system, coarse_axial, coarse_lateral, solve_weights
from .dp import DpConfig, SparseTde, dp_line, lateral_dp_line, smooth_staircase, sparse_tde
from .modes import learn_modes, project, reconstruct, truncate_basis
from .pipeline import CoarseEstimate, coarse_estimate, full_dp_estimate, refined_estimate
from .raster import RasterError, load_modes, read_raster, save_modes, write_raster
from .refine import (
    RefineConfig,
    RefineInfo,
    SnrCnrResult,
    ncc,
    refine,
    snr_cnr,
    strain,
    warp,
)
from .select import (
    ClassifierMetrics,
    LabeledInstance,
    MlpModel,
    TrainConfig,
    TrainingDiverged,
    classify,
    eval_classifier,
    label_pair,
    load_model,
    predict,
    save_model,
    select_best,
    train,
)
from .sim import (
    DeformationSpec,
    GaussianCosinePsf,
    Inclusion,
    PhantomSpec,
    inject_line_noise,
    synthesize_pair,
)
from .types import (
    DisplacementField,
    FramePairLabel,
    ModeBasis,
    RfFrame,
    StrainImage,
    WeightVector,
)
