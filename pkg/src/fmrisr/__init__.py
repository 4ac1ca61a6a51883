"""Resolution-agnostic super-resolution for fMRI volumes, with a phantom evaluation harness."""
from .errors import (
    ConfigError,
    ConsistencyError,
    DegenerateInputError,
    DesignError,
    FmriSRError,
    FormatError,
    InvalidArgumentError,
    NumericError,
    ShapeError,
)
from .volume import FrameSeries, IntensityScale, VoxelGrid, normalize_intensity, resample, trilinear_sample
from .degradation import (
    DegradationConfig,
    DegradationRecipe,
    Phi1Params,
    Phi2Params,
    apply_phi1,
    apply_phi2,
    make_training_pair,
    sample_recipe,
)
from .losses import LossConfig, compound_loss, pearson, psnr, ssim3d
from .network import ModelConfig, SRModel, backward, forward, init_model, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainJournal, fit
from .inference import super_resolve_frame, super_resolve_series
from .fmri import TaskDesign, consistency_index, evaluate_pipeline, glm_selectivity_map
from .phantom import generate_selectivity_patterns, generate_structural_phantom, synthesize_task_series

__version__ = "0.1.0"
