"""Training-free multi-prompt latent diffusion editing engine.

Builds on three pieces: deterministic DDIM inversion and sampling over a
scaled-linear noise schedule, a ridge-regularized bridge that pulls aligned
multi-modal embeddings into the diffusion conditioning space, and a
variance-preserving multi-prompt fusion that keeps, per spatial patch, the
noise residual with the largest magnitude.  Analytic toy denoisers stand in
for pretrained networks so every property is checkable in closed form.
"""

from .bridge import (
    DegenerateInputError,
    PromptEmbedding,
    SingularSystemError,
    assemble_prompt,
    inversion_norm,
    invert_to_sd,
    pool_embedding,
    project_to_clip,
    scale_magnitude,
    solve_tikhonov,
)
from .config import ConfigError, PipelineConfig, load_config, parse_config, read_keyvalues
from .demos import DemoResult, run_demo
from .denoiser import (
    AttractorDenoiser,
    ConstantDenoiser,
    Denoiser,
    DuplicateFeatureError,
    FeatureStore,
    MissingFeatureError,
    UnknownConditionError,
    attractor_denoiser,
    capture_features,
    constant_denoiser,
    default_condition_key,
    eps_for_x0,
    implied_x0,
    inject_features,
)
from .fusion import (
    BranchPredictionError,
    BranchSet,
    FusionTrace,
    StepRecord,
    branch_predictions,
    fuse_adaptive,
    fuse_mean,
    record_diagnostics,
    residual_norm_map,
    save_trace,
    write_trace,
)
from .nbt import (
    BadMagicError,
    NonFiniteValueError,
    TensorFormatError,
    TruncatedPayloadError,
    UnknownDtypeError,
    load_tensor,
    read_tensor,
    save_tensor,
    write_tensor,
)
from .pipeline import (
    PipelineStepError,
    Trajectory,
    run_edit,
    run_inversion,
    run_reconstruction,
)
from .schedule import (
    NoiseSchedule,
    TimestepSequence,
    build_schedule,
    ddim_invert_step,
    ddim_sample_step,
    select_timesteps,
)

__version__ = "0.1.0"
