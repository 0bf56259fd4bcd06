"""Delta sampling: transfer a fine-tuning update between diffusion models at sampling time.

The residual between an adapted model and its base is added to a different
target model's noise prediction, scaled by a guidance schedule.
"""

from .analytic import AnalyticPredictor, GaussianModel, GmmModel, GridPredictor, gaussian_epsilon, gmm_epsilon
from .denoiser import MlpDenoiser, TrainConfig, TrainingDiverged, fine_tune, load_mlp, save_mlp, train_denoiser
from .guidance import DeltaSource, GuidedPredictor, as_noise_predictor, compute_delta, guided_epsilon
from .metrics import MetricError, SampleBatch, diversity, energy_distance, transfer_error
from .predictors import NoisePredictor, StateVector
from .samplers import NoiseSource, RunSpec, SamplerAbort, SamplerKind, run_sampler, sample_batch
from .schedule import (
    GuidanceSchedule,
    VarianceSchedule,
    build_schedule,
    default_schedule,
    forward_diffuse,
    guidance_strength,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyticPredictor",
    "DeltaSource",
    "GaussianModel",
    "GmmModel",
    "GridPredictor",
    "GuidanceSchedule",
    "GuidedPredictor",
    "MetricError",
    "MlpDenoiser",
    "NoisePredictor",
    "NoiseSource",
    "RunSpec",
    "SampleBatch",
    "SamplerAbort",
    "SamplerKind",
    "StateVector",
    "TrainConfig",
    "TrainingDiverged",
    "VarianceSchedule",
    "as_noise_predictor",
    "build_schedule",
    "compute_delta",
    "default_schedule",
    "diversity",
    "energy_distance",
    "fine_tune",
    "forward_diffuse",
    "gaussian_epsilon",
    "gmm_epsilon",
    "guidance_strength",
    "guided_epsilon",
    "load_mlp",
    "run_sampler",
    "sample_batch",
    "save_mlp",
    "train_denoiser",
    "transfer_error",
]
