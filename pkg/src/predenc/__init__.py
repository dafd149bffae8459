"""Context-gated predictive encoder for short image and signal sequences.

Filters predict each frame from its neighbours; a sparse context code
gates the synthesis. The same energy drives training, prediction,
interpolation and denoising.
"""

__version__ = "0.1.0"

from .errors import PredEncError
from .model import (
    EnergyConfig,
    FrameSequence,
    ModelParams,
    NeighborhoodSpec,
    energy,
    energy_grad_frame,
    energy_grad_params,
    energy_grad_z,
    load_checkpoint,
    save_checkpoint,
)
from .numerics import MinimizeOptions, finite_difference_gradient, lbfgs_minimize, solve_quadratic
from .training import Corruption, ModelShape, TrainConfig, estimate_context, train
from .inference import (
    DenoiseConfig,
    InferConfig,
    denoise_sequence,
    infer_missing_frame,
    interpolate,
    predict_next,
    rollout,
    solve_for_frame,
)

__all__ = [
    "PredEncError", "EnergyConfig", "FrameSequence", "ModelParams", "NeighborhoodSpec",
    "energy", "energy_grad_frame", "energy_grad_params", "energy_grad_z",
    "load_checkpoint", "save_checkpoint", "MinimizeOptions", "finite_difference_gradient",
    "lbfgs_minimize", "solve_quadratic", "Corruption", "ModelShape", "TrainConfig",
    "estimate_context", "train", "DenoiseConfig", "InferConfig", "denoise_sequence",
    "infer_missing_frame", "interpolate", "predict_next", "rollout", "solve_for_frame",
]
