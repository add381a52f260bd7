"""Contrastive conditional flow matching on a synthetic text-to-latent task.

The package trains a small velocity-field model with a flow-matching
objective whose hard negatives are length-preserving repeat/skip
corruptions of the target latents, then measures the effect end to end
with an exact codebook decoder and character/word error rates.
"""

from .augment import AugmentConfig, AugmentMode, AugmentOutcome, augment, roll_batch
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config, parse_config_text
from .errors import (
    BatchTooSmallError,
    ConfigError,
    ContraflowError,
    DivergenceError,
    FileFormatError,
    ShapeError,
)
from .estimators import CodebookCodec, FlowSynthesizer, LatentCorruptor
from .flowmatch import FlowSample, LossBreakdown, LossWeights, sample_path, training_step, velocity
from .gradcheck import run_gradcheck
from .latent import LatentSequence, frames_for_seconds, read_ltnt, write_ltnt
from .metrics import ErrorRateReport, cer, edit_distance, evaluate_checkpoint, normalize_text, wer
from .rng import SeededRng
from .sampler import SamplerConfig, cfg_combine, euler_solve, vector_field
from .toyspeech import (
    Codebook,
    DatasetConfig,
    ToyUtterance,
    encode,
    gen_dataset,
    make_codebook,
    oracle_decode,
    silence_latent,
)
from .training import run_eval, run_train
from .vectorfield import AdamState, ModelConfig, VectorFieldParams, adam_step, forward, init_params

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AugmentConfig",
    "AugmentMode",
    "AugmentOutcome",
    "BatchTooSmallError",
    "Checkpoint",
    "Codebook",
    "CodebookCodec",
    "ConfigError",
    "ContraflowError",
    "DatasetConfig",
    "DivergenceError",
    "ErrorRateReport",
    "FileFormatError",
    "FlowSample",
    "FlowSynthesizer",
    "LatentCorruptor",
    "LatentSequence",
    "LossBreakdown",
    "LossWeights",
    "ModelConfig",
    "RunConfig",
    "SamplerConfig",
    "SeededRng",
    "ShapeError",
    "ToyUtterance",
    "VectorFieldParams",
    "adam_step",
    "augment",
    "cer",
    "cfg_combine",
    "edit_distance",
    "encode",
    "euler_solve",
    "evaluate_checkpoint",
    "forward",
    "frames_for_seconds",
    "gen_dataset",
    "init_params",
    "load_checkpoint",
    "make_codebook",
    "normalize_text",
    "oracle_decode",
    "parse_config",
    "parse_config_text",
    "read_ltnt",
    "roll_batch",
    "run_eval",
    "run_gradcheck",
    "run_train",
    "sample_path",
    "save_checkpoint",
    "silence_latent",
    "training_step",
    "vector_field",
    "velocity",
    "wer",
    "write_ltnt",
]
