"""Temporal prompt learning for paired visual/language sequences, in numpy."""
from .checkpoint import load_checkpoint, save_checkpoint
from .dpg import DpgParams, WindowSpec, dpg_forward
from .errors import (DegenerateContextError, EmptyInputError, FormatError, MagicError,
                     NonFiniteLossError, ShapeError, TruncationError, TsadpError, VersionError)
from .gradients import backward, finite_diff_grad, gradcheck
from .model import TrainingBatch, TsadpModel, encode_language, encode_visual, forward_losses, \
    infer_prompts, init_model, predict_masked
from .objectives import LossConfig, masked_prediction_loss, temporal_contrastive_loss, total_loss
from .synthbench import BenchResult, SynthConfig, evaluate, generate_dataset, load_dataset, \
    save_dataset
from .trainer import MaskSpec, TrainConfig, sample_mask, train

__all__ = [
    "BenchResult", "DegenerateContextError", "DpgParams", "EmptyInputError", "FormatError",
    "LossConfig", "MagicError", "MaskSpec", "NonFiniteLossError", "ShapeError", "SynthConfig",
    "TrainConfig", "TrainingBatch", "TruncationError", "TsadpError", "TsadpModel",
    "VersionError", "WindowSpec", "backward", "dpg_forward", "encode_language", "encode_visual",
    "evaluate", "finite_diff_grad", "forward_losses", "generate_dataset", "gradcheck",
    "infer_prompts", "init_model", "load_checkpoint", "load_dataset", "masked_prediction_loss",
    "predict_masked", "sample_mask", "save_checkpoint", "save_dataset",
    "temporal_contrastive_loss", "total_loss", "train",
]
