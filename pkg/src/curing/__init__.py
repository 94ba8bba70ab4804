"""CUR-based compression of a toy Llama-shaped transformer, with healing by distillation."""

__version__ = "0.1.0"

from .calibration import CalibrationStats, angular_distance, calibrate, rank_layers, select_layers
from .cur import (
    BoundReport, CurFactors, ParamCount, compute_core, cur_decompose, error_bound_check, eta_limits,
    param_count, select_rank,
)
from .errors import CuringError
from .healing import HealConfig, HealTrace, frobenius_loss_and_grad, heal, kd_step, output_mse, perplexity
from .linalg import norm, pseudoinverse, svd
from .model import ModelConfig, ToyTransformer, forward
from .pipeline import CompressionPlan, compress_model, get_preset, size_report
from .selection import STRATEGIES, deim_indices, select_indices, wanda_importance
from .store import load_model, load_stats, save_model, save_stats

__all__ = [
    "__version__",
    "BoundReport", "CalibrationStats", "CompressionPlan", "CurFactors", "CuringError", "HealConfig",
    "HealTrace", "ModelConfig", "ParamCount", "STRATEGIES", "ToyTransformer",
    "angular_distance", "calibrate", "compress_model", "compute_core", "cur_decompose", "deim_indices",
    "error_bound_check", "eta_limits", "forward", "frobenius_loss_and_grad", "get_preset", "heal",
    "kd_step", "load_model", "load_stats", "norm", "output_mse", "param_count", "perplexity",
    "pseudoinverse", "rank_layers", "save_model", "save_stats", "select_indices", "select_layers",
    "select_rank", "size_report", "svd", "wanda_importance",
]
