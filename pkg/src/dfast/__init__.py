"""Multimodal F.A.S.T. stroke screening on a numpy autodiff core.

Face landmarks, speech and pose landmarks are encoded separately, projected
to a shared 256-wide embedding, fused and classified with a single logit.
"""
from .errors import ContractError, DFastError, DimensionError, FormatError, NumericError, SchemaError
from .fusion import MODALITIES, STRATEGIES
from .kernels import use_backend
from .metrics import MetricReport, auc, summary
from .rng import make_rng
from .synthgen import GenParams, gen_dataset, generate_samples
from .training import (
    ModelConfig, StrokeModel, TrainConfig, evaluate, features_from_samples, load_features, load_model, predict,
    save_model, subject_split, train,
)

__version__ = "0.1.0"

__all__ = [
    "ContractError", "DFastError", "DimensionError", "FormatError", "NumericError", "SchemaError",
    "MODALITIES", "STRATEGIES", "use_backend", "MetricReport", "auc", "summary", "make_rng",
    "GenParams", "gen_dataset", "generate_samples", "ModelConfig", "StrokeModel", "TrainConfig", "evaluate",
    "features_from_samples", "load_features", "load_model", "predict", "save_model", "subject_split", "train",
    "__version__",
]
