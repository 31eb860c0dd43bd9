"""Semi-supervised online surgical-phase recognition at desk scale."""

from .config import ModelConfig, RunConfig, TrainConfig
from .estimator import PhaseRecognizer
from .evaluation import MetricsReport, PredictionTrack, compute_metrics, online_predict
from .model import PhaseModel, build_model
from .prototypes import PrototypeBank
from .synthdata import LabeledVideo, WorkflowModel, generate_video, make_benchmark
from .trainer import DatasetBundle, Trainer

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle",
    "LabeledVideo",
    "MetricsReport",
    "ModelConfig",
    "PhaseModel",
    "PhaseRecognizer",
    "PredictionTrack",
    "PrototypeBank",
    "RunConfig",
    "TrainConfig",
    "Trainer",
    "WorkflowModel",
    "build_model",
    "compute_metrics",
    "generate_video",
    "make_benchmark",
    "online_predict",
    "__version__",
]
