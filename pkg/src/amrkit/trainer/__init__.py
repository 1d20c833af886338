"""Splitting, AdamW training, evaluation and the ablation protocol."""

from ..errors import TrainingDivergedError
from .augment import sign_flip
from .ablation import VARIANTS, AblationReport, AblationRun, run_ablation
from .config import TrainConfig
from .loop import TrainResult, cross_entropy, embeddings, evaluate, predict_logits, train
from .metrics import MetricsReport, confusion_matrix
from .optim import AdamW, decays
from .split import Split, split_dataset

__all__ = [name for name in dir() if not name.startswith("_")]
