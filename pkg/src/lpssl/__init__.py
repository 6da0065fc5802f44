"""Semi-supervised learning with a normalizing-flow prior over predictions.

The base network's predictions on labelled data train a spline flow; the
flow's negative log-density then regularizes predictions on unlabelled data.
"""

__version__ = "0.1.0"

from .base_model import BaseModel, MlpConfig
from .flow import FlowModel
from .relaxation import RelaxConfig
from .trainer import TrainConfig, Trainer, train, train_bundle

__all__ = ["BaseModel", "FlowModel", "MlpConfig", "RelaxConfig", "TrainConfig", "Trainer",
           "__version__", "train", "train_bundle"]
