"""Semi-supervised black-hole anomaly detection for network telemetry.

A two-phase adversarial pipeline: a Wasserstein-trained generator and critic
learn normal traffic windows, then an encoder learns the inverse mapping
against the frozen pair.  Windows are scored by reconstruction plus critic
feature residual, thresholded on held-out normal scores.
"""

from .rng import Rng
from .tensor import Tensor, backward, no_grad, set_debug_checks
from .params import ParameterSet
from .optim import Optimizer, clip_weights
from .models import ArchFamily, ModelSpec, build_model
from .training import TrainConfig, train_adversarial, train_encoder
from .detector import DetectorConfig, TrainedDetector, train_detector
from .data import SynthConfig, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "Rng",
    "Tensor",
    "backward",
    "no_grad",
    "set_debug_checks",
    "ParameterSet",
    "Optimizer",
    "clip_weights",
    "ArchFamily",
    "ModelSpec",
    "build_model",
    "TrainConfig",
    "train_adversarial",
    "train_encoder",
    "DetectorConfig",
    "TrainedDetector",
    "train_detector",
    "SynthConfig",
    "generate_synthetic",
    "__version__",
]
