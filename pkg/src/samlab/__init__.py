"""Sharpness-aware minimization, adversarial training and the robust-feature-weight theory, from scratch."""

from .attacks import AttackBudget, AttackResult, fgsm, pgd, project, robust_accuracy
from .data import Dataset, load_delimited, sample_feature_model, sample_mixture2d
from .models import LinearModel, MlpModel, loss
from .optim import AdamConfig, SamConfig, SgdConfig, adam_step, sam_step, sgd_step
from .tensor import Tape, Tensor, backward
from .theory import FeatureModelSpec, TheoryReport

__version__ = "0.1.0"
