"""Balanced information bottleneck losses for long-tailed classification."""
from .data import ClassFrequencyTable, Dataset, exponential_profile, load_csv, synthesize_gaussian
from .losses import (BibLossConfig, LossValueAndGrads, MbibConfig, RebalanceParams,
                     balanced_posterior, bib_loss, bsc_loss, ensemble_logits, mbib_loss, vsd_loss)
from .metrics import (group_accuracy, mean_positive_posterior, plugin_mutual_information,
                      representation_quality)
from .model import MultiTapNet, backward, forward, init, predict
from .training import CosineSchedule, StepSchedule, TrainConfig, lr_at, sgd_step, train

__version__ = "0.1.0"
