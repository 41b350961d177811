"""MOS prediction toolkit: frame-level strong learners, classical weak learners
and a stacking ensemble, scored with utterance- and system-level metrics."""

from .dataset import MosDataset, load_dataset, load_splits, mean_listener_targets
from .metrics import MetricReport, all_metrics, evaluate, ktau, lcc, metric_report, mse, srcc, system_aggregate
from .losses import LossConfig, clipped_mse, combined_loss, contrastive_batch
from .textproc import dbscan, extract_references, levenshtein, normalized_levenshtein
from .augment import AugmentConfig, augment, change_speed, shift_pitch

__version__ = "0.1.0"
