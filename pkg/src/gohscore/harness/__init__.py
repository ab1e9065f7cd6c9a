"""Experiment plumbing: phantom volumes, datasets, cross-validation, reports."""
from .experiment import (ExperimentConfig, assign_folds, cascade_predict, load_config, run_cv,
                         run_score_ablation)
from .phantoms import PhantomVolumeSpec, generate_phantom_volume
from .reports import rater_agreement

__all__ = ["ExperimentConfig", "PhantomVolumeSpec", "assign_folds", "cascade_predict",
           "generate_phantom_volume", "load_config", "rater_agreement", "run_cv",
           "run_score_ablation"]
