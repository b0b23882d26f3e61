"""Membership inference against data curation pipelines, and DP mitigations."""

__version__ = "0.1.0"

from .curation import Method, curate, image_scores, top_k_select, trak_features, trak_scores
from .datamodel import (EmbeddingMatrix, FormatError, GradientMatrix, NotFoundError, NumericError,
                        ParameterError, TargetSet, load_matrix, save_matrix)
from .evaluation import auc, onion_experiment, roc_curve, sweep, tpr_at_fpr
from .score_attacks import AttackScores
