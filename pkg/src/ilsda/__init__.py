"""Invariant latent space domain adaptation.

Two orthonormal projections (one per domain) and a Mahalanobis metric are
learned jointly by Riemannian gradient descent on a product of Stiefel, SPD
and Euclidean manifolds. The loss combines a soft-margin pairwise metric
learning term with a log-determinant divergence between the projected
domain covariances.
"""

from .experiment import run_experiment
from .io import export_model, import_model, load_features, save_features
from .manifolds import ProductPoint, TangentBundle
from .objective import ILSProblem, LossBreakdown, PairSet, euclidean_gradients, total_loss
from .optim import OptimizerConfig, optimize
from .pipeline import FeatureSet, FittedModel, TrainConfig, embed, fit, knn_classify
from .synthetic import rotated_gaussians

__version__ = "0.1.0"

__all__ = [
    "FeatureSet",
    "FittedModel",
    "ILSProblem",
    "LossBreakdown",
    "OptimizerConfig",
    "PairSet",
    "ProductPoint",
    "TangentBundle",
    "TrainConfig",
    "embed",
    "euclidean_gradients",
    "export_model",
    "fit",
    "import_model",
    "knn_classify",
    "load_features",
    "optimize",
    "rotated_gaussians",
    "run_experiment",
    "save_features",
    "total_loss",
]
