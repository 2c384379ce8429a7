"""Covariance pooling and SPD manifold networks in numpy."""
from .layers import (
    EigenPair,
    bimap_backward,
    bimap_forward,
    logeig_backward,
    logeig_forward,
    reeig_backward,
    reeig_forward,
    sym_eig,
    unvectorize_sym,
    vectorize_sym,
)
from .network import NetworkSpec, backward, build_preset, forward
from .optim import stiefel_step
from .pooling import compute_covariance, flatten_spatial, gaussian_embed, pool_spatial, pool_temporal, regularize
from .training import Sample, TrainConfig, TrainState, evaluate, train

__version__ = "0.1.0"
