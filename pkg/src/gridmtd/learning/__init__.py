"""Unsupervised tools used by the blind attacker: t-SNE, DBSCAN and FastICA."""

from .dbscan import NOISE, ClusterLabeling, dbscan, estimate_eps, kth_neighbor_distances
from .fastica import (
    IcaConvergenceWarning,
    MixingMatrix,
    WhiteningError,
    fastica,
    whiten,
)
from .tsne import (
    Embedding,
    TsneParams,
    joint_probabilities,
    sparse_joint_probabilities,
    tsne_embed,
)

__all__ = [
    "NOISE",
    "ClusterLabeling",
    "Embedding",
    "IcaConvergenceWarning",
    "MixingMatrix",
    "TsneParams",
    "WhiteningError",
    "dbscan",
    "estimate_eps",
    "fastica",
    "joint_probabilities",
    "kth_neighbor_distances",
    "sparse_joint_probabilities",
    "tsne_embed",
    "whiten",
]
