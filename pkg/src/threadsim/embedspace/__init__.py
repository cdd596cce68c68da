"""Embedding-space analysis: user centroids, similarity baselines, distances and 2-D projection."""

from .projection import Projection2D, TSNEParams, pca_reduce, project, tsne
from .similarity import (
    GROUPS,
    ExceedanceResult,
    UserCentroid,
    cosine_distance,
    cosine_similarity,
    group_distance_matrix,
    intra_group_similarity,
    similarity_exceedance,
    user_centroids,
)

__all__ = [
    "GROUPS",
    "ExceedanceResult",
    "Projection2D",
    "TSNEParams",
    "UserCentroid",
    "cosine_distance",
    "cosine_similarity",
    "group_distance_matrix",
    "intra_group_similarity",
    "pca_reduce",
    "project",
    "similarity_exceedance",
    "tsne",
    "user_centroids",
]
