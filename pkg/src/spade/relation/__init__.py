from .graph import AdjacencyGraph, build_graph, spatial_adjacency
from .pairs import PairSelection, pair_indicator, rqc_loss, select_pairs, similarity_matrix
from .rgt import RgtBlock, RgtConfig, RgtStack, branch_masks, member_mean, normalized_adjacency, rgt_forward

__all__ = [
    "AdjacencyGraph",
    "PairSelection",
    "RgtBlock",
    "RgtConfig",
    "RgtStack",
    "branch_masks",
    "build_graph",
    "member_mean",
    "normalized_adjacency",
    "pair_indicator",
    "rgt_forward",
    "rqc_loss",
    "select_pairs",
    "similarity_matrix",
    "spatial_adjacency",
]
