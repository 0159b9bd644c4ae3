"""Hierarchical block distance model (HBDM) graph embeddings.

A Poisson latent-distance model whose non-link likelihood mass is organized
by a divisive cluster hierarchy: dyads sharing a leaf cluster are treated
exactly, all other dyads are approximated once, at the level where their
clusters first separate, giving near-linearithmic per-iteration cost.
"""

__version__ = "0.1.0"

from .graph import Graph, GraphError, degree, giant_component, graph_stats, load_edge_list
from .hierarchy import (ClusterTree, KmeansState, TreeConfig, aux_identity_check,
                        build_tree, euclidean_kmeans)
from .model import (EmbeddingState, Gradient, ObjectiveReport, canonicalize,
                    full_ldm_gradient, full_ldm_nll, poisson_rate)
from .objective import (BlockPairCache, hbdm_gradient, hbdm_nll,
                        pair_coverage_counts, rotation_sensitivity)
from .train import TrainConfig, TrainingDiverged, fit, init_state
from .evaluate import EvalSplit, auc_pr, auc_roc, knn_classify, make_split, score_pairs
from .viz import Dendrogram, adjacency_image, build_dendrogram, embedding_scatter, log2_sed, order_nodes

__all__ = [
    "__version__",
    "Graph", "GraphError", "degree", "giant_component", "graph_stats",
    "load_edge_list",
    "ClusterTree", "KmeansState", "TreeConfig", "aux_identity_check",
    "build_tree", "euclidean_kmeans",
    "EmbeddingState", "Gradient", "ObjectiveReport", "canonicalize",
    "full_ldm_gradient", "full_ldm_nll", "poisson_rate",
    "BlockPairCache", "hbdm_gradient", "hbdm_nll", "pair_coverage_counts",
    "rotation_sensitivity",
    "TrainConfig", "TrainingDiverged", "fit", "init_state",
    "EvalSplit", "auc_pr", "auc_roc", "knn_classify", "make_split",
    "score_pairs",
    "Dendrogram", "adjacency_image", "build_dendrogram", "embedding_scatter",
    "log2_sed", "order_nodes",
]
