"""Link-prediction and node-classification harnesses.

``make_split`` hides a fraction of edges for link prediction while keeping
the residual graph connected: a uniformly random spanning tree (randomized
Kruskal over a shuffled edge order) is protected, the requested number of
edges is drawn from the unprotected remainder, and an equal number of
non-edges is rejection-sampled against the original edge set.

``knn_classify`` reproduces the embedding-quality protocol: Euclidean
k-nearest-neighbour voting over repeated random train/test splits of the
nodes, reporting mean micro-/macro-F1.  Multi-label nodes receive the r most
frequent neighbour labels, where r is the node's true label count.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import rankdata
from sklearn.metrics import average_precision_score, f1_score

from .graph import BIPARTITE, UNDIRECTED, Graph, GraphError, is_connected, replace_edges
from .model import EmbeddingState, floored_norm


@dataclass
class EvalSplit:
    """Hidden-edge evaluation split.

    ``test_edges`` and ``test_nonedges`` are equal-length (m, 2) arrays of
    internal node ids (side-local for bipartite).  ``train_graph`` spans all
    nodes of the original graph and stays connected.
    """

    train_graph: Graph
    test_edges: np.ndarray
    test_nonedges: np.ndarray
    hide_fraction: float

    def meta(self) -> dict:
        return {
            "hide_fraction": self.hide_fraction,
            "n_test_edges": int(len(self.test_edges)),
            "n_train_edges": int(self.train_graph.num_edges),
        }


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def make_split(g: Graph, hide_fraction: float, seed: int = 0) -> EvalSplit:
    """Hide ``floor(hide_fraction * |E|)`` edges, keeping the residual
    connected via a randomized-Kruskal spanning structure; sample as many
    non-edges (uniform, rejected against the original edges)."""
    if not 0.0 < hide_fraction < 1.0:
        raise GraphError("hide_fraction must lie strictly between 0 and 1")
    if not is_connected(g):
        raise GraphError(
            "graph is disconnected; evaluate on the giant component "
            "(load_edge_list(..., giant_only=True))")
    rng = np.random.default_rng(seed)
    n_all = g.num_nodes
    offset = g.n1 if g.mode == BIPARTITE else 0
    e1 = g.edges[:, 0]
    e2 = g.edges[:, 1] + offset

    order = rng.permutation(g.num_edges)
    uf = _UnionFind(n_all)
    protected = np.zeros(g.num_edges, dtype=bool)
    for idx in order:
        if uf.union(int(e1[idx]), int(e2[idx])):
            protected[idx] = True

    removable = np.flatnonzero(~protected)
    n_hide = int(hide_fraction * g.num_edges)
    if n_hide > removable.size:
        warnings.warn(
            f"only {removable.size} removable edge(s) outside the spanning "
            f"structure; hiding those instead of {n_hide}", stacklevel=2)
        n_hide = removable.size
    hidden = rng.choice(removable, size=n_hide, replace=False) if n_hide else \
        np.empty(0, dtype=np.int64)
    keep_mask = np.ones(g.num_edges, dtype=bool)
    keep_mask[hidden] = False
    train_graph = replace_edges(g, g.edges[keep_mask])
    if not is_connected(train_graph):  # guaranteed by construction; keep honest
        raise AssertionError("residual graph lost connectivity")

    test_edges = g.edges[~keep_mask].copy()
    test_nonedges = _sample_nonedges(g, n_hide, rng)
    return EvalSplit(train_graph=train_graph, test_edges=test_edges,
                     test_nonedges=test_nonedges, hide_fraction=hide_fraction)


def _sample_nonedges(g: Graph, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform dyads that are not edges of g (and not self-dyads), without
    duplicates.  Rejection sampling in batches."""
    if g.mode == BIPARTITE:
        possible = g.n1 * g.n2
    elif g.mode == UNDIRECTED:
        possible = g.n1 * (g.n1 - 1) // 2
    else:
        possible = g.n1 * (g.n1 - 1)
    if count > possible - g.num_edges:
        raise GraphError(
            f"cannot sample {count} non-edges; only {possible - g.num_edges} exist")
    existing = set(g.edge_set)
    picked: set[tuple[int, int]] = set()
    out = np.empty((count, 2), dtype=np.int64)
    filled = 0
    lim2 = g.n2 if g.mode == BIPARTITE else g.n1
    while filled < count:
        batch = max(256, 2 * (count - filled))
        a = rng.integers(0, g.n1, size=batch)
        b = rng.integers(0, lim2, size=batch)
        for i, j in zip(a.tolist(), b.tolist()):
            if g.mode != BIPARTITE:
                if i == j:
                    continue
                if g.mode == UNDIRECTED and i > j:
                    i, j = j, i
            key = (i, j)
            if key in existing or key in picked:
                continue
            picked.add(key)
            out[filled] = key
            filled += 1
            if filled == count:
                break
    return out


def score_pairs(state: EmbeddingState, pairs: np.ndarray) -> np.ndarray:
    """Log-rate score per dyad; higher means a link is more likely."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    coords, biases = state.stacked()
    i = pairs[:, 0]
    j = pairs[:, 1] + (state.n1 if state.mode != UNDIRECTED else 0)
    if i.size and (i.min() < 0 or i.max() >= state.n1):
        raise GraphError("pair endpoint out of range (first mode)")
    if j.size and (j.max() >= len(biases) or pairs[:, 1].min() < 0):
        raise GraphError("pair endpoint out of range (second mode)")
    d = floored_norm(coords[i] - coords[j])
    return biases[i] + biases[j] - d


def auc_roc(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Probability that a random positive outranks a random negative
    (ties count one half); the rank-statistic form of ROC-AUC."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def auc_pr(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Area under the precision-recall curve (average precision)."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative score")
    y = np.concatenate([np.ones(pos.size, dtype=int), np.zeros(neg.size, dtype=int)])
    return float(average_precision_score(y, np.concatenate([pos, neg])))


@dataclass
class KnnResult:
    micro_f1: float
    macro_f1: float
    per_trial: list[dict]


def _normalize_labels(labels) -> tuple[list[tuple[int, ...]], list, bool]:
    """Map arbitrary label values to dense ids.

    Accepts one label per node or an iterable of labels per node.  Returns
    (per-node id tuples, sorted label vocabulary, uni_label flag).
    """
    as_sets: list[tuple] = []
    for lab in labels:
        if isinstance(lab, (str, bytes)) or not hasattr(lab, "__iter__"):
            as_sets.append((lab,))
        else:
            items = tuple(lab)
            if not items:
                raise ValueError("every node needs at least one label")
            as_sets.append(items)
    vocab = sorted({l for labs in as_sets for l in labs}, key=lambda v: str(v))
    to_id = {v: i for i, v in enumerate(vocab)}
    ids = [tuple(sorted(to_id[l] for l in labs)) for labs in as_sets]
    uni = all(len(t) == 1 for t in ids)
    return ids, vocab, uni


def knn_classify(embeddings: np.ndarray, labels, train_frac: float = 0.5,
                 k: int = 10, trials: int = 10, seed: int = 0) -> KnnResult:
    """Euclidean kNN vote over repeated random node splits.

    Uni-label nodes take the majority neighbour label (ties resolved toward
    the smallest label id); multi-label nodes take the r most frequent
    neighbour labels with r = their true label count.  Scores are averaged
    over ``trials`` splits, each split drawn from (seed, trial).
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    ids, vocab, uni = _normalize_labels(labels)
    if len(ids) != emb.shape[0]:
        raise ValueError("one label (set) per embedded node required")
    n = emb.shape[0]
    n_train = int(round(train_frac * n))
    if k > n_train:
        raise ValueError(f"k={k} exceeds the training set size {n_train}")
    n_labels = len(vocab)

    per_trial = []
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, trial]))
        perm = rng.permutation(n)
        train_idx, test_idx = perm[:n_train], perm[n_train:]
        tree = cKDTree(emb[train_idx])
        _, nn = tree.query(emb[test_idx], k=k)
        nn = nn.reshape(len(test_idx), k)

        # Vote counts per test node over the label vocabulary.
        votes = np.zeros((len(test_idx), n_labels), dtype=np.int64)
        train_ids = [ids[train_idx[col]] for col in range(n_train)]
        for row in range(len(test_idx)):
            for col in nn[row]:
                for lab in train_ids[col]:
                    votes[row, lab] += 1

        if uni:
            pred = np.argmax(votes, axis=1)  # argmax takes the smallest id on ties
            y_true = np.array([ids[t][0] for t in test_idx])
            micro = f1_score(y_true, pred, average="micro", zero_division=0)
            macro = f1_score(y_true, pred, average="macro",
                             labels=np.arange(n_labels), zero_division=0)
        else:
            y_true = np.zeros((len(test_idx), n_labels), dtype=int)
            y_pred = np.zeros_like(y_true)
            for row, t in enumerate(test_idx):
                true = ids[t]
                y_true[row, list(true)] = 1
                r = len(true)
                # r most frequent, ties toward smaller ids: argsort is stable,
                # so sorting by negated counts keeps id order within ties.
                top = np.argsort(-votes[row], kind="stable")[:r]
                y_pred[row, top] = 1
            micro = f1_score(y_true, y_pred, average="micro", zero_division=0)
            macro = f1_score(y_true, y_pred, average="macro", zero_division=0)
        per_trial.append({"trial": trial, "micro_f1": float(micro),
                          "macro_f1": float(macro)})

    return KnnResult(
        micro_f1=float(np.mean([t["micro_f1"] for t in per_trial])),
        macro_f1=float(np.mean([t["macro_f1"] for t in per_trial])),
        per_trial=per_trial,
    )
