"""Graph loading and basic statistics.

Graphs are stored as a canonical integer edge array plus label maps that
remember the original node identifiers.  Three modes are supported:

* ``undirected`` -- a single node set, edges stored once as (i, j) with i < j.
* ``directed``   -- a single node set, edges stored as ordered (i, j) pairs.
* ``bipartite``  -- two disjoint node sets; an edge (i, j) connects node i of
  the first mode to node j of the second mode, ids are local to each side.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

UNDIRECTED = "undirected"
DIRECTED = "directed"
BIPARTITE = "bipartite"
MODES = (UNDIRECTED, DIRECTED, BIPARTITE)


class GraphError(ValueError):
    """Raised for structurally invalid graphs or unusable arguments."""


class ParseError(GraphError):
    """Raised when an edge-list file cannot be parsed."""


@dataclass(frozen=True)
class Graph:
    """Immutable edge-list graph.

    Attributes
    ----------
    mode : one of ``undirected``, ``directed``, ``bipartite``.
    n1 : number of nodes (first mode for bipartite graphs).
    n2 : number of second-mode nodes; 0 unless bipartite.
    edges : (E, 2) int64 array of internal ids, deduplicated and canonical
        (i < j for undirected; side-local ids for bipartite).
    labels1 : original identifiers, indexed by internal id.
    labels2 : original identifiers of the second mode (bipartite only).
    """

    mode: str
    n1: int
    n2: int
    edges: np.ndarray
    labels1: tuple[str, ...]
    labels2: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise GraphError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.edges.ndim != 2 or self.edges.shape[1] != 2:
            raise GraphError("edges must be an (E, 2) array")
        self.edges.setflags(write=False)

    # -- basic shape ---------------------------------------------------------

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def num_nodes(self) -> int:
        """Total node count (both modes for bipartite graphs)."""
        return self.n1 + self.n2

    @cached_property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        """Set of canonical edge tuples for O(1) membership tests."""
        return frozenset(map(tuple, self.edges.tolist()))

    def has_edge(self, i: int, j: int) -> bool:
        if self.mode == UNDIRECTED and i > j:
            i, j = j, i
        return (i, j) in self.edge_set

    def degrees(self, side: int = 1) -> np.ndarray:
        """Degree of every node on the given side (1 or 2).

        For unipartite graphs (undirected or directed) the side must be 1 and
        the degree counts all incident edges regardless of direction.
        """
        if side not in (1, 2):
            raise GraphError("side must be 1 or 2")
        if self.mode != BIPARTITE:
            if side != 1:
                raise GraphError(f"{self.mode} graphs only have side 1")
            deg = np.bincount(self.edges[:, 0], minlength=self.n1)
            deg += np.bincount(self.edges[:, 1], minlength=self.n1)
            return deg
        col = side - 1
        n = self.n1 if side == 1 else self.n2
        return np.bincount(self.edges[:, col], minlength=n)

    def label_of(self, i: int, side: int = 1) -> str:
        return self.labels1[i] if side == 1 else self.labels2[i]


def degree(g: Graph, node: int, side: int = 1) -> int:
    """Number of edges incident to ``node`` (on ``side`` for bipartite)."""
    n = g.n1 if (side == 1 or g.mode != BIPARTITE) else g.n2
    if not 0 <= node < n:
        raise GraphError(f"node {node} out of range for side {side} (size {n})")
    return int(g.degrees(side)[node])


def _canonical_edges(mode: str, raw: list[tuple[int, int]]) -> np.ndarray:
    """Deduplicate and sort internal edge pairs into canonical order."""
    if mode == UNDIRECTED:
        raw = [(i, j) if i < j else (j, i) for i, j in raw]
    uniq = sorted(set(raw))
    return np.array(uniq, dtype=np.int64).reshape(len(uniq), 2)


def from_label_pairs(pairs, mode: str = UNDIRECTED) -> Graph:
    """Build a Graph from an iterable of (label, label) pairs.

    Internal ids are assigned in first-seen order.  Self-loops are dropped
    (with a warning) for unipartite modes; in bipartite mode the two columns
    are independent namespaces so no pair is a self-loop.
    """
    if mode not in MODES:
        raise GraphError(f"unknown mode {mode!r}; expected one of {MODES}")
    ids1: dict[str, int] = {}
    ids2: dict[str, int] = {} if mode == BIPARTITE else ids1
    raw: list[tuple[int, int]] = []
    dropped = 0
    for a, b in pairs:
        a, b = str(a), str(b)
        i = ids1.setdefault(a, len(ids1))
        j = ids2.setdefault(b, len(ids2))
        if mode != BIPARTITE and i == j:
            dropped += 1
            continue
        raw.append((i, j))
    if dropped:
        warnings.warn(f"dropped {dropped} self-loop(s)", stacklevel=2)
    if not raw:
        raise GraphError("graph has no usable edges")
    edges = _canonical_edges(mode, raw)
    labels1 = tuple(ids1)
    labels2 = tuple(ids2) if mode == BIPARTITE else ()
    n1 = len(labels1)
    n2 = len(labels2)
    return Graph(mode=mode, n1=n1, n2=n2, edges=edges, labels1=labels1, labels2=labels2)


def replace_edges(g: Graph, edges: np.ndarray) -> Graph:
    """New Graph over the same node set/labels with a different edge array."""
    edges = _canonical_edges(g.mode, [tuple(e) for e in np.asarray(edges, dtype=np.int64)])
    if edges.size:
        hi1 = int(edges[:, 0].max())
        hi2 = int(edges[:, 1].max())
        lim2 = g.n2 if g.mode == BIPARTITE else g.n1
        if hi1 >= g.n1 or hi2 >= lim2:
            raise GraphError("edge endpoint out of range for this graph")
    return Graph(mode=g.mode, n1=g.n1, n2=g.n2, edges=edges,
                 labels1=g.labels1, labels2=g.labels2)


def load_edge_list(path, mode: str = UNDIRECTED, giant_only: bool = False) -> Graph:
    """Parse a whitespace-separated edge list file.

    Lines starting with ``#`` or ``%`` and blank lines are skipped.  Each
    remaining line must hold two node identifiers; a third column (weights in
    some published files) is ignored.  Duplicate edges are collapsed and, for
    undirected graphs, (a, b) and (b, a) are the same edge.  With
    ``giant_only=True`` only the largest connected component is kept.
    """
    pairs: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("%"):
                continue
            toks = line.split()
            if len(toks) not in (2, 3):
                raise ParseError(
                    f"{path}: line {lineno}: expected 2 node columns "
                    f"(optionally a third ignored column), got {len(toks)}"
                )
            pairs.append((toks[0], toks[1]))
    if not pairs:
        raise GraphError(f"{path}: no edges found")
    g = from_label_pairs(pairs, mode)
    if giant_only:
        g = giant_component(g)
    return g


def _union_adjacency(g: Graph):
    """Symmetric sparse adjacency over the stacked node set (n1 + n2)."""
    n = g.num_nodes
    i = g.edges[:, 0]
    j = g.edges[:, 1] + (g.n1 if g.mode == BIPARTITE else 0)
    data = np.ones(len(i), dtype=np.int8)
    a = coo_matrix((data, (i, j)), shape=(n, n))
    return a + a.T


def component_labels(g: Graph) -> np.ndarray:
    """Connected-component label per node over the stacked node set.

    Directed graphs use weak connectivity; bipartite side-2 nodes occupy
    positions n1..n1+n2-1.
    """
    _, labels = connected_components(_union_adjacency(g), directed=False)
    return labels


def is_connected(g: Graph) -> bool:
    return bool(component_labels(g).max(initial=0) == 0)


def giant_component(g: Graph) -> Graph:
    """Restrict to the largest connected component (ids are re-assigned)."""
    labels = component_labels(g)
    counts = np.bincount(labels)
    keep = int(np.argmax(counts))
    mask1 = labels[: g.n1] == keep
    offs = g.n1 if g.mode == BIPARTITE else 0
    if g.mode == BIPARTITE:
        mask2 = labels[g.n1:] == keep
    e1 = g.edges[:, 0]
    e2 = g.edges[:, 1]
    edge_mask = mask1[e1] & (mask2[e2] if g.mode == BIPARTITE else mask1[e2])
    new1 = np.cumsum(mask1) - 1
    labels1 = tuple(np.asarray(g.labels1)[mask1])
    if g.mode == BIPARTITE:
        new2 = np.cumsum(mask2) - 1
        labels2 = tuple(np.asarray(g.labels2)[mask2])
        edges = np.stack([new1[e1[edge_mask]], new2[e2[edge_mask]]], axis=1)
        return Graph(mode=g.mode, n1=int(mask1.sum()), n2=int(mask2.sum()),
                     edges=edges.astype(np.int64), labels1=labels1, labels2=labels2)
    edges = np.stack([new1[e1[edge_mask]], new1[e2[edge_mask]]], axis=1)
    return Graph(mode=g.mode, n1=int(mask1.sum()), n2=0,
                 edges=edges.astype(np.int64), labels1=labels1)


def graph_stats(g: Graph) -> dict:
    """Summary statistics: node/edge counts, density and the degree range."""
    if g.mode == BIPARTITE:
        possible = g.n1 * g.n2
        deg = np.concatenate([g.degrees(1), g.degrees(2)])
    elif g.mode == DIRECTED:
        possible = g.n1 * (g.n1 - 1)
        deg = g.degrees()
    else:
        possible = g.n1 * (g.n1 - 1) // 2
        deg = g.degrees()
    stats = {
        "mode": g.mode,
        "n_nodes": g.num_nodes,
        "n_edges": g.num_edges,
        "density": g.num_edges / possible if possible else math.nan,
        "degree_min": int(deg.min()),
        "degree_mean": float(deg.mean()),
        "degree_max": int(deg.max()),
    }
    if g.mode == BIPARTITE:
        stats["n_nodes_mode1"] = g.n1
        stats["n_nodes_mode2"] = g.n2
    return stats
