"""Euclidean-norm k-means and the divisive cluster hierarchy.

The clustering objective is the sum of unsquared Euclidean distances

    J(r, mu) = sum_i ||z_i - mu_{r_i}||

which matches the exponent geometry of the distance model (minimizing J keeps
cluster members close in exactly the metric the rates decay in).  J is
minimized through the auxiliary upper bound

    J+(phi, r, mu) = sum_i ( ||z_i - mu_{r_i}||^2 / (2 phi_i) + phi_i / 2 )

which is tight at phi_i = ||z_i - mu_{r_i}|| and turns the centroid step into
a weighted least-squares problem: mu_k = sum(z_i / phi_i) / sum(1 / phi_i)
over the members of cluster k.  Iterating (assign to nearest centroid,
tighten phi, re-weight centroid) never increases J.

``build_tree`` applies this top-down: a first split into K1 ~ log(n)
clusters, then repeated binary splits until every cluster is small enough to
treat its internal dyads exactly.  Each node freezes the final normalized
1/phi weights so that its centroid is an explicitly linear function of the
coordinates (centroid = weights @ points), which is what lets gradients flow
through centroids later.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

EPS_PHI = 1e-10


class KmeansError(ValueError):
    """Raised for unusable k-means arguments (e.g. more clusters than points)."""


class TreeError(ValueError):
    """Raised for invalid hierarchy arguments."""


@dataclass
class KmeansState:
    """Result of one Euclidean-norm k-means run.

    ``phi`` holds each point's distance to its own centroid (floored at
    EPS_PHI), ``objective`` is the final J and ``history`` records J after
    every full update cycle (non-increasing by construction).
    """

    assignments: np.ndarray
    centroids: np.ndarray
    phi: np.ndarray
    objective: float
    n_iters: int
    history: list[float] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]


def _pairwise_sq(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, (n, K), clipped at zero."""
    sq = (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(sq, 0.0)


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++-style seeding with unsquared-distance weights.

    The first centroid is a uniform random point; each further centroid is a
    point drawn with probability proportional to its distance (not squared
    distance, matching the objective) to the nearest centroid chosen so far.
    If every remaining point coincides with a chosen centroid, the remaining
    slots are filled deterministically from the unchosen indices.
    """
    n = points.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    mind = np.sqrt(_pairwise_sq(points, points[chosen[:1]])[:, 0])
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    for c in range(1, k):
        total = mind.sum()
        if total <= 0.0:
            idx = int(np.flatnonzero(~taken)[0])
        else:
            idx = int(rng.choice(n, p=mind / total))
        chosen[c] = idx
        taken[idx] = True
        d_new = np.sqrt(_pairwise_sq(points, points[idx:idx + 1])[:, 0])
        np.minimum(mind, d_new, out=mind)
    return points[chosen].copy()


def _repair_empty(assign: np.ndarray, dists: np.ndarray, k: int) -> None:
    """Move the farthest-from-centroid point of some multi-member cluster
    into each empty cluster.  Modifies ``assign`` in place."""
    sizes = np.bincount(assign, minlength=k)
    for empty in np.flatnonzero(sizes == 0):
        donors = sizes[assign] >= 2
        cand = np.flatnonzero(donors)
        if cand.size == 0:  # cannot happen while n >= k, kept as a guard
            raise KmeansError("no donor available for empty-cluster repair")
        mover = cand[int(np.argmax(dists[cand]))]
        sizes[assign[mover]] -= 1
        assign[mover] = empty
        sizes[empty] += 1
        dists[mover] = 0.0


def euclidean_kmeans(points: np.ndarray, k: int,
                     rng: np.random.Generator | int | None = None,
                     max_iters: int = 15) -> KmeansState:
    """Cluster points by minimizing the sum of unsquared Euclidean distances.

    Runs at most ``max_iters`` full cycles of (assignment, phi tightening,
    weighted-centroid update); stops early once the assignments stop changing
    and the centroids have effectively converged (max shift below 1e-12, so
    that single-cluster runs still iterate the weighted-mean update all the
    way to the geometric median instead of stopping after one pass).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise KmeansError("points must be a 2-D array")
    n = points.shape[0]
    if k < 1:
        raise KmeansError("need at least one cluster")
    if n < k:
        raise KmeansError(f"cannot split {n} points into {k} clusters")
    rng = np.random.default_rng(rng)

    centroids = _seed_centroids(points, k, rng)
    assign = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        sq = _pairwise_sq(points, centroids)
        new_assign = np.argmin(sq, axis=1)
        dists = np.sqrt(sq[np.arange(n), new_assign])
        _repair_empty(new_assign, dists, k)
        changed = not np.array_equal(new_assign, assign)
        assign = new_assign

        # Tighten the auxiliary bound at the current configuration, then
        # solve the weighted least-squares centroid step exactly.
        phi = np.sqrt(np.sum((points - centroids[assign]) ** 2, axis=1))
        np.maximum(phi, EPS_PHI, out=phi)
        w = 1.0 / phi
        denom = np.bincount(assign, weights=w, minlength=k)
        new_centroids = np.empty_like(centroids)
        for d in range(points.shape[1]):
            new_centroids[:, d] = (
                np.bincount(assign, weights=w * points[:, d], minlength=k) / denom
            )
        shift = float(np.max(np.abs(new_centroids - centroids)))
        centroids = new_centroids
        history.append(float(
            np.sum(np.sqrt(np.sum((points - centroids[assign]) ** 2, axis=1)))
        ))
        if not changed and shift < 1e-12:
            break

    phi = np.sqrt(np.sum((points - centroids[assign]) ** 2, axis=1))
    np.maximum(phi, EPS_PHI, out=phi)
    return KmeansState(assignments=assign, centroids=centroids, phi=phi,
                       objective=history[-1], n_iters=it, history=history)


def aux_identity_check(points: np.ndarray, state: KmeansState) -> tuple[float, float]:
    """Evaluate (J, J+) at the state's configuration with phi set exactly to
    the member-to-centroid distances.  At that phi the bound is tight, so the
    two values agree up to floating-point noise (coincident points contribute
    zero to both, taking the 0/0 limit as 0)."""
    d = np.sqrt(np.sum((points - state.centroids[state.assignments]) ** 2, axis=1))
    j = float(np.sum(d))
    pos = d > 0.0
    j_plus = float(np.sum(d[pos] ** 2 / (2.0 * d[pos]) + d[pos] / 2.0))
    return j, j_plus


# ---------------------------------------------------------------------------
# Divisive hierarchy
# ---------------------------------------------------------------------------

@dataclass
class TreeNode:
    """One cluster in the hierarchy.

    ``weights`` are the frozen normalized inverse-phi weights of the members,
    so ``centroid == weights @ points[members]`` at build time and the same
    contraction re-derives the centroid from any later coordinates.
    """

    id: int
    level: int
    parent: int
    members: np.ndarray
    weights: np.ndarray
    centroid: np.ndarray
    is_leaf: bool
    children: tuple[int, int] | None = None


@dataclass
class ClusterTree:
    """Divisive hierarchy over one point set.

    ``levels[l-1]`` lists the node ids forming the partition at level l
    (leaves pass through unchanged to deeper levels).  ``sibling_pairs[l-1]``
    lists the cluster pairs whose between-block rate mass is approximated at
    level l: all pairs of the K1 top clusters at level 1, and only the two
    children of each split parent at deeper levels — every unordered pair of
    points is thereby covered exactly once, either inside a leaf or at the
    single level where the hierarchy first separates it.
    """

    nodes: list[TreeNode]
    levels: list[list[int]]
    sibling_pairs: list[list[tuple[int, int]]]
    leaf_ids: list[int]
    n_points: int
    leaf_cap: float
    dim: int
    n1: int | None = None  # side-1 count for stacked two-sided point sets

    @property
    def height(self) -> int:
        return len(self.levels)

    @property
    def num_leaves(self) -> int:
        return len(self.leaf_ids)

    def node_centroid(self, node_id: int, coords: np.ndarray) -> np.ndarray:
        node = self.nodes[node_id]
        return node.weights @ coords[node.members]

    def validate(self) -> None:
        """Assert the structural invariants (partitions, binary refinement)."""
        for lvl, ids in enumerate(self.levels, start=1):
            stacked = np.concatenate([self.nodes[i].members for i in ids])
            if not np.array_equal(np.sort(stacked), np.arange(self.n_points)):
                raise TreeError(f"level {lvl} is not a partition")
        for node in self.nodes:
            if node.children is not None:
                a, b = (self.nodes[c] for c in node.children)
                merged = np.sort(np.concatenate([a.members, b.members]))
                if not np.array_equal(merged, np.sort(node.members)):
                    raise TreeError(f"children of node {node.id} do not partition it")
            if node.is_leaf == (node.children is not None):
                raise TreeError(f"node {node.id} leaf flag inconsistent")
            if abs(float(node.weights.sum()) - 1.0) > 1e-9:
                raise TreeError(f"node {node.id} weights do not sum to 1")

    def to_json(self, path=None) -> str:
        """Serialize the hierarchy; members are spelled out only for leaves."""
        payload = {
            "n_points": self.n_points,
            "dim": self.dim,
            "leaf_cap": self.leaf_cap,
            "n1": self.n1,
            "levels": [list(ids) for ids in self.levels],
            "sibling_pairs": [[list(p) for p in lvl] for lvl in self.sibling_pairs],
            "nodes": [
                {
                    "id": n.id,
                    "level": n.level,
                    "parent": n.parent,
                    "member_count": int(len(n.members)),
                    "centroid": [float(x) for x in n.centroid],
                    "is_leaf": n.is_leaf,
                    **({"members": [int(m) for m in n.members]} if n.is_leaf else {}),
                }
                for n in self.nodes
            ],
        }
        text = json.dumps(payload, indent=1, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, path) -> "ClusterTree":
        """Rebuild a tree view from ``to_json`` output.

        Internal-node member lists are reassembled from the leaves, and the
        frozen weights are not stored, so the result supports layout and
        plotting (memberships, centroids, orders) but not gradient work.
        """
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        raw = sorted(payload["nodes"], key=lambda d: d["id"])
        nodes: list[TreeNode] = []
        for d in raw:
            members = np.array(d.get("members", []), dtype=np.int64)
            nodes.append(TreeNode(
                id=d["id"], level=d["level"], parent=d["parent"],
                members=members, weights=np.array([]),
                centroid=np.array(d["centroid"], dtype=np.float64),
                is_leaf=d["is_leaf"],
            ))
        for node in nodes:
            kids = [n.id for n in nodes if n.parent == node.id]
            if kids:
                node.children = (kids[0], kids[1])

        def collect(node: TreeNode) -> np.ndarray:
            if node.is_leaf:
                return node.members
            parts = [collect(nodes[c]) for c in node.children]
            node.members = np.sort(np.concatenate(parts))
            return node.members

        for node in nodes:
            if node.parent == -1:
                collect(node)
        return cls(
            nodes=nodes,
            levels=[list(ids) for ids in payload["levels"]],
            sibling_pairs=[[tuple(p) for p in lvl] for lvl in payload["sibling_pairs"]],
            leaf_ids=[n.id for n in nodes if n.is_leaf],
            n_points=payload["n_points"],
            leaf_cap=payload["leaf_cap"],
            dim=payload["dim"],
            n1=payload["n1"],
        )


@dataclass
class TreeConfig:
    """Knobs for build_tree; defaults follow the scaling recipe."""

    kmeans_iters: int = 15
    max_depth: int = 64
    leaf_cap: int | None = None  # unipartite override; default max(2, round(ln n))

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise TreeError("max_depth must be positive")


def _frozen_node_stats(points: np.ndarray, members: np.ndarray,
                       centroid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weiszfeld weights at the given centroid, plus one refinement step.

    Freezing w_i = (1/phi_i) / sum(1/phi) and setting mu = w @ points makes
    the centroid exactly linear in the coordinates, so later gradient passes
    can route through it with constant Jacobian rows w_i.
    """
    phi = np.sqrt(np.sum((points[members] - centroid) ** 2, axis=1))
    np.maximum(phi, EPS_PHI, out=phi)
    w = 1.0 / phi
    w /= w.sum()
    return w, w @ points[members]


def _is_leaf(members: np.ndarray, n1: int | None, cap: float,
             t1: float, t2: float) -> bool:
    if len(members) < 2:
        return True
    if n1 is None:
        return len(members) <= cap
    c1 = int(np.count_nonzero(members < n1))
    c2 = len(members) - c1
    return c1 < t1 or c2 < t2


def build_tree(points: np.ndarray, seed: int = 0,
               config: TreeConfig | None = None,
               n1: int | None = None) -> ClusterTree:
    """Divisive hierarchy: one K1-way split, then binary splits to leaves.

    K1 = max(2, round(ln n)).  A unipartite cluster is a leaf when it has at
    most max(2, round(ln n)) members; for a stacked two-sided point set
    (``n1`` = size of the first side) a cluster is a leaf when it contains
    fewer than ln(n1) side-1 points or fewer than ln(n2) side-2 points.
    Every split reruns Euclidean-norm k-means on the member coordinates with
    a seed derived from (seed, path), so rebuilds are deterministic and
    independent of evaluation order.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise TreeError("points must be a 2-D array")
    n = points.shape[0]
    if n < 1:
        raise TreeError("need at least one point")
    config = config or TreeConfig()
    if n1 is not None and not 0 < n1 < n:
        raise TreeError("n1 must split the stacked point set in two")

    cap = config.leaf_cap if config.leaf_cap is not None else max(2, round(math.log(n)))
    if n1 is None:
        t1 = t2 = 0.0
    else:
        t1, t2 = math.log(n1), math.log(n - n1)

    nodes: list[TreeNode] = []

    def new_node(level, parent, members, centroid) -> TreeNode:
        w, mu = _frozen_node_stats(points, members, centroid)
        node = TreeNode(id=len(nodes), level=level, parent=parent,
                        members=members, weights=w, centroid=mu,
                        is_leaf=_is_leaf(members, n1, cap, t1, t2))
        nodes.append(node)
        return node

    # Level 1: K1-way split, unless the whole set is already leaf-sized.
    if _is_leaf(np.arange(n), n1, cap, t1, t2):
        tree = single_leaf_tree(points, n1=n1)
        tree.leaf_cap = cap
        return tree
    k1 = min(n, max(2, round(math.log(n))))

    km = euclidean_kmeans(points, k1, _subtree_rng(seed, ()), config.kmeans_iters)
    level_ids: list[int] = []
    for c in range(k1):
        members = np.flatnonzero(km.assignments == c).astype(np.int64)
        node = new_node(1, -1, members, km.centroids[c])
        level_ids.append(node.id)
    levels = [level_ids]
    sibling_pairs = [[(a, b) for ai, a in enumerate(level_ids)
                      for b in level_ids[ai + 1:]]]
    paths = {nid: (c,) for c, nid in enumerate(level_ids)}

    # Deeper levels: split every non-leaf in two until only leaves remain.
    level = 1
    while any(not nodes[i].is_leaf for i in levels[-1]):
        level += 1
        if level > config.max_depth:
            stuck = [i for i in levels[-1] if not nodes[i].is_leaf]
            warnings.warn(
                f"max_depth={config.max_depth} reached; forcing {len(stuck)} "
                f"oversized cluster(s) to leaves", stacklevel=2)
            for i in stuck:
                nodes[i].is_leaf = True
            break
        next_ids: list[int] = []
        pairs: list[tuple[int, int]] = []
        for nid in levels[-1]:
            node = nodes[nid]
            if node.is_leaf:
                next_ids.append(nid)
                continue
            sub = points[node.members]
            km = euclidean_kmeans(sub, 2, _subtree_rng(seed, paths[nid]),
                                  max_iters=config.kmeans_iters)
            kids = []
            for c in range(2):
                members = node.members[km.assignments == c]
                child = new_node(level, nid, members, km.centroids[c])
                paths[child.id] = paths[nid] + (c,)
                kids.append(child.id)
                next_ids.append(child.id)
            node.children = (kids[0], kids[1])
            pairs.append((kids[0], kids[1]))
        levels.append(next_ids)
        sibling_pairs.append(pairs)

    return ClusterTree(nodes=nodes, levels=levels, sibling_pairs=sibling_pairs,
                       leaf_ids=[i for i in levels[-1]], n_points=n,
                       leaf_cap=cap, dim=points.shape[1], n1=n1)


def _subtree_rng(seed: int, path: tuple[int, ...]) -> np.random.Generator:
    """Deterministic per-subtree stream, independent of build order."""
    return np.random.default_rng(np.random.SeedSequence([seed, *[p + 1 for p in path]]))


def flat_tree(points: np.ndarray, assignments: np.ndarray,
              n1: int | None = None) -> ClusterTree:
    """Single-level tree from explicit cluster assignments (all clusters are
    leaves, every cluster pair is a level-1 sibling pair).  Used for tests
    and for reducing the hierarchy to the flat block approximation."""
    points = np.asarray(points, dtype=np.float64)
    assignments = np.asarray(assignments, dtype=np.int64)
    if len(assignments) != len(points):
        raise TreeError("one assignment per point required")
    ids = np.unique(assignments)
    nodes = []
    for c in ids:
        members = np.flatnonzero(assignments == c).astype(np.int64)
        centroid = points[members].mean(axis=0)
        w, mu = _frozen_node_stats(points, members, centroid)
        nodes.append(TreeNode(id=len(nodes), level=1, parent=-1, members=members,
                              weights=w, centroid=mu, is_leaf=True))
    level = [n.id for n in nodes]
    pairs = [(a, b) for i, a in enumerate(level) for b in level[i + 1:]]
    return ClusterTree(nodes=nodes, levels=[level], sibling_pairs=[pairs],
                       leaf_ids=level, n_points=len(points), leaf_cap=len(points),
                       dim=points.shape[1], n1=n1)


def single_leaf_tree(points: np.ndarray, n1: int | None = None) -> ClusterTree:
    """Trivial tree: one leaf holding every point (no block approximation)."""
    return flat_tree(points, np.zeros(len(points), dtype=np.int64), n1=n1)
