"""Hierarchical block likelihood: NLL assembly and analytic gradient.

The exact Poisson NLL needs every dyad's rate.  With a cluster hierarchy the
dyad universe is split three ways:

* link term     -- every observed edge, always exact (log-rates are cheap);
* leaf term     -- all dyads whose endpoints share a leaf cluster, exact;
* block terms   -- every remaining dyad is approximated at the single level
  where the two endpoints' tree paths diverge: the rate mass between sibling
  clusters k, k' collapses to exp(-||mu_k - mu_k'||) * (sum_i e^{b_i}) *
  (sum_j e^{b_j}) over the two member sets.

Sibling pairs are all K1 top-cluster pairs at level 1 and the two children of
each split parent at deeper levels, so each dyad is covered exactly once
(verified by ``pair_coverage_counts``).  Bipartite/directed graphs stack both
coordinate sets; only cross-mode dyads carry rate, so block factors take the
side-1 sum from one cluster and the side-2 sum from the other, in both
orientations.

Centroids enter either as frozen build-time constants (``centroid_mode=
"fixed"``) or re-derived from the current coordinates through the frozen
Weiszfeld weights (``"flow"``, the default), which keeps them exactly linear
in the coordinates so the gradient routes through them with Jacobian w_i * I.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import BIPARTITE, DIRECTED, UNDIRECTED, Graph
from .hierarchy import ClusterTree, TreeError
from .model import (EPS_DIST, EmbeddingState, Gradient, ObjectiveReport,
                    floored_norm, guarded_exp, _scatter_rows, _scatter_vals)

CENTROID_MODES = ("flow", "fixed")


@dataclass
class _LevelBlocks:
    """Flattened view of one level's sibling pairs for vectorized reduction."""

    node_ids: np.ndarray        # involved cluster ids, shape (M,)
    pair_a: np.ndarray          # positions into node_ids, shape (P,)
    pair_b: np.ndarray
    mem: np.ndarray             # concatenated member ids of the M clusters
    mem_w: np.ndarray           # frozen per-node Weiszfeld weights, aligned
    mem_node: np.ndarray        # position (0..M-1) of each member's cluster
    fixed_mu: np.ndarray        # build-time centroids, shape (M, D)
    mem_side2: np.ndarray | None  # side mask for stacked two-sided points


@dataclass
class BlockPairCache:
    """Precomputed index arrays for one (graph, tree) pair.

    ``ei/ej`` are the edge endpoints and ``li/lj`` the within-leaf dyads, all
    in the stacked point index space (side-2 ids offset by n1).  ``levels``
    holds one flattened sibling-pair view per hierarchy level.
    """

    mode: str
    n_points: int
    n1: int | None
    ei: np.ndarray
    ej: np.ndarray
    li: np.ndarray
    lj: np.ndarray
    levels: list[_LevelBlocks]

    @classmethod
    def from_tree(cls, g: Graph, tree: ClusterTree) -> "BlockPairCache":
        two_sided = g.mode in (BIPARTITE, DIRECTED)
        n_expected = g.num_nodes if g.mode == BIPARTITE else (
            2 * g.n1 if g.mode == DIRECTED else g.n1)
        if tree.n_points != n_expected:
            raise TreeError(
                f"tree covers {tree.n_points} points but the graph needs "
                f"{n_expected} (mode {g.mode})")
        if two_sided and tree.n1 != g.n1:
            raise TreeError("tree side split does not match the graph")
        n1 = g.n1 if two_sided else None

        ei = g.edges[:, 0].astype(np.int64)
        ej = g.edges[:, 1].astype(np.int64) + (n1 if two_sided else 0)

        li_parts: list[np.ndarray] = []
        lj_parts: list[np.ndarray] = []
        for leaf in tree.leaf_ids:
            m = np.sort(tree.nodes[leaf].members)
            if two_sided:
                m1 = m[m < n1]
                m2 = m[m >= n1]
                if m1.size == 0 or m2.size == 0:
                    continue
                a = np.repeat(m1, m2.size)
                b = np.tile(m2, m1.size)
                if g.mode == DIRECTED:
                    keep = a != b - n1
                    a, b = a[keep], b[keep]
            else:
                iu, ju = np.triu_indices(m.size, k=1)
                a, b = m[iu], m[ju]
            li_parts.append(a)
            lj_parts.append(b)
        empty = np.empty(0, dtype=np.int64)
        li = np.concatenate(li_parts) if li_parts else empty
        lj = np.concatenate(lj_parts) if lj_parts else empty

        levels: list[_LevelBlocks] = []
        for pairs in tree.sibling_pairs:
            ids = sorted({nid for p in pairs for nid in p})
            pos = {nid: i for i, nid in enumerate(ids)}
            mem_parts, w_parts, idx_parts = [], [], []
            for nid in ids:
                node = tree.nodes[nid]
                mem_parts.append(node.members)
                w_parts.append(node.weights)
                idx_parts.append(np.full(len(node.members), pos[nid], dtype=np.int64))
            mem = np.concatenate(mem_parts) if mem_parts else empty
            levels.append(_LevelBlocks(
                node_ids=np.array(ids, dtype=np.int64),
                pair_a=np.array([pos[a] for a, _ in pairs], dtype=np.int64),
                pair_b=np.array([pos[b] for _, b in pairs], dtype=np.int64),
                mem=mem,
                mem_w=np.concatenate(w_parts) if w_parts else empty.astype(float),
                mem_node=np.concatenate(idx_parts) if idx_parts else empty,
                fixed_mu=np.array([tree.nodes[nid].centroid for nid in ids],
                                  dtype=np.float64).reshape(len(ids), tree.dim),
                mem_side2=(mem >= n1) if two_sided else None,
            ))
        return cls(mode=g.mode, n_points=tree.n_points, n1=n1,
                   ei=ei, ej=ej, li=li, lj=lj, levels=levels)


def _cache_for(g: Graph, tree: ClusterTree) -> BlockPairCache:
    """Build (or reuse) the pair cache attached to this tree."""
    memo = getattr(tree, "_pair_cache", None)
    if memo is not None and memo[0] == id(g):
        return memo[1]
    cache = BlockPairCache.from_tree(g, tree)
    tree._pair_cache = (id(g), cache)
    return cache


def _check_state(state: EmbeddingState, cache: BlockPairCache) -> None:
    coords, _ = state.stacked()
    if coords.shape[0] != cache.n_points:
        raise TreeError(
            f"state holds {coords.shape[0]} points, tree was built over "
            f"{cache.n_points}")


def _level_factors(lvl: _LevelBlocks, coords, exp_b, centroid_mode):
    """Centroids, pair distances and bias-mass factors for one level."""
    if centroid_mode == "flow":
        m = len(lvl.node_ids)
        mu = np.empty((m, coords.shape[1]))
        for d in range(coords.shape[1]):
            mu[:, d] = np.bincount(lvl.mem_node,
                                   weights=lvl.mem_w * coords[lvl.mem, d],
                                   minlength=m)
    else:
        mu = lvl.fixed_mu
    dist = floored_norm(mu[lvl.pair_a] - mu[lvl.pair_b])
    eb = exp_b[lvl.mem]
    m = len(lvl.node_ids)
    if lvl.mem_side2 is None:
        s = np.bincount(lvl.mem_node, weights=eb, minlength=m)
        factor = s[lvl.pair_a] * s[lvl.pair_b]
        sums = (s,)
    else:
        s1 = np.bincount(lvl.mem_node, weights=eb * ~lvl.mem_side2, minlength=m)
        s2 = np.bincount(lvl.mem_node, weights=eb * lvl.mem_side2, minlength=m)
        factor = s1[lvl.pair_a] * s2[lvl.pair_b] + s1[lvl.pair_b] * s2[lvl.pair_a]
        sums = (s1, s2)
    return mu, dist, factor, sums


def hbdm_nll(g: Graph, state: EmbeddingState, tree: ClusterTree,
             centroid_mode: str = "flow") -> ObjectiveReport:
    """Hierarchical NLL: exact links, exact leaf dyads, block-approximated
    rate mass between sibling clusters at each level."""
    if centroid_mode not in CENTROID_MODES:
        raise ValueError(f"centroid_mode must be one of {CENTROID_MODES}")
    cache = _cache_for(g, tree)
    _check_state(state, cache)
    coords, biases = state.stacked()

    d_link = floored_norm(coords[cache.ei] - coords[cache.ej])
    link = float(np.sum(biases[cache.ei] + biases[cache.ej] - d_link))

    d_leaf = floored_norm(coords[cache.li] - coords[cache.lj])
    leaf = float(np.sum(guarded_exp(biases[cache.li] + biases[cache.lj] - d_leaf)))

    exp_b = guarded_exp(biases)
    block_terms = []
    for lvl in cache.levels:
        _, dist, factor, _ = _level_factors(lvl, coords, exp_b, centroid_mode)
        block_terms.append(float(np.sum(np.exp(-dist) * factor)))

    total = -link + leaf + sum(block_terms)
    return ObjectiveReport(total_nll=total, link_term=link, leaf_term=leaf,
                           block_terms=block_terms)


def hbdm_gradient(g: Graph, state: EmbeddingState, tree: ClusterTree,
                  centroid_mode: str = "flow") -> Gradient:
    """Analytic gradient of ``hbdm_nll`` with memberships and Weiszfeld
    weights frozen at their tree-build values.

    In ``flow`` mode (default) block centroids are linear functions of the
    coordinates (mu_k = w @ coords[members]) and the gradient routes through
    them; in ``fixed`` mode centroids are constants, so only biases feel the
    block terms.
    """
    if centroid_mode not in CENTROID_MODES:
        raise ValueError(f"centroid_mode must be one of {CENTROID_MODES}")
    cache = _cache_for(g, tree)
    _check_state(state, cache)
    coords, biases = state.stacked()
    dcoords = np.zeros_like(coords)
    dbiases = np.zeros_like(biases)

    # Link term enters the NLL as -(b_i + b_j - d_ij) per edge.
    diff = coords[cache.ei] - coords[cache.ej]
    d = floored_norm(diff)
    u = diff / d[:, None]
    _scatter_rows(dcoords, cache.ei, u)
    _scatter_rows(dcoords, cache.ej, -u)
    ones = np.ones(len(cache.ei))
    _scatter_vals(dbiases, cache.ei, -ones)
    _scatter_vals(dbiases, cache.ej, -ones)

    # Leaf dyads contribute +lambda each.
    if cache.li.size:
        diff = coords[cache.li] - coords[cache.lj]
        d = floored_norm(diff)
        lam = guarded_exp(biases[cache.li] + biases[cache.lj] - d)
        u = diff * (lam / d)[:, None]
        _scatter_rows(dcoords, cache.li, -u)
        _scatter_rows(dcoords, cache.lj, u)
        _scatter_vals(dbiases, cache.li, lam)
        _scatter_vals(dbiases, cache.lj, lam)

    # Block terms: t_ab * factor_ab with t = exp(-||mu_a - mu_b||).
    exp_b = guarded_exp(biases)
    for lvl in cache.levels:
        mu, dist, factor, sums = _level_factors(lvl, coords, exp_b, centroid_mode)
        m = len(lvl.node_ids)
        t = np.exp(-dist)
        tf = t * factor

        if centroid_mode == "flow":
            # d(term)/d(mu_a) = -tf * (mu_a - mu_b) / dist
            udir = (mu[lvl.pair_a] - mu[lvl.pair_b]) / dist[:, None]
            contrib = -tf[:, None] * udir
            dmu = np.zeros_like(mu)
            np.add.at(dmu, lvl.pair_a, contrib)
            np.add.at(dmu, lvl.pair_b, -contrib)
            dcoords_rows = lvl.mem_w[:, None] * dmu[lvl.mem_node]
            _scatter_rows(dcoords, lvl.mem, dcoords_rows)

        if lvl.mem_side2 is None:
            (s,) = sums
            ds = np.zeros(m)
            np.add.at(ds, lvl.pair_a, t * s[lvl.pair_b])
            np.add.at(ds, lvl.pair_b, t * s[lvl.pair_a])
            mem_gain = exp_b[lvl.mem] * ds[lvl.mem_node]
        else:
            s1, s2 = sums
            ds1 = np.zeros(m)
            ds2 = np.zeros(m)
            np.add.at(ds1, lvl.pair_a, t * s2[lvl.pair_b])
            np.add.at(ds2, lvl.pair_b, t * s1[lvl.pair_a])
            np.add.at(ds1, lvl.pair_b, t * s2[lvl.pair_a])
            np.add.at(ds2, lvl.pair_a, t * s1[lvl.pair_b])
            side2 = lvl.mem_side2
            mem_gain = exp_b[lvl.mem] * np.where(
                side2, ds2[lvl.mem_node], ds1[lvl.mem_node])
        _scatter_vals(dbiases, lvl.mem, mem_gain)

    return Gradient.from_stacked(state, dcoords, dbiases)


def rotation_sensitivity(g: Graph, state: EmbeddingState, tree: ClusterTree,
                         leaf: int, angle: float) -> tuple[float, float]:
    """NLL before/after rotating one leaf's members about the leaf centroid.

    Evaluation uses fixed (build-time) centroids on purpose: the question this
    probes is whether the block approximation itself can feel a leaf's
    internal orientation, and the only channels are the exact link terms of
    edges leaving the leaf (within-leaf dyads, bias sums and frozen block
    distances are all rotation-invariant).  A leaf with external edges
    therefore shifts the NLL; a leaf without any is exactly invariant.
    """
    if state.dim != 2:
        raise ValueError("rotation probe is defined for D=2 embeddings")
    if not 0 <= leaf < len(tree.nodes) or not tree.nodes[leaf].is_leaf:
        raise TreeError(f"node {leaf} is not a leaf of this tree")
    before = hbdm_nll(g, state, tree, centroid_mode="fixed").total_nll
    coords, biases = state.stacked()
    node = tree.nodes[leaf]
    mu = node.centroid
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    coords2 = coords.copy()
    coords2[node.members] = mu + (coords[node.members] - mu) @ rot.T
    rotated = state.with_stacked(coords2, biases.copy())
    after = hbdm_nll(g, rotated, tree, centroid_mode="fixed").total_nll
    return before, after


def pair_coverage_counts(tree: ClusterTree) -> np.ndarray:
    """Count how often each dyad is covered by {leaf, sibling block} terms.

    Unipartite trees return an (n, n) symmetric matrix whose off-diagonal
    entries must all be 1; two-sided trees return the (n1, n2) cross-mode
    grid, all ones.  This is the structural count: directed evaluation
    additionally *excludes* self-pairs that land inside a leaf, which is an
    exact exclusion and does not change the once-per-dyad accounting.
    """
    n = tree.n_points
    n1 = tree.n1
    if n1 is None:
        counts = np.zeros((n, n), dtype=np.int64)
        for leaf in tree.leaf_ids:
            m = tree.nodes[leaf].members
            counts[np.ix_(m, m)] += 1
            counts[m, m] -= 1
        for pairs in tree.sibling_pairs:
            for a, b in pairs:
                ma, mb = tree.nodes[a].members, tree.nodes[b].members
                counts[np.ix_(ma, mb)] += 1
                counts[np.ix_(mb, ma)] += 1
        return counts
    n2 = n - n1
    counts = np.zeros((n1, n2), dtype=np.int64)
    for leaf in tree.leaf_ids:
        m = tree.nodes[leaf].members
        m1, m2 = m[m < n1], m[m >= n1] - n1
        if m1.size and m2.size:
            counts[np.ix_(m1, m2)] += 1
    for pairs in tree.sibling_pairs:
        for a, b in pairs:
            ma, mb = tree.nodes[a].members, tree.nodes[b].members
            a1, a2 = ma[ma < n1], ma[ma >= n1] - n1
            b1, b2 = mb[mb < n1], mb[mb >= n1] - n1
            if a1.size and b2.size:
                counts[np.ix_(a1, b2)] += 1
            if b1.size and a2.size:
                counts[np.ix_(b1, a2)] += 1
    return counts
