"""Shared builders and reference implementations for the test suite.

The oracle functions here are deliberately written as plain Python loops,
independent of the vectorized package code, so that agreement between the
two is meaningful evidence of correctness.
"""

import math

import numpy as np

from hbdm.graph import BIPARTITE, DIRECTED, UNDIRECTED, Graph
from hbdm.model import EmbeddingState

EPS_DIST_SQ = 1e-12  # (1e-6)**2, the documented distance floor, squared
EXP_CLAMP = 30.0


def make_graph(rng, n, mode=UNDIRECTED, p=0.25, n2=None):
    """Random graph on exactly n (or n x n2) nodes; isolated nodes allowed.

    Guarantees at least one edge so every graph is usable by the model.
    """
    if mode == BIPARTITE:
        n2 = n if n2 is None else n2
        mask = rng.random((n, n2)) < p
    elif mode == DIRECTED:
        mask = rng.random((n, n)) < p
        np.fill_diagonal(mask, False)
    else:
        mask = np.triu(rng.random((n, n)) < p, 1)
    i, j = np.nonzero(mask)
    if i.size == 0:
        i = np.array([0])
        j = np.array([0 if mode == BIPARTITE else 1])
    edges = np.stack([i, j], axis=1).astype(np.int64)
    labels1 = tuple(f"u{t}" for t in range(n))
    if mode == BIPARTITE:
        return Graph(mode=mode, n1=n, n2=n2, edges=edges, labels1=labels1,
                     labels2=tuple(f"v{t}" for t in range(n2)))
    return Graph(mode=mode, n1=n, n2=0, edges=edges, labels1=labels1)


def make_state(rng, g, dim=2, scale=0.8, global_bias=False):
    """Random embedding state matching the graph's mode."""
    if g.mode == UNDIRECTED:
        Z = rng.normal(0.0, scale, (g.n1, dim))
        if global_bias:
            gamma = np.full(g.n1, rng.normal(0.0, 0.3))
        else:
            gamma = rng.normal(0.0, 0.3, g.n1)
        return EmbeddingState.unipartite(Z, gamma, global_bias=global_bias)
    n2 = g.n2 if g.mode == BIPARTITE else g.n1
    W = rng.normal(0.0, scale, (g.n1, dim))
    V = rng.normal(0.0, scale, (n2, dim))
    if global_bias:
        b = rng.normal(0.0, 0.3)
        psi = np.full(g.n1, b)
        omega = np.full(n2, b)
    else:
        psi = rng.normal(0.0, 0.3, g.n1)
        omega = rng.normal(0.0, 0.3, n2)
    return EmbeddingState.two_sided(g.mode, W, V, psi, omega,
                                    global_bias=global_bias)


def _dist(a, b):
    """Floored Euclidean distance, scalar loop version."""
    s = 0.0
    for x, y in zip(a, b):
        s += (x - y) ** 2
    return math.sqrt(s + EPS_DIST_SQ)


def oracle_full_nll(g, state):
    """Reference Poisson NLL: explicit double loop over every dyad."""
    if g.mode == UNDIRECTED:
        Z, gam = state.Z, state.gamma
        mass = 0.0
        for i in range(g.n1):
            for j in range(i + 1, g.n1):
                mass += math.exp(min(gam[i] + gam[j] - _dist(Z[i], Z[j]),
                                     EXP_CLAMP))
        link = 0.0
        for i, j in g.edges:
            link += gam[i] + gam[j] - _dist(Z[i], Z[j])
        return mass - link
    W, V, psi, om = state.W, state.V, state.psi, state.omega
    mass = 0.0
    for i in range(W.shape[0]):
        for j in range(V.shape[0]):
            if g.mode == DIRECTED and i == j:
                continue
            mass += math.exp(min(psi[i] + om[j] - _dist(W[i], V[j]),
                                 EXP_CLAMP))
    link = 0.0
    for i, j in g.edges:
        link += psi[i] + om[j] - _dist(W[i], V[j])
    return mass - link


def fd_gradient(fun, arr, step=1e-5):
    """Central finite differences of a scalar function w.r.t. arr (mutated
    in place entry by entry, then restored)."""
    out = np.zeros_like(arr)
    flat = arr.ravel()
    g = out.ravel()
    for t in range(flat.size):
        orig = flat[t]
        flat[t] = orig + step
        hi = fun()
        flat[t] = orig - step
        lo = fun()
        flat[t] = orig
        g[t] = (hi - lo) / (2.0 * step)
    return out


def max_rel_err(analytic, reference):
    """max |a - r| / max(1, |r|); the unit floor keeps near-zero entries
    from inflating the relative error."""
    analytic = np.asarray(analytic, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.abs(reference))
    return float(np.max(np.abs(analytic - reference) / denom))


def write_edge_file(path, lines):
    """Write an edge-list text file from an iterable of lines."""
    path.write_text("\n".join(lines) + "\n")


def planted_blocks(rng, n, k, p_in, p_out):
    """Stochastic block model graph plus its planted labels."""
    lab = np.repeat(np.arange(k), -(-n // k))[:n]
    iu, ju = np.triu_indices(n, 1)
    p = np.where(lab[iu] == lab[ju], p_in, p_out)
    keep = rng.random(p.size) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64)
    g = Graph(mode=UNDIRECTED, n1=n, n2=0, edges=edges,
              labels1=tuple(str(t) for t in range(n)))
    return g, lab
