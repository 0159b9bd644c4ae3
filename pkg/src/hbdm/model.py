"""Latent distance model: state container, exact likelihood and gradient.

Every dyad (i, j) carries a Poisson rate

    lambda_ij = exp(gamma_i + gamma_j - ||z_i - z_j||)

with node-specific bias terms gamma and latent positions z in R^D.  The
negative log-likelihood of an observed binary graph is

    NLL = sum_over_dyads lambda_ij  -  sum_over_edges log lambda_ij

where the dyad universe depends on the mode: unordered pairs i < j for
undirected graphs, ordered pairs i != j for directed graphs, and the full
(n1 x n2) grid for bipartite graphs.  Directed and bipartite graphs use two
coordinate sets (w for the out/first mode, v for the in/second mode) with
their own bias vectors.

Numerical guards used throughout the package live here: distances are floored
via sqrt(||.||^2 + EPS_DIST^2) and exponents are clamped at EXP_CLAMP before
exponentiation (clamp events are counted in ``clamp_stats``).
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np

from .graph import BIPARTITE, DIRECTED, UNDIRECTED, Graph, GraphError

EPS_DIST = 1e-6
EXP_CLAMP = 30.0
DEFAULT_PAIR_CAP = 20_000
_CHUNK = 1024


class LdmCapError(GraphError):
    """Raised when an exact O(N^2) evaluation would exceed the node cap."""


class _ClampStats:
    """Counter of exponent-clamp events (diagnostic, never an error)."""

    def __init__(self) -> None:
        self.count = 0

    def reset(self) -> None:
        self.count = 0


clamp_stats = _ClampStats()


def guarded_exp(x: np.ndarray) -> np.ndarray:
    """exp with the argument clamped at EXP_CLAMP; clamp events are counted."""
    x = np.asarray(x, dtype=np.float64)
    over = x > EXP_CLAMP
    n_over = int(np.count_nonzero(over))
    if n_over:
        clamp_stats.count += n_over
        x = np.minimum(x, EXP_CLAMP)
    return np.exp(x)


def floored_norm(diff: np.ndarray, axis: int = -1) -> np.ndarray:
    """Euclidean norm with a small additive floor inside the square root."""
    return np.sqrt(np.sum(diff * diff, axis=axis) + EPS_DIST**2)


@dataclass
class EmbeddingState:
    """Model parameters for one graph.

    Unipartite (undirected) graphs use a single coordinate matrix ``Z`` with
    biases ``gamma``.  Directed and bipartite graphs use two coordinate sets:
    ``W``/``psi`` for the first (out) mode and ``V``/``omega`` for the second
    (in) mode.  With ``global_bias`` set, all bias entries are tied to half of
    one shared scalar and must be equal.
    """

    mode: str
    dim: int
    global_bias: bool = False
    Z: np.ndarray | None = None
    gamma: np.ndarray | None = None
    W: np.ndarray | None = None
    V: np.ndarray | None = None
    psi: np.ndarray | None = None
    omega: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.mode == UNDIRECTED:
            if self.Z is None or self.gamma is None:
                raise ValueError("undirected state needs Z and gamma")
            if self.Z.shape != (len(self.gamma), self.dim):
                raise ValueError("Z must be (len(gamma), dim)")
        else:
            for name in ("W", "V", "psi", "omega"):
                if getattr(self, name) is None:
                    raise ValueError(f"{self.mode} state needs {name}")
            if self.W.shape != (len(self.psi), self.dim):
                raise ValueError("W must be (len(psi), dim)")
            if self.V.shape != (len(self.omega), self.dim):
                raise ValueError("V must be (len(omega), dim)")
            if self.mode == DIRECTED and len(self.psi) != len(self.omega):
                raise ValueError("directed state needs equal mode sizes")
        if self.global_bias:
            for eff in self._effects():
                if eff.size and np.ptp(eff) != 0.0:
                    raise ValueError("global_bias requires all bias entries equal")

    @classmethod
    def unipartite(cls, Z, gamma, global_bias=False) -> "EmbeddingState":
        Z = np.asarray(Z, dtype=np.float64)
        gamma = np.asarray(gamma, dtype=np.float64)
        return cls(mode=UNDIRECTED, dim=Z.shape[1], global_bias=global_bias,
                   Z=Z, gamma=gamma)

    @classmethod
    def two_sided(cls, mode, W, V, psi, omega, global_bias=False) -> "EmbeddingState":
        W = np.asarray(W, dtype=np.float64)
        V = np.asarray(V, dtype=np.float64)
        return cls(mode=mode, dim=W.shape[1], global_bias=global_bias,
                   W=W, V=V,
                   psi=np.asarray(psi, dtype=np.float64),
                   omega=np.asarray(omega, dtype=np.float64))

    def _effects(self):
        if self.mode == UNDIRECTED:
            return (self.gamma,)
        return (self.psi, self.omega)

    @property
    def n1(self) -> int:
        return len(self.gamma) if self.mode == UNDIRECTED else len(self.psi)

    @property
    def n2(self) -> int:
        return 0 if self.mode == UNDIRECTED else len(self.omega)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """(coords, biases) over the stacked point set.

        For unipartite states this is (Z, gamma); for two-sided states the
        second-mode points are stacked after the first, giving
        (vstack(W, V), concat(psi, omega)).
        """
        if self.mode == UNDIRECTED:
            return self.Z, self.gamma
        return np.vstack([self.W, self.V]), np.concatenate([self.psi, self.omega])

    def with_stacked(self, coords: np.ndarray, biases: np.ndarray) -> "EmbeddingState":
        """New state with stacked coordinates/biases split back per mode."""
        if self.mode == UNDIRECTED:
            return EmbeddingState.unipartite(coords, biases, self.global_bias)
        n1 = self.n1
        return EmbeddingState.two_sided(self.mode, coords[:n1], coords[n1:],
                                        biases[:n1], biases[n1:], self.global_bias)

    def copy(self) -> "EmbeddingState":
        kw = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            kw[f.name] = val.copy() if isinstance(val, np.ndarray) else val
        return EmbeddingState(**kw)

    def check_finite(self) -> None:
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, np.ndarray) and not np.all(np.isfinite(val)):
                raise ValueError(f"non-finite values in {f.name}")


@dataclass
class Gradient:
    """Gradient of an objective with respect to an EmbeddingState.

    Fields mirror the state layout.  ``dglobal`` is the chain-rule collapse
    of the bias gradients onto the shared scalar (0.5 * sum of all bias
    gradients); it is populated only when the state has ``global_bias``.
    """

    dZ: np.ndarray | None = None
    dgamma: np.ndarray | None = None
    dW: np.ndarray | None = None
    dV: np.ndarray | None = None
    dpsi: np.ndarray | None = None
    domega: np.ndarray | None = None
    dglobal: float | None = None

    @classmethod
    def from_stacked(cls, state: EmbeddingState, dcoords, dbiases) -> "Gradient":
        if state.mode == UNDIRECTED:
            grad = cls(dZ=dcoords, dgamma=dbiases)
        else:
            n1 = state.n1
            grad = cls(dW=dcoords[:n1], dV=dcoords[n1:],
                       dpsi=dbiases[:n1], domega=dbiases[n1:])
        if state.global_bias:
            grad.dglobal = 0.5 * float(np.sum(dbiases))
        return grad

    def stacked(self, state: EmbeddingState) -> tuple[np.ndarray, np.ndarray]:
        if state.mode == UNDIRECTED:
            return self.dZ, self.dgamma
        return np.vstack([self.dW, self.dV]), np.concatenate([self.dpsi, self.domega])


@dataclass
class ObjectiveReport:
    """Decomposed negative log-likelihood.

    total_nll = -link_term + leaf_term + sum(block_terms): the link term is
    the exact sum of log-rates over observed edges; the leaf term sums rates
    over dyads handled exactly (within leaf clusters, or all dyads for the
    exact evaluation); block_terms holds one entry per hierarchy level for the
    centroid-approximated between-cluster rate mass.
    """

    total_nll: float
    link_term: float
    leaf_term: float
    block_terms: list[float]

    def consistent(self, rtol: float = 1e-9) -> bool:
        recon = -self.link_term + self.leaf_term + sum(self.block_terms)
        return abs(recon - self.total_nll) <= rtol * max(1.0, abs(self.total_nll))

    def to_dict(self) -> dict:
        return {
            "total_nll": self.total_nll,
            "link_term": self.link_term,
            "leaf_term": self.leaf_term,
            "block_terms": list(self.block_terms),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveReport":
        return cls(total_nll=d["total_nll"], link_term=d["link_term"],
                   leaf_term=d["leaf_term"],
                   block_terms=[float(x) for x in d["block_terms"]])


def _check_cap(state: EmbeddingState, cap: int) -> None:
    n = max(state.n1, state.n2)
    if n > cap:
        raise LdmCapError(
            f"exact evaluation needs O(N^2) work and N={n} exceeds the cap "
            f"of {cap}; raise the cap explicitly to force it"
        )


def poisson_rate(state: EmbeddingState, i: int, j: int) -> float:
    """Rate of the dyad (i, j); i is a first-mode id, j second-mode for
    two-sided states.  Self-dyads are rejected for unipartite/directed."""
    if state.mode == UNDIRECTED:
        if i == j:
            raise ValueError("self-dyads carry no rate in unipartite graphs")
        z, e = state.Z, state.gamma
        d = floored_norm(z[i] - z[j])
        return float(guarded_exp(np.array(e[i] + e[j] - d))[()])
    if state.mode == DIRECTED and i == j:
        raise ValueError("self-dyads carry no rate in directed graphs")
    d = floored_norm(state.W[i] - state.V[j])
    return float(guarded_exp(np.array(state.psi[i] + state.omega[j] - d))[()])


def _stacked_edges(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Edge endpoint arrays in the stacked-point index space."""
    ei = g.edges[:, 0]
    ej = g.edges[:, 1] + (g.n1 if g.mode in (BIPARTITE, DIRECTED) else 0)
    return ei, ej


def _edge_link_term(g: Graph, state: EmbeddingState) -> float:
    coords, biases = state.stacked()
    ei, ej = _stacked_edges(g)
    d = floored_norm(coords[ei] - coords[ej])
    return float(np.sum(biases[ei] + biases[ej] - d))


def full_ldm_report(g: Graph, state: EmbeddingState,
                    cap: int = DEFAULT_PAIR_CAP) -> ObjectiveReport:
    """Exact NLL over all dyads, decomposed.  O(N^2) time, chunked in memory.

    The full dyad rate mass is reported in ``leaf_term`` (it plays the same
    role as the exact within-leaf term of the hierarchical objective) and
    ``block_terms`` is empty.
    """
    _check_cap(state, cap)
    link = _edge_link_term(g, state)
    if state.mode == UNDIRECTED:
        z, e = state.Z, state.gamma
        n = len(e)
        total = 0.0
        for s in range(0, n, _CHUNK):
            zi = z[s:s + _CHUNK]
            d = floored_norm(zi[:, None, :] - z[None, :, :])
            total += float(np.sum(guarded_exp(e[s:s + _CHUNK, None] + e[None, :] - d)))
        diag = float(np.sum(guarded_exp(2.0 * e - EPS_DIST)))
        mass = 0.5 * (total - diag)
    else:
        w, v = state.W, state.V
        pe, oe = state.psi, state.omega
        mass = 0.0
        for s in range(0, len(pe), _CHUNK):
            wi = w[s:s + _CHUNK]
            d = floored_norm(wi[:, None, :] - v[None, :, :])
            mass += float(np.sum(guarded_exp(pe[s:s + _CHUNK, None] + oe[None, :] - d)))
        if g.mode == DIRECTED:
            d = floored_norm(w - v)
            mass -= float(np.sum(guarded_exp(pe + oe - d)))
    return ObjectiveReport(total_nll=mass - link, link_term=link,
                           leaf_term=mass, block_terms=[])


def full_ldm_nll(g: Graph, state: EmbeddingState, cap: int = DEFAULT_PAIR_CAP) -> float:
    """Exact Poisson NLL of the graph under the latent distance model."""
    return full_ldm_report(g, state, cap).total_nll


def full_ldm_gradient(g: Graph, state: EmbeddingState,
                      cap: int = DEFAULT_PAIR_CAP) -> Gradient:
    """Exact gradient of ``full_ldm_nll`` with respect to all parameters."""
    _check_cap(state, cap)
    coords, biases = state.stacked()
    n_all = len(biases)
    dcoords = np.zeros_like(coords)
    dbiases = np.zeros_like(biases)

    # Link part: NLL contains -(b_i + b_j - d_ij) per edge.
    ei, ej = _stacked_edges(g)
    diff = coords[ei] - coords[ej]
    d = floored_norm(diff)
    u = diff / d[:, None]
    _scatter_rows(dcoords, ei, u)
    _scatter_rows(dcoords, ej, -u)
    _scatter_vals(dbiases, ei, -np.ones(len(ei)))
    _scatter_vals(dbiases, ej, -np.ones(len(ej)))

    # Rate mass part: +lambda_ij per dyad.
    if state.mode == UNDIRECTED:
        z, e = state.Z, state.gamma
        n = len(e)
        for s in range(0, n, _CHUNK):
            idx = np.arange(s, min(s + _CHUNK, n))
            diffs = z[idx][:, None, :] - z[None, :, :]
            dmat = floored_norm(diffs)
            lam = guarded_exp(e[idx][:, None] + e[None, :] - dmat)
            lam[np.arange(len(idx)), idx] = 0.0
            dbiases[idx] += lam.sum(axis=1)
            dcoords[idx] += np.einsum("ij,ijd->id", -lam / dmat, diffs)
    else:
        w, v = state.W, state.V
        pe, oe = state.psi, state.omega
        n1 = len(pe)
        for s in range(0, n1, _CHUNK):
            idx = np.arange(s, min(s + _CHUNK, n1))
            diffs = w[idx][:, None, :] - v[None, :, :]
            dmat = floored_norm(diffs)
            lam = guarded_exp(pe[idx][:, None] + oe[None, :] - dmat)
            if g.mode == DIRECTED:
                lam[np.arange(len(idx)), idx] = 0.0
            dbiases[idx] += lam.sum(axis=1)
            dbiases[n1:] += lam.sum(axis=0)
            grad_rows = np.einsum("ij,ijd->id", -lam / dmat, diffs)
            dcoords[idx] += grad_rows
            dcoords[n1:] -= np.einsum("ij,ijd->jd", -lam / dmat, diffs)
    assert len(dbiases) == n_all
    return Gradient.from_stacked(state, dcoords, dbiases)


def _scatter_rows(out: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    """out[idx] += vals with repeated indices, via bincount per column."""
    n = out.shape[0]
    for d in range(out.shape[1]):
        out[:, d] += np.bincount(idx, weights=vals[:, d], minlength=n)


def _scatter_vals(out: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    out += np.bincount(idx, weights=vals, minlength=len(out))


def canonicalize(state: EmbeddingState) -> EmbeddingState:
    """Fix the isometry gauge: center, rotate to principal axes, fix signs.

    The likelihood only sees pairwise distances, so embeddings are defined up
    to translation, rotation and reflection.  This maps a state to a canonical
    representative: coordinates are mean-centered, rotated so the axes align
    with the principal directions (descending variance), and each axis is
    reflected so that its largest-magnitude coordinate is positive.  Bias
    terms are unchanged.  Idempotent up to floating-point noise.
    """
    coords, biases = state.stacked()
    centered = coords - coords.mean(axis=0, keepdims=True)
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    rotated = centered @ eigvecs[:, order]
    for d in range(rotated.shape[1]):
        k = int(np.argmax(np.abs(rotated[:, d])))
        if rotated[k, d] < 0:
            rotated[:, d] = -rotated[:, d]
    return state.with_stacked(rotated, biases.copy())


def save_embeddings_csv(state: EmbeddingState, g: Graph, out_dir, prefix="embeddings"):
    """Write embeddings as CSV (one file per mode for two-sided states).

    Columns: node_label, gamma, z_1 .. z_D.  Returns the list of paths.
    """
    import os

    paths = []
    jobs = []
    if state.mode == UNDIRECTED:
        jobs.append((f"{prefix}.csv", g.labels1, state.gamma, state.Z))
    else:
        labels2 = g.labels2 if g.mode == BIPARTITE else g.labels1
        jobs.append((f"{prefix}_mode1.csv", g.labels1, state.psi, state.W))
        jobs.append((f"{prefix}_mode2.csv", labels2, state.omega, state.V))
    for fname, labels, biases, coords in jobs:
        path = os.path.join(out_dir, fname)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node_label", "gamma"] +
                            [f"z_{k + 1}" for k in range(state.dim)])
            for lab, b, row in zip(labels, biases, coords):
                writer.writerow([lab, repr(float(b))] + [repr(float(x)) for x in row])
        paths.append(path)
    return paths


def load_embeddings_csv(g: Graph, *paths: str, global_bias: bool = False) -> EmbeddingState:
    """Inverse of save_embeddings_csv; labels must match the graph's maps."""
    def read_one(path, labels):
        with open(path, "r", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh)
                    if r and not r[0].startswith("#")]
        header, body = rows[0], rows[1:]
        dim = len(header) - 2
        by_label = {r[0]: r for r in body}
        biases = np.empty(len(labels))
        coords = np.empty((len(labels), dim))
        for i, lab in enumerate(labels):
            row = by_label[str(lab)]
            biases[i] = float(row[1])
            coords[i] = [float(x) for x in row[2:]]
        return biases, coords

    if g.mode == UNDIRECTED:
        (path,) = paths
        gamma, Z = read_one(path, g.labels1)
        return EmbeddingState.unipartite(Z, gamma, global_bias)
    p1, p2 = paths
    labels2 = g.labels2 if g.mode == BIPARTITE else g.labels1
    psi, W = read_one(p1, g.labels1)
    omega, V = read_one(p2, labels2)
    return EmbeddingState.two_sided(g.mode, W, V, psi, omega, global_bias)
