"""Full-batch Adam training with periodic hierarchy rebuilds."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .graph import BIPARTITE, DIRECTED, Graph
from .hierarchy import ClusterTree, TreeConfig, build_tree
from .model import (DEFAULT_PAIR_CAP, EmbeddingState, canonicalize,
                    full_ldm_gradient, full_ldm_report)
from .objective import CENTROID_MODES, hbdm_gradient, hbdm_nll


@dataclass
class TrainConfig:
    dim: int = 2
    lr: float = 0.05
    iters: int = 3000
    rebuild_every: int = 25
    random_effects: bool = True   # False ties all biases to one global scalar
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_scale: float = 0.1
    exact: bool = False           # optimize the exact O(N^2) objective instead
    exact_cap: int = DEFAULT_PAIR_CAP
    centroid_mode: str = "flow"
    kmeans_iters: int = 15
    max_depth: int = 64

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.rebuild_every < 1:
            raise ValueError("rebuild_every must be >= 1")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")
        if self.centroid_mode not in CENTROID_MODES:
            raise ValueError(
                f"centroid_mode must be one of {CENTROID_MODES}")


class TrainingDiverged(RuntimeError):
    """NLL became non-finite; carries the last finite state for diagnosis."""

    def __init__(self, iteration: int, state: EmbeddingState,
                 tree: ClusterTree | None, log: list[dict]):
        super().__init__(
            f"objective became non-finite at iteration {iteration}; "
            f"returning the last finite state (try a lower lr)")
        self.iteration = iteration
        self.state = state
        self.tree = tree
        self.log = log


class Adam:
    """Plain Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def init_state(g: Graph, cfg: TrainConfig) -> EmbeddingState:
    """Gaussian coordinates (sd = init_scale), zero biases; seed-deterministic."""
    rng = np.random.default_rng(cfg.seed)
    global_bias = not cfg.random_effects
    if g.mode in (BIPARTITE, DIRECTED):
        n2 = g.n2 if g.mode == BIPARTITE else g.n1
        W = rng.normal(0.0, cfg.init_scale, size=(g.n1, cfg.dim))
        V = rng.normal(0.0, cfg.init_scale, size=(n2, cfg.dim))
        return EmbeddingState.two_sided(g.mode, W, V, np.zeros(g.n1), np.zeros(n2),
                                        global_bias=global_bias)
    Z = rng.normal(0.0, cfg.init_scale, size=(g.n1, cfg.dim))
    return EmbeddingState.unipartite(Z, np.zeros(g.n1), global_bias=global_bias)


def _tree_for(state: EmbeddingState, cfg: TrainConfig, build_counter: int,
              n1: int | None) -> ClusterTree:
    coords, _ = state.stacked()
    tree_cfg = TreeConfig(kmeans_iters=cfg.kmeans_iters, max_depth=cfg.max_depth)
    # Distinct deterministic seed per rebuild, namespaced away from init_state.
    return build_tree(coords, seed=(cfg.seed * 1_000_003 + build_counter) % 2**63,
                      config=tree_cfg, n1=n1)


def fit(g: Graph, cfg: TrainConfig) -> tuple[EmbeddingState, ClusterTree, list[dict]]:
    """Optimize the objective; returns (canonicalized state, final tree, log).

    The hierarchy is rebuilt from the current coordinates every
    ``cfg.rebuild_every`` iterations and held fixed in between.  With
    ``cfg.exact`` the exact O(N^2) objective is optimized instead (refused
    above ``cfg.exact_cap`` nodes).  Each log record carries the decomposed
    objective, wall time, and whether the hierarchy was rebuilt that
    iteration.  If the objective turns non-finite, training aborts with
    ``TrainingDiverged`` carrying the last finite state.
    """
    state = init_state(g, cfg)
    two_sided = g.mode in (BIPARTITE, DIRECTED)
    n1 = g.n1 if two_sided else None

    coords_params: list[np.ndarray]
    if two_sided:
        coords_params = [state.W, state.V]
        bias_arrays = [state.psi, state.omega]
    else:
        coords_params = [state.Z]
        bias_arrays = [state.gamma]
    if cfg.random_effects:
        params = coords_params + bias_arrays
    else:
        global_param = np.zeros(1)
        params = coords_params + [global_param]

    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    tree: ClusterTree | None = None
    build_counter = 0
    log: list[dict] = []
    last_good = state.copy()

    for it in range(cfg.iters):
        t0 = time.perf_counter()
        rebuilt = False
        if not cfg.exact and (tree is None or it % cfg.rebuild_every == 0):
            coords_now, _ = state.stacked()
            if not np.all(np.isfinite(coords_now)):
                raise TrainingDiverged(it, last_good, tree, log)
            tree = _tree_for(state, cfg, build_counter, n1)
            build_counter += 1
            rebuilt = True

        if cfg.exact:
            report = full_ldm_report(g, state, cap=cfg.exact_cap)
            grad = full_ldm_gradient(g, state, cap=cfg.exact_cap)
        else:
            report = hbdm_nll(g, state, tree, centroid_mode=cfg.centroid_mode)
            grad = hbdm_gradient(g, state, tree, centroid_mode=cfg.centroid_mode)

        if not np.isfinite(report.total_nll):
            raise TrainingDiverged(it, last_good, tree, log)
        for arr, good in zip(_state_arrays(state), _state_arrays(last_good)):
            np.copyto(good, arr)

        dcoords, dbiases = grad.stacked(state)
        if two_sided:
            grads = [dcoords[:g.n1], dcoords[g.n1:]]
        else:
            grads = [dcoords]
        if cfg.random_effects:
            grads += [dbiases[:g.n1], dbiases[g.n1:]] if two_sided else [dbiases]
        else:
            grads += [np.array([grad.dglobal])]
        opt.step(grads)
        if not cfg.random_effects:
            # Per-node biases are half the shared scalar.
            half = 0.5 * global_param[0]
            for arr in bias_arrays:
                arr.fill(half)

        log.append({
            "iter": it,
            "nll": report.total_nll,
            "link_term": report.link_term,
            "leaf_term": report.leaf_term,
            "block_terms": report.block_terms,
            "wall_ms": (time.perf_counter() - t0) * 1e3,
            "rebuilt": rebuilt,
        })

    state = canonicalize(state)
    final_tree = _tree_for(state, cfg, build_counter, n1)
    return state, final_tree, log


def _state_arrays(state: EmbeddingState):
    return [getattr(state, f.name) for f in dataclasses.fields(state)
            if isinstance(getattr(state, f.name), np.ndarray)]
