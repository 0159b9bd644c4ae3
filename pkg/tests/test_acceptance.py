"""Acceptance gate: ten numbered criteria, one [PASS]/[FAIL]/[SKIP] line each.

Criteria 1-6 are self-contained property and scaling checks.  Criteria 7-10
replay published benchmark numbers and need the real datasets on disk under
``data/`` — when a file is missing the criterion is skipped with the path it
expected (``scripts/fetch_data.py`` downloads and normalizes everything, see
``data/README.md``).

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they happen.
"""

import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from conftest import make_graph, make_state
from hbdm.cli import load_labels
from hbdm.evaluate import auc_roc, knn_classify, make_split, score_pairs
from hbdm.graph import (BIPARTITE, DIRECTED, UNDIRECTED, Graph,
                        load_edge_list)
from hbdm.hierarchy import (TreeConfig, aux_identity_check, build_tree,
                            euclidean_kmeans, single_leaf_tree)
from hbdm.model import EmbeddingState, full_ldm_gradient, full_ldm_nll
from hbdm.objective import (hbdm_gradient, hbdm_nll, pair_coverage_counts,
                            rotation_sensitivity)
from hbdm.train import TrainConfig, fit

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def _report(num, desc, passed, detail=""):
    tag = "PASS" if passed else "FAIL"
    suffix = f" — {detail}" if detail else ""
    print(f"\n[{tag}] criterion {num}: {desc}{suffix}")
    assert passed, f"criterion {num}: {desc}{suffix}"


def _require_data(num, *names):
    missing = [DATA_DIR / name for name in names
               if not (DATA_DIR / name).exists()]
    if missing:
        msg = (f"dataset file {missing[0]} missing — run "
               f"scripts/fetch_data.py (needs network); see data/README.md")
        print(f"\n[SKIP] criterion {num}: {msg}")
        pytest.skip(f"criterion {num}: {msg}")


def _random_edges(n, m, rng):
    """m distinct undirected edges over n nodes, sampled uniformly."""
    want = m
    chunks = []
    while True:
        raw = rng.integers(0, n, (int(want * 1.3) + 16, 2))
        raw = raw[raw[:, 0] != raw[:, 1]]
        chunks.append(np.sort(raw, axis=1))
        edges = np.unique(np.vstack(chunks), axis=0)
        if len(edges) >= m:
            return edges[:m]
        want = m - len(edges)


class TestAcceptance:
    def test_criterion_01_single_leaf_equivalence(self):
        """A one-leaf tree has no approximation left, so the hierarchical
        objective and gradient must reproduce the exact ones to round-off."""
        t0 = time.perf_counter()
        rng = np.random.default_rng(101)
        modes = (UNDIRECTED, DIRECTED, BIPARTITE)
        worst_nll = worst_grad = 0.0
        for i in range(50):
            mode = modes[i % 3]
            dim = 2 if i % 2 == 0 else 3
            if mode == BIPARTITE:
                n1 = int(rng.integers(6, 45))
                n2 = int(rng.integers(4, 16))
                g = make_graph(rng, n1, mode=mode, n2=n2, p=0.2)
            else:
                g = make_graph(rng, int(rng.integers(8, 61)), mode=mode, p=0.2)
            state = make_state(rng, g, dim=dim)
            coords, _ = state.stacked()
            tree = single_leaf_tree(coords,
                                    n1=None if mode == UNDIRECTED else g.n1)

            approx = hbdm_nll(g, state, tree).total_nll
            exact = full_ldm_nll(g, state)
            worst_nll = max(worst_nll,
                            abs(approx - exact) / max(1.0, abs(exact)))

            ga = hbdm_gradient(g, state, tree).stacked(state)
            ge = full_ldm_gradient(g, state).stacked(state)
            for a, b in zip(ga, ge):
                err = np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))
                worst_grad = max(worst_grad, float(err))
        elapsed = time.perf_counter() - t0
        ok = worst_nll < 1e-9 and worst_grad < 1e-9 and elapsed < 60.0
        _report(1, "single-leaf tree reproduces the exact objective", ok,
                f"50 graphs, worst NLL rel err {worst_nll:.2e}, worst "
                f"gradient err {worst_grad:.2e} ({elapsed:.1f}s < 60s)")

    def test_criterion_02_gradient_matches_finite_differences(self):
        """Analytic gradient of the hierarchical objective against central
        differences, memberships and flow weights frozen at build time."""
        t0 = time.perf_counter()
        rng = np.random.default_rng(202)
        worst = 0.0
        for i in range(20):
            n = int(rng.integers(20, 31))
            g = make_graph(rng, n, p=0.25)
            state = make_state(rng, g, dim=2)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # depth cap forces 2 levels
                tree = build_tree(state.Z, seed=i,
                                  config=TreeConfig(leaf_cap=2, max_depth=2))
            assert tree.height == 2
            grad = hbdm_gradient(g, state, tree)
            fun = lambda: hbdm_nll(g, state, tree).total_nll
            step = 1e-5
            for analytic, arr in ((grad.dZ, state.Z),
                                  (grad.dgamma, state.gamma)):
                fd = np.zeros_like(arr)
                flat, out = arr.ravel(), fd.ravel()
                for t in range(flat.size):
                    orig = flat[t]
                    flat[t] = orig + step
                    hi = fun()
                    flat[t] = orig - step
                    lo = fun()
                    flat[t] = orig
                    out[t] = (hi - lo) / (2.0 * step)
                err = np.max(np.abs(analytic - fd) / np.maximum(1.0,
                                                                np.abs(fd)))
                worst = max(worst, float(err))
        elapsed = time.perf_counter() - t0
        ok = worst < 1e-5 and elapsed < 120.0
        _report(2, "hierarchical gradient matches finite differences", ok,
                f"20 two-level instances, max rel err {worst:.2e} "
                f"({elapsed:.1f}s < 120s)")

    def test_criterion_03_kmeans_majorization(self):
        """Unsquared-distance k-means must descend monotonically, and the
        auxiliary bound must be exactly tight at phi* = distances."""
        t0 = time.perf_counter()
        rng = np.random.default_rng(303)
        worst_rise = worst_gap = 0.0
        for i in range(100):
            n = int(rng.integers(6, 150))
            dim = 2 if i % 2 == 0 else 3
            k = int(rng.integers(1, min(n, 8) + 1))
            pts = rng.normal(0, 1, (n, dim))
            if i % 5 == 0:  # duplicated points exercise the 0/0 limit
                pts[: n // 3] = pts[0]
            ks = euclidean_kmeans(pts, k, rng=i)
            hist = ks.history
            for prev, cur in zip(hist, hist[1:]):
                rise = (cur - prev) / max(1.0, abs(prev))
                worst_rise = max(worst_rise, rise)
            j, j_plus = aux_identity_check(pts, ks)
            worst_gap = max(worst_gap, abs(j - j_plus) / max(1.0, j))
        elapsed = time.perf_counter() - t0
        ok = worst_rise < 1e-9 and worst_gap < 1e-9 and elapsed < 60.0
        _report(3, "k-means objective non-increasing and bound tight", ok,
                f"100 instances, worst rise {worst_rise:.2e}, worst "
                f"J vs J+ gap {worst_gap:.2e} ({elapsed:.1f}s < 60s)")

    def test_criterion_04_pair_coverage(self):
        """Every dyad is accounted for exactly once across leaf terms and
        sibling block terms, at every tree shape."""
        t0 = time.perf_counter()
        rng = np.random.default_rng(404)
        checked = 0
        for i in range(30):
            n = int(rng.integers(10, 201))
            pts = rng.normal(0, 1, (n, 2))
            if i % 3 == 2 and n >= 8:
                n1 = int(rng.integers(2, n - 1))
                tree = build_tree(pts, seed=i, n1=n1)
                counts = pair_coverage_counts(tree)
                assert counts.shape == (n1, n - n1)
                assert np.all(counts == 1)
            else:
                tree = build_tree(pts, seed=i)
                counts = pair_coverage_counts(tree)
                off = counts[~np.eye(n, dtype=bool)]
                assert np.all(off == 1)
                assert np.all(np.diag(counts) == 0)
            checked += 1
        elapsed = time.perf_counter() - t0
        ok = checked == 30 and elapsed < 60.0
        _report(4, "exhaustive once-per-dyad pair coverage", ok,
                f"30 trees up to N=200 ({elapsed:.1f}s < 60s)")

    @staticmethod
    def _rotation_instance(seed, external):
        """40-point planar instance with a chosen leaf; optionally one edge
        leaving that leaf, hung off the member farthest from the centroid
        (the geometric median of a small leaf often sits exactly on a
        member, which a rotation would then fail to move)."""
        rng = np.random.default_rng(seed)
        pts = rng.normal(0, 1.5, (40, 2))
        tree = build_tree(pts, seed=seed)
        leaf = next(n for n in tree.leaf_ids
                    if tree.nodes[n].members.size >= 2)
        node = tree.nodes[leaf]
        mem = node.members
        outside = np.setdiff1d(np.arange(40), mem)
        far = int(mem[np.linalg.norm(pts[mem] - node.centroid,
                                     axis=1).argmax()])
        edges = [(int(mem[0]), int(mem[1]))]
        edges += [(int(outside[t]), int(outside[t + 1]))
                  for t in range(0, 6, 2)]
        if external:
            edges.append((far, int(outside[-1])))
        edges = np.array(sorted({(min(a, b), max(a, b)) for a, b in edges}),
                         dtype=np.int64)
        g = Graph(mode=UNDIRECTED, n1=40, n2=0, edges=edges,
                  labels1=tuple(str(t) for t in range(40)))
        state = EmbeddingState.unipartite(pts.copy(), rng.normal(0, 0.2, 40))
        return g, state, tree, leaf

    def test_criterion_05_rotation_awareness(self):
        """The block approximation must feel the orientation of a leaf that
        has outside edges, and must be exactly blind to one that doesn't."""
        t0 = time.perf_counter()
        angles = (math.pi / 3, math.pi / 2, math.pi)
        min_ext = math.inf
        max_int = 0.0
        for seed in range(10):
            g, state, tree, leaf = self._rotation_instance(500 + seed, True)
            for theta in angles:
                before, after = rotation_sensitivity(g, state, tree, leaf,
                                                     theta)
                min_ext = min(min_ext, abs(after - before))
            g, state, tree, leaf = self._rotation_instance(600 + seed, False)
            for theta in angles:
                before, after = rotation_sensitivity(g, state, tree, leaf,
                                                     theta)
                max_int = max(max_int, abs(after - before))
        elapsed = time.perf_counter() - t0
        ok = min_ext > 1e-6 and max_int < 1e-9 and elapsed < 60.0
        _report(5, "leaf rotation felt iff the leaf has external edges", ok,
                f"min external delta {min_ext:.2e} > 1e-6, max internal "
                f"delta {max_int:.2e} < 1e-9 ({elapsed:.1f}s < 60s)")

    def test_criterion_06_complexity_scaling(self):
        """Objective evaluation cost grows near-linearithmically: a N*lnN
        law fits the measured times and the raw exponent stays near 1."""
        t0 = time.perf_counter()
        sizes = [16384, 32768, 65536, 131072, 262144]
        times = []
        for n in sizes:
            rng = np.random.default_rng(0)
            edges = _random_edges(n, 4 * n, rng)  # mean degree 8
            g = Graph(mode=UNDIRECTED, n1=n, n2=0, edges=edges,
                      labels1=tuple(str(i) for i in range(n)))
            coords = rng.normal(0, 1, (n, 2))
            state = EmbeddingState.unipartite(coords, rng.normal(0, 0.1, n))
            tree = build_tree(coords, seed=0)
            hbdm_nll(g, state, tree)  # warmup; also builds the pair cache
            best = math.inf
            for _ in range(5):
                s = time.perf_counter()
                hbdm_nll(g, state, tree)
                best = min(best, time.perf_counter() - s)
            times.append(best)
        y = np.log(np.array(times))
        ns = np.array(sizes, dtype=np.float64)
        x = np.log(ns * np.log(ns))
        slope, intercept = np.polyfit(x, y, 1)
        pred = slope * x + intercept
        r2 = 1.0 - np.sum((y - pred) ** 2) / np.sum((y - np.mean(y)) ** 2)
        exponent = float(np.polyfit(np.log(ns), y, 1)[0])
        elapsed = time.perf_counter() - t0
        ok = r2 >= 0.95 and 1.0 <= exponent <= 1.25 and elapsed < 900.0
        per_size = ", ".join(f"{n}:{t * 1000:.0f}ms"
                             for n, t in zip(sizes, times))
        _report(6, "objective evaluation scales like N*lnN", ok,
                f"R^2 {r2:.4f} >= 0.95, exponent {exponent:.3f} in "
                f"[1.0, 1.25]; {per_size} ({elapsed:.0f}s < 900s)")

    # -- benchmark replays (need datasets on disk) --------------------------

    @staticmethod
    def _link_prediction_auc(path, mode, dim, random_effects, seed,
                             iters=3000):
        g = load_edge_list(path, mode=mode, giant_only=True)
        split = make_split(g, 0.5, seed=seed)
        cfg = TrainConfig(dim=dim, random_effects=random_effects,
                          iters=iters, seed=seed)
        state, _, _ = fit(split.train_graph, cfg)
        pos = score_pairs(state, split.test_edges)
        neg = score_pairs(state, split.test_nonedges)
        return auc_roc(pos, neg)

    def test_criterion_07_link_prediction_benchmarks(self):
        """Half the edges hidden, AUC-ROC against an equal sample of
        non-edges, four published settings."""
        _require_data(7, "grqc.txt", "facebook.txt", "cora.edges")
        t0 = time.perf_counter()
        runs = [
            ("GrQc D=2 per-node biases", "grqc.txt", 2, True, 0.926, 0.02),
            ("Facebook D=2 global bias", "facebook.txt", 2, False,
             0.980, 0.015),
            ("Cora D=2 global bias", "cora.edges", 2, False, 0.786, 0.03),
            ("GrQc D=8 per-node biases", "grqc.txt", 8, True, 0.953, 0.02),
        ]
        results = []
        ok = True
        for name, fname, dim, re_flag, target, tol in runs:
            auc = self._link_prediction_auc(DATA_DIR / fname, "undirected",
                                            dim, re_flag, seed=7)
            hit = abs(auc - target) <= tol
            ok = ok and hit
            results.append(f"{name}: {auc:.3f} (want {target}+/-{tol})")
        elapsed = time.perf_counter() - t0
        ok = ok and elapsed < 7200.0
        _report(7, "link-prediction AUC benchmarks", ok,
                "; ".join(results) + f" ({elapsed:.0f}s < 7200s)")

    def test_criterion_08_likelihood_tracking(self):
        """The hierarchical objective tracks the exact one on a real graph,
        sitting slightly above it (a likelihood lower bound in spirit)."""
        _require_data(8, "facebook.txt")
        t0 = time.perf_counter()
        g = load_edge_list(DATA_DIR / "facebook.txt", mode="undirected",
                           giant_only=True)
        iters = 2000
        cfg_h = TrainConfig(dim=2, iters=iters, seed=11)
        _, _, log_h = fit(g, cfg_h)
        cfg_e = TrainConfig(dim=2, iters=iters, seed=11, exact=True)
        _, _, log_e = fit(g, cfg_e)

        nll_h = np.array([rec["nll"] for rec in log_h])
        nll_e = np.array([rec["nll"] for rec in log_e])
        final_gap = abs(nll_h[-1] - nll_e[-1]) / abs(nll_e[-1])
        warmup = iters // 4
        above = float(np.mean(nll_h[warmup:] > nll_e[warmup:]))
        elapsed = time.perf_counter() - t0
        ok = final_gap < 0.05 and above >= 0.80 and elapsed < 3600.0
        _report(8, "hierarchical NLL tracks the exact NLL from above", ok,
                f"final gap {final_gap:.4f} < 0.05, above-exact fraction "
                f"{above:.2f} >= 0.80 after {warmup} warmup iterations "
                f"({elapsed:.0f}s < 3600s)")

    def test_criterion_09_node_classification(self):
        """Cora kNN classification from the learned coordinates."""
        _require_data(9, "cora.edges", "cora.labels")
        t0 = time.perf_counter()
        g = load_edge_list(DATA_DIR / "cora.edges", mode="undirected",
                           giant_only=True)
        table = load_labels(str(DATA_DIR / "cora.labels"))
        labels = [table[lab] for lab in g.labels1]
        results = []
        ok = True
        for re_flag, target, tol in ((False, 0.789, 0.04),
                                     (True, 0.805, 0.04)):
            cfg = TrainConfig(dim=2, random_effects=re_flag, iters=3000,
                              seed=9)
            state, _, _ = fit(g, cfg)
            coords, _ = state.stacked()
            res = knn_classify(coords[:g.n1], labels, train_frac=0.5, k=10,
                               trials=10, seed=9)
            hit = abs(res.micro_f1 - target) <= tol
            ok = ok and hit
            kind = "per-node biases" if re_flag else "global bias"
            results.append(f"{kind}: micro-F1 {res.micro_f1:.3f} "
                           f"(want {target}+/-{tol})")
        elapsed = time.perf_counter() - t0
        ok = ok and elapsed < 1800.0
        _report(9, "node-classification micro-F1 benchmarks", ok,
                "; ".join(results) + f" ({elapsed:.0f}s < 1800s)")

    def test_criterion_10_bipartite_link_prediction(self):
        """Drug-gene bipartite benchmark; the web-scale corpora stay out of
        scope by design."""
        _require_data(10, "drug_gene.tsv")
        t0 = time.perf_counter()
        auc = self._link_prediction_auc(DATA_DIR / "drug_gene.tsv",
                                        "bipartite", 2, True, seed=10)
        elapsed = time.perf_counter() - t0
        ok = abs(auc - 0.846) <= 0.03 and elapsed < 1800.0
        _report(10, "bipartite link-prediction AUC benchmark", ok,
                f"AUC {auc:.3f} (want 0.846+/-0.03) "
                f"({elapsed:.0f}s < 1800s)")
