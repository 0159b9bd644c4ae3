"""Visualization exports: dendrograms, ordered adjacency plots, scatters.

Everything is emitted as deterministic text (SVG / CSV / JSON / Newick): the
same inputs produce byte-identical files, which keeps figures diffable and
reproducible without raster dependencies.

Cluster "size" throughout is Log2-SED, the binary log of the summed
member-to-centroid Euclidean distances.  The top K1 clusters of a hierarchy
are ordered by agglomerative merging under the linkage

    Delta(A, B) = (1 / (N_A + N_B)) * sum_{i in A u B} ||z_i - mean(A u B)||

(the average distance of the union's members to the union's coordinate
mean); within a top cluster the divisive tree's own child order is kept.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graph import BIPARTITE, DIRECTED, UNDIRECTED, Graph
from .hierarchy import ClusterTree, TreeError
from .model import EmbeddingState

LOG2_SED_FLOOR = -40.0

# Ten visually distinct fill colors; group g uses PALETTE[g % 10].
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def log2_sed(member_coords: np.ndarray, centroid: np.ndarray,
             floor: float = LOG2_SED_FLOOR) -> float:
    """log2 of the summed member-to-centroid distances, floored for
    degenerate clusters whose summed distance underflows 2**floor."""
    member_coords = np.asarray(member_coords, dtype=np.float64)
    if member_coords.ndim != 2 or member_coords.shape[0] == 0:
        raise ValueError("need a non-empty (m, D) coordinate block")
    s = float(np.sum(np.sqrt(np.sum((member_coords - centroid) ** 2, axis=1))))
    if s <= 2.0 ** floor:
        return floor
    return float(np.log2(s))


# ---------------------------------------------------------------------------
# Agglomeration of the top-level clusters
# ---------------------------------------------------------------------------

@dataclass
class _Merge:
    left: int         # positions in the evolving cluster list
    right: int
    delta: float      # monotone (max-accumulated) linkage value
    delta_raw: float  # the bare Delta(A, B) of this merge
    members: np.ndarray


def _delta(coords: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    union = np.concatenate([a, b])
    mu = coords[union].mean(axis=0)
    d = np.sqrt(np.sum((coords[union] - mu) ** 2, axis=1))
    return float(d.sum() / len(union))


def _agglomerate(coords: np.ndarray, member_lists: list[np.ndarray]
                 ) -> tuple[list[_Merge], list[int]]:
    """Greedy minimum-Delta agglomeration.

    Returns the merge sequence and the left-to-right order of the original
    clusters implied by it.  Merge values are max-accumulated so the recorded
    sequence is non-decreasing (greedy Delta linkage is not guaranteed
    monotone on its own); ties break toward the lexicographically smallest
    pair of active-cluster indices.
    """
    active: list[tuple[int, np.ndarray, list[int]]] = [
        (i, m, [i]) for i, m in enumerate(member_lists)]
    merges: list[_Merge] = []
    floor_h = -np.inf
    while len(active) > 1:
        best = None
        for x in range(len(active)):
            for y in range(x + 1, len(active)):
                d = _delta(coords, active[x][1], active[y][1])
                if best is None or d < best[0]:
                    best = (d, x, y)
        d, x, y = best
        keep_raw = d
        d = max(d, floor_h) if merges else d
        floor_h = d
        ax, ay = active[x], active[y]
        merged = (min(ax[0], ay[0]),
                  np.concatenate([ax[1], ay[1]]),
                  ax[2] + ay[2])
        merges.append(_Merge(left=ax[0], right=ay[0], delta=d,
                             delta_raw=keep_raw, members=merged[1]))
        active = [c for i, c in enumerate(active) if i not in (x, y)]
        active.append(merged)
    order = active[0][2] if active else []
    return merges, order


def order_nodes(tree: ClusterTree, coords: np.ndarray) -> np.ndarray:
    """Total order of the points: top clusters by agglomerative merge order,
    then recursively by the divisive child order, then by point id."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] != tree.n_points:
        raise TreeError(
            f"embedding holds {coords.shape[0]} points, tree {tree.n_points}")
    top = tree.levels[0]
    if len(top) > 1:
        _, top_order = _agglomerate(coords, [tree.nodes[i].members for i in top])
        ordered_top = [top[i] for i in top_order]
    else:
        ordered_top = list(top)

    out: list[np.ndarray] = []

    def descend(nid: int) -> None:
        node = tree.nodes[nid]
        if node.is_leaf:
            out.append(np.sort(node.members))
            return
        for child in node.children:
            descend(child)

    for nid in ordered_top:
        descend(nid)
    order = np.concatenate(out)
    if not np.array_equal(np.sort(order), np.arange(tree.n_points)):
        raise TreeError("ordering failed to produce a permutation")
    return order


# ---------------------------------------------------------------------------
# Dendrogram
# ---------------------------------------------------------------------------

@dataclass
class Dendrogram:
    """Nested {node, height, children} structure; heights are Log2-SED."""

    root: dict

    def leaf_names(self) -> list:
        names = []

        def walk(d: dict) -> None:
            if not d["children"]:
                names.append(d["node"])
                return
            for c in d["children"]:
                walk(c)

        walk(self.root)
        return names

    def to_json(self, path=None) -> str:
        text = json.dumps(self.root, indent=1, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_newick(self) -> str:
        """Newick string with branch lengths = parent height - child height
        (clamped at 0 where the raw heights invert)."""
        def clean(name) -> str:
            s = str(name)
            for ch in " (),:;'\"[]":
                s = s.replace(ch, "_")
            return s

        def walk(d: dict, parent_h: float | None) -> str:
            if d["children"]:
                inner = ",".join(walk(c, d["height"]) for c in d["children"])
                rep = f"({inner}){clean(d['node'])}"
            else:
                rep = clean(d["node"])
            if parent_h is None:
                return rep
            return f"{rep}:{max(parent_h - d['height'], 0.0):.6f}"

        return walk(self.root, None) + ";"


def build_dendrogram(tree: ClusterTree, coords: np.ndarray,
                     labels=None) -> Dendrogram:
    """Dendrogram over the full hierarchy plus the agglomerated top.

    Cluster nodes sit at their Log2-SED height (build-time centroids);
    individual points hang below their leaf cluster at the floor height.
    The merges that order the top clusters are placed at the Log2-SED of the
    merged super-cluster, computed against the union's coordinate mean (the
    same statistic the linkage uses, before the 1/N normalization).
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] != tree.n_points:
        raise TreeError(
            f"embedding holds {coords.shape[0]} points, tree {tree.n_points}")

    def point_name(i: int):
        return labels[i] if labels is not None else int(i)

    def cluster_dict(nid: int) -> dict:
        node = tree.nodes[nid]
        h = log2_sed(coords[node.members], node.centroid)
        if node.is_leaf:
            kids = [{"node": point_name(int(i)), "height": LOG2_SED_FLOOR,
                     "children": []} for i in np.sort(node.members)]
        else:
            kids = [cluster_dict(c) for c in node.children]
        return {"node": f"c{nid}", "height": h, "children": kids}

    top = tree.levels[0]
    if len(top) == 1:
        return Dendrogram(root=cluster_dict(top[0]))

    merges, _ = _agglomerate(coords, [tree.nodes[i].members for i in top])
    built: dict[int, dict] = {i: cluster_dict(nid) for i, nid in enumerate(top)}
    for k, mg in enumerate(merges):
        mu = coords[mg.members].mean(axis=0)
        h = log2_sed(coords[mg.members], mu)
        built[mg.left] = {"node": f"m{k}", "height": h,
                          "children": [built[mg.left], built[mg.right]]}
        del built[mg.right]
    (root,) = built.values()
    return Dendrogram(root=root)


# ---------------------------------------------------------------------------
# SVG primitives
# ---------------------------------------------------------------------------

def _svg_open(width: int, height: int) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]


def _write_svg(path, parts: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts + ["</svg>"]) + "\n")


# ---------------------------------------------------------------------------
# Ordered adjacency plot
# ---------------------------------------------------------------------------

def adjacency_image(g: Graph, tree: ClusterTree, ordering: np.ndarray,
                    level: int, svg_path, csv_path=None) -> dict:
    """Dot-plot of the adjacency permuted by ``ordering``, with cluster
    boundaries of the requested level overlaid.  Returns boundary metadata
    {level, row_segments, col_segments}; segments are half-open position
    ranges [start, end) labeled by cluster node id."""
    if not 1 <= level <= tree.height:
        raise TreeError(f"level {level} exceeds the tree height {tree.height}")
    ordering = np.asarray(ordering, dtype=np.int64)
    pos = np.empty(tree.n_points, dtype=np.int64)
    pos[ordering] = np.arange(tree.n_points)

    two_sided = g.mode in (BIPARTITE, DIRECTED)
    if two_sided:
        side1 = ordering[ordering < g.n1]
        side2 = ordering[ordering >= g.n1]
        row_pos = np.empty(g.n1, dtype=np.int64)
        row_pos[side1] = np.arange(len(side1))
        col_pos = np.empty(tree.n_points - g.n1, dtype=np.int64)
        col_pos[side2 - g.n1] = np.arange(len(side2))
        n_rows, n_cols = len(side1), len(side2)
    else:
        row_pos = col_pos = pos
        n_rows = n_cols = tree.n_points

    def segments(which_pos, node_filter) -> list[dict]:
        segs = []
        for nid in tree.levels[level - 1]:
            members = tree.nodes[nid].members
            members = node_filter(members)
            if members.size == 0:
                continue
            p = which_pos[members]
            segs.append({"node": int(nid), "start": int(p.min()),
                         "end": int(p.max()) + 1})
        return sorted(segs, key=lambda s: s["start"])

    if two_sided:
        row_segments = segments(row_pos, lambda m: m[m < g.n1])
        col_segments = segments(col_pos, lambda m: m[m >= g.n1] - g.n1)
    else:
        row_segments = col_segments = segments(row_pos, lambda m: m)

    rows_i = g.edges[:, 0]
    cols_j = g.edges[:, 1]
    r = row_pos[rows_i]
    c = col_pos[cols_j]
    if g.mode == UNDIRECTED:
        # Mirror each dot: (a, b) and (b, a) are the same undirected edge.
        r, c = np.concatenate([r, c]), np.concatenate([c, r])

    size = 640
    sx = size / max(n_cols, 1)
    sy = size / max(n_rows, 1)
    dot_w = max(sx, 0.75)
    dot_h = max(sy, 0.75)
    parts = _svg_open(size, size)
    order_idx = np.lexsort((c, r))
    for k in order_idx:
        parts.append(f'<rect x="{c[k] * sx:.2f}" y="{r[k] * sy:.2f}" '
                     f'width="{dot_w:.2f}" height="{dot_h:.2f}" fill="#1a1a66"/>')
    for seg in row_segments[1:]:
        y = seg["start"] * sy
        parts.append(f'<line x1="0" y1="{y:.2f}" x2="{size}" y2="{y:.2f}" '
                     f'stroke="#d62728" stroke-width="1"/>')
    for seg in col_segments[1:]:
        x = seg["start"] * sx
        parts.append(f'<line x1="{x:.2f}" y1="0" x2="{x:.2f}" y2="{size}" '
                     f'stroke="#d62728" stroke-width="1"/>')
    _write_svg(svg_path, parts)

    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("row,col\n")
            for k in order_idx:
                fh.write(f"{r[k]},{c[k]}\n")

    return {"level": level, "row_segments": row_segments,
            "col_segments": col_segments}


# ---------------------------------------------------------------------------
# Embedding scatter
# ---------------------------------------------------------------------------

def embedding_scatter(state: EmbeddingState, groups=None,
                      svg_path=None, csv_path=None) -> dict:
    """Scatter of the latent positions, colored by ``groups`` (any per-point
    ids over the stacked point set).  D=2 states get an SVG; other D refuse
    the SVG and only write the CSV.  Two-sided states draw the second mode as
    squares.  Returns {svg_written, csv_written, message}."""
    coords, _ = state.stacked()
    n = coords.shape[0]
    if groups is None:
        groups = np.zeros(n, dtype=np.int64)
    groups = np.asarray(groups)
    if len(groups) != n:
        raise ValueError("one group id per stacked point required")
    uniq = {g: i for i, g in enumerate(sorted(set(groups.tolist()), key=str))}

    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            header = ",".join(["point", "group"] +
                              [f"z_{k + 1}" for k in range(state.dim)])
            fh.write(header + "\n")
            for i in range(n):
                row = ",".join([str(i), str(groups[i])] +
                               [repr(float(x)) for x in coords[i]])
                fh.write(row + "\n")

    if state.dim != 2:
        msg = (f"scatter SVG needs D=2 embeddings (got D={state.dim}); "
               f"coordinates are in the CSV export")
        return {"svg_written": False, "csv_written": csv_path is not None,
                "message": msg}
    if svg_path is not None:
        size = 640
        pad = 0.05 * max(np.ptp(coords[:, 0]), np.ptp(coords[:, 1]), 1e-9)
        lo = coords.min(axis=0) - pad
        hi = coords.max(axis=0) + pad
        span = np.maximum(hi - lo, 1e-9)
        parts = _svg_open(size, size)
        n1 = state.n1 if state.mode != UNDIRECTED else n
        for i in range(n):
            x = (coords[i, 0] - lo[0]) / span[0] * size
            y = size - (coords[i, 1] - lo[1]) / span[1] * size
            color = PALETTE[uniq[groups[i]] % len(PALETTE)]
            if i < n1:
                parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" '
                             f'fill="{color}" fill-opacity="0.8"/>')
            else:
                parts.append(f'<rect x="{x - 2.6:.2f}" y="{y - 2.6:.2f}" '
                             f'width="5.2" height="5.2" fill="{color}" '
                             f'fill-opacity="0.8"/>')
        _write_svg(svg_path, parts)
    return {"svg_written": svg_path is not None,
            "csv_written": csv_path is not None, "message": ""}


def top_cluster_groups(tree: ClusterTree) -> np.ndarray:
    """Per-point id of the level-1 cluster (for coloring scatters)."""
    out = np.empty(tree.n_points, dtype=np.int64)
    for nid in tree.levels[0]:
        out[tree.nodes[nid].members] = nid
    return out
