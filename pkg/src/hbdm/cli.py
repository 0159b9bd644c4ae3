"""Command-line interface: embed / eval / viz.

Heavy modules are imported lazily so that the thread cap (--threads flag or
the HBDM_THREADS environment variable) can be applied to the BLAS thread
pools before numpy is first loaded.

Every run writes a manifest with a deterministic run id derived from the
input file hash, the effective configuration, and the seed; all other output
files carry that id (CSV/JSONL/SVG as a comment, JSON as a key), so a run
directory is self-describing and reruns are byte-identical.

Exit codes: 0 success, 2 usage or input errors, 3 training divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

USAGE_EXIT = 2
DIVERGED_EXIT = 3

_TRAIN_FLAGS = ("dim", "lr", "iters", "rebuild_every", "random_effects",
                "exact", "seed", "init_scale", "centroid_mode")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, default=None, help="embedding dimension")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate")
    p.add_argument("--iters", type=int, default=None, help="training iterations")
    p.add_argument("--rebuild-every", type=int, default=None,
                   help="hierarchy rebuild period (iterations)")
    p.add_argument("--random-effects", type=_parse_bool, default=None,
                   metavar="BOOL", help="per-node bias terms (false ties them "
                   "to one shared scalar)")
    p.add_argument("--exact", type=_parse_bool, default=None, metavar="BOOL",
                   help="optimize the exact O(N^2) objective (small graphs)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--init-scale", type=float, default=None)
    p.add_argument("--centroid-mode", choices=("flow", "fixed"), default=None)
    p.add_argument("--config", default=None,
                   help="JSON file with defaults; explicit flags override it")


def _add_io_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="edge list file")
    p.add_argument("--mode", choices=("undirected", "directed", "bipartite"),
                   default="undirected")
    p.add_argument("--giant-component", action="store_true",
                   help="keep only the largest connected component")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hbdm",
        description="Hierarchical block distance model embeddings")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap numeric thread pools (or set HBDM_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_embed = sub.add_parser("embed", help="train embeddings on a graph")
    _add_io_flags(p_embed)
    _add_train_flags(p_embed)

    p_eval = sub.add_parser("eval", help="evaluation harnesses")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p_link = eval_sub.add_parser("link-prediction",
                                 help="hide edges, train on the rest, score AUC")
    _add_io_flags(p_link)
    _add_train_flags(p_link)
    p_link.add_argument("--hide-fraction", type=float, default=0.5)

    p_cls = eval_sub.add_parser("classify", help="kNN node classification")
    _add_io_flags(p_cls)
    _add_train_flags(p_cls)
    p_cls.add_argument("--labels", required=True,
                       help="label file: node_label<TAB>class[,class...]")
    p_cls.add_argument("--k", type=int, default=10)
    p_cls.add_argument("--trials", type=int, default=10)
    p_cls.add_argument("--train-frac", type=float, default=0.5)

    p_viz = sub.add_parser("viz", help="figures for a trained run directory")
    p_viz.add_argument("--run", required=True, help="directory written by embed")
    p_viz.add_argument("--levels", default="1",
                       help="comma-separated hierarchy levels for adjacency plots")
    p_viz.add_argument("--labels", default=None,
                       help="optional label file for scatter coloring")
    return parser


def _apply_thread_cap(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get("HBDM_THREADS")
        threads = int(env) if env else None
    if threads is not None:
        if threads < 1:
            raise ValueError("--threads must be >= 1")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(threads)


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _effective_train_config(args) -> dict:
    """Merge precedence: built-in defaults < --config JSON < explicit flags."""
    from .train import TrainConfig

    merged = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(_TRAIN_FLAGS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in _TRAIN_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    cfg = TrainConfig(**merged)
    return {key: getattr(cfg, key) for key in _TRAIN_FLAGS}


def _run_id(input_hash: str, config: dict, seed: int) -> str:
    blob = json.dumps({"input": input_hash, "config": config, "seed": seed},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _stamp_comment_file(path: str, run_id: str, comment_prefix="#") -> None:
    with open(path, "r", encoding="utf-8") as fh:
        body = fh.read()
    if path.endswith(".svg"):
        stamp = f"<!-- run_id: {run_id} -->\n"
    else:
        stamp = f"{comment_prefix} run_id: {run_id}\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(stamp + body)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_graph(args):
    from .graph import load_edge_list

    return load_edge_list(args.input, mode=args.mode,
                          giant_only=args.giant_component)


def _write_train_log(path: str, run_id: str, log: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": True, "run_id": run_id}) + "\n")
        for rec in log:
            fh.write(json.dumps(rec) + "\n")


def load_labels(path: str) -> dict[str, tuple[str, ...]]:
    """Parse ``node_label<TAB>class[,class...]`` lines ('#' comments allowed)."""
    out: dict[str, tuple[str, ...]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(
                    f"{path}: line {lineno}: expected node<TAB>class[,class...]")
            node, classes = parts
            out[node] = tuple(c.strip() for c in classes.split(",") if c.strip())
            if not out[node]:
                raise ValueError(f"{path}: line {lineno}: empty class list")
    if not out:
        raise ValueError(f"{path}: no labels found")
    return out


def _labels_for_graph(g, table: dict[str, tuple[str, ...]]) -> list:
    missing = [lab for lab in g.labels1 if lab not in table]
    if missing:
        shown = ", ".join(missing[:5])
        raise ValueError(
            f"label file is missing {len(missing)} node(s), e.g.: {shown}")
    return [table[lab] for lab in g.labels1]


def cmd_embed(args) -> int:
    from . import __version__
    from .model import clamp_stats, save_embeddings_csv
    from .train import TrainConfig, TrainingDiverged, fit

    t_start = time.perf_counter()
    config = _effective_train_config(args)
    os.makedirs(args.out, exist_ok=True)
    input_hash = _sha256_file(args.input)
    run_id = _run_id(input_hash, {**config, "mode": args.mode,
                                  "giant_component": args.giant_component},
                     config["seed"])
    g = _load_graph(args)
    t_load = time.perf_counter()

    clamp_stats.reset()
    cfg = TrainConfig(**config)
    diverged_at = None
    try:
        state, tree, log = fit(g, cfg)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        state, tree, log = exc.state, exc.tree, exc.log
        diverged_at = exc.iteration
    t_train = time.perf_counter()

    outputs: dict[str, str] = {}
    emb_paths = save_embeddings_csv(state, g, args.out)
    for p in emb_paths:
        _stamp_comment_file(p, run_id)
        outputs[os.path.basename(p)] = os.path.basename(p)
    if tree is not None:
        tree_path = os.path.join(args.out, "tree.json")
        tree.to_json(tree_path)
        with open(tree_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        payload["run_id"] = run_id
        _write_json(tree_path, payload)
        outputs["tree.json"] = "tree.json"
    log_path = os.path.join(args.out, "train.log.jsonl")
    _write_train_log(log_path, run_id, log)
    outputs["train.log.jsonl"] = "train.log.jsonl"

    manifest = {
        "run_id": run_id,
        "version": __version__,
        "command": "embed",
        "input": {"path": os.path.abspath(args.input), "sha256": input_hash},
        "mode": args.mode,
        "giant_component": args.giant_component,
        "config": config,
        "seed": config["seed"],
        "counts": {"n_nodes": g.num_nodes, "n_edges": g.num_edges},
        "outputs": outputs,
        "timings": {"load_s": round(t_load - t_start, 6),
                    "train_s": round(t_train - t_load, 6),
                    "total_s": round(time.perf_counter() - t_start, 6)},
        "exp_clamp_events": clamp_stats.count,
        "diverged_at": diverged_at,
    }
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    if diverged_at is not None:
        return DIVERGED_EXIT
    print(f"run {run_id}: embedded {g.num_nodes} nodes "
          f"({g.num_edges} edges) into D={config['dim']} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    if args.eval_command == "link-prediction":
        return _eval_link_prediction(args)
    return _eval_classify(args)


def _eval_link_prediction(args) -> int:
    from . import __version__
    from .evaluate import auc_pr, auc_roc, make_split, score_pairs
    from .train import TrainConfig, TrainingDiverged, fit

    if not 0.0 < args.hide_fraction < 1.0:
        print("error: --hide-fraction must lie in (0, 1)", file=sys.stderr)
        return USAGE_EXIT
    config = _effective_train_config(args)
    os.makedirs(args.out, exist_ok=True)
    input_hash = _sha256_file(args.input)
    run_id = _run_id(input_hash,
                     {**config, "mode": args.mode, "eval": "link-prediction",
                      "hide_fraction": args.hide_fraction,
                      "giant_component": args.giant_component},
                     config["seed"])
    g = _load_graph(args)
    split = make_split(g, args.hide_fraction, seed=config["seed"])

    cfg = TrainConfig(**config)
    try:
        state, _, log = fit(split.train_graph, cfg)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DIVERGED_EXIT

    pos = score_pairs(state, split.test_edges)
    neg = score_pairs(state, split.test_nonedges)
    metrics = {
        "run_id": run_id,
        "auc_roc": auc_roc(pos, neg),
        "auc_pr": auc_pr(pos, neg),
        "split_meta": split.meta(),
        "config": config,
    }
    _write_json(os.path.join(args.out, "metrics.json"), metrics)
    _write_train_log(os.path.join(args.out, "train.log.jsonl"), run_id, log)
    manifest = {
        "run_id": run_id, "version": __version__, "command": "eval/link-prediction",
        "input": {"path": os.path.abspath(args.input), "sha256": input_hash},
        "mode": args.mode, "config": config, "seed": config["seed"],
        "outputs": {"metrics.json": "metrics.json",
                    "train.log.jsonl": "train.log.jsonl"},
    }
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    print(f"run {run_id}: AUC-ROC {metrics['auc_roc']:.4f} "
          f"AUC-PR {metrics['auc_pr']:.4f} "
          f"({split.meta()['n_test_edges']} hidden edges)")
    return 0


def _eval_classify(args) -> int:
    from . import __version__
    from .evaluate import knn_classify
    from .train import TrainConfig, TrainingDiverged, fit

    config = _effective_train_config(args)
    os.makedirs(args.out, exist_ok=True)
    input_hash = _sha256_file(args.input)
    run_id = _run_id(input_hash,
                     {**config, "mode": args.mode, "eval": "classify",
                      "k": args.k, "trials": args.trials,
                      "train_frac": args.train_frac,
                      "labels": _sha256_file(args.labels),
                      "giant_component": args.giant_component},
                     config["seed"])
    g = _load_graph(args)
    labels = _labels_for_graph(g, load_labels(args.labels))

    cfg = TrainConfig(**config)
    try:
        state, _, log = fit(g, cfg)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DIVERGED_EXIT

    coords, _ = state.stacked()
    result = knn_classify(coords[:g.n1], labels, train_frac=args.train_frac,
                          k=args.k, trials=args.trials, seed=config["seed"])
    metrics = {
        "run_id": run_id,
        "micro_f1": result.micro_f1,
        "macro_f1": result.macro_f1,
        "per_trial": result.per_trial,
        "k": args.k, "trials": args.trials, "train_frac": args.train_frac,
        "config": config,
    }
    _write_json(os.path.join(args.out, "metrics.json"), metrics)
    _write_train_log(os.path.join(args.out, "train.log.jsonl"), run_id, log)
    manifest = {
        "run_id": run_id, "version": __version__, "command": "eval/classify",
        "input": {"path": os.path.abspath(args.input), "sha256": input_hash},
        "mode": args.mode, "config": config, "seed": config["seed"],
        "outputs": {"metrics.json": "metrics.json",
                    "train.log.jsonl": "train.log.jsonl"},
    }
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    print(f"run {run_id}: micro-F1 {result.micro_f1:.4f} "
          f"macro-F1 {result.macro_f1:.4f} over {args.trials} trials")
    return 0


def cmd_viz(args) -> int:
    import numpy as np

    from .graph import load_edge_list
    from .hierarchy import ClusterTree
    from .model import load_embeddings_csv
    from .viz import (adjacency_image, build_dendrogram, embedding_scatter,
                      order_nodes, top_cluster_groups)

    run_dir = args.run
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        print(f"error: missing {manifest_path}", file=sys.stderr)
        return USAGE_EXIT
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    run_id = manifest["run_id"]

    tree_path = os.path.join(run_dir, "tree.json")
    if not os.path.exists(tree_path):
        print(f"error: missing {tree_path}", file=sys.stderr)
        return USAGE_EXIT
    tree = ClusterTree.from_json(tree_path)

    input_path = manifest["input"]["path"]
    if not os.path.exists(input_path):
        print(f"error: missing original input {input_path}", file=sys.stderr)
        return USAGE_EXIT
    g = load_edge_list(input_path, mode=manifest["mode"],
                       giant_only=manifest.get("giant_component", False))

    if manifest["mode"] == "undirected":
        emb_files = [os.path.join(run_dir, "embeddings.csv")]
    else:
        emb_files = [os.path.join(run_dir, "embeddings_mode1.csv"),
                     os.path.join(run_dir, "embeddings_mode2.csv")]
    for p in emb_files:
        if not os.path.exists(p):
            print(f"error: missing {p}", file=sys.stderr)
            return USAGE_EXIT
    state = load_embeddings_csv(g, *emb_files)
    coords, _ = state.stacked()

    try:
        levels = [int(tok) for tok in args.levels.split(",") if tok.strip()]
    except ValueError:
        print(f"error: bad --levels {args.levels!r}", file=sys.stderr)
        return USAGE_EXIT
    for level in levels:
        if not 1 <= level <= tree.height:
            print(f"error: level {level} exceeds the tree height {tree.height}",
                  file=sys.stderr)
            return USAGE_EXIT

    fig_dir = os.path.join(run_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    ordering = order_nodes(tree, coords)
    outputs: dict[str, str] = {}

    for level in levels:
        svg = os.path.join(fig_dir, f"adjacency_l{level}.svg")
        csv_p = os.path.join(fig_dir, f"adjacency_l{level}.csv")
        meta = adjacency_image(g, tree, ordering, level, svg, csv_p)
        _write_json(os.path.join(fig_dir, f"adjacency_l{level}.meta.json"),
                    {"run_id": run_id, **meta})
        for p in (svg, csv_p):
            _stamp_comment_file(p, run_id)
            outputs[os.path.basename(p)] = os.path.basename(p)
        outputs[f"adjacency_l{level}.meta.json"] = f"adjacency_l{level}.meta.json"

    if manifest["mode"] == "undirected":
        stacked_labels = list(g.labels1)
    else:
        second = g.labels2 if manifest["mode"] == "bipartite" else g.labels1
        stacked_labels = list(g.labels1) + [f"{lab}(2)" for lab in second]
    dend = build_dendrogram(tree, coords, labels=stacked_labels)
    dend_json = os.path.join(fig_dir, "dendrogram.json")
    _write_json(dend_json, {"run_id": run_id, "root": dend.root})
    with open(os.path.join(fig_dir, "dendrogram.newick"), "w",
              encoding="utf-8") as fh:
        fh.write(f"# run_id: {run_id}\n" + dend.to_newick() + "\n")
    outputs["dendrogram.json"] = "dendrogram.json"
    outputs["dendrogram.newick"] = "dendrogram.newick"

    if args.labels:
        table = load_labels(args.labels)
        groups = [",".join(table.get(lab, ("?",))) for lab in g.labels1]
        if manifest["mode"] != "undirected":
            groups += ["mode2"] * (tree.n_points - g.n1)
        groups = np.asarray(groups)
    else:
        groups = top_cluster_groups(tree)
    scatter_svg = os.path.join(fig_dir, "scatter.svg")
    scatter_csv = os.path.join(fig_dir, "scatter.csv")
    result = embedding_scatter(state, groups, svg_path=scatter_svg,
                               csv_path=scatter_csv)
    _stamp_comment_file(scatter_csv, run_id)
    outputs["scatter.csv"] = "scatter.csv"
    if result["svg_written"]:
        _stamp_comment_file(scatter_svg, run_id)
        outputs["scatter.svg"] = "scatter.svg"
    else:
        print(result["message"])

    _write_json(os.path.join(fig_dir, "viz_manifest.json"),
                {"run_id": run_id, "outputs": outputs})
    print(f"run {run_id}: wrote {len(outputs)} figure file(s) -> {fig_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT

    handlers = {"embed": cmd_embed, "eval": cmd_eval, "viz": cmd_viz}
    try:
        return handlers[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
