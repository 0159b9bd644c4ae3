"""End-to-end command-line runs against tiny edge lists in tmp dirs."""

import json
import os

import numpy as np
import pytest

from conftest import write_edge_file
from hbdm import cli
from hbdm.train import TrainingDiverged


def two_blob_lines(n_per=15, seed=0):
    """Edge list text for two dense blobs joined by one bridge."""
    rng = np.random.default_rng(seed)
    lines = []
    for base in (0, n_per):
        ids = range(base, base + n_per)
        for i in ids:
            for j in ids:
                if i < j and rng.random() < 0.6:
                    lines.append(f"a{i} a{j}")
    lines.append(f"a0 a{n_per}")
    return lines


def ring_with_chords(n=24, chords=8, seed=1):
    rng = np.random.default_rng(seed)
    lines = [f"v{i} v{(i + 1) % n}" for i in range(n)]
    added = set()
    while len(added) < chords:
        i, j = sorted(rng.integers(0, n, 2).tolist())
        if j - i > 1 and (i, j) not in added and (i, j) != (0, n - 1):
            added.add((i, j))
            lines.append(f"v{i} v{j}")
    return lines


@pytest.fixture
def blob_file(tmp_path):
    path = tmp_path / "blobs.txt"
    write_edge_file(path, two_blob_lines())
    return path


def run_embed(path, out, *extra):
    args = ["embed", "--input", str(path), "--out", str(out),
            "--iters", "40", "--seed", "3"]
    return cli.main(args + list(extra))


class TestEmbedCommand:
    def test_writes_all_outputs(self, blob_file, tmp_path, capsys):
        out = tmp_path / "run"
        assert run_embed(blob_file, out) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        run_id = manifest["run_id"]
        assert len(run_id) == 12

        emb = (out / "embeddings.csv").read_text().splitlines()
        assert emb[0] == f"# run_id: {run_id}"

        tree_doc = json.loads((out / "tree.json").read_text())
        assert tree_doc["run_id"] == run_id

        log_lines = (out / "train.log.jsonl").read_text().splitlines()
        head = json.loads(log_lines[0])
        assert head == {"header": True, "run_id": run_id}
        assert len(log_lines) == 1 + 40
        rec = json.loads(log_lines[1])
        assert {"iter", "nll", "rebuilt"} <= set(rec)

        assert manifest["counts"]["n_nodes"] == 30
        assert manifest["config"]["iters"] == 40
        assert manifest["diverged_at"] is None
        assert set(manifest["outputs"]) == {"embeddings.csv", "tree.json",
                                            "train.log.jsonl"}
        assert run_id in capsys.readouterr().out

    def test_reruns_are_byte_identical(self, blob_file, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert run_embed(blob_file, out1) == 0
        assert run_embed(blob_file, out2) == 0
        assert (out1 / "embeddings.csv").read_bytes() \
            == (out2 / "embeddings.csv").read_bytes()
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m1["run_id"] == m2["run_id"]

    def test_seed_changes_run_id(self, blob_file, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        cli.main(["embed", "--input", str(blob_file), "--out", str(out1),
                  "--iters", "5", "--seed", "1"])
        cli.main(["embed", "--input", str(blob_file), "--out", str(out2),
                  "--iters", "5", "--seed", "2"])
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m1["run_id"] != m2["run_id"]

    def test_missing_input_is_usage_error(self, tmp_path, capsys):
        code = cli.main(["embed", "--input", str(tmp_path / "nope.txt"),
                         "--out", str(tmp_path / "o")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_divergence_exit_code(self, blob_file, tmp_path, monkeypatch,
                                  capsys):
        import hbdm.train as train_mod

        def explode(g, cfg):
            from hbdm.model import EmbeddingState
            state = EmbeddingState.unipartite(np.zeros((g.n1, cfg.dim)),
                                              np.zeros(g.n1))
            raise TrainingDiverged(4, state, None, [{"iter": 0, "nll": 1.0}])

        monkeypatch.setattr(train_mod, "fit", explode)
        out = tmp_path / "run"
        code = cli.main(["embed", "--input", str(blob_file),
                         "--out", str(out)])
        assert code == 3
        assert "non-finite" in capsys.readouterr().err
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["diverged_at"] == 4
        # the last finite state is still exported for diagnosis
        assert (out / "embeddings.csv").exists()

    def test_no_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            cli.main([])
        assert err.value.code == 2


class TestConfigMerge:
    def test_config_file_feeds_defaults(self, blob_file, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"dim": 3, "lr": 0.05}))
        out = tmp_path / "run"
        assert run_embed(blob_file, out, "--config", str(cfg_path)) == 0
        cfg = json.loads((out / "manifest.json").read_text())["config"]
        assert cfg["dim"] == 3
        assert cfg["lr"] == 0.05

    def test_explicit_flag_beats_config(self, blob_file, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"dim": 3, "iters": 99}))
        out = tmp_path / "run"
        assert run_embed(blob_file, out, "--config", str(cfg_path),
                         "--dim", "2") == 0
        cfg = json.loads((out / "manifest.json").read_text())["config"]
        assert cfg["dim"] == 2
        assert cfg["iters"] == 40  # run_embed always passes --iters 40

    def test_unknown_config_key_rejected(self, blob_file, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"dim": 2, "learning_rate": 0.1}))
        code = run_embed(blob_file, tmp_path / "run",
                         "--config", str(cfg_path))
        assert code == 2
        assert "unknown config keys" in capsys.readouterr().err

    def test_invalid_config_value_rejected(self, blob_file, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"dim": 0}))
        code = run_embed(blob_file, tmp_path / "run",
                         "--config", str(cfg_path))
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestThreadCap:
    def test_flag_caps_blas_pools(self, blob_file, tmp_path, monkeypatch):
        monkeypatch.setenv("OMP_NUM_THREADS", "sentinel")
        out = tmp_path / "run"
        code = cli.main(["--threads", "2", "embed", "--input", str(blob_file),
                         "--out", str(out), "--iters", "3"])
        assert code == 0
        assert os.environ["OMP_NUM_THREADS"] == "2"
        assert os.environ["OPENBLAS_NUM_THREADS"] == "2"

    def test_env_var_fallback(self, blob_file, tmp_path, monkeypatch):
        monkeypatch.setenv("HBDM_THREADS", "3")
        monkeypatch.setenv("MKL_NUM_THREADS", "sentinel")
        out = tmp_path / "run"
        code = cli.main(["embed", "--input", str(blob_file),
                         "--out", str(out), "--iters", "3"])
        assert code == 0
        assert os.environ["MKL_NUM_THREADS"] == "3"

    def test_nonpositive_thread_count_rejected(self, capsys):
        code = cli.main(["--threads", "0", "embed", "--input", "x",
                         "--out", "y"])
        assert code == 2
        assert "threads" in capsys.readouterr().err


class TestLinkPredictionCommand:
    def test_metrics_written(self, tmp_path, capsys):
        edges = tmp_path / "ring.txt"
        write_edge_file(edges, ring_with_chords())
        out = tmp_path / "run"
        code = cli.main(["eval", "link-prediction", "--input", str(edges),
                         "--out", str(out), "--iters", "40", "--seed", "5",
                         "--hide-fraction", "0.3"])
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= metrics["auc_roc"] <= 1.0
        assert 0.0 <= metrics["auc_pr"] <= 1.0
        assert metrics["split_meta"]["n_test_edges"] > 0
        assert metrics["config"]["seed"] == 5
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["run_id"] == metrics["run_id"]
        assert "AUC-ROC" in capsys.readouterr().out

    def test_bad_hide_fraction(self, tmp_path, capsys):
        edges = tmp_path / "ring.txt"
        write_edge_file(edges, ring_with_chords())
        code = cli.main(["eval", "link-prediction", "--input", str(edges),
                         "--out", str(tmp_path / "o"),
                         "--hide-fraction", "1.5"])
        assert code == 2
        assert "hide-fraction" in capsys.readouterr().err


class TestClassifyCommand:
    @staticmethod
    def _label_file(tmp_path, n_per=15):
        path = tmp_path / "labels.tsv"
        rows = ["# node\tclass"]
        rows += [f"a{i}\tleft" for i in range(n_per)]
        rows += [f"a{i}\tright" for i in range(n_per, 2 * n_per)]
        path.write_text("\n".join(rows) + "\n")
        return path

    def test_metrics_written(self, blob_file, tmp_path, capsys):
        labels = self._label_file(tmp_path)
        out = tmp_path / "run"
        code = cli.main(["eval", "classify", "--input", str(blob_file),
                         "--out", str(out), "--iters", "60", "--seed", "2",
                         "--labels", str(labels), "--k", "3", "--trials", "4"])
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= metrics["micro_f1"] <= 1.0
        assert 0.0 <= metrics["macro_f1"] <= 1.0
        assert len(metrics["per_trial"]) == 4
        assert metrics["k"] == 3
        assert "micro-F1" in capsys.readouterr().out

    def test_unlabeled_node_rejected(self, blob_file, tmp_path, capsys):
        labels = tmp_path / "labels.tsv"
        labels.write_text("a0\tleft\n")
        code = cli.main(["eval", "classify", "--input", str(blob_file),
                         "--out", str(tmp_path / "o"), "--iters", "5",
                         "--labels", str(labels)])
        assert code == 2
        assert "missing" in capsys.readouterr().err

    def test_malformed_label_line_rejected(self, blob_file, tmp_path, capsys):
        labels = tmp_path / "labels.tsv"
        labels.write_text("a0 left\n")  # space, not tab
        code = cli.main(["eval", "classify", "--input", str(blob_file),
                         "--out", str(tmp_path / "o"), "--iters", "5",
                         "--labels", str(labels)])
        assert code == 2
        assert "line 1" in capsys.readouterr().err


class TestVizCommand:
    @pytest.fixture
    def run_dir(self, blob_file, tmp_path):
        out = tmp_path / "run"
        assert run_embed(blob_file, out) == 0
        return out

    def test_writes_figures(self, run_dir, capsys):
        code = cli.main(["viz", "--run", str(run_dir), "--levels", "1"])
        assert code == 0
        fig = run_dir / "figures"
        run_id = json.loads((run_dir / "manifest.json").read_text())["run_id"]
        for name in ("adjacency_l1.svg", "adjacency_l1.csv",
                     "adjacency_l1.meta.json", "dendrogram.json",
                     "dendrogram.newick", "scatter.svg", "scatter.csv",
                     "viz_manifest.json"):
            assert (fig / name).exists(), name
        meta = json.loads((fig / "adjacency_l1.meta.json").read_text())
        assert meta["run_id"] == run_id
        assert meta["level"] == 1
        svg_head = (fig / "adjacency_l1.svg").read_text().splitlines()[0]
        assert run_id in svg_head
        newick = (fig / "dendrogram.newick").read_text().splitlines()
        assert newick[0] == f"# run_id: {run_id}"
        assert newick[1].endswith(";")
        assert run_id in capsys.readouterr().out

    def test_scatter_groups_cover_labels(self, run_dir, tmp_path):
        labels = TestClassifyCommand._label_file(tmp_path)
        code = cli.main(["viz", "--run", str(run_dir),
                         "--labels", str(labels)])
        assert code == 0
        scatter = (run_dir / "figures" / "scatter.csv").read_text()
        assert "left" in scatter and "right" in scatter

    def test_missing_manifest(self, tmp_path, capsys):
        code = cli.main(["viz", "--run", str(tmp_path / "empty")])
        assert code == 2
        assert "error: missing" in capsys.readouterr().err

    def test_missing_tree(self, run_dir, capsys):
        (run_dir / "tree.json").unlink()
        code = cli.main(["viz", "--run", str(run_dir)])
        assert code == 2
        assert "tree.json" in capsys.readouterr().err

    def test_level_out_of_range(self, run_dir, capsys):
        code = cli.main(["viz", "--run", str(run_dir), "--levels", "99"])
        assert code == 2
        assert "height" in capsys.readouterr().err

    def test_garbled_levels(self, run_dir, capsys):
        code = cli.main(["viz", "--run", str(run_dir), "--levels", "1,x"])
        assert code == 2
        assert "levels" in capsys.readouterr().err
