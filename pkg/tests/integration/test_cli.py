"""
Integration tests for the hsr command line
"""

import orjson
import pytest

from hsr_reid.cli import ABLATION_CONFIGS, main

SMALL_CONFIG = """\
# tiny benchmark and a short run
num_ids = 12
cams = 3
samples_per_id_per_cam = 2
D_part = 8
alpha_cam = 0.6
twin_fraction = 0.34
noise_sigma = 0.1
seed = 3

iterations = 1
epochs_per_iter = 1
batches_per_epoch = 2
P_ids = 4
K_imgs = 2
D_out = 8
eps = 0.6
min_pts = 2
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "hsr.conf"
    path.write_text(SMALL_CONFIG)
    return path


@pytest.fixture
def data_dir(tmp_path, config_file):
    out = tmp_path / "data"
    assert main(["synth", "--config", str(config_file), "--out", str(out), "--log-level", "WARNING"]) == 0
    return out


def run(*argv):
    return main([*argv, "--log-level", "WARNING"])


class TestSynthCommand:
    """hsr synth"""

    def test_writes_dataset_files(self, data_dir):
        """Embeddings, metadata, split and twin list are written"""
        for name in ("embeddings.hsre", "metadata.csv", "split.csv", "twins.csv"):
            assert (data_dir / name).exists()

    def test_byte_identical_reruns(self, tmp_path, config_file, data_dir):
        """Same config and seed give byte-identical files"""
        again = tmp_path / "again"
        assert run("synth", "--config", str(config_file), "--out", str(again)) == 0
        for name in ("embeddings.hsre", "metadata.csv", "split.csv", "twins.csv"):
            assert (again / name).read_bytes() == (data_dir / name).read_bytes()

    def test_seed_override(self, tmp_path, config_file, data_dir):
        """--seed changes the draw"""
        other = tmp_path / "other"
        assert run("synth", "--config", str(config_file), "--seed", "11", "--out", str(other)) == 0
        assert (other / "embeddings.hsre").read_bytes() != (data_dir / "embeddings.hsre").read_bytes()


class TestAnalysisCommands:
    """cluster / icm / pbh on a synthetic dataset"""

    def test_cluster(self, tmp_path, config_file, data_dir, capsys):
        """Labels are written and counts printed"""
        out = tmp_path / "cluster"
        assert run("cluster", "--config", str(config_file), "--data", str(data_dir), "--out", str(out)) == 0
        lines = (out / "labels.csv").read_text().splitlines()
        assert lines[0] == "index,label"
        assert len(lines) == 1 + 12 * 3 * 2
        assert len(capsys.readouterr().out.strip().split(",")) == 3

    def test_icm(self, tmp_path, config_file, data_dir, capsys):
        """Mutual pairs are written with the pair count printed"""
        out = tmp_path / "icm"
        assert run("icm", "--config", str(config_file), "--data", str(data_dir), "--out", str(out)) == 0
        lines = (out / "pairs.csv").read_text().splitlines()
        num_pairs, _ = capsys.readouterr().out.strip().split(",")
        assert lines[0] == "anchor,partner"
        assert len(lines) - 1 == int(num_pairs)

    def test_pbh(self, tmp_path, config_file, data_dir):
        """Before/after labels and a JSON report are written"""
        out = tmp_path / "pbh"
        assert run("pbh", "--config", str(config_file), "--data", str(data_dir), "--out", str(out)) == 0
        assert (out / "pbh_labels.csv").read_text().splitlines()[0] == "index,before,after"
        report = orjson.loads((out / "pbh_report.json").read_bytes())
        assert report["clusters_after"] >= report["clusters_before"]


class TestTrainAndEval:
    """train then eval"""

    def test_train_outputs(self, tmp_path, config_file, data_dir):
        """Checkpoint, history and report are written"""
        out = tmp_path / "train"
        assert run("train", "--config", str(config_file), "--data", str(data_dir), "--out", str(out)) == 0
        assert (out / "model.hsrm").exists()
        history = (out / "history.csv").read_text().splitlines()
        assert history[0].startswith("iter,num_clusters,mean_msil")
        assert len(history) == 2
        report = orjson.loads((out / "train_report.json").read_bytes())
        assert report["config"]["iterations"] == 1

    def test_train_deterministic(self, tmp_path, config_file, data_dir):
        """Two runs with the same seed give identical labels and history"""
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert run("train", "--config", str(config_file), "--data", str(data_dir), "--out", str(out)) == 0
        for name in ("history.csv", "model.hsrm"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_eval_checkpoint(self, tmp_path, config_file, data_dir, capsys):
        """eval prints r1,map,num_queries,num_excluded"""
        out = tmp_path / "train"
        assert run("train", "--config", str(config_file), "--data", str(data_dir), "--out", str(out)) == 0
        capsys.readouterr()
        assert run("eval", "--data", str(data_dir), "--checkpoint", str(out / "model.hsrm"), "--out", str(out)) == 0
        r1, mean_ap, num_queries, _ = capsys.readouterr().out.strip().split(",")
        assert 0.0 <= float(r1) <= 1.0
        assert 0.0 <= float(mean_ap) <= 1.0
        assert int(num_queries) == 12 * 3

    def test_metrics_file(self, tmp_path, config_file, data_dir):
        """--metrics-file writes Prometheus text"""
        out = tmp_path / "train"
        metrics = tmp_path / "metrics.prom"
        assert run("train", "--config", str(config_file), "--data", str(data_dir),
                   "--out", str(out), "--metrics-file", str(metrics)) == 0
        assert "hsr_iterations_total" in metrics.read_text()


class TestExitCodes:
    """User errors exit 1"""

    def test_eval_without_checkpoint(self, data_dir, tmp_path):
        """eval needs --checkpoint"""
        assert run("eval", "--data", str(data_dir), "--out", str(tmp_path)) == 1

    def test_unknown_subcommand(self):
        """Unknown subcommands are usage errors"""
        assert main(["frobnicate"]) == 1

    def test_missing_subcommand(self):
        """A subcommand is required"""
        assert main([]) == 1

    def test_missing_data(self, tmp_path):
        """A data directory without embeddings fails cleanly"""
        assert run("cluster", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)) == 1

    def test_bad_config(self, tmp_path, data_dir):
        """An invalid config value is a user error"""
        path = tmp_path / "bad.conf"
        path.write_text("K = banana\n")
        assert run("cluster", "--config", str(path), "--data", str(data_dir), "--out", str(tmp_path)) == 1


class TestAblateCommand:
    """hsr ablate"""

    def test_one_seed(self, tmp_path, config_file, capsys):
        """Every pipeline variant gets a row and a summary entry"""
        out = tmp_path / "ablate"
        assert run("ablate", "--config", str(config_file), "--seeds", "1", "--out", str(out)) == 0
        rows = (out / "ablation.csv").read_text().splitlines()
        assert rows[0] == "config,seed,r1,map"
        assert [r.split(",")[0] for r in rows[1:]] == [name for name, _ in ABLATION_CONFIGS]
        summary = orjson.loads((out / "ablation_summary.json").read_bytes())
        assert set(summary) == {name for name, _ in ABLATION_CONFIGS}
        assert len(capsys.readouterr().out.strip().splitlines()) == len(ABLATION_CONFIGS)
