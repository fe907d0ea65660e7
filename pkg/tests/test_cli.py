import csv
import os
import subprocess
import sys

import pytest

from conftest import FIXTURES
from fmla.cli import main
from fmla.complexity import CSV_HEADER
from fmla.data import make_two_sine, write_ucr_split
from fmla.train import read_metrics_csv, read_numeric_csv

DATA = FIXTURES / "UCR"
TINY = [
    "--set", "model.num_blocks=2", "--set", "model.d=16", "--set", "model.num_heads=2",
    "--set", "model.C=4", "--set", "model.dcn_channels=8,8",
    "--set", "train.epochs=3", "--set", "train.batch_size=4", "--set", "train.eval_every=2",
]


def run(*args, env=None):
    return subprocess.run([sys.executable, "-m", "fmla", *args], capture_output=True, text=True,
                          env={**os.environ, **(env or {})}, timeout=300)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    proc = run("train", "--data-dir", str(DATA), "--dataset", "TwoSine", "--seed", "0", "--out-dir", str(out), *TINY)
    assert proc.returncode == 0, proc.stderr
    return out, proc


class TestTrain:
    def test_artifacts(self, trained):
        out, _ = trained
        assert {p.name for p in out.iterdir()} >= {"model.fmla", "metrics.csv", "config.txt"}
        assert len(read_metrics_csv(out / "metrics.csv")) == 3

    def test_config_snapshot_resolved(self, trained):
        text = (trained[0] / "config.txt").read_text()
        assert "model.seq_len = 32" in text and "train.epochs = 3" in text and "model.seed = 0" in text

    def test_unknown_key(self, tmp_path):
        proc = run("train", "--data-dir", str(DATA), "--dataset", "TwoSine", "--out-dir", str(tmp_path),
                   "--set", "model.colour=red")
        assert proc.returncode == 2 and "model.colour" in proc.stderr
        assert len(proc.stderr.strip().splitlines()) == 1

    def test_unknown_key_in_file(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("# comment\ntrain.lr = 0.01\ntrain.warmup = 3\n")
        proc = run("train", "--data-dir", str(DATA), "--dataset", "TwoSine", "--out-dir", str(tmp_path),
                   "--config", str(cfg))
        assert proc.returncode == 2 and "train.warmup" in proc.stderr

    def test_missing_dataset(self, tmp_path):
        proc = run("train", "--data-dir", str(DATA), "--dataset", "Absent", "--out-dir", str(tmp_path))
        assert proc.returncode == 3

    def test_env_data_dir(self, tmp_path, monkeypatch):
        monkeypatch.delenv("FMLA_DATA_DIR", raising=False)
        assert main(["train", "--dataset", "Absent", "--out-dir", str(tmp_path)]) == 3
        proc = run("train", "--dataset", "Absent", "--out-dir", str(tmp_path), env={"FMLA_DATA_DIR": str(DATA)})
        assert proc.returncode == 3 and str(DATA) in proc.stderr

    def test_numeric_failure(self, tmp_path):
        proc = run("train", "--data-dir", str(DATA), "--dataset", "TwoSine", "--out-dir", str(tmp_path),
                   *TINY, "--set", "train.lr=1e300")
        assert proc.returncode == 4 and "non-finite" in proc.stderr


class TestEval:
    def test_reproduces_final_row(self, trained):
        out, train_proc = trained
        proc = run("eval", "--checkpoint", str(out / "model.fmla"), "--data-dir", str(DATA), "--dataset", "TwoSine")
        assert proc.returncode == 0
        name, acc, n_test = proc.stdout.strip().split(",")
        assert name == "TwoSine" and n_test == "12"
        assert len(acc.split(".")[1]) == 6
        with open(out / "metrics.csv") as fh:
            final = list(csv.DictReader(fh))[-1]
        assert acc == final["test_acc"]

    def test_corrupt_checkpoint(self, trained, tmp_path):
        bad = tmp_path / "bad.fmla"
        bad.write_bytes((trained[0] / "model.fmla").read_bytes()[:-7])
        proc = run("eval", "--checkpoint", str(bad), "--data-dir", str(DATA), "--dataset", "TwoSine")
        assert proc.returncode == 3

    def test_shape_mismatch(self, trained, tmp_path):
        train, test = make_two_sine(n_train=4, n_test=4, length=40)
        write_ucr_split(tmp_path / "Long" / "Long_TRAIN.tsv", train.samples, train.labels)
        write_ucr_split(tmp_path / "Long" / "Long_TEST.tsv", test.samples, test.labels)
        proc = run("eval", "--checkpoint", str(trained[0] / "model.fmla"), "--data-dir", str(tmp_path), "--dataset", "Long")
        assert proc.returncode == 2 and "seq_len=32" in proc.stderr and "seq_len=40" in proc.stderr


class TestGradcheck:
    def test_toy_passes(self):
        proc = run("gradcheck", "--set", "model.num_blocks=1", "--set", "model.dcn_channels=4")
        assert proc.returncode == 0, proc.stderr
        assert "max_rel_error=" in proc.stdout and "cla.0:" in proc.stdout and "dcn.0:" in proc.stdout

    def test_injected_fault(self):
        proc = run("gradcheck", "--inject-fault", "--set", "model.num_blocks=1", "--set", "model.dcn_channels=4")
        assert proc.returncode == 5 and "stem.weight" in proc.stderr

    def test_hidden_flag(self):
        assert "inject" not in run("gradcheck", "--help").stdout


class TestFlops:
    def test_rows(self, tmp_path):
        out = tmp_path / "f.csv"
        assert main(["flops", "--n-list", "128,256,512", "--out", str(out)]) == 0
        rows = read_numeric_csv(out, CSV_HEADER)
        assert len(rows) == 3
        fm = [r["flops_fmla"] for r in rows]
        va = [r["flops_vanilla"] for r in rows]
        assert all(1.8 < b / a < 2.2 for a, b in zip(fm, fm[1:]))
        assert all(b / a > 3.0 for a, b in zip(va, va[1:]))

    @pytest.mark.parametrize("bad", ["12,abc", "0", ""])
    def test_bad_n(self, tmp_path, bad):
        assert main(["flops", "--n-list", bad, "--out", str(tmp_path / "f.csv")]) == 2


def test_determinism(trained, tmp_path):
    proc = run("train", "--data-dir", str(DATA), "--dataset", "TwoSine", "--seed", "0", "--out-dir", str(tmp_path), *TINY)
    assert proc.returncode == 0
    assert (tmp_path / "metrics.csv").read_bytes() == (trained[0] / "metrics.csv").read_bytes()
