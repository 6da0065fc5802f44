import csv
import json

import numpy as np
import pytest

from lpssl import cli
from lpssl.flow import FlowModel
from lpssl.trainer import mean_stderr, read_metrics_csv
from lpssl.weights import save_model


def write_config(path, **overrides):
    cfg = {"dataset": {"generator": "cluster", "K": 4, "n_total": 400, "n_labelled": 20, "seed": 0},
           "data_dir": "data", "output_dir": "runs",
           "train": {"epochs": 2, "batch_size": 8, "hidden": [8]}}
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture
def config(tmp_path):
    path = write_config(tmp_path / "run.json")
    assert cli.main(["gen-data", path]) == 0
    return path


class TestConfig:
    def test_missing_key_named(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"dataset": {"generator": "cluster"}, "data_dir": "d"}))
        assert cli.main(["gen-data", str(p)]) == 2
        assert "'output_dir'" in capsys.readouterr().err

    @pytest.mark.parametrize("patch", [{"extra": 1}, {"train": {"lr": 0.1}},
                                       {"dataset": {"generator": "cluster", "KK": 4}},
                                       {"dataset": {"generator": "moons"}},
                                       {"lambdas": {"vat": 0.1}},
                                       {"train": {"relaxation": {"alpha": 3}}}])
    def test_unknown_keys_rejected(self, tmp_path, patch, capsys):
        assert cli.main(["gen-data", write_config(tmp_path / "c.json", **patch)]) == 2
        assert "unknown" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        assert cli.main(["gen-data", str(p)]) == 2

    def test_infeasible_dataset_is_config_error(self, tmp_path):
        p = write_config(tmp_path / "c.json", dataset={"generator": "cluster", "n_total": 10})
        assert cli.main(["gen-data", p]) == 2


class TestGenData:
    def test_byte_identical(self, tmp_path):
        a = write_config(tmp_path / "a.json", data_dir="da")
        b = write_config(tmp_path / "b.json", data_dir="db")
        assert cli.main(["gen-data", a]) == 0 and cli.main(["gen-data", b]) == 0
        for f in (tmp_path / "da").iterdir():
            assert f.read_bytes() == (tmp_path / "db" / f.name).read_bytes()

    def test_four_classes_in_labelled_csv(self, config, tmp_path):
        with open(tmp_path / "data" / "labelled.csv") as fh:
            assert {row["y"] for row in csv.DictReader(fh)} == {"0", "1", "2", "3"}

    def test_unwritable_output_is_io_error(self, tmp_path):
        (tmp_path / "blocker").write_text("")
        p = write_config(tmp_path / "c.json", data_dir="blocker/sub")
        assert cli.main(["gen-data", p]) == 3


class TestTrain:
    def test_run_directory_contents(self, config, tmp_path):
        assert cli.main(["train", config, "--prior", "lp", "--lambda", "0.01", "--seed", "7"]) == 0
        run = tmp_path / "runs" / "lp-lambda0.01-seed7"
        names = {f.name for f in run.iterdir()}
        assert {"config.json", "seed", "version.txt", "metrics.csv", "base.lpsw",
                "flow.lpsw"} <= names
        resolved = json.loads((run / "config.json").read_text())
        assert resolved["train"]["prior"] == "lp" and resolved["train"]["seed"] == 7
        assert (run / "seed").read_text().strip() == "7"
        assert len(read_metrics_csv(run / "metrics.csv")) == 2

    def test_same_seed_identical_metrics(self, config, tmp_path):
        run = tmp_path / "runs" / "none-lambda0-seed7"
        assert cli.main(["train", config, "--prior", "none", "--lambda", "0", "--seed", "7"]) == 0
        first = (run / "metrics.csv").read_bytes()
        assert cli.main(["train", config, "--prior", "none", "--lambda", "0", "--seed", "7"]) == 0
        assert (run / "metrics.csv").read_bytes() == first

    def test_missing_dataset(self, tmp_path):
        assert cli.main(["train", write_config(tmp_path / "c.json")]) == 3

    def test_numerical_failure_exit_code(self, config, monkeypatch, capsys):
        from lpssl import losses
        from lpssl.losses import LossValue
        from lpssl.nn.tensor import Tensor
        monkeypatch.setattr(losses, "min_ent",
                            lambda theta, head: LossValue(Tensor(np.array(np.inf)), "minent"))
        assert cli.main(["train", config, "--prior", "minent"]) == 4
        assert "minent" in capsys.readouterr().err


class TestSweep:
    def test_runs_and_summary(self, config, tmp_path):
        assert cli.main(["sweep", config, "--priors", "none,minent", "--seeds", "5"]) == 0
        runs = [d for d in (tmp_path / "runs").iterdir() if d.is_dir()]
        assert len(runs) == 10
        with open(tmp_path / "runs" / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["prior"] for r in rows] == ["none", "minent"]
        for r in rows:
            accs = [read_metrics_csv(tmp_path / "runs" / f"{r['prior']}-lambda{float(r['lambda']):g}"
                                     f"-seed{s}" / "metrics.csv")[-1]["acc_test"] for s in range(5)]
            m, se = mean_stderr(accs)
            assert float(r["mean_acc"]) == m and float(r["stderr_acc"]) == se

    def test_interrupted_sweep_leaves_no_summary(self, config, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise KeyboardInterrupt

        monkeypatch.setattr(cli, "execute_run", boom)
        with pytest.raises(KeyboardInterrupt):
            cli.main(["sweep", config, "--priors", "none", "--seeds", "2"])
        assert not (tmp_path / "runs" / "summary.csv").exists()

    def test_parallel_sweep_matches_serial(self, config, tmp_path, monkeypatch):
        assert cli.main(["sweep", config, "--priors", "none", "--seeds", "2"]) == 0
        serial = (tmp_path / "runs" / "summary.csv").read_bytes()
        monkeypatch.setenv("RUN_THREADS", "2")
        assert cli.main(["sweep", config, "--priors", "none", "--seeds", "2"]) == 0
        assert (tmp_path / "runs" / "summary.csv").read_bytes() == serial

    def test_needs_two_seeds(self, config):
        assert cli.main(["sweep", config, "--seeds", "1"]) == 2


class TestAnalyze:
    @pytest.fixture
    def flow_path(self, tmp_path):
        path = tmp_path / "flow.lpsw"
        save_model(path, FlowModel(3, rng=np.random.default_rng(0)))
        return str(path)

    def test_slice_csv(self, flow_path, tmp_path):
        out = tmp_path / "slice.csv"
        assert cli.main(["analyze", "--slice", "0", "1", "--flow", flow_path, "--out", str(out)]) == 0
        rows = list(csv.reader(open(out)))
        assert rows[0] == ["t", "logp_flow", "logp_analytic"] and len(rows) == 102

    def test_typical_on_d16(self, tmp_path):
        path = tmp_path / "f16.lpsw"
        save_model(path, FlowModel(16, rng=np.random.default_rng(0)))
        out = tmp_path / "typ.csv"
        assert cli.main(["analyze", "--typical", "--flow", str(path), "--out", str(out)]) == 0
        row = next(csv.DictReader(open(out)))
        assert float(row["mean_norm"]) == pytest.approx(4.0, rel=0.05)

    def test_kl_self_test_is_zero(self, tmp_path):
        out = tmp_path / "kl.csv"
        assert cli.main(["analyze", "--kl", "--self-test", "--out", str(out)]) == 0
        assert float(next(csv.DictReader(open(out)))["kl"]) == 0.0

    @pytest.mark.parametrize("mode", [["--latent-interp"], ["--latent-scale"], ["--kl"]])
    def test_other_modes_deterministic(self, flow_path, tmp_path, mode):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(["analyze", *mode, "--flow", flow_path, "--out", str(a)]) == 0
        assert cli.main(["analyze", *mode, "--flow", flow_path, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_corrupt_weights(self, flow_path, tmp_path):
        with open(flow_path, "r+b") as fh:
            fh.write(b"NOPE")
        assert cli.main(["analyze", "--typical", "--flow", flow_path,
                         "--out", str(tmp_path / "t.csv")]) == 3

    def test_missing_weights(self, tmp_path):
        assert cli.main(["analyze", "--typical", "--flow", str(tmp_path / "none.lpsw"),
                         "--out", str(tmp_path / "t.csv")]) == 3
