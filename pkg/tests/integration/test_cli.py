#
# Tests for the lengthlab command line
#
import json

import pandas as pd
import pytest

from lengthlab import cli
from lengthlab.lab_logger import LOG_FILE


@pytest.fixture
def out(tmp_path):
    return tmp_path / "out"


@pytest.fixture
def experiment(tmp_path):
    def _experiment(document):
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps(document))
        return str(path)
    return _experiment


def small_train(**train):
    settings = {"steps": 3, "samples_per_problem": 2}
    settings.update(train)
    return {"command": "train", "problems": {"n_unsolvable": 1},
            "train": settings}


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


class TestUsage():
    @pytest.mark.parametrize("argv", [[], ["plot"], ["verify", "--suite", "nope"],
                                      ["table", "--groups", "x"]])
    def test_usage_errors(self, argv, capsys):
        assert cli.main(argv) == cli.EXIT_USAGE

    def test_version(self, capsys):
        assert cli.main(["--version"]) == cli.EXIT_OK
        assert "lengthlab" in capsys.readouterr().out

    def test_invalid_log_level(self, out, monkeypatch, capsys):
        monkeypatch.setenv(cli.LOG_LEVEL_ENV, "LOUD")
        assert cli.main(["table", "--out", str(out)]) == cli.EXIT_USAGE
        assert cli.LOG_LEVEL_ENV in capsys.readouterr().err

    def test_log_level(self, monkeypatch):
        monkeypatch.setenv(cli.LOG_LEVEL_ENV, "debug")
        assert cli._log_level() == 10


class TestVerify():
    def test_selected_suites(self, out, capsys):
        code = cli.main(["verify", "--out", str(out), "--instances", "5",
                         "--suite", "td-errors", "--suite", "f-identity",
                         "--seed", "4"])
        assert code == cli.EXIT_OK
        report = read_json(out / "verify_report.json")
        assert report["passed"] and report["seed"] == 4
        assert [s["suite"] for s in report["suites"]] == ["td-errors", "f-identity"]
        assert (out / LOG_FILE).exists()
        assert "td-errors: pass" in capsys.readouterr().out

    def test_suite_alias(self, out, capsys):
        code = cli.main(["verify", "--out", str(out), "--instances", "5",
                         "--suite", "theorem1"])
        assert code == cli.EXIT_OK
        report = read_json(out / "verify_report.json")
        assert [s["suite"] for s in report["suites"]] == ["mean-advantage"]

    def test_instances(self, out, capsys):
        assert cli.main(["verify", "--out", str(out), "--instances", "0"]) == \
            cli.EXIT_USAGE


class TestTable():
    def test_table(self, out, capsys):
        assert cli.main(["table", "--out", str(out), "--groups", "8", "16"]) == \
            cli.EXIT_OK
        table = pd.read_csv(out / "advantage_table.csv")
        assert len(table) == 12
        assert (out / "drgrpo_advantage.csv").exists()
        assert (out / "drgrpo_length.csv").exists()

    def test_small_group(self, out, capsys):
        assert cli.main(["table", "--out", str(out), "--groups", "1"]) == \
            cli.EXIT_USAGE


class TestTrain():
    def test_ppo(self, out, experiment, capsys):
        config = experiment(small_train())
        code = cli.main(["train", "--out", str(out), "--config", config, "--plot"])
        assert code == cli.EXIT_OK
        for name in ("problems.json", "train_log.csv", "policy.json",
                     "summary.json", "length_loss.html", LOG_FILE):
            assert (out / name).exists(), f'{name} was not written'
        assert not (out / "group_stats.csv").exists()
        summary = read_json(out / "summary.json")
        assert summary["algorithm"] == "PPO" and summary["steps"] == 3
        assert summary["checks"] == {} and summary["passed"]
        assert len(pd.read_csv(out / "train_log.csv")) == 3

    def test_grpo(self, out, experiment, capsys):
        config = experiment(small_train(algorithm="GRPO"))
        assert cli.main(["train", "--out", str(out), "--config", config]) == \
            cli.EXIT_OK
        groups = pd.read_csv(out / "group_stats.csv")
        assert groups["k"].tolist() == [0, 0, 0]
        summary = read_json(out / "summary.json")
        assert summary["collapse"]["zero_advantage_rate"] == [1.0, 1.0, 1.0]

    def test_seed_reproducible(self, tmp_path, experiment, capsys):
        config = experiment(small_train())
        for name in ("a", "b"):
            assert cli.main(["train", "--out", str(tmp_path / name), "--config",
                             config, "--seed", "3"]) == cli.EXIT_OK
        assert (tmp_path / "a" / "train_log.csv").read_bytes() == \
            (tmp_path / "b" / "train_log.csv").read_bytes()

    def test_no_problems(self, out, experiment, capsys):
        config = experiment({"command": "train", "train": {"steps": 2}})
        assert cli.main(["train", "--out", str(out), "--config", config]) == \
            cli.EXIT_USAGE

    def test_bad_config(self, out, experiment, capsys):
        config = experiment({"train": {"lamda": 0.9}})
        assert cli.main(["train", "--out", str(out), "--config", config]) == \
            cli.EXIT_USAGE
        assert "train.lamda" in capsys.readouterr().err

    def test_missing_config(self, out, tmp_path, capsys):
        assert cli.main(["train", "--out", str(out), "--config",
                         str(tmp_path / "absent.json")]) == cli.EXIT_USAGE

    def test_divergence(self, out, experiment, capsys):
        config = experiment(small_train(actor_lr=1000.0, critic_lr=0.0,
                                        divergence_limit=9.0))
        assert cli.main(["train", "--out", str(out), "--config", config]) == \
            cli.EXIT_FAILURE
        assert "DivergenceError" in capsys.readouterr().err


class TestTwoPhase():
    @staticmethod
    def document(phase2_problems):
        train = {"steps": 2, "samples_per_problem": 2}
        return {"command": "two-phase",
                "phase1": {"problems": {"n_unsolvable": 1}, "train": train},
                "phase2": {"problems": phase2_problems, "train": train}}

    def test_artifacts(self, out, experiment, capsys):
        config = experiment(self.document({"n_occasional": 1,
                                           "validation_samples": 300}))
        code = cli.main(["two-phase", "--out", str(out), "--config", config,
                         "--plot"])
        assert code in (cli.EXIT_OK, cli.EXIT_FAILURE)
        for name in ("problems_phase1.json", "problems_phase2.json",
                     "phase1_log.csv", "phase2_log.csv", "policy.json",
                     "summary.json", "length_loss.html"):
            assert (out / name).exists(), f'{name} was not written'
        summary = read_json(out / "summary.json")
        assert set(summary["checks"]) == {"phase1_length_growth",
                                          "phase2_length_reduced",
                                          "accuracy_preserved"}
        assert summary["phase1_steps"] == 2 and summary["phase2_steps"] == 2
        assert code == (cli.EXIT_OK if summary["passed"] else cli.EXIT_FAILURE)
        problems = read_json(out / "problems_phase2.json")["problems"]
        assert problems[0]["difficulty"] == "occasionally"

    def test_empty_phase(self, out, experiment, capsys):
        config = experiment(self.document({}))
        assert cli.main(["two-phase", "--out", str(out), "--config", config]) == \
            cli.EXIT_USAGE


class TestSweep():
    def test_sweep(self, out, experiment, capsys):
        document = small_train()
        document.update(command="sweep", lambdas=[0.9, 1.0])
        config = experiment(document)
        assert cli.main(["sweep", "--out", str(out), "--config", config]) == \
            cli.EXIT_OK
        report = pd.read_csv(out / "sweep_report.csv")
        assert report["lam"].tolist() == [0.9, 1.0]
        assert (out / "sweep_lam_0.9.csv").exists()
        assert (out / "sweep_lam_1.csv").exists()
        summary = read_json(out / "summary.json")
        assert len(summary["report"]) == 2


@pytest.mark.slow
class TestShippedExperiments():
    def test_two_phase_reproducible(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert cli.main(["two-phase", "--out", str(tmp_path / name)]) == \
                cli.EXIT_OK
        for name in ("problems_phase1.json", "problems_phase2.json",
                     "phase1_log.csv", "phase2_log.csv", "policy.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes(), f'{name} differs'
        summary = read_json(tmp_path / "a" / "summary.json")
        assert summary["phase1_steps"] == summary["phase2_steps"] == 200

    def test_lambda_sweep(self, out, capsys):
        assert cli.main(["sweep", "--out", str(out)]) == cli.EXIT_OK
        report = pd.read_csv(out / "sweep_report.csv")
        assert report["lam"].tolist() == [0.95, 1.0]
        assert report["overflow"].tolist() == [False, True]
