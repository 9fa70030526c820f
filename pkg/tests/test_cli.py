import json
import os

import pytest
from click.testing import CliRunner

from recbandit.cli import main

TINY_CONFIG = {
    "n_items": 5,
    "bandit_events_per_user": 10,
    "organic_len_mean": 6.0,
}


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def config_file(tmp_path):
    path = str(tmp_path / "sim.json")
    with open(path, "w") as fh:
        json.dump(TINY_CONFIG, fh)
    return path


def make_log(runner, config_file, tmp_path, users=40, name="log.jsonl", seed=0):
    path = str(tmp_path / name)
    result = runner.invoke(main, [
        "--seed", str(seed), "--config", config_file,
        "simulate", "--users", str(users), "--out", path,
    ])
    assert result.exit_code == 0, result.output
    return path, json.loads(result.output.strip().splitlines()[-1])


class TestSimulate:
    def test_summary_and_exit_code(self, runner, config_file, tmp_path):
        path, summary = make_log(runner, config_file, tmp_path)
        assert summary["users"] == 40
        assert summary["bandit_events"] == 400
        assert summary["organic_events"] > 0
        assert 0.0 <= summary["empirical_ctr"] <= 1.0
        assert os.path.exists(path)

    def test_zero_users_is_validation_error(self, runner, tmp_path):
        result = runner.invoke(main, [
            "simulate", "--users", "0", "--out", str(tmp_path / "x.jsonl"),
        ])
        assert result.exit_code == 2

    def test_unknown_flag_rejected(self, runner):
        result = runner.invoke(main, ["simulate", "--wat", "1"])
        assert result.exit_code == 2

    def test_deterministic_output_files(self, runner, config_file, tmp_path):
        p1, _ = make_log(runner, config_file, tmp_path, name="a.jsonl", seed=4)
        p2, _ = make_log(runner, config_file, tmp_path, name="b.jsonl", seed=4)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_items_flag_overrides_config(self, runner, tmp_path):
        path = str(tmp_path / "log.jsonl")
        result = runner.invoke(main, [
            "simulate", "--users", "2", "--items", "3", "--out", path,
        ])
        assert result.exit_code == 0
        header = json.loads(open(path).readline())
        assert header["n_items"] == 3

    def test_bad_config_key_rejected(self, runner, tmp_path):
        bad = str(tmp_path / "bad.json")
        with open(bad, "w") as fh:
            json.dump({"n_item": 5}, fh)
        result = runner.invoke(main, [
            "--config", bad, "simulate", "--users", "2",
            "--out", str(tmp_path / "x.jsonl"),
        ])
        assert result.exit_code == 2


class TestTrain:
    def test_unknown_method(self, runner, config_file, tmp_path):
        log, _ = make_log(runner, config_file, tmp_path)
        result = runner.invoke(main, [
            "train", "--log", log, "--method", "warp", "--out", str(tmp_path / "p.json"),
        ])
        assert result.exit_code == 2

    def test_dual_alpha_zero_matches_cb_bytes(self, runner, config_file, tmp_path):
        log, _ = make_log(runner, config_file, tmp_path, users=60)
        p_cb = str(tmp_path / "cb.json")
        p_dual = str(tmp_path / "dual.json")
        r1 = runner.invoke(main, ["train", "--log", log, "--method", "cb", "--out", p_cb])
        r2 = runner.invoke(main, [
            "train", "--log", log, "--method", "dual", "--alpha", "0", "--out", p_dual,
        ])
        assert r1.exit_code == 0, r1.output
        assert r2.exit_code == 0, r2.output
        assert open(p_cb, "rb").read() == open(p_dual, "rb").read()

    def test_poem_single_event_log_fails_validation(self, runner, tmp_path):
        log = str(tmp_path / "one.jsonl")
        with open(log, "w") as fh:
            fh.write('{"n_items": 2, "format_version": 1}\n')
            fh.write('{"type": "bandit", "user_id": 0, "t": 0, "context": [1, 0],'
                     ' "action": 0, "propensity": 0.5, "click": 1}\n')
        result = runner.invoke(main, [
            "train", "--log", log, "--method", "poem", "--lambda", "1",
            "--out", str(tmp_path / "p.json"),
        ])
        assert result.exit_code == 2

    def test_train_reports_diagnostics(self, runner, config_file, tmp_path):
        log, _ = make_log(runner, config_file, tmp_path, users=60)
        out = str(tmp_path / "p.json")
        result = runner.invoke(main, ["train", "--log", log, "--method", "cb", "--out", out])
        assert result.exit_code == 0, result.output
        report = json.loads(result.output.strip().splitlines()[-1])
        assert report["converged"] is True
        assert report["grad_norm"] <= 1e-6
        assert os.path.exists(out)


class TestEvaluate:
    def test_off_policy_ips_on_own_log(self, runner, config_file, tmp_path):
        log, summary = make_log(runner, config_file, tmp_path)
        policy_path = str(tmp_path / "logging.json")
        with open(policy_path, "w") as fh:
            json.dump({"kind": "popularity", "n_items": 5, "smoothing": 1.0}, fh)
        result = runner.invoke(main, [
            "evaluate", "--policy", policy_path, "--off-policy",
            "--log", log, "--estimator", "ips",
        ])
        assert result.exit_code == 0, result.output
        report = json.loads(result.output.strip().splitlines()[-1])
        assert abs(report["estimate"] - summary["empirical_ctr"]) <= 1e-12

    def test_ab_reports_impressions(self, runner, config_file, tmp_path):
        policy_path = str(tmp_path / "uniform.json")
        with open(policy_path, "w") as fh:
            json.dump({"kind": "uniform", "n_items": 5}, fh)
        result = runner.invoke(main, [
            "--config", config_file,
            "evaluate", "--policy", policy_path, "--ab", "--users", "50",
        ])
        assert result.exit_code == 0, result.output
        report = json.loads(result.output.strip().splitlines()[-1])
        assert report["impressions"] == 50 * 10

    def test_unknown_estimator(self, runner, config_file, tmp_path):
        log, _ = make_log(runner, config_file, tmp_path)
        policy_path = str(tmp_path / "uniform.json")
        with open(policy_path, "w") as fh:
            json.dump({"kind": "uniform", "n_items": 5}, fh)
        result = runner.invoke(main, [
            "evaluate", "--policy", policy_path, "--off-policy",
            "--log", log, "--estimator", "dm",
        ])
        assert result.exit_code == 2

    def test_must_pick_exactly_one_mode(self, runner, config_file, tmp_path):
        policy_path = str(tmp_path / "uniform.json")
        with open(policy_path, "w") as fh:
            json.dump({"kind": "uniform", "n_items": 5}, fh)
        result = runner.invoke(main, ["evaluate", "--policy", policy_path])
        assert result.exit_code == 2


class TestCompare:
    def spec_doc(self):
        return {
            "sim": TINY_CONFIG,
            "user_counts": [10, 20],
            "methods": ["logging", "oracle"],
            "eval_users": 300,
            "seeds": [0, 1],
        }

    def test_grid_cardinality_and_outputs(self, runner, tmp_path):
        spec_path = str(tmp_path / "spec.json")
        with open(spec_path, "w") as fh:
            json.dump(self.spec_doc(), fh)
        out_dir = str(tmp_path / "out")
        result = runner.invoke(main, ["compare", "--spec", spec_path, "--out", out_dir])
        assert result.exit_code == 0, result.output
        csv_lines = open(os.path.join(out_dir, "results.csv")).read().splitlines()
        assert len(csv_lines) == 1 + 2 * 2 * 2  # header + methods x sizes x seeds
        assert os.path.exists(os.path.join(out_dir, "results.svg"))

    def test_oracle_mean_beats_logging_mean(self, runner, tmp_path):
        from recbandit.harness import parse_results

        spec_path = str(tmp_path / "spec.json")
        with open(spec_path, "w") as fh:
            json.dump(self.spec_doc(), fh)
        out_dir = str(tmp_path / "out")
        assert runner.invoke(main, ["compare", "--spec", spec_path,
                                    "--out", out_dir]).exit_code == 0
        rows = parse_results(os.path.join(out_dir, "results.csv"))
        oracle = [r.ctr for r in rows if r.method == "oracle"]
        logging_rows = [r.ctr for r in rows if r.method == "logging"]
        assert sum(oracle) / len(oracle) > sum(logging_rows) / len(logging_rows)

    def test_rerun_is_byte_identical_across_threads(self, runner, tmp_path):
        spec_path = str(tmp_path / "spec.json")
        with open(spec_path, "w") as fh:
            json.dump(self.spec_doc(), fh)
        blobs = []
        for threads, name in [("1", "a"), ("4", "b")]:
            out_dir = str(tmp_path / name)
            result = runner.invoke(main, ["--threads", threads, "compare",
                                          "--spec", spec_path, "--out", out_dir])
            assert result.exit_code == 0, result.output
            blobs.append((open(os.path.join(out_dir, "results.csv"), "rb").read(),
                          open(os.path.join(out_dir, "results.svg"), "rb").read()))
        assert blobs[0] == blobs[1]
