import io
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from scipy.stats import binomtest

from recbandit.harness import (
    CSV_HEADER,
    ExperimentSpec,
    ResultRow,
    confidence_interval,
    emit_results,
    parse_results,
    run_experiment,
)
from recbandit.sim import SimConfig

TINY_SIM = {
    "n_items": 5,
    "bandit_events_per_user": 10,
    "organic_len_mean": 6.0,
}


class TestConfidenceInterval:
    def test_zero_clicks_floor(self):
        low, high = confidence_interval(0, 100)
        assert low == 0.0
        assert high > 0.0

    def test_all_clicks_ceiling(self):
        low, high = confidence_interval(100, 100)
        assert high == 1.0
        assert low < 1.0

    def test_hand_verified_value(self):
        # independently computed Wilson interval for 50/5000 at 95%
        low, high = confidence_interval(50, 5000)
        np.testing.assert_allclose(low, 0.00759377281, atol=1e-10)
        np.testing.assert_allclose(high, 0.01315857509, atol=1e-10)

    def test_matches_scipy_wilson(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n = int(rng.integers(1, 5000))
            c = int(rng.integers(0, n + 1))
            low, high = confidence_interval(c, n)
            ref = binomtest(c, n).proportion_ci(confidence_level=0.95, method="wilson")
            np.testing.assert_allclose([low, high], [ref.low, ref.high], atol=1e-12)

    def test_estimate_always_inside(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(1, 1000))
            c = int(rng.integers(0, n + 1))
            low, high = confidence_interval(c, n)
            assert low <= c / n <= high

    def test_coverage_at_one_percent(self):
        # 95% interval should cover p=0.01 in 93%-97% of 1000 trials at n=10000
        rng = np.random.default_rng(2024)
        covered = 0
        for _ in range(1000):
            clicks = rng.binomial(10_000, 0.01)
            low, high = confidence_interval(clicks, 10_000)
            covered += low <= 0.01 <= high
        assert 930 <= covered <= 970

    def test_validation(self):
        with pytest.raises(ValueError):
            confidence_interval(0, 0)
        with pytest.raises(ValueError):
            confidence_interval(5, 4)
        with pytest.raises(ValueError):
            confidence_interval(1, 10, level=1.0)


class TestExperimentSpec:
    def test_round_trip_json(self):
        spec = ExperimentSpec(sim=SimConfig(n_items=4), user_counts=(10, 20),
                              methods=("cb", "logging"), eval_users=50,
                              seeds=(0, 1), alpha=0.25, lam=0.5, clip_m=3.0)
        assert ExperimentSpec.from_json(spec.to_json()) == spec

    def test_defaults(self):
        spec = ExperimentSpec.from_json({})
        assert spec.user_counts == (100, 500, 1000, 2000, 5000)
        assert spec.eval_users == 30_000
        assert len(spec.seeds) == 5
        assert set(spec.methods) >= {"likelihood", "cb", "snips", "oracle"}

    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentSpec(user_counts=(100, 50))
        with pytest.raises(ValueError):
            ExperimentSpec(methods=("warp-drive",))
        with pytest.raises(ValueError):
            ExperimentSpec(eval_users=0)
        with pytest.raises(ValueError, match="unknown"):
            ExperimentSpec.from_json({"method": ["cb"]})


def tiny_spec(**overrides):
    base = dict(
        sim=SimConfig(**TINY_SIM),
        user_counts=(20,),
        methods=("logging", "uniform"),
        eval_users=300,
        seeds=(0,),
    )
    base.update(overrides)
    return ExperimentSpec(**base)


class TestRunExperiment:
    def test_single_cell_row_count_and_coverage(self):
        from recbandit.policies import PopularityPolicy
        from recbandit.sim import init_environment, true_ctr

        spec = tiny_spec(methods=("logging",), eval_users=1500)
        rows = run_experiment(spec)
        assert len(rows) == 1
        row = rows[0]
        assert row.method == "logging"
        assert row.train_events == 20 * 10
        truth = true_ctr(init_environment(spec.sim), PopularityPolicy(5), 4000)
        assert row.ci_low <= truth <= row.ci_high

    def test_oracle_dominates_uniform_in_every_cell(self):
        spec = tiny_spec(methods=("uniform", "oracle"), user_counts=(10, 20),
                         seeds=(0, 1), eval_users=400)
        rows = run_experiment(spec)
        by_key = {(r.method, r.train_users, r.seed): r for r in rows}
        for users in (10, 20):
            for seed in (0, 1):
                assert (by_key[("oracle", users, seed)].ctr
                        >= by_key[("uniform", users, seed)].ctr)

    def test_learned_method_smoke(self):
        spec = tiny_spec(methods=("cb", "logging"), eval_users=200)
        rows = run_experiment(spec)
        assert len(rows) == 2
        assert all(r.ctr is not None for r in rows)

    def test_deterministic_rows(self):
        spec = tiny_spec(methods=("logging", "cb"))
        assert run_experiment(spec) == run_experiment(spec)

    def test_thread_count_does_not_change_rows(self):
        spec = tiny_spec()
        assert run_experiment(spec, threads=1) == run_experiment(spec, threads=4)

    def test_rows_sorted(self):
        spec = tiny_spec(methods=("uniform", "logging"), user_counts=(10, 20), seeds=(1, 0))
        rows = run_experiment(spec)
        keys = [(r.method, r.train_users, r.seed) for r in rows]
        assert keys == sorted(keys)


class TestEmitResults:
    def rows(self):
        return [
            ResultRow("cb", 100, 0, 0.011, 0.010, 0.012, 8000, 0.0),
            ResultRow("cb", 500, 0, 0.013, 0.012, 0.014, 40000, 0.0),
            ResultRow("likelihood", 100, 0, 0.010, 0.009, 0.011, 8000, 0.0),
            ResultRow("poem", 100, 0, None, None, None, 8000, 0.0, note="failed: boom"),
        ]

    def test_single_row_csv_has_two_lines(self):
        buf = io.StringIO()
        emit_results(self.rows()[:1], "csv", buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == 2
        assert lines[0] == ",".join(CSV_HEADER)

    def test_csv_round_trip(self):
        buf = io.StringIO()
        emit_results(self.rows(), "csv", buf)
        assert parse_results(io.StringIO(buf.getvalue())) == self.rows()

    def test_svg_is_well_formed_xml(self, tmp_path):
        path = str(tmp_path / "results.svg")
        emit_results(self.rows(), "svg", path)
        root = ET.parse(path).getroot()
        assert root.tag.endswith("svg")

    def test_svg_deterministic_bytes(self, tmp_path):
        p1, p2 = str(tmp_path / "a.svg"), str(tmp_path / "b.svg")
        emit_results(self.rows(), "svg", p1)
        emit_results(self.rows(), "svg", p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_empty_rows_rejected_for_svg(self, tmp_path):
        with pytest.raises(ValueError):
            emit_results([], "svg", str(tmp_path / "x.svg"))

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_results(self.rows(), "pdf", io.StringIO())

    def test_result_row_ci_invariant(self):
        with pytest.raises(ValueError):
            ResultRow("cb", 1, 0, 0.5, 0.6, 0.7, 10, 0.0)
