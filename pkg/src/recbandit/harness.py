"""Experiment grid: train every method over (training size, seed) cells,
A/B-test the learned policies on fresh users, and emit results as CSV/SVG.

Within one cell every method trains on the identical log and is evaluated
against the identical evaluation users, so cross-method comparisons are
paired. Rows come out sorted, making emitted artifacts byte-reproducible.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from typing import IO, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtri

from .objectives import CLI_METHOD_NAMES, ObjectiveConfig, TrainingSet, train
from .policies import Policy, PopularityPolicy, UniformPolicy
from .sim import Environment, OraclePolicy, SimConfig, ab_test, generate_logs, init_environment

BASELINES = ("logging", "uniform", "oracle")
CSV_HEADER = (
    "method", "train_users", "seed", "ctr", "ci_low", "ci_high",
    "train_events", "wall_time", "note",
)


def confidence_interval(clicks: int, impressions: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial rate; well behaved near 0 and 1."""
    if impressions < 1:
        raise ValueError("impressions must be at least 1")
    if not 0 <= clicks <= impressions:
        raise ValueError("clicks must lie in [0, impressions]")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    z = float(ndtri(0.5 + level / 2.0))
    n = impressions
    p = clicks / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / denom
    low = 0.0 if clicks == 0 else float(max(center - half, 0.0))
    high = 1.0 if clicks == impressions else float(min(center + half, 1.0))
    return low, high


@dataclass(frozen=True)
class ExperimentSpec:
    sim: SimConfig = SimConfig()
    user_counts: tuple[int, ...] = (100, 500, 1000, 2000, 5000)
    methods: tuple[str, ...] = tuple(CLI_METHOD_NAMES) + BASELINES
    eval_users: int = 30_000
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    alpha: float = 0.5
    lam: float = 1.0
    clip_m: Optional[float] = None

    def __post_init__(self):
        if not self.user_counts or any(u < 1 for u in self.user_counts):
            raise ValueError("user_counts must be positive")
        if list(self.user_counts) != sorted(set(self.user_counts)):
            raise ValueError("user_counts must be strictly ascending")
        if self.eval_users < 1:
            raise ValueError("eval_users must be at least 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        known = set(CLI_METHOD_NAMES) | set(BASELINES)
        unknown = [m for m in self.methods if m not in known]
        if unknown:
            raise ValueError(f"unknown methods: {unknown}")

    def to_json(self) -> dict:
        return {
            "sim": self.sim.to_json(),
            "user_counts": list(self.user_counts),
            "methods": list(self.methods),
            "eval_users": self.eval_users,
            "seeds": list(self.seeds),
            "hyper": {"alpha": self.alpha, "lambda": self.lam, "clip_m": self.clip_m},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentSpec":
        unknown = set(doc) - {"sim", "user_counts", "methods", "eval_users", "seeds", "hyper"}
        if unknown:
            raise ValueError(f"unknown ExperimentSpec keys: {sorted(unknown)}")
        hyper = doc.get("hyper", {})
        unknown_hyper = set(hyper) - {"alpha", "lambda", "clip_m"}
        if unknown_hyper:
            raise ValueError(f"unknown hyper keys: {sorted(unknown_hyper)}")
        kwargs = {}
        if "sim" in doc:
            kwargs["sim"] = SimConfig.from_json(doc["sim"])
        if "user_counts" in doc:
            kwargs["user_counts"] = tuple(doc["user_counts"])
        if "methods" in doc:
            kwargs["methods"] = tuple(doc["methods"])
        if "eval_users" in doc:
            kwargs["eval_users"] = doc["eval_users"]
        if "seeds" in doc:
            kwargs["seeds"] = tuple(doc["seeds"])
        if "alpha" in hyper:
            kwargs["alpha"] = hyper["alpha"]
        if "lambda" in hyper:
            kwargs["lam"] = hyper["lambda"]
        if "clip_m" in hyper:
            kwargs["clip_m"] = hyper["clip_m"]
        return cls(**kwargs)


@dataclass(frozen=True)
class ResultRow:
    method: str
    train_users: int
    seed: int
    ctr: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]
    train_events: int
    wall_time: float
    note: str = ""

    def __post_init__(self):
        if self.ctr is not None and not (self.ci_low <= self.ctr <= self.ci_high):
            raise ValueError("ctr must lie inside its confidence interval")


def _baseline_policy(name: str, env: Environment) -> Policy:
    if name == "logging":
        return PopularityPolicy(env.config.n_items)
    if name == "uniform":
        return UniformPolicy(env.config.n_items)
    if name == "oracle":
        return OraclePolicy(env)
    raise ValueError(f"unknown baseline {name!r}")


def run_experiment(spec: ExperimentSpec, threads: int = 1,
                   record_timing: bool = False) -> list[ResultRow]:
    """Run the full (method x train_users x seed) grid and return sorted rows.

    Logs are nested per seed: the cell with U training users sees exactly the
    first U users of that seed's largest log, which per-user substreams make
    identical to generating U users from scratch. A training failure lands in
    the row's note without aborting the grid.

    Timing is off by default so emitted artifacts are byte-reproducible;
    `record_timing=True` fills wall_time with measured seconds instead.
    """
    env = init_environment(spec.sim)
    logging_policy = PopularityPolicy(env.config.n_items)
    per_user = env.config.bandit_events_per_user
    learned = [m for m in spec.methods if m not in BASELINES]
    baselines = [m for m in spec.methods if m in BASELINES]

    rows: list[ResultRow] = []
    for seed in spec.seeds:
        baseline_ab = {
            name: ab_test(env, _baseline_policy(name, env), spec.eval_users,
                          seed=seed, threads=threads)
            for name in baselines
        }
        full_log = generate_logs(env, max(spec.user_counts), logging_policy,
                                 seed=seed, threads=threads)
        full_data = TrainingSet.from_log(full_log)
        for train_users in spec.user_counts:
            m = train_users * per_user
            data = TrainingSet(
                contexts=full_data.contexts[:m],
                actions=full_data.actions[:m],
                propensities=full_data.propensities[:m],
                clicks=full_data.clicks[:m],
            )
            for name in baselines:
                ab = baseline_ab[name]
                rows.append(ResultRow(name, train_users, seed, ab.ctr, ab.ci_low,
                                      ab.ci_high, m, 0.0))
            for name in learned:
                started = time.perf_counter()
                try:
                    cfg = ObjectiveConfig(method=name, alpha=spec.alpha,
                                          lam=spec.lam, clip_m=spec.clip_m)
                    fit = train(data, cfg)
                    ab = ab_test(env, fit.policy, spec.eval_users,
                                 seed=seed, threads=threads)
                except Exception as exc:  # noqa: BLE001 - grid must survive one bad cell
                    elapsed = time.perf_counter() - started
                    rows.append(ResultRow(name, train_users, seed, None, None, None,
                                          m, elapsed if record_timing else 0.0,
                                          note=f"failed: {exc}"))
                    continue
                elapsed = time.perf_counter() - started
                note = "" if fit.converged else f"optimizer: {fit.reason}"
                rows.append(ResultRow(name, train_users, seed, ab.ctr, ab.ci_low,
                                      ab.ci_high, m, elapsed if record_timing else 0.0,
                                      note=note))
    rows.sort(key=lambda r: (r.method, r.train_users, r.seed))
    return rows


def _format_field(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def emit_results(rows: Sequence[ResultRow], format: str,
                 destination: Union[str, IO]) -> None:
    """Write rows as CSV, or render the CTR-vs-training-size chart as SVG."""
    if format == "csv":
        if isinstance(destination, str):
            with open(destination, "w", newline="") as fh:
                emit_results(rows, "csv", fh)
            return
        writer = csv.writer(destination, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([
                row.method, row.train_users, row.seed,
                _format_field(row.ctr), _format_field(row.ci_low),
                _format_field(row.ci_high), row.train_events,
                _format_field(row.wall_time), row.note,
            ])
    elif format == "svg":
        if not rows:
            raise ValueError("cannot plot an empty result set")
        from .plotting import save_ctr_chart

        save_ctr_chart(rows, destination)
    else:
        raise ValueError(f"unknown format {format!r}")


def parse_results(source: Union[str, IO[str]]) -> list[ResultRow]:
    """Inverse of CSV emission; round-trips every field exactly."""
    if isinstance(source, str):
        with open(source, newline="") as fh:
            return parse_results(fh)
    reader = csv.reader(source)
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    rows = []
    for rec in reader:
        method, train_users, seed, ctr, ci_low, ci_high, train_events, wall_time, note = rec
        rows.append(ResultRow(
            method=method,
            train_users=int(train_users),
            seed=int(seed),
            ctr=float(ctr) if ctr else None,
            ci_low=float(ci_low) if ci_low else None,
            ci_high=float(ci_high) if ci_high else None,
            train_events=int(train_events),
            wall_time=float(wall_time),
            note=note,
        ))
    return rows
