"""Command-line interface: simulate logs, train policies, evaluate, compare.

Machine-readable output is one JSON object per line on stdout; human
diagnostics go to stderr. Exit codes: 0 success, 1 I/O error, 2 validation
error, 3 optimizer flagged non-converged (policy file still written).
"""

from __future__ import annotations

import functools
import json
import os
import sys
from dataclasses import asdict

import click

from .core import LogFormatError, read_log, write_log
from .harness import ExperimentSpec, emit_results, run_experiment
from .objectives import CLI_METHOD_NAMES, ObjectiveConfig, TrainingSet, train
from .ope import ips_estimate, snips_estimate
from .policies import PopularityPolicy, UniformPolicy, load_policy, save_policy
from .sim import SimConfig, ab_test, generate_logs, init_environment

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_OPTIMIZER = 3


def _translate_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, TypeError, KeyError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


def _emit(obj: dict) -> None:
    click.echo(json.dumps(obj))


def _resolve_threads(threads: int) -> int:
    if threads < 0:
        raise ValueError("--threads must be non-negative")
    return threads if threads > 0 else (os.cpu_count() or 1)


def _load_config_doc(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("--config must contain a JSON object")
    return doc


def _sim_config(config_doc: dict, seed: int | None, items: int | None) -> SimConfig:
    overrides = dict(config_doc)
    if seed is not None:
        overrides["seed"] = seed
    if items is not None:
        overrides["n_items"] = items
    return SimConfig.from_json(overrides)


@click.group()
@click.option("--seed", type=int, default=None, help="Master seed (unsigned 64-bit).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file overriding configuration defaults.")
@click.option("--threads", type=int, default=1, show_default=True,
              help="User/cell-level parallelism; 0 = auto. Output is identical at any count.")
@click.pass_context
def main(ctx, seed, config_path, threads):
    """Counterfactual-learning toolkit for a simulated recommender environment."""
    ctx.obj = {"seed": seed, "config_path": config_path, "threads": threads}


@main.command()
@click.option("--users", type=int, required=True, help="Number of users to simulate.")
@click.option("--items", type=int, default=None, help="Catalogue size.")
@click.option("--policy", "policy_name", type=click.Choice(["popularity", "uniform"]),
              default="popularity", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Destination JSON-lines log.")
@click.pass_obj
@_translate_errors
def simulate(obj, users, items, policy_name, out):
    """Generate an interaction log under a logging policy."""
    if users < 1:
        raise ValueError("--users must be at least 1")
    config = _sim_config(_load_config_doc(obj["config_path"]), obj["seed"], items)
    env = init_environment(config)
    if policy_name == "popularity":
        logging_policy = PopularityPolicy(config.n_items)
    else:
        logging_policy = UniformPolicy(config.n_items)
    threads = _resolve_threads(obj["threads"])
    log = generate_logs(env, users, logging_policy, threads=threads)
    write_log(log, out)
    bandit = list(log.bandit_events())
    organic = sum(1 for _ in log.organic_events())
    clicks = sum(ev.click for ev in bandit)
    _emit({
        "users": users,
        "organic_events": organic,
        "bandit_events": len(bandit),
        "empirical_ctr": clicks / len(bandit),
    })


@main.command(name="train")
@click.option("--log", "log_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--method", type=click.Choice(sorted(CLI_METHOD_NAMES)), required=True)
@click.option("--alpha", type=float, default=0.5, show_default=True,
              help="Likelihood share of the dual objective.")
@click.option("--lambda", "lam", type=float, default=1.0, show_default=True,
              help="Variance penalty strength for poem/snips.")
@click.option("--clip", type=float, default=None,
              help="Importance-weight clipping constant (off by default).")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Destination policy JSON.")
@click.pass_obj
@_translate_errors
def train_cmd(obj, log_path, method, alpha, lam, clip, out):
    """Fit one training objective on a logged data set."""
    log = read_log(log_path)
    data = TrainingSet.from_log(log)
    config = ObjectiveConfig(method=method, alpha=alpha, lam=lam, clip_m=clip)
    fit = train(data, config)
    save_policy(fit.policy, out)
    _emit({
        "method": method,
        "value": fit.value,
        "grad_norm": fit.grad_norm,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "reason": fit.reason,
    })
    if not fit.converged:
        click.echo(f"optimizer did not converge: {fit.reason}", err=True)
        sys.exit(EXIT_OPTIMIZER)


@main.command()
@click.option("--policy", "policy_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--ab", "ab_mode", is_flag=True, help="Simulated A/B test on fresh users.")
@click.option("--users", type=int, default=30_000, show_default=True,
              help="Evaluation users for --ab.")
@click.option("--off-policy", "op_mode", is_flag=True, help="Estimate from a held-out log.")
@click.option("--log", "log_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Held-out log for --off-policy.")
@click.option("--estimator", type=click.Choice(["ips", "snips"]), default="ips",
              show_default=True)
@click.pass_obj
@_translate_errors
def evaluate(obj, policy_path, ab_mode, users, op_mode, log_path, estimator):
    """Evaluate a saved policy, by simulated A/B test or off-policy estimation."""
    if ab_mode == op_mode:
        raise ValueError("choose exactly one of --ab or --off-policy")
    policy = load_policy(policy_path)
    if ab_mode:
        config = _sim_config(_load_config_doc(obj["config_path"]), obj["seed"], None)
        env = init_environment(config)
        result = ab_test(env, policy, users, threads=_resolve_threads(obj["threads"]))
        _emit(result.to_json())
    else:
        if log_path is None:
            raise ValueError("--off-policy requires --log")
        data = TrainingSet.from_log(read_log(log_path))
        if estimator == "ips":
            report = ips_estimate(data, policy)
        else:
            report = snips_estimate(data, policy, seed=obj["seed"] or 0)
        _emit(report.to_json())


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="ExperimentSpec JSON; defaults apply when omitted.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
@_translate_errors
def compare(obj, spec_path, out_dir):
    """Run the full benchmark grid and write results.csv and results.svg."""
    if spec_path is not None:
        with open(spec_path) as fh:
            spec = ExperimentSpec.from_json(json.load(fh))
    else:
        spec = ExperimentSpec()
    if obj["seed"] is not None:
        spec = ExperimentSpec.from_json({**spec.to_json(),
                                         "sim": {**spec.sim.to_json(), "seed": obj["seed"]}})
    os.makedirs(out_dir, exist_ok=True)
    rows = run_experiment(spec, threads=_resolve_threads(obj["threads"]))
    csv_path = os.path.join(out_dir, "results.csv")
    svg_path = os.path.join(out_dir, "results.svg")
    emit_results(rows, "csv", csv_path)
    emit_results(rows, "svg", svg_path)
    failures = sum(1 for r in rows if r.ctr is None)
    if failures:
        click.echo(f"{failures} of {len(rows)} cells failed; see the note column", err=True)
    _emit({"rows": len(rows), "failures": failures, "csv": csv_path, "svg": svg_path})


if __name__ == "__main__":
    main()
