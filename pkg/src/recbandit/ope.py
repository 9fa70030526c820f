"""Off-policy evaluation of a policy on logged bandit data.

IPS reweights logged clicks by pi(a|x) / p0; SNIPS divides by the summed
weights instead of N, trading a small bias for lower variance and
invariance to propensity rescaling. Both report uncertainty plus weight
diagnostics (effective sample size, max weight).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import substream
from .objectives import TrainingSet
from .policies import Policy

_STREAM_BOOTSTRAP = 6

# a deterministic target concentrating on rarely-logged actions makes
# importance weights explode; below 1% of nominal sample size we flag it
_ESS_RELIABLE_FRACTION = 0.01


@dataclass(frozen=True)
class OpeReport:
    method: str
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    effective_sample_size: float
    max_weight: float
    n: int
    unreliable: bool

    def to_json(self) -> dict:
        return asdict(self)


def _importance_weights(data: TrainingSet, policy: Policy,
                        clip_m: Optional[float]) -> np.ndarray:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty data set")
    if policy.n_items != data.n_items:
        raise ValueError("policy and data catalogue sizes disagree")
    probs = policy.action_probs_matrix(data.contexts)
    pi = probs[np.arange(len(data)), data.actions]
    weights = pi / data.propensities
    if clip_m is not None:
        weights = np.minimum(weights, clip_m)
    return weights


def _diagnostics(weights: np.ndarray) -> tuple[float, float]:
    sq = float(weights @ weights)
    ess = float(weights.sum()) ** 2 / sq if sq > 0.0 else 0.0
    return ess, float(weights.max())


def ips_estimate(data: TrainingSet, policy: Policy,
                 clip_m: Optional[float] = None) -> OpeReport:
    """Mean of c_i * pi(a_i|x_i) / p0_i with a normal-approximation 95% CI."""
    weights = _importance_weights(data, policy, clip_m)
    values = data.clicks * weights
    n = len(data)
    estimate = float(values.mean())
    std_error = float(values.std(ddof=1)) / np.sqrt(n) if n > 1 else 0.0
    ess, max_w = _diagnostics(weights)
    return OpeReport(
        method="ips",
        estimate=estimate,
        std_error=std_error,
        ci_low=estimate - 1.96 * std_error,
        ci_high=estimate + 1.96 * std_error,
        effective_sample_size=ess,
        max_weight=max_w,
        n=n,
        unreliable=ess < _ESS_RELIABLE_FRACTION * n,
    )


def snips_estimate(data: TrainingSet, policy: Policy, bootstrap_reps: int = 1000,
                   seed: int = 0, clip_m: Optional[float] = None) -> OpeReport:
    """Self-normalized estimate sum(c w) / sum(w) with a percentile-bootstrap CI.

    Bootstrap replicates resample events with replacement from per-replicate
    seeded substreams, so the interval is deterministic for a given seed and
    independent of any parallel execution order.
    """
    if bootstrap_reps < 1:
        raise ValueError("bootstrap_reps must be at least 1")
    weights = _importance_weights(data, policy, clip_m)
    w_total = float(weights.sum())
    if w_total <= 0.0:
        raise ValueError("all importance weights are zero")
    values = data.clicks * weights
    n = len(data)
    estimate = float(values.sum()) / w_total

    replicates = np.empty(bootstrap_reps)
    for rep in range(bootstrap_reps):
        idx = substream(seed, _STREAM_BOOTSTRAP, rep).integers(0, n, size=n)
        denom = float(weights[idx].sum())
        replicates[rep] = float(values[idx].sum()) / denom if denom > 0.0 else 0.0
    ci_low, ci_high = np.percentile(replicates, [2.5, 97.5])
    std_error = float(replicates.std(ddof=1)) if bootstrap_reps > 1 else 0.0

    ess, max_w = _diagnostics(weights)
    return OpeReport(
        method="snips",
        estimate=estimate,
        std_error=std_error,
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        effective_sample_size=ess,
        max_weight=max_w,
        n=n,
        unreliable=ess < _ESS_RELIABLE_FRACTION * n,
    )
