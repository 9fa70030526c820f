"""Training objectives over logged bandit data, as value-and-gradient oracles.

Every loss takes a flat parameter vector of length n^2 and returns
(value, gradient), framed as minimization. Reward-style objectives (the
counterfactual ones) are negated. All losses are pure functions of
(params, data, config) and permutation-invariant over samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .core import InteractionLog
from .optim import LbfgsConfig, minimize
from .policies import CtrModelPolicy, LinearSoftmaxPolicy, Policy

METHODS = ("likelihood", "ips_likelihood", "contextual_bandit", "dual", "poem", "snips")

# names accepted on the command line, per method
CLI_METHOD_NAMES = {
    "likelihood": "likelihood",
    "ips-likelihood": "ips_likelihood",
    "cb": "contextual_bandit",
    "dual": "dual",
    "poem": "poem",
    "snips": "snips",
}


def canonical_method(name: str) -> str:
    if name in METHODS:
        return name
    if name in CLI_METHOD_NAMES:
        return CLI_METHOD_NAMES[name]
    raise ValueError(f"unknown method {name!r}")


@dataclass
class TrainingSet:
    """Logged bandit samples in flat array form: context rows, shown actions,
    logging propensities, and click outcomes."""

    contexts: np.ndarray
    actions: np.ndarray
    propensities: np.ndarray
    clicks: np.ndarray

    def __post_init__(self):
        self.contexts = np.ascontiguousarray(self.contexts, dtype=np.float64)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.int64)
        self.propensities = np.ascontiguousarray(self.propensities, dtype=np.float64)
        self.clicks = np.ascontiguousarray(self.clicks, dtype=np.float64)
        if self.contexts.ndim != 2:
            raise ValueError("contexts must be a 2-D matrix")
        n = len(self.contexts)
        if not (len(self.actions) == len(self.propensities) == len(self.clicks) == n):
            raise ValueError("field lengths disagree")
        if np.any(self.propensities <= 0.0) or np.any(self.propensities > 1.0):
            raise ValueError("propensities must lie in (0, 1]")
        if np.any((self.clicks != 0.0) & (self.clicks != 1.0)):
            raise ValueError("clicks must be 0 or 1")
        if n and (self.actions.min() < 0 or self.actions.max() >= self.n_items):
            raise ValueError("action ids outside the catalogue")
        for arr in (self.contexts, self.actions, self.propensities, self.clicks):
            arr.setflags(write=False)

    @property
    def n_items(self) -> int:
        return self.contexts.shape[1]

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_log(cls, log: InteractionLog) -> "TrainingSet":
        rows = list(log.bandit_events())
        contexts = np.array([ev.context.counts for ev in rows], dtype=np.float64)
        if not rows:
            contexts = contexts.reshape(0, log.n_items)
        return cls(
            contexts=contexts,
            actions=np.array([ev.action.id for ev in rows], dtype=np.int64),
            propensities=np.array([ev.propensity for ev in rows], dtype=np.float64),
            clicks=np.array([ev.click for ev in rows], dtype=np.float64),
        )


@dataclass(frozen=True)
class ObjectiveConfig:
    method: str = "likelihood"
    alpha: float = 0.5
    lam: float = 1.0
    clip_m: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "method", canonical_method(self.method))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lam < 0.0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.clip_m is not None and self.clip_m <= 0.0:
            raise ValueError(f"clip_m must be positive, got {self.clip_m}")


def _as_param_matrix(params: np.ndarray, n: int) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.size != n * n:
        raise ValueError(f"expected {n * n} parameters, got {params.size}")
    return params.reshape(n, n)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax_at(scores: np.ndarray, actions: np.ndarray) -> np.ndarray:
    m = scores.max(axis=1)
    logz = m + np.log(np.exp(scores - m[:, None]).sum(axis=1))
    return scores[np.arange(len(scores)), actions] - logz


def _policy_score_grad(x: np.ndarray, probs: np.ndarray, actions: np.ndarray,
                       coef: np.ndarray) -> np.ndarray:
    """sum_i coef_i * x_i (onehot(a_i) - p_i)^T, the softmax-score chain rule."""
    m = -probs * coef[:, None]
    m[np.arange(len(actions)), actions] += coef
    return x.T @ m


def _bce_with_logits(scores: np.ndarray, clicks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    loss = np.logaddexp(0.0, scores) - scores * clicks
    dloss = expit(scores) - clicks
    return loss, dloss


def likelihood_loss(beta: np.ndarray, data: TrainingSet) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy of the logistic click model sigma((x (x) a)^T beta)."""
    n = data.n_items
    weights = _as_param_matrix(beta, n)
    scores = (data.contexts @ weights)[np.arange(len(data)), data.actions]
    loss, dloss = _bce_with_logits(scores, data.clicks)
    g = np.zeros((len(data), n))
    g[np.arange(len(data)), data.actions] = dloss / len(data)
    return float(loss.mean()), (data.contexts.T @ g).ravel()


def ips_likelihood_loss(beta: np.ndarray, data: TrainingSet) -> tuple[float, np.ndarray]:
    """Likelihood loss with samples reweighted by the inverse logging propensity.

    Weights are normalized by their sum, which keeps the loss on the same
    scale as the unweighted likelihood; constant propensities therefore
    reproduce `likelihood_loss` exactly.
    """
    n = data.n_items
    weights = _as_param_matrix(beta, n)
    w = 1.0 / data.propensities
    w = w / w.sum()
    scores = (data.contexts @ weights)[np.arange(len(data)), data.actions]
    loss, dloss = _bce_with_logits(scores, data.clicks)
    g = np.zeros((len(data), n))
    g[np.arange(len(data)), data.actions] = w * dloss
    return float(w @ loss), (data.contexts.T @ g).ravel()


def cb_loss(theta: np.ndarray, data: TrainingSet) -> tuple[float, np.ndarray]:
    """Negated Jensen lower bound of the counterfactual click objective:
    -(1/N) sum_i (c_i / p0_i) log pi_theta(a_i | x_i).

    Unclicked samples have zero weight, so only clicked rows are touched.
    """
    n = data.n_items
    theta_m = _as_param_matrix(theta, n)
    clicked = data.clicks > 0.0
    if not np.any(clicked):
        return 0.0, np.zeros(n * n)
    x = data.contexts[clicked]
    a = data.actions[clicked]
    w = data.clicks[clicked] / data.propensities[clicked]
    scores = x @ theta_m
    logp = _log_softmax_at(scores, a)
    value = -float(w @ logp) / len(data)
    probs = _softmax_rows(scores)
    grad = -_policy_score_grad(x, probs, a, w) / len(data)
    return value, grad.ravel()


def dual_loss(theta: np.ndarray, data: TrainingSet, alpha: float = 0.5) -> tuple[float, np.ndarray]:
    """(1 - alpha) * cb_loss + alpha * likelihood_loss with shared parameters;
    the click model's beta is the flattened policy matrix."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return cb_loss(theta, data)
    if alpha == 1.0:
        return likelihood_loss(theta, data)
    v_cb, g_cb = cb_loss(theta, data)
    v_lh, g_lh = likelihood_loss(theta, data)
    return (1.0 - alpha) * v_cb + alpha * v_lh, (1.0 - alpha) * g_cb + alpha * g_lh


def poem_loss(theta: np.ndarray, data: TrainingSet, lam: float = 1.0,
              clip_m: Optional[float] = None) -> tuple[float, np.ndarray]:
    """Variance-penalized counterfactual objective:
    -(mean(u) - lam * sqrt(var(u) / N)) with u_i = c_i min(pi/p0, clip_m).

    Clipped samples contribute no gradient through the clipped factor.
    """
    n = data.n_items
    theta_m = _as_param_matrix(theta, n)
    total = len(data)
    if lam > 0.0 and total < 2:
        raise ValueError("variance penalty undefined for fewer than 2 samples")
    clicked = data.clicks > 0.0
    u = np.zeros(total)
    x = data.contexts[clicked]
    a = data.actions[clicked]
    if len(x):
        scores = x @ theta_m
        probs = _softmax_rows(scores)
        ratio = probs[np.arange(len(x)), a] / data.propensities[clicked]
        if clip_m is not None:
            active = ratio < clip_m
            ratio = np.minimum(ratio, clip_m)
        else:
            active = np.ones(len(x), dtype=bool)
        u[clicked] = data.clicks[clicked] * ratio
    r_hat = float(u.mean()) if total else 0.0
    if lam > 0.0:
        var = float(u.var(ddof=1))
        pen = np.sqrt(var / total)
    else:
        var, pen = 0.0, 0.0
    value = -(r_hat - lam * pen)
    if not len(x):
        return value, np.zeros(n * n)
    # d value / d u_i, then chain through u_i = c_i * ratio_i
    coef_u = np.full(total, -1.0 / total)
    if lam > 0.0 and pen > 0.0:
        coef_u += lam * (u - u.mean()) / ((total - 1) * total * pen)
    coef = coef_u[clicked] * data.clicks[clicked] * ratio * active
    grad = _policy_score_grad(x, probs, a, coef)
    return value, grad.ravel()


def snips_loss(theta: np.ndarray, data: TrainingSet, lam: float = 1.0) -> tuple[float, np.ndarray]:
    """Self-normalized counterfactual objective with a delta-method variance
    penalty: -(R - lam * sqrt(V / N)) where R = sum(c s) / sum(s) and V is the
    sample variance of (u_i - R s_i) divided by mean(s)^2."""
    n = data.n_items
    theta_m = _as_param_matrix(theta, n)
    total = len(data)
    if total == 0:
        raise ValueError("empty training set")
    scores = data.contexts @ theta_m
    probs = _softmax_rows(scores)
    s = probs[np.arange(total), data.actions] / data.propensities
    s_tot = float(s.sum())
    if s_tot <= 0.0:
        raise ValueError("all importance weights are zero")
    c = data.clicks
    u = c * s
    r_hat = float(u.sum()) / s_tot
    d = u - r_hat * s
    e = d - d.mean()
    s_bar = s_tot / total

    dr_ds = (c - r_hat) / s_tot
    if lam > 0.0 and total >= 2:
        var = float(e @ e) / (total - 1)
        v_hat = var / s_bar**2
        pen = np.sqrt(v_hat / total)
    else:
        var, v_hat, pen = 0.0, 0.0, 0.0
    value = -(r_hat - lam * pen)

    kappa = -dr_ds
    if lam > 0.0 and pen > 0.0:
        dvar_ds = (2.0 / (total - 1)) * (e * (c - r_hat) - float(e @ s) * dr_ds)
        dvhat_ds = dvar_ds / s_bar**2 - 2.0 * var / (s_bar**3 * total)
        kappa = kappa + lam * dvhat_ds / (2.0 * total * pen)
    grad = _policy_score_grad(data.contexts, probs, data.actions, kappa * s)
    return value, grad.ravel()


@dataclass
class TrainResult:
    policy: Policy
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    reason: str
    trace: list[tuple[float, float]]


def make_oracle(data: TrainingSet, config: ObjectiveConfig):
    """Bind a training set and objective config into a (params -> value, grad) oracle."""
    method = config.method
    if method == "likelihood":
        return lambda p: likelihood_loss(p, data)
    if method == "ips_likelihood":
        return lambda p: ips_likelihood_loss(p, data)
    if method == "contextual_bandit":
        return lambda p: cb_loss(p, data)
    if method == "dual":
        return lambda p: dual_loss(p, data, config.alpha)
    if method == "poem":
        if len(data) < 2 and config.lam > 0.0:
            raise ValueError("variance penalty undefined for fewer than 2 samples")
        return lambda p: poem_loss(p, data, config.lam, config.clip_m)
    if method == "snips":
        return lambda p: snips_loss(p, data, config.lam)
    raise ValueError(f"unknown method {method!r}")


def train(data: TrainingSet, config: ObjectiveConfig,
          optimizer_config: LbfgsConfig | None = None) -> TrainResult:
    """Fit one method from zero-initialized parameters with full-batch L-BFGS.

    Click-model methods return a greedy CtrModelPolicy; policy-based methods
    return a greedy LinearSoftmaxPolicy. Optimizer breakdown is reported via
    converged/reason, with the best iterate still returned.
    """
    if len(data) < 2:
        raise ValueError("need at least 2 training samples")
    oracle = make_oracle(data, config)
    n = data.n_items
    result = minimize(oracle, np.zeros(n * n), optimizer_config)
    if config.method in ("likelihood", "ips_likelihood"):
        policy: Policy = CtrModelPolicy(result.x)
    else:
        policy = LinearSoftmaxPolicy(result.x.reshape(n, n), mode="greedy")
    return TrainResult(
        policy=policy,
        value=result.value,
        grad_norm=result.grad_norm,
        iterations=result.iterations,
        converged=result.converged,
        reason=result.reason,
        trace=result.trace,
    )
