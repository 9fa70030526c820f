"""Recommendation policies: probability distributions over items given a context.

All policies are immutable after construction and evaluate batches of
contexts with one call, which is what the simulator and the off-policy
estimators lean on for speed.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from typing import IO, Sequence, Union

import numpy as np
from scipy.special import expit, logsumexp

from .core import Action, Context


def _context_matrix(contexts, n_items: int) -> np.ndarray:
    x = np.asarray(contexts, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n_items:
        raise ValueError(f"expected contexts of length {n_items}, got shape {x.shape}")
    return x


def _context_vector(context, n_items: int) -> np.ndarray:
    if isinstance(context, Context):
        x = context.as_array()
    else:
        x = np.asarray(context, dtype=np.float64)
    if x.shape != (n_items,):
        raise ValueError(f"expected context of length {n_items}, got shape {x.shape}")
    return x


def categorical_rows(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row: index of the first cumulative bin above u."""
    cum = np.cumsum(probs, axis=1)
    idx = (cum <= uniforms[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


class Policy(ABC):
    """Distribution over n_items actions conditioned on an organic-count context."""

    n_items: int
    #: True when the policy puts all mass on one action per context, in which
    #: case sampling consumes no randomness and the propensity is 1.
    deterministic: bool = False

    @abstractmethod
    def action_probs_matrix(self, contexts: np.ndarray) -> np.ndarray:
        """Row-wise action distributions for a batch of contexts."""

    def action_probs(self, context) -> np.ndarray:
        x = _context_vector(context, self.n_items)
        return self.action_probs_matrix(x[None, :])[0]

    def log_action_probs(self, context) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.action_probs(context))

    def action_probs_for_user(self, contexts: np.ndarray, user_latent: np.ndarray) -> np.ndarray:
        """Hook for simulator-side policies that peek at the user's latent state."""
        return self.action_probs_matrix(contexts)

    def sample_action(self, context, rng: np.random.Generator) -> tuple[Action, float]:
        """Draw an action and return it with its exact computed propensity."""
        probs = self.action_probs(context)
        if self.deterministic:
            idx = int(np.argmax(probs))
        else:
            idx = int(categorical_rows(probs[None, :], np.array([rng.random()]))[0])
        return Action(idx, self.n_items), float(probs[idx])


class LinearSoftmaxPolicy(Policy):
    """softmax(x^T theta) over items; greedy mode collapses to the argmax.

    Scores are shifted by their row max before exponentiation so contexts
    with scores up to ~700 in magnitude stay finite. Greedy ties break
    toward the lowest item id.
    """

    def __init__(self, theta: np.ndarray, mode: str = "greedy"):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise ValueError(f"theta must be square, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta entries must be finite")
        if mode not in ("greedy", "stochastic"):
            raise ValueError(f"mode must be 'greedy' or 'stochastic', got {mode!r}")
        self.theta = theta
        self.mode = mode
        self.n_items = theta.shape[0]
        self.deterministic = mode == "greedy"

    def _scores(self, contexts: np.ndarray) -> np.ndarray:
        return _context_matrix(contexts, self.n_items) @ self.theta

    def action_probs_matrix(self, contexts: np.ndarray) -> np.ndarray:
        scores = self._scores(contexts)
        if self.mode == "greedy":
            probs = np.zeros_like(scores)
            probs[np.arange(len(scores)), np.argmax(scores, axis=1)] = 1.0
            return probs
        shifted = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def log_action_probs(self, context) -> np.ndarray:
        x = _context_vector(context, self.n_items)
        scores = self._scores(x[None, :])[0]
        if self.mode == "greedy":
            logp = np.full(self.n_items, -np.inf)
            logp[int(np.argmax(scores))] = 0.0
            return logp
        return scores - logsumexp(scores)


class CtrModelPolicy(Policy):
    """Greedy policy over a logistic click model sigma((x (x) a)^T beta).

    The click score of item a under context x is column a of x @ reshape(beta),
    and the sigmoid is monotone, so acting greedily reduces to an argmax over
    those columns.
    """

    deterministic = True

    def __init__(self, beta: np.ndarray):
        beta = np.asarray(beta, dtype=np.float64).ravel()
        n = int(round(np.sqrt(beta.size)))
        if n * n != beta.size:
            raise ValueError(f"beta length {beta.size} is not a square")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta entries must be finite")
        self.beta = beta
        self.n_items = n
        self._weights = beta.reshape(n, n)

    def click_scores(self, contexts: np.ndarray) -> np.ndarray:
        return _context_matrix(contexts, self.n_items) @ self._weights

    def predicted_click_probs(self, contexts: np.ndarray) -> np.ndarray:
        return expit(self.click_scores(contexts))

    def action_probs_matrix(self, contexts: np.ndarray) -> np.ndarray:
        scores = self.click_scores(contexts)
        probs = np.zeros_like(scores)
        probs[np.arange(len(scores)), np.argmax(scores, axis=1)] = 1.0
        return probs


class PopularityPolicy(Policy):
    """Recommends proportionally to the user's own organic counts, smoothed.

    Smoothing keeps every propensity strictly positive, so logged data has
    full support over actions.
    """

    def __init__(self, n_items: int, smoothing: float = 1.0):
        if smoothing <= 0:
            raise ValueError(f"smoothing must be positive, got {smoothing}")
        self.n_items = int(n_items)
        self.smoothing = float(smoothing)

    def action_probs_matrix(self, contexts: np.ndarray) -> np.ndarray:
        x = _context_matrix(contexts, self.n_items) + self.smoothing
        return x / x.sum(axis=1, keepdims=True)


class UniformPolicy(Policy):
    """Probability 1/n for every item, regardless of context."""

    def __init__(self, n_items: int):
        self.n_items = int(n_items)

    def action_probs_matrix(self, contexts: np.ndarray) -> np.ndarray:
        x = _context_matrix(contexts, self.n_items)
        return np.full_like(x, 1.0 / self.n_items)


def policy_to_json(policy: Policy) -> dict:
    if isinstance(policy, LinearSoftmaxPolicy):
        return {
            "kind": "linear_softmax",
            "n_items": policy.n_items,
            "theta": policy.theta.ravel().tolist(),
            "mode": policy.mode,
        }
    if isinstance(policy, CtrModelPolicy):
        return {"kind": "ctr_model", "n_items": policy.n_items, "beta": policy.beta.tolist()}
    if isinstance(policy, PopularityPolicy):
        return {"kind": "popularity", "n_items": policy.n_items, "smoothing": policy.smoothing}
    if isinstance(policy, UniformPolicy):
        return {"kind": "uniform", "n_items": policy.n_items}
    raise TypeError(f"policy of type {type(policy).__name__} is not serializable")


def policy_from_json(doc: dict) -> Policy:
    kind = doc.get("kind")
    n = doc.get("n_items")
    if kind == "linear_softmax":
        theta = np.asarray(doc["theta"], dtype=np.float64).reshape(n, n)
        return LinearSoftmaxPolicy(theta, mode=doc.get("mode", "greedy"))
    if kind == "ctr_model":
        return CtrModelPolicy(np.asarray(doc["beta"], dtype=np.float64))
    if kind == "popularity":
        return PopularityPolicy(n, smoothing=doc.get("smoothing", 1.0))
    if kind == "uniform":
        return UniformPolicy(n)
    raise ValueError(f"unknown policy kind {kind!r}")


def save_policy(policy: Policy, destination: Union[str, IO[str]]) -> None:
    if isinstance(destination, str):
        with open(destination, "w") as fh:
            save_policy(policy, fh)
        return
    destination.write(json.dumps(policy_to_json(policy)) + "\n")


def load_policy(source: Union[str, IO[str]]) -> Policy:
    if isinstance(source, str):
        with open(source) as fh:
            return load_policy(fh)
    return policy_from_json(json.load(source))
