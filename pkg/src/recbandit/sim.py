"""Simplified recommender environment with organic sessions and logged bandit feedback.

A user is a latent vector omega drawn once per user. Organic views follow
softmax(Gamma omega) over items; a recommendation of item a is clicked with
probability sigmoid(click_scale * (Psi_a . omega) + click_offset). Organic and
click embeddings differ, so organic popularity is informative about clicks
without being identical to them.

Every user is simulated from its own counter-based RNG substream keyed by
(seed, purpose, user_id), so generation is order-independent, reproducible,
and safe to split across threads.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .core import Action, BanditEvent, Context, Event, InteractionLog, OrganicEvent, substream
from .policies import Policy, categorical_rows

# Substream purpose tags. These are part of the reproducibility contract:
# evaluation users never collide with logged (training) users for any seed.
_STREAM_ENV = 0
_STREAM_LOG_BEHAVIOR = 1
_STREAM_LOG_ACTION = 2
_STREAM_EVAL_BEHAVIOR = 3
_STREAM_EVAL_ACTION = 4
_STREAM_TRUTH = 5

# Calibrated by bisection so the popularity logging policy's ground-truth CTR
# is 1.0% on the default-seed environment (display-advertising scale).
DEFAULT_CLICK_OFFSET = -5.4528


@dataclass(frozen=True)
class SimConfig:
    n_items: int = 10
    latent_dim: int = 5
    organic_len_mean: float = 20.0
    bandit_events_per_user: int = 80
    click_scale: float = 1.0
    click_offset: float = DEFAULT_CLICK_OFFSET
    embedding_correlation: float = 0.5
    organic_concentration: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_items < 2:
            raise ValueError(f"n_items must be at least 2, got {self.n_items}")
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be at least 1, got {self.latent_dim}")
        if self.bandit_events_per_user < 1:
            raise ValueError("bandit_events_per_user must be at least 1")
        if self.organic_len_mean <= 0.0:
            raise ValueError("organic_len_mean must be positive")
        if self.click_scale < 0.0:
            raise ValueError("click_scale must be non-negative")
        if not -1.0 <= self.embedding_correlation <= 1.0:
            raise ValueError("embedding_correlation must lie in [-1, 1]")
        if self.organic_concentration <= 0.0:
            raise ValueError("organic_concentration must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "SimConfig":
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown SimConfig keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class Environment:
    """Immutable world state: item embeddings for organic views and clicks."""

    organic_embeddings: np.ndarray  # (n_items, latent_dim)
    click_embeddings: np.ndarray    # (n_items, latent_dim)
    config: SimConfig

    def __post_init__(self):
        n, k = self.config.n_items, self.config.latent_dim
        if self.organic_embeddings.shape != (n, k) or self.click_embeddings.shape != (n, k):
            raise ValueError("embedding shapes disagree with the config")


def init_environment(config: SimConfig) -> Environment:
    """Draw item embeddings with entries N(0, 1/latent_dim); pure in (config, seed).

    Click embeddings correlate entrywise with the organic ones at
    `embedding_correlation`, so organically popular items tend to be
    clickable without the two affinities coinciding. Marginal entry
    distributions are unchanged by the correlation.
    """
    rng = substream(config.seed, _STREAM_ENV)
    n, k = config.n_items, config.latent_dim
    scale = 1.0 / np.sqrt(k)
    organic_raw = rng.standard_normal((n, k))
    click_raw = rng.standard_normal((n, k))
    rho = config.embedding_correlation
    organic = organic_raw * scale
    click = (rho * organic_raw + np.sqrt(1.0 - rho * rho) * click_raw) * scale
    organic.setflags(write=False)
    click.setflags(write=False)
    return Environment(organic, click, config)


class OraclePolicy(Policy):
    """Skyline reference: always picks the item with the highest true click
    probability for the current user. Needs the simulator's latent state, so
    it cannot be evaluated off-policy on logged contexts."""

    deterministic = True

    def __init__(self, env: Environment):
        self.env = env
        self.n_items = env.config.n_items

    def action_probs_matrix(self, contexts: np.ndarray) -> np.ndarray:
        raise TypeError(
            "the oracle policy conditions on latent user state and can only be "
            "deployed inside the simulator"
        )

    def action_probs_for_user(self, contexts: np.ndarray, user_latent: np.ndarray) -> np.ndarray:
        z = self.env.click_embeddings @ user_latent
        probs = np.zeros((len(contexts), self.n_items))
        probs[:, int(np.argmax(z))] = 1.0
        return probs


def _categorical_fixed(cum: np.ndarray, uniforms: np.ndarray, n: int) -> np.ndarray:
    idx = (cum[None, :] <= uniforms[:, None]).sum(axis=1)
    return np.minimum(idx, n - 1)


def _user_trajectory(env: Environment, behavior_rng: np.random.Generator):
    """Draw a user's latent vector, organic session, and per-slot contexts.

    Draw order from the behavior stream is fixed: latent, session length,
    session views, pre-slot coins, pre-slot views. Contexts count every
    organic view strictly before each bandit slot, including that slot's
    own pre-view.
    """
    cfg = env.config
    n, b = cfg.n_items, cfg.bandit_events_per_user
    omega = behavior_rng.standard_normal(cfg.latent_dim)
    scores = cfg.organic_concentration * (env.organic_embeddings @ omega)
    e = np.exp(scores - scores.max())
    cum = np.cumsum(e / e.sum())
    length = int(behavior_rng.geometric(1.0 / cfg.organic_len_mean))
    session_items = _categorical_fixed(cum, behavior_rng.random(length), n)
    coins = behavior_rng.random(b) < 0.5
    pre_items = _categorical_fixed(cum, behavior_rng.random(b), n)
    views = np.zeros((b, n))
    views[np.arange(b)[coins], pre_items[coins]] = 1.0
    contexts = np.bincount(session_items, minlength=n)[None, :] + np.cumsum(views, axis=0)
    return omega, session_items, coins, pre_items, contexts


def _click_probs(env: Environment, omega: np.ndarray) -> np.ndarray:
    cfg = env.config
    return expit(cfg.click_scale * (env.click_embeddings @ omega) + cfg.click_offset)


def _simulate_user_arrays(env: Environment, policy: Policy, behavior_rng, action_rng):
    """One user's bandit phase as flat arrays; the engine behind every mode.

    Clicks consume uniforms from the behavior stream, never the action
    stream, so two policies evaluated on the same (seed, user) face the
    same user and the same click thresholds: paired comparisons by
    construction.
    """
    b = env.config.bandit_events_per_user
    omega, session_items, coins, pre_items, contexts = _user_trajectory(env, behavior_rng)
    click_u = behavior_rng.random(b)
    probs = policy.action_probs_for_user(contexts, omega)
    if policy.deterministic:
        actions = np.argmax(probs, axis=1)
    else:
        actions = categorical_rows(probs, action_rng.random(b))
    propensities = probs[np.arange(b), actions]
    clicks = (click_u < _click_probs(env, omega)[actions]).astype(np.int64)
    return session_items, coins, pre_items, contexts, actions, propensities, clicks


def _user_events(env: Environment, policy: Policy, user_id: int,
                 behavior_rng, action_rng) -> list[Event]:
    n = env.config.n_items
    session_items, coins, pre_items, contexts, actions, propensities, clicks = (
        _simulate_user_arrays(env, policy, behavior_rng, action_rng)
    )
    events: list[Event] = []
    t = 0
    for item in session_items:
        events.append(OrganicEvent(user_id, t, int(item)))
        t += 1
    for j in range(env.config.bandit_events_per_user):
        if coins[j]:
            events.append(OrganicEvent(user_id, t, int(pre_items[j])))
            t += 1
        events.append(
            BanditEvent(
                user_id=user_id,
                t=t,
                context=Context(tuple(int(v) for v in contexts[j])),
                action=Action(int(actions[j]), n),
                propensity=float(propensities[j]),
                click=int(clicks[j]),
            )
        )
        t += 1
    return events


def simulate_user(env: Environment, logging_policy: Policy, user_id: int,
                  seed: Optional[int] = None) -> list[Event]:
    """One user's full timeline: an organic session, then exactly
    `bandit_events_per_user` logged recommendations, each preceded by one
    extra organic view with probability 1/2."""
    seed = env.config.seed if seed is None else seed
    return _user_events(
        env,
        logging_policy,
        user_id,
        substream(seed, _STREAM_LOG_BEHAVIOR, user_id),
        substream(seed, _STREAM_LOG_ACTION, user_id),
    )


def _map_users(fn, num_users: int, threads: int):
    if threads > 1 and num_users > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(num_users)))
    return [fn(uid) for uid in range(num_users)]


def generate_logs(env: Environment, num_users: int, logging_policy: Policy,
                  seed: Optional[int] = None, threads: int = 1) -> InteractionLog:
    """Concatenation of simulate_user for users 0..num_users-1.

    Output is identical at any thread count because each user owns an
    independent substream and results are merged in user order.
    """
    if num_users < 0:
        raise ValueError("num_users must be non-negative")
    seed = env.config.seed if seed is None else seed

    def one(uid: int) -> list[Event]:
        return _user_events(
            env,
            logging_policy,
            uid,
            substream(seed, _STREAM_LOG_BEHAVIOR, uid),
            substream(seed, _STREAM_LOG_ACTION, uid),
        )

    per_user = _map_users(one, num_users, threads)
    events: list[Event] = []
    for chunk in per_user:
        events.extend(chunk)
    return InteractionLog(n_items=env.config.n_items, events=tuple(events))


@dataclass(frozen=True)
class AbTestResult:
    ctr: float
    ci_low: float
    ci_high: float
    impressions: int
    clicks: int

    def to_json(self) -> dict:
        return asdict(self)


def ab_test(env: Environment, policy: Policy, num_users: int,
            seed: Optional[int] = None, threads: int = 1) -> AbTestResult:
    """Deploy `policy` at the bandit slots of fresh users and measure CTR.

    Evaluation users come from eval-purpose substreams, so they never overlap
    the logged training users of the same seed; a fixed (seed, user) pair sees
    the same user and click thresholds whichever policy is being evaluated.
    """
    if num_users < 1:
        raise ValueError("num_users must be at least 1")
    seed = env.config.seed if seed is None else seed

    def one(uid: int) -> int:
        arrays = _simulate_user_arrays(
            env,
            policy,
            substream(seed, _STREAM_EVAL_BEHAVIOR, uid),
            substream(seed, _STREAM_EVAL_ACTION, uid),
        )
        return int(arrays[-1].sum())

    clicks = sum(_map_users(one, num_users, threads))
    impressions = num_users * env.config.bandit_events_per_user
    from .harness import confidence_interval  # deferred: harness builds on sim

    low, high = confidence_interval(clicks, impressions)
    return AbTestResult(
        ctr=clicks / impressions,
        ci_low=low,
        ci_high=high,
        impressions=impressions,
        clicks=clicks,
    )


def true_ctr(env: Environment, policy: Policy, num_users_mc: int,
             seed: Optional[int] = None, threads: int = 1) -> float:
    """Monte-Carlo ground-truth CTR of a policy over fresh users.

    Contexts are generated exactly as in simulate_user, but clicks are
    replaced by their exact probabilities under the policy's action
    distribution (no Bernoulli or action sampling), which removes both
    sources of evaluation noise.
    """
    if num_users_mc < 1:
        raise ValueError("num_users_mc must be at least 1")
    seed = env.config.seed if seed is None else seed

    def one(uid: int) -> float:
        behavior_rng = substream(seed, _STREAM_TRUTH, uid)
        omega, _, _, _, contexts = _user_trajectory(env, behavior_rng)
        probs = policy.action_probs_for_user(contexts, omega)
        return float((probs @ _click_probs(env, omega)).mean())

    totals = _map_users(one, num_users_mc, threads)
    return float(np.sum(totals)) / num_users_mc
