"""Single-step policy optimization for the fling task.

Each episode is one action followed by one reward, so the problem is a
contextual bandit: the context is the wire stiffness ``(alpha, beta)`` and
the policy is a Gaussian whose mean is affine in the (normalized) context.
Updates ascend a clipped importance-ratio surrogate with advantages taken
against a running-mean reward baseline.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import csv
import json
import logging
import math
import os

import numpy as np

from .errors import ConfigError
from .fling import ActionBounds, FlingAction, FlingConfig, N_WAYPOINTS, run_episode

log = logging.getLogger(__name__)

ACTION_DIM = 3 * N_WAYPOINTS
OBS_DIM = 2
_LOG_2PI = math.log(2.0 * math.pi)


class GaussianPolicy:
    """Diagonal Gaussian over raw actions; emitted actions are clamped.

    ``mean = scale * (W z + b)``, ``std = scale * exp(log_std)`` where ``z``
    maps the observation ranges onto ``[-1, 1]`` and ``scale`` is the
    action bound, so parameters are dimensionless.
    """

    def __init__(self, alpha_range=(0.5, 2.0), beta_range=(0.5, 2.0), bounds=None,
                 init_std=0.3, W=None, b=None, log_std=None):
        self.bounds = bounds if isinstance(bounds, ActionBounds) else ActionBounds(**(bounds or {}))
        self.scale = self.bounds.as_array()
        lo = np.array([alpha_range[0], beta_range[0]], dtype=float)
        hi = np.array([alpha_range[1], beta_range[1]], dtype=float)
        self.alpha_range = tuple(alpha_range)
        self.beta_range = tuple(beta_range)
        self.obs_center = 0.5 * (lo + hi)
        self.obs_scale = np.where(hi > lo, 0.5 * (hi - lo), 1.0)
        self.W = np.zeros((ACTION_DIM, OBS_DIM)) if W is None else np.array(W, dtype=float)
        self.b = np.zeros(ACTION_DIM) if b is None else np.array(b, dtype=float)
        if log_std is None:
            if not init_std > 0:
                raise ValueError("init_std must be positive")
            log_std = np.full(ACTION_DIM, math.log(init_std))
        self.log_std = np.array(log_std, dtype=float)
        if self.W.shape != (ACTION_DIM, OBS_DIM) or self.b.shape != (ACTION_DIM,) \
                or self.log_std.shape != (ACTION_DIM,):
            raise ValueError("policy parameter shapes do not match the action space")

    # parameters as one flat vector (W row-major, then b, then log_std)
    def get_flat(self):
        return np.concatenate([self.W.ravel(), self.b, self.log_std])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = ACTION_DIM * OBS_DIM
        self.W = theta[:k].reshape(ACTION_DIM, OBS_DIM).copy()
        self.b = theta[k:k + ACTION_DIM].copy()
        self.log_std = theta[k + ACTION_DIM:].copy()

    def copy(self):
        return GaussianPolicy(self.alpha_range, self.beta_range, self.bounds,
                              W=self.W, b=self.b, log_std=self.log_std)

    def features(self, obs):
        return (np.asarray(obs, dtype=float) - self.obs_center) / self.obs_scale

    def mean(self, obs):
        z = self.features(obs)
        return self.scale * (z @ self.W.T + self.b)

    def std(self):
        return self.scale * np.exp(self.log_std)

    def log_prob(self, obs, raw):
        """Log-density of raw (unclamped) actions; ``obs`` and ``raw`` may be batched."""
        u = (np.asarray(raw, dtype=float) - self.mean(obs)) / self.std()
        return -0.5 * np.sum(u * u, axis=-1) - np.sum(np.log(self.std())) - 0.5 * ACTION_DIM * _LOG_2PI

    def act(self, obs):
        """Deterministic action: the clamped mean."""
        return FlingAction.from_vector(self.mean(obs), self.bounds)

    def to_dict(self):
        return {
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "log_std": self.log_std.tolist(),
            "bounds": asdict(self.bounds),
            "alpha_range": list(self.alpha_range),
            "beta_range": list(self.beta_range),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["alpha_range"], d["beta_range"], ActionBounds(**d["bounds"]),
                       W=d["W"], b=d["b"], log_std=d["log_std"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed policy document: {exc}") from None


def sample_action(policy, obs, rng):
    """Draw an action; returns ``(action, raw, log_prob)``.

    ``raw`` is the unclamped Gaussian sample the log-probability refers to.
    """
    mu = policy.mean(obs)
    raw = mu + policy.std() * rng.standard_normal(ACTION_DIM)
    return FlingAction.from_vector(raw, policy.bounds), raw, float(policy.log_prob(obs, raw))


def surrogate(policy, obs, raw, logp_old, adv, clip_ratio):
    """Mean clipped surrogate ``min(r A, clip(r, 1-eps, 1+eps) A)``."""
    ratio = np.exp(policy.log_prob(obs, raw) - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    return float(np.mean(np.minimum(ratio * adv, clipped * adv)))


def surrogate_gradient(policy, obs, raw, logp_old, adv, clip_ratio):
    """Analytic gradient of :func:`surrogate` w.r.t. the flat parameters."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    adv = np.asarray(adv, dtype=float)
    z = policy.features(obs)
    sig = np.exp(policy.log_std)
    u = (raw - policy.mean(obs)) / policy.std()
    ratio = np.exp(policy.log_prob(obs, raw) - logp_old)
    # the clipped branch is flat: no gradient once the ratio has left the trust band
    active = ~(((adv > 0) & (ratio > 1.0 + clip_ratio)) | ((adv < 0) & (ratio < 1.0 - clip_ratio)))
    w = np.where(active, ratio * adv, 0.0) / len(adv)
    g_b = (w[:, None] * u / sig).sum(axis=0)
    g_W = (w[:, None] * u / sig).T @ z
    g_ls = (w[:, None] * (u * u - 1.0)).sum(axis=0)
    return np.concatenate([g_W.ravel(), g_b, g_ls])


class RunningBaseline:
    """Exponential moving average of batch-mean rewards."""

    def __init__(self, decay=0.9, value=None):
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")
        self.decay = decay
        self.value = value

    def update(self, rewards):
        m = float(np.mean(rewards))
        self.value = m if self.value is None else self.decay * self.value + (1.0 - self.decay) * m
        return self.value


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8, m=None, v=None, t=0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = m, v, t

    def direction(self, g):
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mh = self.m / (1 - self.beta1**self.t)
        vh = self.v / (1 - self.beta2**self.t)
        return self.lr * mh / (np.sqrt(vh) + self.eps)

    def to_dict(self):
        return {"lr": self.lr, "t": self.t,
                "m": None if self.m is None else self.m.tolist(),
                "v": None if self.v is None else self.v.tolist()}

    @classmethod
    def from_dict(cls, d):
        arr = lambda x: None if x is None else np.array(x, dtype=float)
        return cls(d["lr"], m=arr(d["m"]), v=arr(d["v"]), t=d["t"])


@dataclass
class TrainConfig:
    total_episodes: int = 5000
    batch_size: int = 50
    learning_rate: float = 0.05
    clip_ratio: float = 0.2
    epochs: int = 10
    baseline_decay: float = 0.9
    init_std: float = 0.3
    min_log_std: float = math.log(0.02)
    seed: int = 0
    alpha_range: tuple = (0.5, 2.0)
    beta_range: tuple = (0.5, 2.0)
    eval_every: int = 10
    eval_episodes: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.total_episodes < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("episode, batch and epoch counts must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.clip_ratio < 1.0:
            raise ConfigError("clip_ratio must lie in (0, 1)")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ConfigError("baseline_decay must lie in [0, 1)")
        for lo, hi in (self.alpha_range, self.beta_range):
            if not 0 < lo <= hi:
                raise ConfigError("stiffness ranges must be positive and ordered")
        if self.eval_every < 1 or self.eval_episodes < 1 or self.workers < 1:
            raise ConfigError("eval_every, eval_episodes and workers must be positive")

    @property
    def n_batches(self):
        return self.total_episodes // self.batch_size

    def to_dict(self):
        d = asdict(self)
        d["alpha_range"] = list(self.alpha_range)
        d["beta_range"] = list(self.beta_range)
        return d


def update_policy(policy, obs, raw, logp_old, advantages, clip_ratio=0.2, optimizer=None,
                  lr=0.05, min_log_std=-np.inf):
    """One ascent step on the clipped surrogate; modifies ``policy`` in place.

    Without an ``optimizer`` a plain gradient step of size ``lr`` is taken.
    """
    adv = np.asarray(advantages, dtype=float)
    if adv.size == 0:
        raise ValueError("empty batch")
    bad = np.flatnonzero(~np.isfinite(adv))
    if len(bad):
        raise FloatingPointError(f"non-finite advantage at batch index {int(bad[0])}")
    with np.errstate(invalid="ignore", over="ignore"):
        g = surrogate_gradient(policy, obs, raw, logp_old, adv, clip_ratio)
    if not np.all(np.isfinite(g)):
        with np.errstate(invalid="ignore", over="ignore"):
            per = [surrogate_gradient(policy, obs[i:i + 1], raw[i:i + 1], logp_old[i:i + 1],
                                      adv[i:i + 1], clip_ratio) for i in range(len(adv))]
        idx = next(i for i, gi in enumerate(per) if not np.all(np.isfinite(gi)))
        raise FloatingPointError(f"non-finite policy gradient from batch index {idx}")
    if not np.any(g):
        return policy
    step = optimizer.direction(g) if optimizer is not None else lr * g
    policy.set_flat(policy.get_flat() + step)
    np.maximum(policy.log_std, min_log_std, out=policy.log_std)
    return policy


# ---------------------------------------------------------------- rollouts

def _episode_rng(seed, stream, index):
    return np.random.default_rng([int(seed), stream, int(index)])


def _sample_obs(rng, alpha_range, beta_range):
    return np.array([rng.uniform(*alpha_range), rng.uniform(*beta_range)])


def _rollout(args):
    vec, cfg_dict, alpha, beta = args
    cfg = FlingConfig.from_dict(cfg_dict)
    r = run_episode(FlingAction.from_vector(vec, cfg.bounds), cfg, alpha, beta)
    return r.reward, r.success, r.diverged


def _run_many(jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_rollout, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_rollout(j) for j in jobs]


def evaluation_contexts(episodes, seed, alpha_range, beta_range):
    return [_sample_obs(_episode_rng(seed, 1, i), alpha_range, beta_range) for i in range(episodes)]


def evaluate(policy, cfg, episodes=30, deterministic=True, seed=0, workers=1,
             alpha_range=None, beta_range=None):
    """Success rate and mean reward over ``episodes`` seeded stiffness draws."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    ar = alpha_range or cfg.alpha_range
    br = beta_range or cfg.beta_range
    jobs = []
    for i, obs in enumerate(evaluation_contexts(episodes, seed, ar, br)):
        if deterministic:
            vec = policy.act(obs).vector()
        else:
            vec = sample_action(policy, obs, _episode_rng(seed, 2, i))[0].vector()
        jobs.append((vec, cfg.to_dict(), float(obs[0]), float(obs[1])))
    out = _run_many(jobs, workers)
    rewards = np.array([o[0] for o in out])
    return float(np.mean([o[1] for o in out])), float(rewards.mean())


@dataclass
class TrainResult:
    policy: GaussianPolicy
    curve: list = field(default_factory=list)
    best_score: float = -np.inf
    diverged: int = 0


def _checkpoint(path, state):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(state, fh)
    os.replace(tmp, path)


def load_checkpoint(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from None


def load_policy(path):
    """Policy from a checkpoint (its best policy) or a bare policy document."""
    d = load_checkpoint(path)
    return GaussianPolicy.from_dict(d.get("best_policy", d))


def write_curve_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch", "mean_reward", "std_reward", "success_rate"])
        w.writerows(curve)


def train(cfg, tc, checkpoint_path=None, resume=False, curve_path=None, progress=None):
    """Sample, roll out and update for ``tc.total_episodes`` episodes.

    Returns the best policy by periodic deterministic evaluation, along
    with the per-batch learning curve ``(batch, mean, std, success_rate)``.
    """
    policy = GaussianPolicy(tc.alpha_range, tc.beta_range, cfg.bounds, init_std=tc.init_std)
    opt = Adam(tc.learning_rate)
    baseline = RunningBaseline(tc.baseline_decay)
    curve, start, diverged = [], 0, 0
    best, best_score = policy.copy(), -np.inf
    if resume:
        if checkpoint_path is None or not os.path.exists(checkpoint_path):
            raise ConfigError("resume requested but no checkpoint exists")
        st = load_checkpoint(checkpoint_path)
        if st.get("train_config", {}).get("seed") != tc.seed:
            raise ConfigError("checkpoint was produced with a different seed")
        policy = GaussianPolicy.from_dict(st["policy"])
        best = GaussianPolicy.from_dict(st["best_policy"])
        best_score = st["best_score"]
        opt = Adam.from_dict(st["optimizer"])
        baseline = RunningBaseline(tc.baseline_decay, st["baseline"])
        curve = [tuple(row) for row in st["curve"]]
        start = st["next_batch"]
        diverged = st.get("diverged", 0)

    cfg_dict = cfg.to_dict()
    eval_ctx = evaluation_contexts(tc.eval_episodes, tc.seed + 1, tc.alpha_range, tc.beta_range)
    for batch in range(start, tc.n_batches):
        obs, raw, logp, jobs = [], [], [], []
        for i in range(tc.batch_size):
            rng = _episode_rng(tc.seed, 0, batch * tc.batch_size + i)
            o = _sample_obs(rng, tc.alpha_range, tc.beta_range)
            a, r, lp = sample_action(policy, o, rng)
            obs.append(o)
            raw.append(r)
            logp.append(lp)
            jobs.append((a.vector(), cfg_dict, float(o[0]), float(o[1])))
        out = _run_many(jobs, tc.workers)
        rewards = np.array([o[0] for o in out])
        diverged += sum(o[2] for o in out)
        if baseline.value is None:
            baseline.update(rewards)
        adv = rewards - baseline.value
        baseline.update(rewards)
        obs, raw, logp = np.array(obs), np.array(raw), np.array(logp)
        for _ in range(tc.epochs):
            update_policy(policy, obs, raw, logp, adv, tc.clip_ratio, opt, min_log_std=tc.min_log_std)
        row = (batch, float(rewards.mean()), float(rewards.std()), float(np.mean([o[1] for o in out])))
        curve.append(row)

        if (batch + 1) % tc.eval_every == 0 or batch + 1 == tc.n_batches:
            jobs = [(policy.act(o).vector(), cfg_dict, float(o[0]), float(o[1])) for o in eval_ctx]
            score = float(np.mean([o[0] for o in _run_many(jobs, tc.workers)]))
            if score > best_score:
                best, best_score = policy.copy(), score
            log.info("batch %d: mean reward %.3f, eval %.3f (best %.3f)", batch, row[1], score, best_score)
        if progress is not None:
            progress(row)
        if checkpoint_path is not None:
            _checkpoint(checkpoint_path, {
                "policy": policy.to_dict(),
                "best_policy": best.to_dict(),
                "best_score": best_score,
                "optimizer": opt.to_dict(),
                "baseline": baseline.value,
                "curve": curve,
                "next_batch": batch + 1,
                "diverged": diverged,
                "train_config": tc.to_dict(),
            })
    if curve_path is not None:
        write_curve_csv(curve_path, curve)
    return TrainResult(best, curve, best_score, diverged)
