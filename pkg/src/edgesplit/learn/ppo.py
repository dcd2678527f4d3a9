"""Dual-critic PPO: advantages, clipped surrogate, critic regression, online adaptation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .hierarchical import HierarchicalPolicy
from .mlp import Mlp, Adam

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    gamma: float = 0.99
    lam_gae: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 0.01
    ppo_epochs: int = 4
    batch_size: int = 256
    buffer_size: int = 1000
    update_every: int = 100
    episodes: int = 2500
    warmup_episodes: int = 100
    eval_every: int = 50
    eval_episodes: int = 2
    tau_init: float = 1.0
    anneal: float = 0.995
    tau_min: float = 0.1
    alpha_adapt: float = 1e-3
    stability_weight: float = 2.0
    reward_scale: float = 1.0
    hidden: int = 64
    d_enc: int = 32
    d_e: int = 16

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam_gae <= 1):
            raise ValueError("gamma and lam_gae must lie in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip range must be positive")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        for k in ("ppo_epochs", "batch_size", "buffer_size", "update_every", "episodes"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")


_BATCH_FIELDS = ("feats", "actions", "logp", "rewards", "g", "drift", "V", "Q", "Q_next", "q_target",
                 "value_perf", "value_stab", "adv_perf", "adv_stab", "ret_perf", "done")


@dataclass
class TrajectoryBatch:
    """Aligned per-step arrays of one or more trajectories."""

    feats: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    g: np.ndarray
    drift: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    Q_next: np.ndarray
    q_target: np.ndarray
    value_perf: np.ndarray
    value_stab: np.ndarray
    adv_perf: np.ndarray
    adv_stab: np.ndarray
    ret_perf: np.ndarray
    done: np.ndarray

    def __post_init__(self):
        n = len(self.feats)
        for k in _BATCH_FIELDS:
            if len(getattr(self, k)) != n:
                raise ValueError(f"batch field {k} has length {len(getattr(self, k))}, expected {n}")

    def __len__(self) -> int:
        return len(self.feats)

    @classmethod
    def empty(cls, n_features: int, action_dim: int) -> "TrajectoryBatch":
        z = np.zeros(0)
        return cls(np.zeros((0, n_features)), np.zeros((0, action_dim), dtype=np.int64),
                   *[z.copy() for _ in _BATCH_FIELDS[2:]])

    @classmethod
    def concat(cls, batches) -> "TrajectoryBatch":
        batches = list(batches)
        return cls(*[np.concatenate([getattr(b, k) for b in batches]) for k in _BATCH_FIELDS])

    def take(self, idx) -> "TrajectoryBatch":
        return TrajectoryBatch(*[getattr(self, k)[idx] for k in _BATCH_FIELDS])

    def tail(self, n: int) -> "TrajectoryBatch":
        return self.take(slice(max(len(self) - n, 0), len(self)))


def gae(rewards, values, next_value: float | None = None, gamma: float = 0.99, lam: float = 0.95,
        dones=None):
    """Generalized advantage estimation by backward recursion.

    ``values`` may carry the bootstrap value as an extra trailing element.
    Returns ``(advantages, returns)`` with ``returns = advantages + values``.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    T = len(r)
    if len(v) == T + 1:
        v, next_value = v[:T], float(v[T])
    elif len(v) != T:
        raise ValueError("values must have the same length as rewards (or one more)")
    if next_value is None:
        next_value = 0.0
    d = np.zeros(T) if dones is None else np.asarray(dones, dtype=float)
    adv = np.zeros(T)
    acc = 0.0
    nv = next_value
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * nv * nonterminal - v[t]
        acc = delta + gamma * lam * nonterminal * acc
        adv[t] = acc
        nv = v[t]
    return adv, adv + v


def combined_advantage(adv_perf, adv_stab, V):
    return np.asarray(adv_perf, dtype=float) + np.asarray(V, dtype=float) * np.asarray(adv_stab, dtype=float)


def anneal_temperature(tau: float, beta: float, tau_min: float = 0.1) -> float:
    return max(beta * tau, tau_min)


class Critics:
    """Performance and stability value nets over the same features."""

    def __init__(self, n_features: int, hidden: int = 64, rng: np.random.Generator | None = None):
        self.perf = Mlp([n_features, hidden, hidden, 1], rng)
        self.stab = Mlp([n_features, hidden, hidden, 1], rng)

    def values(self, feats: np.ndarray):
        return self.perf(feats)[:, 0], self.stab(feats)[:, 0]

    def copy(self) -> "Critics":
        c = Critics(self.perf.n_in, self.perf.sizes[1])
        c.perf.params[:] = self.perf.params
        c.stab.params[:] = self.stab.params
        return c


def value_loss(net: Mlp, feats: np.ndarray, target: np.ndarray):
    """Mean squared regression error and its flat parameter gradient."""
    y, cache = net.forward(feats)
    err = y[:, 0] - target
    loss = float(np.mean(err**2))
    grad, _ = net.backward(cache, (2.0 / len(err)) * err[:, None])
    return loss, grad


def surrogate(policy: HierarchicalPolicy, feats, actions, logp_old, adv, clip: float, entropy_coef: float):
    """Clipped PPO objective (to be maximized) with entropy bonus.

    Returns ``(objective, flat gradient, stats)``.
    """
    logits, cache = policy.forward(feats)
    logp, ent, dlogp, dent = policy.log_prob_entropy(logits, actions)
    n = len(adv)
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1 - clip, 1 + clip)
    obj = np.minimum(ratio * adv, clipped * adv)
    J = float(obj.mean() + entropy_coef * ent.mean())
    active = np.where(adv >= 0, ratio <= 1 + clip, ratio >= 1 - clip)
    w = np.where(active, ratio * adv, 0.0) / n
    grads = [w[:, None] * dl + (entropy_coef / n) * de for dl, de in zip(dlogp, dent)]
    grad = policy.backward(cache, grads)
    stats = {
        "clip_fraction": float(np.mean(np.abs(ratio - 1) > clip)),
        "entropy": float(ent.mean()),
        "approx_kl": float(np.mean(logp_old - logp)),
    }
    return J, grad, stats


@dataclass
class Learner:
    """Policy, critics and their optimizers."""

    policy: HierarchicalPolicy
    critics: Critics
    cfg: TrainConfig
    actor_opt: Adam = field(init=False)
    perf_opt: Adam = field(init=False)
    stab_opt: Adam = field(init=False)

    def __post_init__(self):
        self.actor_opt = Adam(self.policy.params, self.cfg.lr_actor)
        self.perf_opt = Adam(self.critics.perf.params, self.cfg.lr_critic, max_grad_norm=None)
        self.stab_opt = Adam(self.critics.stab.params, self.cfg.lr_critic, max_grad_norm=None)


def _check_finite(name: str, value: float, **diag):
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite {name}: {value}; diagnostics: {diag}")


def ppo_update(learner: Learner, batch: TrajectoryBatch, rng: np.random.Generator,
               normalize: bool = True) -> dict:
    """Critic regression plus clipped-surrogate ascent over ``cfg.ppo_epochs`` epochs."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    cfg = learner.cfg
    adv = combined_advantage(batch.adv_perf, batch.adv_stab, batch.V)
    if normalize and len(adv) > 1 and adv.std() > 1e-12:
        adv = (adv - adv.mean()) / adv.std()
    n = len(batch)
    mb = max(1, min(cfg.batch_size, n))
    stats = {"clip_fraction": [], "policy_obj": [], "loss_perf": [], "loss_stab": [], "entropy": [],
             "first_epoch_clip_fraction": None}
    for epoch in range(cfg.ppo_epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            lp, gp = value_loss(learner.critics.perf, batch.feats[idx], batch.ret_perf[idx])
            ls, gs = value_loss(learner.critics.stab, batch.feats[idx], batch.q_target[idx])
            J, gpol, st = surrogate(learner.policy, batch.feats[idx], batch.actions[idx], batch.logp[idx],
                                    adv[idx], cfg.clip, cfg.entropy_coef)
            _check_finite("perf critic loss", lp, epoch=epoch)
            _check_finite("stab critic loss", ls, epoch=epoch)
            _check_finite("policy objective", J, epoch=epoch, approx_kl=st["approx_kl"])
            if epoch == 0 and stats["first_epoch_clip_fraction"] is None:
                stats["first_epoch_clip_fraction"] = st["clip_fraction"]
            learner.perf_opt.step(gp)
            learner.stab_opt.step(gs)
            learner.actor_opt.step(gpol, ascent=True)
            stats["clip_fraction"].append(st["clip_fraction"])
            stats["policy_obj"].append(J)
            stats["loss_perf"].append(lp)
            stats["loss_stab"].append(ls)
            stats["entropy"].append(st["entropy"])
    out = {k: float(np.mean(v)) for k, v in stats.items() if isinstance(v, list) and v}
    out["first_epoch_clip_fraction"] = stats["first_epoch_clip_fraction"] or 0.0
    return out


def online_objective(policy: HierarchicalPolicy, batch: TrajectoryBatch, stability_weight: float,
                     clip: float = 0.2, entropy_coef: float = 0.0):
    """Surrogate on deployment data with the stability advantage weighted up."""
    adv = combined_advantage(batch.adv_perf, batch.adv_stab, stability_weight * batch.V)
    return surrogate(policy, batch.feats, batch.actions, batch.logp, adv, clip, entropy_coef)


def online_adapt(policy: HierarchicalPolicy, batch: TrajectoryBatch, alpha_adapt: float,
                 stability_weight: float = 2.0) -> HierarchicalPolicy:
    """One gradient-ascent step on the online objective; the base policy is not modified."""
    adapted = policy.copy()
    if batch is None or len(batch) == 0:
        log.warning("online adaptation skipped: deployment buffer is empty")
        return adapted
    if alpha_adapt == 0:
        return adapted
    _, grad, _ = online_objective(policy, batch, stability_weight)
    adapted.params += alpha_adapt * grad
    return adapted
