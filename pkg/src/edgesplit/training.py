"""Training loop for the learned partition policy.

Each episode is a rollout of the stochastic policy in the simulator. Once
the warm-up episodes are done, every ``update_every`` collected steps
trigger a dual-critic PPO update on the data gathered since the previous
update (capped at ``buffer_size`` steps). The Gumbel temperature is
annealed once per episode, and greedy evaluation every ``eval_every``
episodes keeps the best parameters seen.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .learn import (
    HierarchicalPolicy, Critics, Learner, TrainConfig, TrajectoryBatch, TrainingDiverged, gae,
    anneal_temperature, ppo_update,
)
from .network import NetworkScenario
from .partition import decode, encode, cloud_only
from .policy import Controller, DecisionContext, Infeasible
from .sim import EpisodeConfig, N_FEATURES, run_episode

log = logging.getLogger(__name__)

CURVE_COLUMNS = ["episode", "mean_reward", "mean_Q", "clip_fraction", "loss_perf", "loss_stab", "tau",
                 "eval_reward"]
CHECKPOINT_FORMAT = 1


class LearnedController(Controller):
    """Samples (or takes the mode of) the hierarchical policy each slot.

    A sampled plan that does not fit the edge memory is replaced by
    cloud-only, and the recorded action and log-probability follow the plan
    that was actually executed.
    """

    name = "learned"

    def __init__(self, policy: HierarchicalPolicy, tau: float = 1.0, greedy: bool = False):
        self.policy = policy
        self.tau = tau
        self.greedy = greedy
        self.rng = np.random.default_rng(0)
        self.last_decision = None

    def reset(self, rng=None):
        if rng is not None:
            self.rng = rng
        self.last_decision = None

    def decide(self, obs, ctx: DecisionContext):
        action, logp = self.policy.act(obs.feats, self.rng, self.tau, self.greedy)
        plan = decode(action, ctx.spec)
        if not ctx.cost_model.feasible(plan):
            plan = cloud_only(ctx.spec)
            if not ctx.cost_model.feasible(plan):
                raise Infeasible("cloud-only fallback does not fit the edge memory")
            action = encode(plan)
            logits, _ = self.policy.forward(obs.feats)
            logp = float(self.policy.log_prob_entropy(logits, action[None, :])[0][0])
        self.last_decision = (action, logp)
        return plan


def spec_hash(cfg: EpisodeConfig) -> str:
    d = {"model": cfg.spec.to_dict(), "n_features": N_FEATURES}
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def episode_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def fill_advantages(batch: TrajectoryBatch, critics: Critics, cfg: TrainConfig, Q_scale: float) -> None:
    """Critic values, GAE on the reward stream and the backlog-prediction advantage, in place."""
    vp, vs = critics.values(batch.feats)
    r = batch.rewards / cfg.reward_scale
    adv, ret = gae(r, vp, 0.0, cfg.gamma, cfg.lam_gae, batch.done)
    batch.value_perf[:] = vp
    batch.value_stab[:] = vs
    batch.adv_perf[:] = adv
    batch.ret_perf[:] = ret
    batch.q_target[:] = batch.q_target / Q_scale
    # positive when realized backlog undershoots the stability critic's forecast
    batch.adv_stab[:] = vs - batch.q_target


@dataclass
class TrainResult:
    policy: HierarchicalPolicy
    critics: Critics
    curve: list[dict]
    best_eval: float | None
    updates: int
    tau: float
    learner: Learner | None = None
    episodes_done: int = 0


def _evaluate(policy: HierarchicalPolicy, cfg: EpisodeConfig, scenarios, seed: int, n: int) -> float:
    rewards = []
    for i in range(n):
        sc = scenarios[i % len(scenarios)]
        c = replace(cfg, scenario=sc)
        res = run_episode(c, LearnedController(policy, greedy=True), rng_seed=episode_seed(seed + 7919, i))
        rewards.append(float(np.mean(res.batch.rewards)) if len(res.batch) else -np.inf)
    return float(np.mean(rewards))


def write_curve(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in rows:
            w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in CURVE_COLUMNS])


def train(cfg: EpisodeConfig, tcfg: TrainConfig, seed: int = 0,
          scenarios: Sequence[NetworkScenario] | None = None,
          curve_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
          resume: dict | None = None) -> TrainResult:
    """Train a hierarchical policy; returns the best evaluated parameters.

    ``scenarios`` are cycled per episode (default: ``cfg.scenario`` only).
    On divergence the last good checkpoint is written (when a path is
    given) and :class:`TrainingDiverged` propagates.
    """
    scenarios = list(scenarios) if scenarios else [cfg.scenario]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE11]))
    spec = cfg.spec
    policy = HierarchicalPolicy(N_FEATURES, spec.L, spec.H, tcfg.hidden, tcfg.d_enc, tcfg.d_e, rng)
    critics = Critics(N_FEATURES, tcfg.hidden, rng)
    learner = Learner(policy, critics, tcfg)
    tau = tcfg.tau_init
    start = 0
    if resume is not None:
        start, tau = _restore(resume, learner)
    cm = cfg.cost_model()
    Q_scale = cfg.lyap.Q_critical
    best_params = policy.params.copy()
    best_eval = None
    curve: list[dict] = []
    pending: list[TrajectoryBatch] = []
    pending_steps = 0
    updates = 0
    good = _snapshot(learner, start, tau, cfg, seed)
    last_stats: dict = {}

    for k in range(start, tcfg.episodes):
        sc = scenarios[k % len(scenarios)]
        ecfg = replace(cfg, scenario=sc)
        ctrl = LearnedController(policy, tau=tau)
        res = run_episode(ecfg, ctrl, rng_seed=episode_seed(seed, k), cost_model=cm)
        batch = res.batch
        row = {"episode": k, "mean_reward": float(np.mean(batch.rewards)) if len(batch) else 0.0,
               "mean_Q": res.metrics.mean_Q, "clip_fraction": None, "loss_perf": None, "loss_stab": None,
               "tau": tau, "eval_reward": None}
        if k >= tcfg.warmup_episodes and len(batch):
            pending.append(batch)
            pending_steps += len(batch)
            if pending_steps >= tcfg.update_every:
                data = TrajectoryBatch.concat(pending).tail(tcfg.buffer_size)
                pending, pending_steps = [], 0
                fill_advantages(data, critics, tcfg, Q_scale)
                try:
                    last_stats = ppo_update(learner, data, rng)
                except TrainingDiverged:
                    if checkpoint_path is not None:
                        save_checkpoint(checkpoint_path, good)
                    raise
                updates += 1
                row.update(clip_fraction=last_stats["clip_fraction"], loss_perf=last_stats["loss_perf"],
                           loss_stab=last_stats["loss_stab"])
                good = _snapshot(learner, k + 1, tau, cfg, seed)
        tau = anneal_temperature(tau, tcfg.anneal, tcfg.tau_min)
        if tcfg.eval_every and (k + 1) % tcfg.eval_every == 0:
            ev = _evaluate(policy, cfg, scenarios, seed, tcfg.eval_episodes)
            row["eval_reward"] = ev
            if best_eval is None or ev > best_eval:
                best_eval, best_params = ev, policy.params.copy()
        curve.append(row)

    if best_eval is not None:
        policy.params[:] = best_params
    if curve_path is not None:
        write_curve(curve_path, curve)
    result = TrainResult(policy, critics, curve, best_eval, updates, tau, learner, tcfg.episodes)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, _snapshot(learner, tcfg.episodes, tau, cfg, seed))
    return result


def _snapshot(learner: Learner, episode: int, tau: float, cfg: EpisodeConfig, seed: int) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "spec_hash": spec_hash(cfg),
        "seed": seed,
        "episode": episode,
        "tau": tau,
        "policy_config": learner.policy.config(),
        "policy": learner.policy.params.tolist(),
        "critic_perf": learner.critics.perf.params.tolist(),
        "critic_stab": learner.critics.stab.params.tolist(),
        "opt": {"actor": learner.actor_opt.state_dict(), "perf": learner.perf_opt.state_dict(),
                "stab": learner.stab_opt.state_dict()},
    }


def _restore(ck: dict, learner: Learner) -> tuple[int, float]:
    if ck.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {ck.get('format')!r}")
    if ck["policy_config"] != learner.policy.config():
        raise ValueError("checkpoint policy shape does not match the configuration")
    learner.policy.params[:] = ck["policy"]
    learner.critics.perf.params[:] = ck["critic_perf"]
    learner.critics.stab.params[:] = ck["critic_stab"]
    learner.actor_opt.load_state_dict(ck["opt"]["actor"])
    learner.perf_opt.load_state_dict(ck["opt"]["perf"])
    learner.stab_opt.load_state_dict(ck["opt"]["stab"])
    return int(ck["episode"]), float(ck["tau"])


def save_checkpoint(path, ck: dict) -> None:
    Path(path).write_text(json.dumps(ck), encoding="utf-8")


def load_checkpoint(path, cfg: EpisodeConfig | None = None) -> dict:
    ck = json.loads(Path(path).read_text(encoding="utf-8"))
    if cfg is not None and ck.get("spec_hash") != spec_hash(cfg):
        raise ValueError("checkpoint was trained for a different model spec")
    return ck


def policy_from_checkpoint(ck: dict) -> HierarchicalPolicy:
    p = HierarchicalPolicy(**ck["policy_config"])
    p.params[:] = ck["policy"]
    return p
