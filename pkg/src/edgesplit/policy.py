"""Controllers: fixed baselines and the greedy drift-plus-penalty optimizer.

The greedy controller minimizes ``drift + V * g`` over a restricted
candidate set, so a larger V trades backlog for lower per-slot cost; the
ablated variant drops the drift term and minimizes ``g`` alone.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cost import CostBreakdown, CostModel
from .lyapunov import LyapunovConfig, drift_estimate, immediate_cost
from .partition import (
    PartitionPlan, LayerPartition, edge_only, cloud_only, layer_split, is_feasible, EDGE, CLOUD,
    decode,
)
from .workload import ModelSpec


class Infeasible(RuntimeError):
    """A controller cannot produce a plan that fits the edge device."""


@dataclass(frozen=True)
class CostWeights:
    w_T: float = 1.0
    w_E: float = 1.0
    w_A: float = 1e-3

    def g(self, cb: CostBreakdown) -> float:
        return immediate_cost(cb, self.w_T, self.w_E, self.w_A)


@dataclass
class DecisionContext:
    """Everything a controller may consult besides the observation."""

    spec: ModelSpec
    cost_model: CostModel
    net: object
    n_ref: int
    lam: float
    weights: CostWeights
    lyap: LyapunovConfig


class Controller(ABC):
    name: str = "controller"

    @abstractmethod
    def decide(self, obs, ctx: DecisionContext) -> PartitionPlan:
        ...

    def reset(self, rng: np.random.Generator | None = None) -> None:
        pass


class ConstantController(Controller):
    def __init__(self, plan: PartitionPlan, name: str):
        self.plan = plan
        self.name = name

    def decide(self, obs, ctx: DecisionContext) -> PartitionPlan:
        if not ctx.cost_model.feasible(self.plan):
            raise Infeasible(f"{self.name}: plan needs {ctx.cost_model.memory(self.plan):.4g} B "
                             f"on an edge with {ctx.cost_model.device.M_e:.4g} B")
        return self.plan


def baseline(name: str, spec: ModelSpec) -> ConstantController:
    """``edge-only``, ``cloud-only``, ``layer-split`` (at L/2) or ``layer-split:<l>``."""
    if name == "edge-only":
        return ConstantController(edge_only(spec), name)
    if name == "cloud-only":
        return ConstantController(cloud_only(spec), name)
    if name.startswith("layer-split"):
        _, _, arg = name.partition(":")
        split = int(arg) if arg else spec.L // 2
        return ConstantController(layer_split(spec, split), f"layer-split:{split}")
    raise KeyError(f"unknown baseline {name!r}")


class RandomController(Controller):
    """Uniform over every head placement and FFN mode; used as a learning yardstick."""

    name = "random"

    def __init__(self, rng: np.random.Generator | None = None):
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def reset(self, rng=None):
        if rng is not None:
            self.rng = rng

    def decide(self, obs, ctx: DecisionContext) -> PartitionPlan:
        spec = ctx.spec
        for _ in range(1000):
            heads = self.rng.integers(0, 2, size=(spec.L, spec.H))
            ffn = self.rng.integers(0, 3, size=(spec.L, 1))
            plan = decode(np.concatenate([heads, ffn], axis=1).ravel(), spec)
            if ctx.cost_model.feasible(plan):
                return plan
        raise Infeasible("random controller found no feasible plan in 1000 draws")


def _head_variant(plan: PartitionPlan, layer: int, m: int, to_side: int) -> PartitionPlan:
    layers = list(plan.layers)
    lp = layers[layer]
    H = len(lp.heads)
    heads = list(lp.heads)
    idx = range(m) if to_side == EDGE else range(H - m, H)
    for h in idx:
        heads[h] = to_side
    layers[layer] = LayerPartition(tuple(heads), lp.ffn)
    return PartitionPlan(tuple(layers))


def build_candidates(spec: ModelSpec, device, granularity: str | int = "coarse") -> list[PartitionPlan]:
    """Feasible candidate plans: every layer split, optionally with head-fraction variants.

    ``granularity`` is ``"coarse"`` or the number of fractions k for the fine
    set, which moves ceil(H*j/k) heads (j = 1..k-1) across the split layer.
    """
    k = 1
    if granularity != "coarse":
        k = int(str(granularity).removeprefix("fine").strip("()") or 1)
        if k < 1:
            raise ValueError("fine granularity needs k >= 1")
    plans: list[PartitionPlan] = [edge_only(spec), cloud_only(spec)]
    for split in range(spec.L + 1):
        base = layer_split(spec, split)
        plans.append(base)
        for j in range(1, k):
            m = math.ceil(spec.H * j / k)
            if split < spec.L:
                plans.append(_head_variant(base, split, m, EDGE))
            else:
                plans.append(_head_variant(base, spec.L - 1, m, CLOUD))
    seen: set[PartitionPlan] = set()
    out = []
    for p in plans:
        if p not in seen and is_feasible(p, spec, device):
            seen.add(p)
            out.append(p)
    if not out:
        raise Infeasible("no candidate plan fits the edge memory")
    return out


def greedy_dpp_decide(Q: float, lam: float, candidates: Sequence[PartitionPlan], V: float,
                      weights: CostWeights, evaluate: Callable[[PartitionPlan], CostBreakdown],
                      use_drift: bool = True) -> PartitionPlan:
    """Per-slot minimizer of ``drift + V * g``; earliest candidate wins ties."""
    if not candidates:
        raise ValueError("empty candidate set")
    best, best_score = None, math.inf
    for plan in candidates:
        cb = evaluate(plan)
        score = V * weights.g(cb) if use_drift else weights.g(cb)
        if use_drift:
            score += drift_estimate(Q, lam, 1.0 / cb.T_total)
        if score < best_score:
            best, best_score = plan, score
    return best


class GreedyDPPController(Controller):
    """Greedy drift-plus-penalty over a fixed candidate set.

    With ``use_drift=False`` this is the cost-only ablation.
    """

    def __init__(self, candidates: Sequence[PartitionPlan], use_drift: bool = True,
                 V: float | None = None, name: str | None = None):
        if not candidates:
            raise Infeasible("empty candidate set")
        self.candidates = list(candidates)
        self.use_drift = use_drift
        self.V = V
        self.name = name or ("dpp" if use_drift else "cost-greedy")

    def decide(self, obs, ctx: DecisionContext) -> PartitionPlan:
        V = self.V if self.V is not None else ctx.lyap.V(obs.Q)
        ca = ctx.cost_model.evaluate_many(self.candidates, ctx.n_ref, ctx.net)
        w = ctx.weights
        g = w.w_T * ca.T_total + w.w_E * ca.E + w.w_A * ca.acc_penalty
        if self.use_drift:
            score = V * g + obs.Q * (ctx.lam - 1.0 / ca.T_total)
        else:
            score = g
        return self.candidates[int(np.argmin(score))]
