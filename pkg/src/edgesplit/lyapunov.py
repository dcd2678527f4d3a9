"""Queue dynamics, quadratic Lyapunov function and drift-plus-penalty scoring."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field


@dataclass(frozen=True)
class LyapunovConfig:
    V_min: float = 0.1
    V_max: float = 10.0
    Q_ref: float = 10.0
    Q_critical: float = 50.0
    B_bound: float = 100.0
    # fixed V instead of the backlog-driven schedule when set
    V_fixed: float | None = None

    def __post_init__(self):
        if not 0 < self.V_min <= self.V_max:
            raise ValueError("need 0 < V_min <= V_max")
        if self.Q_ref <= 0 or self.Q_critical <= 0:
            raise ValueError("Q_ref and Q_critical must be positive")
        if self.V_fixed is not None and self.V_fixed < 0:
            raise ValueError("V_fixed must be non-negative")

    def V(self, Q: float) -> float:
        return self.V_fixed if self.V_fixed is not None else adaptive_v(Q, self)


@dataclass
class QueueState:
    Q: float = 0.0
    window: deque = field(default_factory=lambda: deque(maxlen=20))

    def __post_init__(self):
        if self.Q < 0:
            raise ValueError("backlog must be non-negative")

    def push(self, Q: float) -> None:
        self.Q = Q
        self.window.append(Q)

    @property
    def mean(self) -> float:
        return sum(self.window) / len(self.window) if self.window else self.Q


def queue_update(Q: float, mu: float, A: float, dt: float = 1.0) -> float:
    """Lindley recursion with fractional service ``mu * dt``."""
    if Q < 0 or mu < 0 or A < 0:
        raise ValueError("Q, mu and A must be non-negative")
    return max(Q - mu * dt, 0.0) + A


def lyapunov(Q: float) -> float:
    return 0.5 * Q * Q


def drift_estimate(Q: float, lam: float, mu: float) -> float:
    """Point surrogate ``Q * (lam - mu)`` of the one-slot Lyapunov drift."""
    if Q < 0:
        raise ValueError("backlog must be non-negative")
    return Q * (lam - mu) + 0.0  # no negative zero in logs


def drift_bound(Q: float, lam: float, mu: float, B: float) -> float:
    """Upper bound ``B + Q * E[A - mu]`` on the expected drift."""
    return B + drift_estimate(Q, lam, mu)


def adaptive_v(Q: float, cfg: LyapunovConfig) -> float:
    return cfg.V_min + (cfg.V_max - cfg.V_min) * math.exp(-Q / cfg.Q_ref)


def dpp_reward(drift: float, g: float, V: float) -> float:
    return -(V * drift + g)


def immediate_cost(costs, w_T: float = 1.0, w_E: float = 0.0, w_A: float = 0.0) -> float:
    return w_T * costs.T_total + w_E * costs.E + w_A * costs.acc_penalty


def stability_bound(V: float, g_star: float, margin: float, B: float) -> float:
    """Time-average backlog bound ``(B + V g*) / eps`` for capacity margin ``eps``."""
    if margin <= 0:
        return math.inf
    return (B + V * g_star) / margin


def performance_bound(V: float, g_star: float, B: float) -> float:
    """Time-average cost bound ``g* + B / V``."""
    return g_star + B / V if V > 0 else math.inf
