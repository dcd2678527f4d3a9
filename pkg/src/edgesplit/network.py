"""Time-varying edge-cloud link conditions and transfer failure sampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

MBPS = 1e6
MS = 1e-3
PACKET_BYTES = 1500

STATIC = "static"
MARKOV = "markov"
TRACE = "trace"


@dataclass(frozen=True)
class NetworkState:
    B: float
    l_n: float
    jitter: float = 0.0
    loss: float = 0.0

    def __post_init__(self):
        if self.B <= 0:
            raise ValueError("bandwidth must be positive")
        if not 0 <= self.loss < 1:
            raise ValueError("loss must be in [0, 1)")
        if self.l_n < 0 or self.jitter < 0:
            raise ValueError("latency and jitter must be non-negative")

    @property
    def B_mbps(self) -> float:
        return self.B / MBPS


# Bandwidth, latency, jitter and loss rate of the evaluated link types.
LINK_PRESETS = {
    "wifi": NetworkState(100 * MBPS, 10 * MS, 2 * MS, 1e-4),
    "5g-good": NetworkState(50 * MBPS, 20 * MS, 5 * MS, 1e-3),
    "5g-avg": NetworkState(25 * MBPS, 40 * MS, 10 * MS, 5e-3),
    "4g": NetworkState(10 * MBPS, 80 * MS, 20 * MS, 1e-2),
}
SCENARIO_NAMES = ("wifi", "5g-good", "5g-avg", "4g", "var")


@dataclass(frozen=True)
class NetworkScenario:
    kind: str
    states: tuple[NetworkState, ...] = ()
    P: tuple[tuple[float, ...], ...] | None = None
    dwell: int = 1
    path: str | None = None
    loop: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind not in (STATIC, MARKOV, TRACE):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.kind == TRACE:
            if not self.path:
                raise ValueError("trace scenario needs a path")
            return
        if not self.states:
            raise ValueError("scenario needs at least one state")
        if self.kind == MARKOV:
            P = np.asarray(self.P, dtype=float)
            k = len(self.states)
            if P.shape != (k, k) or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0):
                raise ValueError("transition matrix must be row-stochastic and match the state count")
            if self.dwell < 1:
                raise ValueError("dwell must be >= 1 slot")

    @property
    def max_bandwidth(self) -> float:
        if self.kind == TRACE:
            return max(s.B for s in read_trace(self.path))
        return max(s.B for s in self.states)


def markov_matrix(k: int, stay: float = 0.9) -> tuple[tuple[float, ...], ...]:
    if k == 1:
        return ((1.0,),)
    off = (1.0 - stay) / (k - 1)
    return tuple(tuple(stay if i == j else off for j in range(k)) for i in range(k))


def make_scenario(name: str, stay: float = 0.9, dwell: int = 5) -> NetworkScenario:
    if name in LINK_PRESETS:
        return NetworkScenario(STATIC, (LINK_PRESETS[name],), name=name)
    if name == "var":
        states = tuple(LINK_PRESETS[k] for k in ("wifi", "5g-good", "5g-avg", "4g"))
        return NetworkScenario(MARKOV, states, markov_matrix(4, stay), dwell, name="var")
    raise KeyError(f"unknown network scenario {name!r}; known: {SCENARIO_NAMES}")


def static_scenario(B_mbps: float, latency_ms: float, jitter_ms: float = 0.0, loss: float = 0.0,
                    name: str = "custom") -> NetworkScenario:
    return NetworkScenario(STATIC, (NetworkState(B_mbps * MBPS, latency_ms * MS, jitter_ms * MS, loss),),
                           name=name)


def read_trace(path: str | Path) -> list[NetworkState]:
    """Read a ``slot,B_mbps,latency_ms,loss`` CSV trace."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["slot", "B_mbps", "latency_ms", "loss"]:
            raise ValueError(f"{path}: expected header slot,B_mbps,latency_ms,loss")
        for row in reader:
            out.append(NetworkState(float(row["B_mbps"]) * MBPS, float(row["latency_ms"]) * MS,
                                    0.0, float(row["loss"])))
    return out


def write_trace(path: str | Path, states: Sequence[NetworkState]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "B_mbps", "latency_ms", "loss"])
        for i, s in enumerate(states):
            w.writerow([i, repr(s.B / MBPS), repr(s.l_n / MS), repr(s.loss)])


class TraceExhausted(IndexError):
    pass


class NetworkProcess:
    """Per-episode cursor over a scenario; owns the Markov index or trace position."""

    def __init__(self, scenario: NetworkScenario, rng: np.random.Generator, start: int = 0):
        self.scenario = scenario
        self.rng = rng
        self.index = start
        self.age = 0
        self._trace = read_trace(scenario.path) if scenario.kind == TRACE else None
        self.state = self._emit()

    def _base(self) -> NetworkState:
        if self._trace is not None:
            if self.index >= len(self._trace):
                if not self.scenario.loop:
                    raise TraceExhausted(f"network trace {self.scenario.path} exhausted at slot {self.index}")
                self.index %= len(self._trace)
            return self._trace[self.index]
        return self.scenario.states[self.index]

    def _emit(self) -> NetworkState:
        base = self._base()
        if base.jitter > 0:
            lat = base.l_n + self.rng.uniform(-base.jitter, base.jitter)
            return replace(base, l_n=max(lat, 0.0))
        return base

    def step(self) -> NetworkState:
        sc = self.scenario
        if sc.kind == TRACE:
            self.index += 1
        elif sc.kind == MARKOV:
            self.age += 1
            if self.age >= sc.dwell:
                self.age = 0
                self.index = int(self.rng.choice(len(sc.states), p=sc.P[self.index]))
        self.state = self._emit()
        return self.state


def step(process: NetworkProcess) -> NetworkState:
    return process.step()


def packets(volume_bytes: float) -> int:
    return max(1, math.ceil(volume_bytes / PACKET_BYTES))


def transfer_failure_prob(loss: float, volume_bytes: float) -> float:
    if not 0 <= loss < 1:
        raise ValueError("loss must be in [0, 1)")
    if loss == 0:
        return 0.0
    return -math.expm1(packets(volume_bytes) * math.log1p(-loss))


def sample_transfer_failure(rng: np.random.Generator, loss: float, volume_bytes: float) -> bool:
    p = transfer_failure_prob(loss, volume_bytes)
    return p > 0 and rng.random() < p
