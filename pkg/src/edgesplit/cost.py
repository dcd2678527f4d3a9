"""Latency, energy and accuracy-penalty models for a partition plan."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .partition import (
    PartitionPlan, Boundary, boundaries, EDGE, CLOUD, OUTPUT_DOWNLOAD,
    active_memory,
)
from .workload import ModelSpec, Component, HEAD, FFN1, FFN2, component_flops

SEQUENTIAL = "sequential"
PIPELINED = "pipelined"

A100_FP16 = 312e12


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    CC_e: float
    CC_c: float
    M_e: float
    P_comp: float
    P_comm: float
    eta_e: float = 0.2
    eta_c: float = 0.35

    def __post_init__(self):
        for k in ("CC_e", "CC_c", "M_e", "P_comp", "P_comm", "eta_e", "eta_c"):
            if getattr(self, k) <= 0:
                raise ValueError(f"device {self.name}: {k} must be positive")
        if self.eta_e > 1 or self.eta_c > 1:
            raise ValueError(f"device {self.name}: efficiency factors must be <= 1")

    @property
    def edge_rate(self) -> float:
        return self.CC_e * self.eta_e

    @property
    def cloud_rate(self) -> float:
        return self.CC_c * self.eta_c


# Edge compute and memory are vendor figures; radio power and the phone's
# NPU throughput are not published and are set to typical values.
DEVICE_PRESETS: dict[str, DeviceProfile] = {
    "jetson-orin-nx": DeviceProfile("jetson-orin-nx", CC_e=100e12, CC_c=8 * A100_FP16, M_e=8e9,
                                    P_comp=25.0, P_comm=2.0),
    "galaxy-s23": DeviceProfile("galaxy-s23", CC_e=34e12, CC_c=8 * A100_FP16, M_e=12e9,
                                P_comp=8.0, P_comm=1.5),
    "rpi5-npu": DeviceProfile("rpi5-npu", CC_e=13e12, CC_c=8 * A100_FP16, M_e=8e9,
                              P_comp=12.0, P_comm=1.0),
}


def get_device(name: str) -> DeviceProfile:
    try:
        return DEVICE_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown device profile {name!r}; known: {sorted(DEVICE_PRESETS)}") from None


@dataclass(frozen=True)
class QuantConfig:
    bits: float = 8
    alpha: tuple[float, ...] | None = None
    probe_seed: int = 0

    def __post_init__(self):
        if not (self.bits >= 1):
            raise ValueError("quantization bits must be >= 1 (or inf)")

    def weight(self, k: int) -> float:
        if self.alpha is None or k >= len(self.alpha):
            return 1.0
        return float(self.alpha[k])


@dataclass
class CostBreakdown:
    T_comp_e: float
    T_comm: float
    T_comp_c: float
    T_total: float
    E: float
    acc_penalty: float
    K: int

    def to_dict(self) -> dict:
        return asdict(self)


def _side_of(lp, c: Component) -> int | None:
    if c.kind == HEAD:
        return lp.heads[c.head - 1]
    if c.kind == FFN1:
        return CLOUD if lp.ffn == CLOUD else EDGE
    return EDGE if lp.ffn == EDGE else CLOUD


def side_flops(plan: PartitionPlan, spec: ModelSpec, n: int, side: int) -> list[float]:
    """Per-layer FLOPs executed on ``side`` (reference path, component by component)."""
    plan.check(spec)
    per_layer = []
    for i, lp in enumerate(plan.layers, 1):
        tot = 0
        comps = [Component(i, HEAD, h) for h in range(1, spec.H + 1)] + [Component(i, FFN1), Component(i, FFN2)]
        for c in comps:
            if _side_of(lp, c) == side:
                tot += component_flops(spec, c, n)
        per_layer.append(float(tot))
    return per_layer


def compute_time(plan: PartitionPlan, spec: ModelSpec, n: int, device: DeviceProfile, side: str) -> float:
    s = EDGE if side == "edge" else CLOUD
    rate = device.edge_rate if s == EDGE else device.cloud_rate
    return sum(side_flops(plan, spec, n, s)) / rate


def transfer_time(volume_bytes: float, net) -> float:
    """Serialization time of one transfer, without propagation delay."""
    return volume_bytes * 8.0 / net.B


def comm_time(bounds: Sequence[Boundary], net, per_transition_latency: bool = True) -> float:
    if net.B <= 0:
        raise ValueError("bandwidth must be positive")
    if not bounds:
        return 0.0
    ser = sum(transfer_time(b.volume_bytes, net) for b in bounds)
    return ser + (len(bounds) if per_transition_latency else 1) * net.l_n


def pipeline_makespan(e: Sequence[float], x: Sequence[float], c: Sequence[float]) -> float:
    """Three-stage flow-shop schedule over layers: edge compute, transfer, cloud compute."""
    e, x, c = (np.asarray(v, dtype=float) for v in (e, x, c))
    if e.size == 0:
        return 0.0
    # closed form of f_i = max(f_{i-1}, g_i) + y_i via running maxima
    fe = np.cumsum(e)
    sx = np.cumsum(x)
    fx = sx + np.maximum.accumulate(fe - (sx - x))
    sc = np.cumsum(c)
    fc = sc + np.maximum.accumulate(fx - (sc - c))
    return float(max(fe[-1], fx[-1], fc[-1]))


def _layer_stages(plan, spec, n, device, net, precision_bytes, per_transition_latency):
    e = [f / device.edge_rate for f in side_flops(plan, spec, n, EDGE)]
    c = [f / device.cloud_rate for f in side_flops(plan, spec, n, CLOUD)]
    x = [0.0] * spec.L
    tail = 0.0
    bounds = boundaries(plan, spec, n, precision_bytes)
    for k, b in enumerate(bounds):
        lat = net.l_n if (per_transition_latency or k == 0) else 0.0
        t = transfer_time(b.volume_bytes, net) + lat
        if b.kind == OUTPUT_DOWNLOAD:
            tail += t
        else:
            x[b.layer - 1] += t
    return e, x, c, tail, bounds


def total_latency(plan: PartitionPlan, spec: ModelSpec, n: int, device: DeviceProfile, net,
                  mode: str = SEQUENTIAL, precision_bytes: int = 2,
                  per_transition_latency: bool = True) -> CostBreakdown:
    """Latency breakdown; energy and accuracy fields are filled by :func:`evaluate`."""
    e, x, c, tail, bounds = _layer_stages(plan, spec, n, device, net, precision_bytes, per_transition_latency)
    Te, Tc = sum(e), sum(c)
    Tx = comm_time(bounds, net, per_transition_latency)
    if mode == SEQUENTIAL:
        T = Te + Tx + Tc
    elif mode == PIPELINED:
        T = pipeline_makespan(e, x, c) + tail
    else:
        raise ValueError(f"unknown latency mode {mode!r}")
    return CostBreakdown(Te, Tx, Tc, T, 0.0, 0.0, len(bounds))


def energy(plan: PartitionPlan, spec: ModelSpec, n: int, device: DeviceProfile, net,
           precision_bytes: int = 2) -> float:
    Te = compute_time(plan, spec, n, device, "edge")
    ser = sum(transfer_time(b.volume_bytes, net) for b in boundaries(plan, spec, n, precision_bytes))
    return device.P_comp * Te + device.P_comm * ser


def quantize(x: np.ndarray, bits: float) -> np.ndarray:
    """Uniform quantizer with 2**bits levels spanning [min(x), max(x)]; ties go down."""
    x = np.asarray(x, dtype=float)
    if math.isinf(bits) or x.size == 0:
        return x.copy()
    lo, hi = float(x.min()), float(x.max())
    levels = 2 ** int(bits)
    if hi == lo:
        return x.copy()
    step = (hi - lo) / (levels - 1)
    k = np.clip(np.ceil((x - lo) / step - 0.5), 0, levels - 1)
    return lo + k * step


def quantization_error(x: np.ndarray, bits: float) -> float:
    d = np.asarray(x, dtype=float) - quantize(x, bits)
    return float(np.dot(d, d))


def accuracy_penalty(plan: PartitionPlan, spec: ModelSpec, n: int, quant: QuantConfig,
                     rng: np.random.Generator, precision_bytes: int = 2) -> float:
    if math.isinf(quant.bits):
        return 0.0
    total = 0.0
    for k, _ in enumerate(boundaries(plan, spec, n, precision_bytes)):
        probe = rng.standard_normal(n * spec.d_model)
        total += quant.weight(k) * quantization_error(probe, quant.bits)
    return total


def evaluate(plan: PartitionPlan, spec: ModelSpec, n: int, device: DeviceProfile, net,
             quant: QuantConfig | None = None, rng: np.random.Generator | None = None,
             mode: str = SEQUENTIAL, precision_bytes: int = 2,
             per_transition_latency: bool = True) -> CostBreakdown:
    """Full breakdown via the reference component-level path."""
    cb = total_latency(plan, spec, n, device, net, mode, precision_bytes, per_transition_latency)
    cb.E = energy(plan, spec, n, device, net, precision_bytes)
    if quant is not None:
        rng = rng if rng is not None else np.random.default_rng(quant.probe_seed)
        cb.acc_penalty = accuracy_penalty(plan, spec, n, quant, rng, precision_bytes)
    return cb


@dataclass
class _PlanProfile:
    """Per-layer cost coefficients of one plan, polynomial in sequence length n."""

    e_lin: np.ndarray
    e_quad: np.ndarray
    c_lin: np.ndarray
    c_quad: np.ndarray
    # per boundary: owning layer (0-based), bytes per token, download-tail flag
    bnd_layer: np.ndarray
    bnd_per_token: np.ndarray
    bnd_tail: np.ndarray
    # boundary bytes per token and propagation-delay counts folded per layer
    x_tok: np.ndarray
    x_cnt: np.ndarray
    tail_tok: float
    tail_cnt: float
    mem: int
    alpha_sum: float

    @property
    def K(self) -> int:
        return len(self.bnd_layer)


@dataclass
class CostArrays:
    """Costs of several plans at one (n, network) point, one entry per plan."""

    T_comp_e: np.ndarray
    T_comm: np.ndarray
    T_comp_c: np.ndarray
    T_total: np.ndarray
    E: np.ndarray
    acc_penalty: np.ndarray
    K: np.ndarray

    def row(self, i: int) -> CostBreakdown:
        return CostBreakdown(float(self.T_comp_e[i]), float(self.T_comm[i]), float(self.T_comp_c[i]),
                             float(self.T_total[i]), float(self.E[i]), float(self.acc_penalty[i]),
                             int(self.K[i]))


class PlanStack:
    """Stacked profiles of a fixed plan list for vectorized evaluation."""

    def __init__(self, profiles: Sequence[_PlanProfile], pipelined: bool):
        st = lambda k: np.stack([getattr(p, k) for p in profiles])
        vec = lambda k: np.array([getattr(p, k) for p in profiles], dtype=float)
        self.e_lin, self.e_quad, self.c_lin, self.c_quad = st("e_lin"), st("e_quad"), st("c_lin"), st("c_quad")
        self.x_tok, self.x_cnt = st("x_tok"), st("x_cnt")
        self.tail_tok, self.tail_cnt = vec("tail_tok"), vec("tail_cnt")
        self.alpha = vec("alpha_sum")
        self.K = np.array([p.K for p in profiles])
        self.tok = self.x_tok.sum(axis=1) + self.tail_tok
        self.cnt = self.x_cnt.sum(axis=1) + self.tail_cnt
        self.pipelined = pipelined & (self.K > 0)


def _flow_shop(e: np.ndarray, x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Row-wise makespan of the three-stage flow shop (see :func:`pipeline_makespan`)."""
    fe = np.cumsum(e, axis=1)
    sx = np.cumsum(x, axis=1)
    fx = sx + np.maximum.accumulate(fe - (sx - x), axis=1)
    sc = np.cumsum(c, axis=1)
    fc = sc + np.maximum.accumulate(fx - (sc - c), axis=1)
    return np.maximum(np.maximum(fe[:, -1], fx[:, -1]), fc[:, -1])


class CostModel:
    """Cached evaluator used on the simulation hot path.

    Coefficients are derived once per plan; results agree with :func:`evaluate`
    up to summation order, except for the accuracy term, which uses a
    per-element quantization error calibrated once on a seeded Gaussian probe
    at the reference length.
    """

    def __init__(self, spec: ModelSpec, device: DeviceProfile, quant: QuantConfig | None = None,
                 mode: str = PIPELINED, precision_bytes: int = 2, per_transition_latency: bool = True,
                 n_ref: int = 256):
        if mode not in (SEQUENTIAL, PIPELINED):
            raise ValueError(f"unknown latency mode {mode!r}")
        self.spec = spec
        self.device = device
        self.quant = quant if quant is not None else QuantConfig()
        self.mode = mode
        self.precision_bytes = precision_bytes
        self.per_transition_latency = per_transition_latency
        self.n_ref = n_ref
        self._profiles: dict[PartitionPlan, _PlanProfile] = {}
        self._stacks: dict[tuple, PlanStack] = {}
        self._mse = self._calibrate()

    def _calibrate(self) -> float:
        if math.isinf(self.quant.bits):
            return 0.0
        rng = np.random.default_rng(self.quant.probe_seed)
        m = self.n_ref * self.spec.d_model
        return quantization_error(rng.standard_normal(m), self.quant.bits) / m

    def profile(self, plan: PartitionPlan) -> _PlanProfile:
        prof = self._profiles.get(plan)
        if prof is None:
            prof = self._build(plan)
            self._profiles[plan] = prof
        return prof

    def _build(self, plan: PartitionPlan) -> _PlanProfile:
        spec = self.spec
        plan.check(spec)
        d, dh, dff = spec.d_model, spec.d_h, spec.d_ff
        head_lin, head_quad = 8 * d * dh, 4 * dh
        ffn_lin = 2 * d * dff
        L = spec.L
        e_lin, e_quad, c_lin, c_quad = (np.zeros(L) for _ in range(4))
        for i, lp in enumerate(plan.layers):
            ne, nc = lp.n_edge_heads, lp.n_cloud_heads
            e_lin[i] = ne * head_lin + ffn_lin * ((lp.ffn != CLOUD) + (lp.ffn == EDGE))
            c_lin[i] = nc * head_lin + ffn_lin * ((lp.ffn == CLOUD) + (lp.ffn != EDGE))
            e_quad[i] = ne * head_quad
            c_quad[i] = nc * head_quad
        # boundary volumes are linear in n: evaluate at n=1
        bnds = boundaries(plan, spec, 1, self.precision_bytes)
        layer = np.array([b.layer - 1 for b in bnds], dtype=int)
        tok = np.array([b.volume_bytes for b in bnds], dtype=float)
        tail = np.array([b.kind == OUTPUT_DOWNLOAD for b in bnds], dtype=bool)
        cnt = np.ones(len(bnds))
        if not self.per_transition_latency and len(bnds):
            cnt[1:] = 0.0
        x_tok, x_cnt = np.zeros(L), np.zeros(L)
        np.add.at(x_tok, layer[~tail], tok[~tail])
        np.add.at(x_cnt, layer[~tail], cnt[~tail])
        alpha = sum(self.quant.weight(k) for k in range(len(bnds)))
        return _PlanProfile(e_lin, e_quad, c_lin, c_quad, layer, tok, tail, x_tok, x_cnt,
                            float(tok[tail].sum()), float(cnt[tail].sum()), active_memory(plan, spec), alpha)

    def stack(self, plans: Sequence[PartitionPlan]) -> PlanStack:
        key = tuple(plans)
        st = self._stacks.get(key)
        if st is None:
            st = PlanStack([self.profile(p) for p in plans], self.mode == PIPELINED)
            self._stacks[key] = st
        return st

    def boundary_times(self, plan: PartitionPlan, n: int, net) -> np.ndarray:
        """Per-boundary transfer time, including propagation delay."""
        prof = self.profile(plan)
        t = prof.bnd_per_token * n * 8.0 / net.B
        if self.per_transition_latency:
            t = t + net.l_n
        elif len(t):
            t[0] += net.l_n
        return t

    def evaluate_many(self, plans: Sequence[PartitionPlan], n: int, net) -> CostArrays:
        st = self.stack(plans)
        dev = self.device
        e = (st.e_lin * n + st.e_quad * (n * n)) / dev.edge_rate
        c = (st.c_lin * n + st.c_quad * (n * n)) / dev.cloud_rate
        ser_rate = n * 8.0 / net.B
        x = st.x_tok * ser_rate + st.x_cnt * net.l_n
        tail = st.tail_tok * ser_rate + st.tail_cnt * net.l_n
        Te, Tc = e.sum(axis=1), c.sum(axis=1)
        ser = st.tok * ser_rate
        Tx = ser + st.cnt * net.l_n
        seq = Te + Tx + Tc
        T = np.where(st.pipelined, _flow_shop(e, x, c) + tail, seq) if st.pipelined.any() else seq
        E = dev.P_comp * Te + dev.P_comm * ser
        acc = st.alpha * (self._mse * n * self.spec.d_model)
        return CostArrays(Te, Tx, Tc, T, E, acc, st.K)

    def evaluate(self, plan: PartitionPlan, n: int, net) -> CostBreakdown:
        return self.evaluate_many((plan,), n, net).row(0)

    def memory(self, plan: PartitionPlan) -> int:
        return self.profile(plan).mem

    def feasible(self, plan: PartitionPlan) -> bool:
        return self.profile(plan).mem <= self.device.M_e
