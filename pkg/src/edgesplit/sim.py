"""Slotted discrete-event simulation of the edge-cloud inference queue.

Each slot: observe the system state, let the controller choose a plan,
serve queued requests for ``dt`` seconds under that plan (one request in
service at a time, unfinished work carries over), append the slot's
Poisson arrivals, and advance the network.

RNG streams are split from the master seed with
``SeedSequence(seed).spawn(4)`` in the order workload, network, transfer
failures, controller, so paired runs of different controllers see the same
arrivals and link conditions.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cost import CostModel, CostBreakdown, DeviceProfile, QuantConfig, PIPELINED, get_device
from .learn.ppo import TrajectoryBatch
from .lyapunov import LyapunovConfig, drift_estimate, dpp_reward, queue_update
from .network import NetworkScenario, NetworkProcess, make_scenario, transfer_failure_prob
from .partition import PartitionPlan, encode, action_length
from .policy import Controller, CostWeights, DecisionContext, Infeasible
from .workload import ModelSpec, WorkloadConfig, RequestSource, Request, build_model_spec, sample_arrivals

N_FEATURES = 17
LOG_COLUMNS = ["slot", "Q", "V", "B_mbps", "latency_s", "energy_J", "acc_penalty", "drift", "reward",
               "plan_id", "failures", "mu", "served", "arrivals"]


@dataclass(frozen=True)
class Backoff:
    base: float = 0.05
    multiplier: float = 2.0
    max_retries: int = 5

    def delay(self, k: int) -> float:
        return self.base * self.multiplier**k


@dataclass(frozen=True)
class EpisodeConfig:
    spec: ModelSpec = field(default_factory=lambda: build_model_spec("gpt2-1.5b"))
    device: DeviceProfile = field(default_factory=lambda: get_device("jetson-orin-nx"))
    scenario: NetworkScenario = field(default_factory=lambda: make_scenario("wifi"))
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    weights: CostWeights = field(default_factory=CostWeights)
    lyap: LyapunovConfig = field(default_factory=LyapunovConfig)
    quant: QuantConfig = field(default_factory=QuantConfig)
    T_max: int = 1000
    seed: int = 0
    mode: str = PIPELINED
    backoff: Backoff = field(default_factory=Backoff)
    precision_bytes: int = 2
    per_transition_latency: bool = True
    window: int = 20
    background_load: float = 1.0
    lam_ref: float = 50.0

    def __post_init__(self):
        if self.T_max < 1:
            raise ValueError("T_max must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def cost_model(self) -> CostModel:
        return CostModel(self.spec, self.device, self.quant, self.mode, self.precision_bytes,
                         self.per_transition_latency, n_ref=self.workload.reference_length())


@dataclass
class SystemState:
    Q: float
    Q_bar: float
    B: float
    B_bar: float
    B_std: float
    lam: float
    lam_bar: float
    C_avail: float
    M_avail: float
    history: np.ndarray

    def features(self, Q_critical: float, B_max: float, lam_max: float, CC_e: float, M_e: float) -> np.ndarray:
        base = [self.Q / Q_critical, self.Q_bar / Q_critical, self.B / B_max, self.B_bar / B_max,
                self.B_std / B_max, self.lam / lam_max, self.lam_bar / lam_max, self.C_avail / CC_e,
                self.M_avail / M_e]
        return np.concatenate([np.asarray(base, dtype=float), self.history])


def _symlog(x: float) -> float:
    return math.copysign(math.log1p(abs(x)), x)


class History:
    """Sliding windows behind the state's moving averages and history summary."""

    def __init__(self, window: int):
        self.Q = deque(maxlen=window)
        self.B = deque(maxlen=window)
        self.lam = deque(maxlen=window)
        self.reward = deque(maxlen=window)
        self.latency = deque(maxlen=window)
        self.drift_sign = deque(maxlen=window)
        self.churn = deque(maxlen=window)

    @staticmethod
    def _ms(d) -> tuple[float, float]:
        if not d:
            return 0.0, 0.0
        a = np.fromiter(d, dtype=float)
        return float(a.mean()), float(a.std())

    def summary(self) -> np.ndarray:
        out = []
        for d in (self.reward, self.latency, self.drift_sign, self.churn):
            out.extend(self._ms(d))
        return np.asarray(out)


@dataclass
class Execution:
    latency: float
    energy: float
    acc_penalty: float
    success: bool
    failures: int
    attempts: list[int]


def execute_partition(plan: PartitionPlan, n: int, cost_model: CostModel, net, rng: np.random.Generator,
                      backoff: Backoff = Backoff(),
                      fail: Callable[[int, int], bool] | None = None) -> tuple[CostBreakdown, Execution]:
    """Run one request under ``plan`` with checkpointed transfer retries.

    Each boundary transfer may fail (``fail(k, attempt)`` overrides the loss
    model). A failed transfer resumes from the boundary checkpoint after a
    backoff of ``base * multiplier**j`` and a fresh transfer; after
    ``max_retries`` failed retries the request is abandoned.
    """
    cb = cost_model.evaluate(plan, n, net)
    bt = cost_model.boundary_times(plan, n, net)
    prof = cost_model.profile(plan)
    extra_t = 0.0
    extra_ser = 0.0
    failures = 0
    attempts = []
    success = True
    for k in range(prof.K):
        vol = prof.bnd_per_token[k] * n
        p = transfer_failure_prob(net.loss, vol) if fail is None else None
        tries = 0
        while True:
            failed = fail(k, tries) if fail is not None else (p > 0 and rng.random() < p)
            if not failed:
                break
            failures += 1
            if tries >= backoff.max_retries:
                success = False
                break
            extra_t += backoff.delay(tries) + bt[k]
            extra_ser += vol * 8.0 / net.B
            tries += 1
        attempts.append(tries + 1)
        if not success:
            break
    ex = Execution(cb.T_total + extra_t, cb.E + cost_model.device.P_comm * extra_ser, cb.acc_penalty,
                   success, failures, attempts)
    return cb, ex


def percentiles(latencies: Sequence[float]) -> tuple[float, float, float]:
    """Nearest-rank P50, P95, P99."""
    a = np.sort(np.asarray(latencies, dtype=float))
    if a.size == 0:
        raise ValueError("no completed requests to summarize")

    def rank(p):
        return float(a[max(int(math.ceil(p / 100 * a.size)), 1) - 1])

    return rank(50), rank(95), rank(99)


@dataclass
class MetricsReport:
    controller: str
    scenario: str
    seed: int
    p50: float | None
    p95: float | None
    p99: float | None
    mean_energy: float
    mean_acc_penalty: float
    mean_Q: float
    max_Q: float
    tail_mean_Q: float
    mean_g: float
    verdict: str
    arrivals: int
    completions: int
    failed_final: int
    residual: int
    slots: int
    log_path: str | None = None
    config_hash: str | None = None
    experiment_hash: str | None = None
    sojourn_p95: float | None = None
    diagnostic: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class _InService:
    req: Request
    retried: bool = False
    ex: Execution | None = None
    remaining: float = 0.0


@dataclass
class EpisodeResult:
    batch: TrajectoryBatch
    metrics: MetricsReport
    rows: list[dict]
    latencies: list[float]
    plans: dict[str, PartitionPlan]


def seed_streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def run_episode(cfg: EpisodeConfig, controller: Controller, rng_seed: int | None = None,
                log_path: str | Path | None = None, config_hash: str | None = None,
                experiment_hash: str | None = None, cost_model: CostModel | None = None,
                net_start: int = 0) -> EpisodeResult:
    seed = cfg.seed if rng_seed is None else rng_seed
    rng_work, rng_net, rng_fail, rng_ctrl = seed_streams(seed)
    controller.reset(rng_ctrl)
    cm = cost_model or cfg.cost_model()
    spec, dev, lyap, wl = cfg.spec, cfg.device, cfg.lyap, cfg.workload
    n_ref = cm.n_ref
    dt, lam = wl.dt, wl.lam
    source = RequestSource(wl)
    proc = NetworkProcess(cfg.scenario, rng_net, start=net_start)
    B_max = cfg.scenario.max_bandwidth
    C_avail = dev.CC_e * cfg.background_load

    hist = History(cfg.window)
    fifo: deque[_InService] = deque()
    Q = 0.0
    arrivals_total = completions = failed_final = 0
    latencies: list[float] = []
    sojourns: list[float] = []
    energies: list[float] = []
    accs: list[float] = []
    rows: list[dict] = []
    plans: dict[str, PartitionPlan] = {}
    recs = {k: [] for k in ("feats", "actions", "logp", "rewards", "g", "drift", "V", "Q", "Q_next")}
    Qs = []
    prev_plan = None
    M_avail = dev.M_e
    last_arrivals = 0
    verdict = None
    diagnostic = None

    for t in range(cfg.T_max):
        net = proc.state
        hist.Q.append(Q)
        hist.B.append(net.B)
        hist.lam.append(last_arrivals / dt)
        obs = SystemState(Q, float(np.mean(hist.Q)), net.B, float(np.mean(hist.B)), float(np.std(hist.B)),
                          last_arrivals / dt, float(np.mean(hist.lam)), C_avail, M_avail, hist.summary())
        obs.feats = obs.features(lyap.Q_critical, B_max, cfg.lam_ref, dev.CC_e, dev.M_e)
        ctx = DecisionContext(spec, cm, net, n_ref, lam, cfg.weights, lyap)
        try:
            plan = controller.decide(obs, ctx)
            if not cm.feasible(plan):
                raise Infeasible(f"plan {plan.plan_id} needs {cm.memory(plan):.4g} B of edge memory")
        except Infeasible as exc:
            verdict, diagnostic = "infeasible", str(exc)
            break
        pid = plan.plan_id
        plans.setdefault(pid, plan)
        M_avail = dev.M_e - cm.memory(plan)

        cb = cm.evaluate(plan, n_ref, net)
        mu = 1.0 / cb.T_total
        V = lyap.V(Q)
        drift = drift_estimate(Q, lam, mu)
        g = cfg.weights.g(cb)
        reward = dpp_reward(drift, g, V)

        # serve for dt seconds
        budget = dt
        served = 0.0
        slot_failures = 0
        while fifo and budget > 1e-15:
            head = fifo[0]
            if head.ex is None:
                _, head.ex = execute_partition(plan, head.req.n, cm, net, rng_fail, cfg.backoff)
                head.remaining = head.ex.latency
                slot_failures += head.ex.failures
            use = min(budget, head.remaining)
            budget -= use
            head.remaining -= use
            if head.ex.success:
                served += use / head.ex.latency
            if head.remaining <= 1e-15:
                fifo.popleft()
                if head.ex.success:
                    completions += 1
                    latencies.append(head.ex.latency)
                    energies.append(head.ex.energy)
                    accs.append(head.ex.acc_penalty)
                    sojourns.append((t + 1 - head.req.arrival_slot) * dt - budget)
                elif head.retried:
                    failed_final += 1
                    served += 1.0
                else:
                    head.retried = True
                    head.ex = None
                    fifo.append(head)

        A = sample_arrivals(rng_work, lam, dt)
        for _ in range(A):
            fifo.append(_InService(source.sample(rng_work, t + 1)))
        arrivals_total += A
        Q_next = queue_update(Q, served / dt, A, dt)

        rows.append({"slot": t, "Q": Q, "V": V, "B_mbps": net.B_mbps, "latency_s": cb.T_total,
                     "energy_J": cb.E, "acc_penalty": cb.acc_penalty, "drift": drift, "reward": reward,
                     "plan_id": pid, "failures": slot_failures, "mu": served / dt, "served": served,
                     "arrivals": A})
        feats = obs.feats
        last = getattr(controller, "last_decision", None)
        if last is not None:
            action, logp = last
        else:
            action, logp = encode(plan), 0.0
        recs["feats"].append(feats)
        recs["actions"].append(action)
        recs["logp"].append(logp)
        recs["rewards"].append(reward)
        recs["g"].append(g)
        recs["drift"].append(drift)
        recs["V"].append(V)
        recs["Q"].append(Q)
        recs["Q_next"].append(Q_next)
        Qs.append(Q)

        hist.reward.append(_symlog(reward))
        hist.latency.append(cb.T_total)
        hist.drift_sign.append(float(np.sign(drift)))
        hist.churn.append(float(prev_plan is not None and plan != prev_plan))
        prev_plan = plan
        last_arrivals = A
        Q = Q_next
        proc.step()

    residual = len(fifo)
    steps = len(recs["rewards"])
    batch = _to_batch(recs, steps, spec, cfg.window)
    Qa = np.asarray(Qs) if Qs else np.zeros(1)
    tail = Qa[len(Qa) * 2 // 3:] if len(Qa) >= 3 else Qa
    tail_mean = float(tail.mean())
    if verdict is None:
        verdict = "stable" if tail_mean < lyap.Q_critical else "unstable"
    p = percentiles(latencies) if latencies else (None, None, None)
    metrics = MetricsReport(
        controller=controller.name, scenario=cfg.scenario.name or cfg.scenario.kind, seed=seed,
        p50=p[0], p95=p[1], p99=p[2],
        mean_energy=float(np.mean(energies)) if energies else 0.0,
        mean_acc_penalty=float(np.mean(accs)) if accs else 0.0,
        mean_Q=float(Qa.mean()), max_Q=float(Qa.max()), tail_mean_Q=tail_mean,
        mean_g=float(np.mean(recs["g"])) if recs["g"] else 0.0,
        verdict=verdict, arrivals=arrivals_total, completions=completions, failed_final=failed_final,
        residual=residual, slots=steps, log_path=str(log_path) if log_path else None,
        config_hash=config_hash, experiment_hash=experiment_hash,
        sojourn_p95=percentiles(sojourns)[1] if sojourns else None, diagnostic=diagnostic,
    )
    if log_path is not None:
        write_slot_log(log_path, rows, config_hash, seed)
    return EpisodeResult(batch, metrics, rows, latencies, plans)


def _to_batch(recs: dict, steps: int, spec: ModelSpec, window: int) -> TrajectoryBatch:
    if steps == 0:
        return TrajectoryBatch.empty(N_FEATURES, action_length(spec))
    Q_next = np.asarray(recs["Q_next"])
    # mean backlog over the following `window` slots
    csum = np.concatenate([[0.0], np.cumsum(Q_next)])
    idx = np.arange(steps)
    hi = np.minimum(idx + window, steps)
    q_target = (csum[hi] - csum[idx]) / (hi - idx)
    z = np.zeros(steps)
    done = z.copy()
    done[-1] = 1.0
    return TrajectoryBatch(
        np.asarray(recs["feats"]), np.asarray(recs["actions"], dtype=np.int64), np.asarray(recs["logp"]),
        np.asarray(recs["rewards"]), np.asarray(recs["g"]), np.asarray(recs["drift"]), np.asarray(recs["V"]),
        np.asarray(recs["Q"]), Q_next, q_target, z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), done,
    )


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def slot_log_text(rows: list[dict], config_hash: str | None, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash or 'none'} seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in LOG_COLUMNS])
    return buf.getvalue()


def write_slot_log(path, rows, config_hash, seed) -> None:
    Path(path).write_text(slot_log_text(rows, config_hash, seed), encoding="utf-8")


def read_slot_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [l for l in fh if not l.startswith("#")]
    out = []
    for r in csv.DictReader(lines):
        out.append({k: (v if k == "plan_id" else float(v)) for k, v in r.items()})
    return out


def replay_queue(rows: list[dict], dt: float = 1.0) -> float:
    """Largest deviation between logged backlogs and the Lindley recursion."""
    worst = 0.0
    for a, b in zip(rows, rows[1:]):
        q = queue_update(a["Q"], a["mu"], a["arrivals"], dt)
        worst = max(worst, abs(q - b["Q"]))
    return worst


def stability_probe(make_controller: Callable[[EpisodeConfig], Controller], cfg: EpisodeConfig,
                    lam_grid: Sequence[float], refine: int = 0, seed: int | None = None) -> float | None:
    """Largest arrival rate (scanning upward) whose tail-mean backlog stays below Q_critical.

    Returns ``None`` when no grid point is stable. ``refine`` bisection
    steps narrow the edge between the last stable and first unstable rate.
    """
    grid = list(lam_grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be strictly ascending")

    def stable(lam: float) -> bool:
        c = replace(cfg, workload=replace(cfg.workload, lam=lam))
        res = run_episode(c, make_controller(c), rng_seed=seed)
        return res.metrics.verdict == "stable"

    best = None
    first_bad = None
    for lam in grid:
        if stable(lam):
            best = lam
        else:
            first_bad = lam
            break
    if best is not None and first_bad is not None:
        lo, hi = best, first_bad
        for _ in range(refine):
            mid = 0.5 * (lo + hi)
            if stable(mid):
                lo = mid
            else:
                hi = mid
        best = lo
    return best
