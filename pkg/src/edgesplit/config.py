"""Run configuration: one JSON document, schema-checked, with dotted-path overrides."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .cost import DeviceProfile, QuantConfig, get_device, PIPELINED
from .learn import TrainConfig
from .lyapunov import LyapunovConfig
from .network import NetworkScenario, make_scenario, static_scenario, TRACE
from .policy import CostWeights
from .sim import Backoff, EpisodeConfig
from .workload import SeqLenDist, WorkloadConfig, build_model_spec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelCfg(_Strict):
    name: str = "custom"
    L: int = Field(gt=0)
    H: int = Field(gt=0)
    d_model: int = Field(gt=0)
    nominal_params: float = Field(gt=0)
    d_ff: int | None = None
    bytes_per_param: int = 4


class DeviceCfg(_Strict):
    name: str = "custom"
    CC_e: float = Field(gt=0)
    CC_c: float = Field(gt=0)
    M_e: float = Field(gt=0)
    P_comp: float = Field(ge=0)
    P_comm: float = Field(ge=0)
    eta_e: float = Field(0.2, gt=0, le=1)
    eta_c: float = Field(0.35, gt=0, le=1)


class ScenarioCfg(_Strict):
    name: str = "wifi"
    stay: float = Field(0.9, ge=0, le=1)
    dwell: int = Field(5, ge=1)
    # used when name == "static"
    B_mbps: float | None = None
    latency_ms: float = 0.0
    jitter_ms: float = 0.0
    loss: float = 0.0
    # used when name == "trace"
    path: str | None = None
    loop: bool = False

    def build(self) -> NetworkScenario:
        if self.name == "static":
            if self.B_mbps is None:
                raise ValueError("static scenario needs B_mbps")
            return static_scenario(self.B_mbps, self.latency_ms, self.jitter_ms, self.loss)
        if self.name == "trace":
            return NetworkScenario(TRACE, path=self.path, loop=self.loop, name="trace")
        return make_scenario(self.name, self.stay, self.dwell)


class SeqLenCfg(_Strict):
    kind: Literal["lognormal", "fixed", "trace"] = "lognormal"
    mu_ln: float = 5.5
    sigma_ln: float = Field(0.8, gt=0)
    n_min: int = Field(50, ge=1)
    n_max: int = Field(2048, ge=1)
    n: int = Field(128, ge=1)
    path: str | None = None


class WorkloadCfg(_Strict):
    lam: float = Field(5.0, ge=0)
    dt: float = Field(1.0, gt=0)
    seq_len: SeqLenCfg = SeqLenCfg()


class WeightsCfg(_Strict):
    w_T: float = Field(1.0, ge=0)
    w_E: float = Field(1.0, ge=0)
    w_A: float = Field(1e-3, ge=0)


class LyapunovCfg(_Strict):
    V_min: float = Field(0.1, gt=0)
    V_max: float = Field(10.0, gt=0)
    Q_ref: float = Field(10.0, gt=0)
    Q_critical: float = Field(50.0, gt=0)
    B_bound: float = Field(100.0, ge=0)
    V_fixed: float | None = Field(None, ge=0)


class QuantCfg(_Strict):
    bits: float = Field(8, gt=0)
    alpha: list[float] | None = None
    probe_seed: int = 0


class BackoffCfg(_Strict):
    base: float = Field(0.05, ge=0)
    multiplier: float = Field(2.0, ge=1)
    max_retries: int = Field(5, ge=0)


class EpisodeCfg(_Strict):
    T_max: int = Field(1000, ge=1)
    mode: Literal["sequential", "pipelined"] = PIPELINED
    precision_bytes: int = Field(2, ge=1)
    per_transition_latency: bool = True
    window: int = Field(20, ge=1)
    background_load: float = Field(1.0, gt=0, le=1)
    lam_ref: float = Field(50.0, gt=0)


class TrainCfg(_Strict):
    lr_actor: float = Field(3e-4, gt=0)
    lr_critic: float = Field(1e-3, gt=0)
    gamma: float = Field(0.99, gt=0, le=1)
    lam_gae: float = Field(0.95, gt=0, le=1)
    clip: float = Field(0.2, gt=0)
    entropy_coef: float = Field(0.01, ge=0)
    ppo_epochs: int = Field(4, ge=1)
    batch_size: int = Field(256, ge=1)
    buffer_size: int = Field(1000, ge=1)
    update_every: int = Field(100, ge=1)
    episodes: int = Field(2500, ge=0)
    warmup_episodes: int = Field(100, ge=0)
    eval_every: int = Field(50, ge=0)
    eval_episodes: int = Field(2, ge=1)
    tau_init: float = Field(1.0, gt=0)
    anneal: float = Field(0.995, gt=0, le=1)
    tau_min: float = Field(0.1, gt=0)
    alpha_adapt: float = Field(1e-3, ge=0)
    stability_weight: float = Field(2.0, ge=0)
    reward_scale: float = Field(1.0, gt=0)
    hidden: int = Field(64, ge=1)
    d_enc: int = Field(32, ge=1)
    d_e: int = Field(16, ge=1)
    scenarios: list[ScenarioCfg] | None = None


class RunConfig(_Strict):
    model: Union[str, ModelCfg] = "gpt2-1.5b"
    device: Union[str, DeviceCfg] = "jetson-orin-nx"
    scenario: ScenarioCfg = ScenarioCfg()
    workload: WorkloadCfg = WorkloadCfg()
    weights: WeightsCfg = WeightsCfg()
    lyapunov: LyapunovCfg = LyapunovCfg()
    quant: QuantCfg = QuantCfg()
    episode: EpisodeCfg = EpisodeCfg()
    backoff: BackoffCfg = BackoffCfg()
    train: TrainCfg = TrainCfg()
    controller: str = "dpp"
    granularity: str = "coarse"
    seed: int = Field(0, ge=0, lt=2**64)
    seeds: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    out_dir: str = "runs"

    @field_validator("model")
    @classmethod
    def _known_model(cls, v):
        build_model_spec(v if isinstance(v, str) else v.model_dump())
        return v

    @field_validator("device")
    @classmethod
    def _known_device(cls, v):
        if isinstance(v, str):
            get_device(v)
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if self.lyapunov.V_min > self.lyapunov.V_max:
            raise ValueError("lyapunov.V_min must not exceed V_max")
        if self.workload.seq_len.n_min > self.workload.seq_len.n_max:
            raise ValueError("seq_len.n_min must not exceed n_max")
        return self

    # conversion to runtime objects

    def model_spec(self):
        return build_model_spec(self.model if isinstance(self.model, str) else self.model.model_dump())

    def device_profile(self) -> DeviceProfile:
        if isinstance(self.device, str):
            return get_device(self.device)
        return DeviceProfile(**self.device.model_dump())

    def episode_config(self, seed: int | None = None) -> EpisodeConfig:
        wl = self.workload
        sl = SeqLenDist(**wl.seq_len.model_dump())
        q = self.quant
        return EpisodeConfig(
            spec=self.model_spec(),
            device=self.device_profile(),
            scenario=self.scenario.build(),
            workload=WorkloadConfig(lam=wl.lam, seq_len=sl, dt=wl.dt),
            weights=CostWeights(**self.weights.model_dump()),
            lyap=LyapunovConfig(**self.lyapunov.model_dump()),
            quant=QuantConfig(bits=q.bits, alpha=tuple(q.alpha) if q.alpha else None, probe_seed=q.probe_seed),
            seed=self.seed if seed is None else seed,
            backoff=Backoff(**self.backoff.model_dump()),
            **self.episode.model_dump(),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train.model_dump(exclude={"scenarios"}))

    def train_scenarios(self) -> list[NetworkScenario] | None:
        if not self.train.scenarios:
            return None
        return [s.build() for s in self.train.scenarios]

    # serialization

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """Hash of the effective configuration, independent of seed and output location."""
        d = self.model_dump(mode="json", exclude={"seed", "out_dir", "workers"})
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


class ConfigError(ValueError):
    pass


def parse_value(text: str):
    """JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides to a nested dict (copied)."""
    doc = json.loads(json.dumps(doc))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None or isinstance(nxt, str):
                nxt = {}
                node[p] = nxt
            elif not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
            node = nxt
        node[parts[-1]] = parse_value(raw)
    return doc


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """Read, override and validate a run configuration; raises :class:`ConfigError`."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
    if overrides:
        doc = apply_overrides(doc, overrides)
    try:
        cfg = RunConfig.model_validate(doc)
        cfg.episode_config()
        cfg.train_config()
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg
