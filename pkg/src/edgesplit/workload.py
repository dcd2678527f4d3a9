"""Transformer descriptors at component granularity and request stream generation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

import numpy as np

HEAD = "head"
FFN1 = "ffn1"
FFN2 = "ffn2"


@dataclass(frozen=True)
class ModelSpec:
    name: str
    L: int
    H: int
    d_model: int
    nominal_params: float
    d_ff: int | None = None
    bytes_per_param: int = 4

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if self.L < 1 or self.H < 1 or self.d_ff < 1:
            raise ValueError(f"invalid dims for {self.name}: L={self.L} H={self.H} d_ff={self.d_ff}")
        if self.d_model % self.H:
            raise ValueError(f"d_model={self.d_model} not divisible by H={self.H}")
        if self.nominal_params <= 0:
            raise ValueError("nominal_params must be positive")

    @property
    def d_h(self) -> int:
        return self.d_model // self.H

    @property
    def nominal_bytes(self) -> float:
        return self.nominal_params * self.bytes_per_param

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "L": self.L,
            "H": self.H,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "nominal_params": self.nominal_params,
            "bytes_per_param": self.bytes_per_param,
        }


@dataclass(frozen=True)
class Component:
    """One independently placeable unit: a head, or one half of the FFN."""

    layer: int
    kind: str
    head: int = 0

    def check(self, spec: ModelSpec) -> None:
        if not 1 <= self.layer <= spec.L:
            raise ValueError(f"layer {self.layer} outside 1..{spec.L}")
        if self.kind == HEAD:
            if not 1 <= self.head <= spec.H:
                raise ValueError(f"head {self.head} outside 1..{spec.H}")
        elif self.kind not in (FFN1, FFN2):
            raise ValueError(f"unknown component kind {self.kind!r}")


# Parameter counts are stored as published; they do not follow from the dims.
PRESETS: dict[str, dict] = {
    "gpt2-1.5b": dict(L=24, H=16, d_model=1600, nominal_params=1.5e9),
    "llama-7b": dict(L=32, H=32, d_model=4096, nominal_params=7e9),
    "llama-13b": dict(L=40, H=40, d_model=5120, nominal_params=1.3e10),
    # small model used by tests and the learning smoke environment
    "toy": dict(L=2, H=2, d_model=1024, nominal_params=2.6e7),
}


def build_model_spec(preset: Union[str, dict]) -> ModelSpec:
    """Return a preset by name, or build a custom spec from a record.

    Custom records may omit ``name`` and ``nominal_params``; the latter then
    defaults to the attention+FFN parameter count implied by the dims.
    """
    if isinstance(preset, str):
        try:
            params = PRESETS[preset]
        except KeyError:
            raise KeyError(f"unknown model preset {preset!r}; known: {sorted(PRESETS)}") from None
        return ModelSpec(name=preset, **params)
    rec = dict(preset)
    rec.setdefault("name", "custom")
    if "nominal_params" not in rec:
        d, L = rec["d_model"], rec["L"]
        d_ff = rec.get("d_ff") or 4 * d
        rec["nominal_params"] = float(L * (4 * d * d + 2 * d * d_ff + d_ff + d))
    return ModelSpec(**rec)


def component_flops(spec: ModelSpec, c: Component, n: int) -> int:
    """FLOPs for one component over a sequence of n tokens (multiply-add = 2)."""
    c.check(spec)
    if n < 1:
        raise ValueError("sequence length must be >= 1")
    d, dh, dff = spec.d_model, spec.d_h, spec.d_ff
    if c.kind == HEAD:
        # QKV projections, scores + weighted sum, output slice
        return 6 * n * d * dh + 4 * n * n * dh + 2 * n * dh * d
    if c.kind == FFN1:
        return 2 * n * d * dff
    return 2 * n * dff * d


def component_memory(spec: ModelSpec, c: Component) -> int:
    """Resident weight bytes of a component."""
    c.check(spec)
    b = spec.bytes_per_param
    if c.kind == HEAD:
        return 4 * spec.d_model * spec.d_h * b
    if c.kind == FFN1:
        return spec.d_model * spec.d_ff * b + spec.d_ff * b
    return spec.d_ff * spec.d_model * b + spec.d_model * b


def layer_components(spec: ModelSpec, layer: int) -> list[Component]:
    comps = [Component(layer, HEAD, h) for h in range(1, spec.H + 1)]
    comps += [Component(layer, FFN1), Component(layer, FFN2)]
    return comps


def activation_bytes(spec: ModelSpec, n: int, precision_bytes: int) -> int:
    if n < 1:
        raise ValueError("sequence length must be >= 1")
    return n * spec.d_model * precision_bytes


def sample_arrivals(rng: np.random.Generator, lam: float, dt: float) -> int:
    if lam < 0 or dt <= 0:
        raise ValueError("need lam >= 0 and dt > 0")
    if lam == 0:
        return 0
    return int(rng.poisson(lam * dt))


@dataclass(frozen=True)
class Request:
    id: int
    n: int
    arrival_slot: int


@dataclass(frozen=True)
class SeqLenDist:
    """Sequence-length distribution: ``lognormal``, ``fixed`` or ``trace``."""

    kind: str = "lognormal"
    mu_ln: float = 5.5
    sigma_ln: float = 0.8
    n_min: int = 50
    n_max: int = 2048
    n: int = 128
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("lognormal", "fixed", "trace"):
            raise ValueError(f"unknown seq_len_dist kind {self.kind!r}")
        if self.n_min > self.n_max:
            raise ValueError("n_min must not exceed n_max")
        if self.kind == "trace" and not self.path:
            raise ValueError("trace distribution needs a path")


@dataclass(frozen=True)
class WorkloadConfig:
    lam: float = 5.0
    seq_len: SeqLenDist = field(default_factory=SeqLenDist)
    dt: float = 1.0

    def __post_init__(self):
        if self.lam < 0 or self.dt <= 0:
            raise ValueError("workload needs lam >= 0 and dt > 0")

    def reference_length(self) -> int:
        """Expected sequence length, used where a single representative n is needed."""
        d = self.seq_len
        if d.kind == "fixed":
            return d.n
        if d.kind == "trace":
            lengths = read_trace(d.path)
            return int(round(float(np.mean(lengths))))
        return int(round(clipped_lognormal_mean(d.mu_ln, d.sigma_ln, d.n_min, d.n_max)))


def clipped_lognormal_mean(mu: float, sigma: float, lo: float, hi: float) -> float:
    from scipy import stats

    dist = stats.lognorm(s=sigma, scale=math.exp(mu))
    # E[X; lo<X<hi] via the partial-expectation identity of the lognormal
    a = (math.log(lo) - mu - sigma**2) / sigma
    b = (math.log(hi) - mu - sigma**2) / sigma
    mid = math.exp(mu + sigma**2 / 2) * (stats.norm.cdf(b) - stats.norm.cdf(a))
    return lo * dist.cdf(lo) + mid + hi * dist.sf(hi)


def read_trace(path: str | Path) -> list[int]:
    """Read a JSON-lines request trace, one ``{"n": int}`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            n = rec.get("n")
            if not isinstance(n, int) or n < 1:
                raise ValueError(f"{path}:{lineno}: bad sequence length {n!r}")
            out.append(n)
    return out


def write_trace(path: str | Path, lengths) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for n in lengths:
            fh.write(json.dumps({"n": int(n)}) + "\n")


class RequestSource:
    """Stateful request generator; ids are monotone, trace files replay in order."""

    def __init__(self, cfg: WorkloadConfig, loop_trace: bool = False):
        self.cfg = cfg
        self.next_id = 0
        self.loop_trace = loop_trace
        self._trace = read_trace(cfg.seq_len.path) if cfg.seq_len.kind == "trace" else None
        self._pos = 0

    def sample(self, rng: np.random.Generator, slot: int) -> Request:
        d = self.cfg.seq_len
        if d.kind == "fixed":
            n = d.n
        elif d.kind == "trace":
            if self._pos >= len(self._trace):
                if not self.loop_trace or not self._trace:
                    raise IndexError("request trace exhausted")
                self._pos = 0
            n = self._trace[self._pos]
            self._pos += 1
        else:
            n = int(round(rng.lognormal(d.mu_ln, d.sigma_ln)))
            n = min(max(n, d.n_min), d.n_max)
        req = Request(self.next_id, n, slot)
        self.next_id += 1
        return req

    def arrivals(self, rng: np.random.Generator, slot: int) -> Iterator[Request]:
        for _ in range(sample_arrivals(rng, self.cfg.lam, self.cfg.dt)):
            yield self.sample(rng, slot)


def sample_request(rng: np.random.Generator, cfg: WorkloadConfig, slot: int,
                   source: RequestSource | None = None) -> Request:
    """One request from ``cfg``; pass a ``source`` to keep ids and trace position."""
    if source is None:
        source = RequestSource(cfg)
    return source.sample(rng, slot)
