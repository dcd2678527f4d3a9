"""Partition plans, their validation and the edge-cloud boundaries they induce.

Residence rule: a layer's input lives on the edge whenever at least one of
its heads runs there, otherwise on the cloud. Head partial sums are
aggregated where the FFN consumes them (edge for FFN modes 0 and 2, cloud
for mode 1). The layer output lives on the edge for mode 0 and on the
cloud for modes 1 and 2 (W2 runs on the cloud in split mode).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .workload import ModelSpec, HEAD, FFN1, FFN2, Component, component_memory

EDGE, CLOUD, SPLIT = 0, 1, 2

INPUT_UPLOAD = "InputUpload"
HEAD_AGGREGATION = "HeadAggregation"
FFN_SPLIT = "FFNSplit"
INTER_LAYER_HANDOFF = "InterLayerHandoff"
OUTPUT_DOWNLOAD = "OutputDownload"

EDGE_TO_CLOUD = "EdgeToCloud"
CLOUD_TO_EDGE = "CloudToEdge"

# raw prompt token ids shipped alongside the uploaded activations
PROMPT_BYTES_PER_TOKEN = 4


class ShapeMismatch(ValueError):
    pass


class MemoryExceeded(ValueError):
    def __init__(self, required: float, available: float):
        super().__init__(f"edge memory exceeded: requires {required:.4g} B, {available:.4g} B available")
        self.required = required
        self.available = available


@dataclass(frozen=True)
class LayerPartition:
    heads: tuple[int, ...]
    ffn: int

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        if any(h not in (EDGE, CLOUD) for h in self.heads):
            raise ValueError(f"head placements must be 0/1, got {self.heads}")
        if self.ffn not in (EDGE, CLOUD, SPLIT):
            raise ValueError(f"ffn mode must be 0/1/2, got {self.ffn}")

    @property
    def n_edge_heads(self) -> int:
        return len(self.heads) - sum(self.heads)

    @property
    def n_cloud_heads(self) -> int:
        return sum(self.heads)

    @property
    def input_side(self) -> int:
        return EDGE if self.n_edge_heads else CLOUD

    @property
    def aggregation_side(self) -> int:
        return CLOUD if self.ffn == CLOUD else EDGE

    @property
    def output_side(self) -> int:
        return EDGE if self.ffn == EDGE else CLOUD


@dataclass(frozen=True)
class PartitionPlan:
    layers: tuple[LayerPartition, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "_hash", hash(tuple((lp.heads, lp.ffn) for lp in self.layers)))

    def __hash__(self) -> int:
        return self._hash

    def check(self, spec: ModelSpec) -> None:
        if len(self.layers) != spec.L:
            raise ShapeMismatch(f"plan has {len(self.layers)} layers, spec has {spec.L}")
        for i, lp in enumerate(self.layers, 1):
            if len(lp.heads) != spec.H:
                raise ShapeMismatch(f"layer {i} has {len(lp.heads)} heads, spec has {spec.H}")

    def to_dict(self) -> dict:
        return {"layers": [{"heads": list(lp.heads), "ffn": lp.ffn} for lp in self.layers]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionPlan":
        return cls(tuple(LayerPartition(tuple(l["heads"]), int(l["ffn"])) for l in d["layers"]))

    @classmethod
    def from_json(cls, s: str) -> "PartitionPlan":
        return cls.from_dict(json.loads(s))

    @property
    def plan_id(self) -> str:
        return hashlib.sha1(self.to_json().encode()).hexdigest()[:10]

    def placement_matrix(self) -> np.ndarray:
        """L x H matrix of head placements (0 edge, 1 cloud)."""
        return np.array([lp.heads for lp in self.layers], dtype=int)


def placement_csv(plan: PartitionPlan) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    H = len(plan.layers[0].heads)
    w.writerow(["layer"] + [f"h{h}" for h in range(1, H + 1)] + ["ffn"])
    for i, lp in enumerate(plan.layers, 1):
        w.writerow([i, *lp.heads, lp.ffn])
    return buf.getvalue()


def _uniform(spec: ModelSpec, side: int) -> LayerPartition:
    return LayerPartition((side,) * spec.H, side)


def edge_only(spec: ModelSpec) -> PartitionPlan:
    return PartitionPlan((_uniform(spec, EDGE),) * spec.L)


def cloud_only(spec: ModelSpec) -> PartitionPlan:
    return PartitionPlan((_uniform(spec, CLOUD),) * spec.L)


def layer_split(spec: ModelSpec, split: int) -> PartitionPlan:
    """Layers 1..split on the edge, the rest on the cloud."""
    if not 0 <= split <= spec.L:
        raise ValueError(f"split layer {split} outside 0..{spec.L}")
    return PartitionPlan((_uniform(spec, EDGE),) * split + (_uniform(spec, CLOUD),) * (spec.L - split))


@dataclass(frozen=True)
class Boundary:
    layer: int
    kind: str
    volume_bytes: int
    direction: str


def _direction(src: int) -> str:
    return EDGE_TO_CLOUD if src == EDGE else CLOUD_TO_EDGE


def boundaries(plan: PartitionPlan, spec: ModelSpec, n: int, precision_bytes: int = 2) -> list[Boundary]:
    """Edge-cloud transfers of one request through ``plan``, in dataflow order."""
    plan.check(spec)
    act = n * spec.d_model * precision_bytes
    out: list[Boundary] = []
    first = plan.layers[0]
    if first.input_side == CLOUD:
        out.append(Boundary(1, INPUT_UPLOAD, act + n * PROMPT_BYTES_PER_TOKEN, EDGE_TO_CLOUD))
    for i, lp in enumerate(plan.layers, 1):
        if i > 1:
            prev = plan.layers[i - 2].output_side
            if prev != lp.input_side:
                out.append(Boundary(i, INTER_LAYER_HANDOFF, act, _direction(prev)))
        agg = lp.aggregation_side
        remote = lp.n_cloud_heads if agg == EDGE else lp.n_edge_heads
        if remote:
            # partial attention sums computed away from the FFN locus move there
            out.append(Boundary(i, HEAD_AGGREGATION, act, _direction(1 - agg)))
        if lp.ffn == SPLIT:
            out.append(Boundary(i, FFN_SPLIT, n * spec.d_ff * precision_bytes, EDGE_TO_CLOUD))
    if plan.layers[-1].output_side == CLOUD:
        out.append(Boundary(spec.L, OUTPUT_DOWNLOAD, act, CLOUD_TO_EDGE))
    return out


def transition_count(plan: PartitionPlan, spec: ModelSpec, n: int = 1, precision_bytes: int = 2) -> int:
    return len(boundaries(plan, spec, n, precision_bytes))


def active_memory(plan: PartitionPlan, spec: ModelSpec) -> int:
    """Edge-resident weight bytes; a split FFN keeps only W1 on the edge."""
    plan.check(spec)
    head = component_memory(spec, Component(1, HEAD, 1))
    ffn1 = component_memory(spec, Component(1, FFN1))
    ffn2 = component_memory(spec, Component(1, FFN2))
    total = 0
    for lp in plan.layers:
        total += lp.n_edge_heads * head
        if lp.ffn == EDGE:
            total += ffn1 + ffn2
        elif lp.ffn == SPLIT:
            total += ffn1
    return total


def validate(plan: PartitionPlan, spec: ModelSpec, device) -> int:
    """Return the plan's active edge memory, raising if it does not fit ``device``."""
    plan.check(spec)
    need = active_memory(plan, spec)
    if need > device.M_e:
        raise MemoryExceeded(need, device.M_e)
    return need


def is_feasible(plan: PartitionPlan, spec: ModelSpec, device) -> bool:
    try:
        validate(plan, spec, device)
    except MemoryExceeded:
        return False
    return True


def action_space_size_per_layer(H: int) -> int:
    if H < 1:
        raise ValueError("H must be >= 1")
    return 2**H * 3


def action_length(spec: ModelSpec) -> int:
    return spec.L * (spec.H + 1)


def encode(plan: PartitionPlan) -> np.ndarray:
    """Flatten to ``[h_1..h_H, ffn]`` per layer."""
    return np.array([x for lp in plan.layers for x in (*lp.heads, lp.ffn)], dtype=np.int64)


def decode(vec: Sequence[int], spec: ModelSpec) -> PartitionPlan:
    vec = np.asarray(vec)
    if vec.ndim != 1 or vec.shape[0] != action_length(spec):
        raise ShapeMismatch(f"action vector length {vec.shape} != {action_length(spec)}")
    if not np.all(vec == np.round(vec)):
        raise ValueError("action vector must be integral")
    rows = vec.astype(np.int64).reshape(spec.L, spec.H + 1)
    return PartitionPlan(tuple(LayerPartition(tuple(r[:-1]), int(r[-1])) for r in rows))
