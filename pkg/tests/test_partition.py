import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgesplit.cost import get_device
from edgesplit.partition import (
    CLOUD, EDGE, SPLIT, CLOUD_TO_EDGE, EDGE_TO_CLOUD, FFN_SPLIT, HEAD_AGGREGATION, INPUT_UPLOAD,
    INTER_LAYER_HANDOFF, OUTPUT_DOWNLOAD, LayerPartition, MemoryExceeded, PartitionPlan, ShapeMismatch,
    action_length, action_space_size_per_layer, active_memory, boundaries, cloud_only, decode, edge_only,
    encode, is_feasible, layer_split, placement_csv, transition_count, validate,
)
from edgesplit.workload import build_model_spec


def random_plan(rng, spec):
    return decode(np.concatenate([rng.integers(0, 2, (spec.L, spec.H)), rng.integers(0, 3, (spec.L, 1))],
                                 axis=1).ravel(), spec)


@st.composite
def plans(draw, L=3, H=3):
    layers = [LayerPartition(tuple(draw(st.lists(st.integers(0, 1), min_size=H, max_size=H))),
                             draw(st.integers(0, 2))) for _ in range(L)]
    return PartitionPlan(tuple(layers))


SMALL = build_model_spec({"L": 3, "H": 3, "d_model": 12, "nominal_params": 1e6})


def test_edge_and_cloud_only(gpt2):
    e = edge_only(gpt2)
    assert len(e.layers) == 24 and all(lp.heads == (EDGE,) * 16 and lp.ffn == EDGE for lp in e.layers)
    assert transition_count(e, gpt2) == 0
    kinds = [b.kind for b in boundaries(cloud_only(gpt2), gpt2, 16)]
    assert kinds == [INPUT_UPLOAD, OUTPUT_DOWNLOAD]


def test_layer_split_extremes(gpt2):
    assert layer_split(gpt2, 0) == cloud_only(gpt2)
    assert layer_split(gpt2, gpt2.L) == edge_only(gpt2)
    with pytest.raises(ValueError):
        layer_split(gpt2, gpt2.L + 1)


def test_layer_split_boundaries_oracle(gpt2):
    b = boundaries(layer_split(gpt2, 12), gpt2, 128, 2)
    assert [(x.kind, x.volume_bytes) for x in b] == [(INTER_LAYER_HANDOFF, 409_600), (OUTPUT_DOWNLOAD, 409_600)]
    # the handoff is attributed to the receiving layer
    assert b[0].layer == 13 and b[0].direction == EDGE_TO_CLOUD
    assert b[1].direction == CLOUD_TO_EDGE


def test_head_aggregation_hand_case():
    spec = build_model_spec({"L": 1, "H": 2, "d_model": 8, "nominal_params": 1})
    plan = PartitionPlan((LayerPartition((EDGE, CLOUD), EDGE),))
    b = boundaries(plan, spec, 4, 1)
    assert [(x.kind, x.volume_bytes, x.direction) for x in b] == [(HEAD_AGGREGATION, 32, CLOUD_TO_EDGE)]


def test_cloud_only_upload_includes_prompt(gpt2):
    up = boundaries(cloud_only(gpt2), gpt2, 10, 2)[0]
    assert up.volume_bytes == 10 * 1600 * 2 + 10 * 4


def test_ffn_split_boundary():
    spec = build_model_spec({"L": 1, "H": 2, "d_model": 8, "nominal_params": 1})
    plan = PartitionPlan((LayerPartition((EDGE, EDGE), SPLIT),))
    b = boundaries(plan, spec, 4, 1)
    assert b[0].kind == FFN_SPLIT and b[0].volume_bytes == 4 * 32 and b[0].direction == EDGE_TO_CLOUD


def test_validate_memory(gpt2):
    eight_gb = get_device("jetson-orin-nx")
    assert validate(edge_only(gpt2), gpt2, eight_gb) <= 8e9
    assert validate(cloud_only(gpt2), gpt2, eight_gb) == 0
    big = build_model_spec("llama-13b")
    with pytest.raises(MemoryExceeded) as ei:
        validate(edge_only(big), big, eight_gb)
    assert ei.value.required > ei.value.available == 8e9
    assert is_feasible(cloud_only(big), big, eight_gb)


def test_validate_shape(gpt2, toy):
    with pytest.raises(ShapeMismatch):
        validate(edge_only(toy), gpt2, get_device("jetson-orin-nx"))


def test_split_ffn_counts_first_half_only():
    spec = SMALL
    full = PartitionPlan(tuple(LayerPartition((CLOUD,) * 3, EDGE) for _ in range(3)))
    split = PartitionPlan(tuple(LayerPartition((CLOUD,) * 3, SPLIT) for _ in range(3)))
    assert active_memory(split, spec) < active_memory(full, spec)
    assert active_memory(split, spec) == 3 * (12 * 48 * 4 + 48 * 4)


def test_action_space_size():
    assert action_space_size_per_layer(16) == 196_608
    assert action_space_size_per_layer(1) == 6
    assert action_space_size_per_layer(2) == 12


def test_encode_decode(gpt2, rng):
    for _ in range(1000):
        p = random_plan(rng, SMALL)
        assert decode(encode(p), SMALL) == p
    assert decode(np.zeros(action_length(gpt2), dtype=int), gpt2) == edge_only(gpt2)
    v = np.zeros(action_length(gpt2), dtype=int)
    v[2 * 17 + 16] = 2
    assert decode(v, gpt2).layers[2].ffn == SPLIT


def test_decode_rejects_malformed(toy):
    with pytest.raises(ShapeMismatch):
        decode([0, 0, 0], toy)
    v = np.zeros(action_length(toy), dtype=int)
    v[0] = 2
    with pytest.raises(ValueError):
        decode(v, toy)


def test_json_roundtrip(rng):
    p = random_plan(rng, SMALL)
    d = json.loads(p.to_json())
    assert set(d) == {"layers"} and set(d["layers"][0]) == {"heads", "ffn"}
    assert PartitionPlan.from_json(p.to_json()) == p
    assert len(p.plan_id) == 10


def test_placement_csv(toy):
    text = placement_csv(cloud_only(toy))
    assert text.splitlines() == ["layer,h1,h2,ffn", "1,1,1,1", "2,1,1,1"]


@given(plans())
def test_boundaries_invariant_under_head_relabeling(plan):
    relabeled = PartitionPlan(tuple(LayerPartition(tuple(reversed(lp.heads)), lp.ffn) for lp in plan.layers))
    a, b = boundaries(plan, SMALL, 5), boundaries(relabeled, SMALL, 5)
    assert len(a) == len(b)
    assert sum(x.volume_bytes for x in a) == sum(x.volume_bytes for x in b)


@given(plans())
def test_boundaries_positive_volume_and_alternating_handoffs(plan):
    bs = boundaries(plan, SMALL, 3)
    assert all(b.volume_bytes > 0 for b in bs)
    # two same-direction handoffs need an opposite transfer in between
    idx = [i for i, b in enumerate(bs) if b.kind == INTER_LAYER_HANDOFF]
    for i, j in zip(idx, idx[1:]):
        if bs[i].direction == bs[j].direction:
            assert any(b.direction != bs[i].direction for b in bs[i + 1:j])


@given(plans())
def test_only_uniform_plans_lack_aggregation(plan):
    uniform = plan in (edge_only(SMALL), cloud_only(SMALL))
    has_agg = any(b.kind == HEAD_AGGREGATION for b in boundaries(plan, SMALL, 2))
    if uniform:
        assert not has_agg


@given(plans(), st.integers(0, 2), st.integers(0, 2))
def test_memory_monotone_in_edge_heads(plan, layer, head):
    lp = plan.layers[layer]
    heads = list(lp.heads)
    heads[head] = EDGE
    layers = list(plan.layers)
    layers[layer] = LayerPartition(tuple(heads), lp.ffn)
    assert active_memory(PartitionPlan(tuple(layers)), SMALL) >= active_memory(plan, SMALL)


def test_hash_consistent_with_eq(toy):
    a, b = edge_only(toy), decode(np.zeros(action_length(toy), dtype=int), toy)
    assert a == b and hash(a) == hash(b) and len({a, b, cloud_only(toy)}) == 2
