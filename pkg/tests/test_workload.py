import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgesplit.workload import (
    HEAD, FFN1, FFN2, Component, ModelSpec, RequestSource, SeqLenDist, WorkloadConfig, activation_bytes,
    build_model_spec, component_flops, component_memory, layer_components, read_trace, sample_arrivals,
    sample_request, write_trace,
)


def test_presets_dims():
    g = build_model_spec("gpt2-1.5b")
    assert (g.L, g.H, g.d_model, g.nominal_params) == (24, 16, 1600, 1.5e9)
    l13 = build_model_spec("llama-13b")
    assert (l13.L, l13.H, l13.d_model, l13.nominal_params) == (40, 40, 5120, 1.3e10)
    l7 = build_model_spec("llama-7b")
    assert (l7.L, l7.H, l7.d_model, l7.nominal_params) == (32, 32, 4096, 7e9)


def test_custom_spec_derived_dims():
    s = build_model_spec({"L": 2, "H": 2, "d_model": 8, "nominal_params": 1})
    assert s.d_h == 4 and s.d_ff == 32


def test_unknown_preset():
    with pytest.raises(KeyError):
        build_model_spec("gpt5")


def test_spec_invariants():
    with pytest.raises(ValueError):
        ModelSpec("bad", 2, 3, 8, 1.0)
    with pytest.raises(ValueError):
        ModelSpec("bad", 0, 2, 8, 1.0)


def test_head_flops_oracle(gpt2):
    # 6*128*1600*100 + 4*128^2*100 + 2*128*100*1600
    assert component_flops(gpt2, Component(1, HEAD, 1), 128) == 170_393_600


def test_ffn_flops_oracle(gpt2):
    total = component_flops(gpt2, Component(1, FFN1), 128) + component_flops(gpt2, Component(1, FFN2), 128)
    assert total == 5_242_880_000 == 16 * 128 * 1600**2


def test_flops_reject_zero_length(gpt2):
    with pytest.raises(ValueError):
        component_flops(gpt2, Component(1, HEAD, 1), 0)


def test_component_bounds(gpt2):
    with pytest.raises(ValueError):
        component_flops(gpt2, Component(25, FFN1), 8)
    with pytest.raises(ValueError):
        component_flops(gpt2, Component(1, HEAD, 17), 8)


def test_memory_oracles(gpt2):
    assert component_memory(gpt2, Component(1, HEAD, 1)) == 2_560_000
    assert component_memory(gpt2, Component(1, FFN1)) == 1600 * 6400 * 4 + 6400 * 4
    toy = build_model_spec({"L": 1, "H": 2, "d_model": 8, "nominal_params": 1, "bytes_per_param": 1})
    assert component_memory(toy, Component(1, HEAD, 1)) == 128


def test_activation_bytes(gpt2):
    assert activation_bytes(gpt2, 128, 2) == 409_600
    assert activation_bytes(build_model_spec("llama-7b"), 512, 2) == 4_194_304
    one = build_model_spec({"L": 1, "H": 1, "d_model": 1, "nominal_params": 1})
    assert activation_bytes(one, 1, 1) == 1


@pytest.mark.parametrize("preset,lo,hi", [("gpt2-1.5b", 0.45, 0.55), ("llama-7b", 0.88, 0.96),
                                          ("llama-13b", 0.94, 1.0)])
def test_component_memory_fraction_of_nominal(preset, lo, hi):
    # embeddings are not modeled, so the component sum sits below the nominal footprint
    s = build_model_spec(preset)
    total = sum(component_memory(s, c) for l in range(1, s.L + 1) for c in layer_components(s, l))
    assert lo <= total / s.nominal_bytes <= hi


@given(st.integers(1, 4096))
def test_flops_strictly_monotone_in_n(n):
    s = build_model_spec("toy")
    for c in layer_components(s, 1):
        assert component_flops(s, c, n + 1) > component_flops(s, c, n)


def test_arrivals_zero_rate(rng):
    assert all(sample_arrivals(rng, 0.0, 1.0) == 0 for _ in range(100))


def test_arrivals_mean(rng):
    xs = np.array([sample_arrivals(rng, 2.0, 1.0) for _ in range(100_000)])
    assert 1.97 <= xs.mean() <= 2.03


def test_arrivals_deterministic():
    a = [sample_arrivals(np.random.default_rng(7), 3.0, 1.0) for _ in range(1)]
    r1, r2 = np.random.default_rng(7), np.random.default_rng(7)
    assert [sample_arrivals(r1, 3.0, 0.5) for _ in range(50)] == [sample_arrivals(r2, 3.0, 0.5) for _ in range(50)]
    assert a


def test_fixed_lengths(rng):
    cfg = WorkloadConfig(seq_len=SeqLenDist("fixed", n=128))
    src = RequestSource(cfg)
    reqs = [src.sample(rng, 0) for _ in range(20)]
    assert all(r.n == 128 for r in reqs)
    assert [r.id for r in reqs] == list(range(20))


def test_lognormal_clipped(rng):
    cfg = WorkloadConfig()
    src = RequestSource(cfg)
    ns = [src.sample(rng, 0).n for _ in range(5000)]
    assert min(ns) >= 50 and max(ns) <= 2048


def test_trace_replay_and_exhaustion(tmp_path, rng):
    p = tmp_path / "lens.jsonl"
    write_trace(p, [64, 256])
    assert [json.loads(l) for l in p.read_text().splitlines()] == [{"n": 64}, {"n": 256}]
    assert read_trace(p) == [64, 256]
    cfg = WorkloadConfig(seq_len=SeqLenDist("trace", path=str(p)))
    src = RequestSource(cfg)
    assert [src.sample(rng, 0).n, src.sample(rng, 1).n] == [64, 256]
    with pytest.raises(IndexError):
        src.sample(rng, 2)
    looped = RequestSource(cfg, loop_trace=True)
    assert [looped.sample(rng, 0).n for _ in range(3)] == [64, 256, 64]


def test_sample_request_function(rng):
    r = sample_request(rng, WorkloadConfig(seq_len=SeqLenDist("fixed", n=77)), slot=3)
    assert r.n == 77 and r.arrival_slot == 3


def test_reference_length_within_bounds():
    n = WorkloadConfig().reference_length()
    assert 50 <= n <= 2048
    assert WorkloadConfig(seq_len=SeqLenDist("fixed", n=99)).reference_length() == 99
