import numpy as np
import pytest

from edgesplit.network import (
    MBPS, MS, LINK_PRESETS, NetworkProcess, NetworkScenario, NetworkState, TraceExhausted, make_scenario, markov_matrix,
    packets, read_trace, sample_transfer_failure, static_scenario, step, transfer_failure_prob, write_trace,
)


def test_table_rows():
    w = make_scenario("wifi").states[0]
    assert (w.B, w.l_n, w.jitter, w.loss) == (100 * MBPS, 10 * MS, 2 * MS, 1e-4)
    g = make_scenario("4g").states[0]
    assert (g.B, g.l_n, g.jitter, g.loss) == (10 * MBPS, 80 * MS, 20 * MS, 1e-2)
    var = make_scenario("var")
    assert var.states == tuple(LINK_PRESETS[k] for k in ("wifi", "5g-good", "5g-avg", "4g"))
    bw = [s.B_mbps for s in var.states]
    assert min(bw) == 10 and max(bw) == 100


def test_unknown_scenario():
    with pytest.raises(KeyError):
        make_scenario("satellite")


def test_state_invariants():
    with pytest.raises(ValueError):
        NetworkState(0.0, 0.01)
    with pytest.raises(ValueError):
        NetworkState(1e6, 0.01, loss=1.0)


def test_static_without_jitter_is_constant(rng):
    proc = NetworkProcess(static_scenario(50, 20), rng)
    first = proc.state
    assert all(step(proc) == first for _ in range(50))


def test_jitter_is_bounded_and_clamped(rng):
    proc = NetworkProcess(static_scenario(50, 1.0, jitter_ms=5.0), rng)
    lats = [proc.step().l_n for _ in range(5000)]
    assert min(lats) >= 0.0 and max(lats) <= 6 * MS
    assert min(lats) == 0.0


def test_identity_markov_never_moves(rng):
    states = tuple(LINK_PRESETS.values())
    sc = NetworkScenario("markov", states, tuple(tuple(float(i == j) for j in range(4)) for i in range(4)), 1)
    proc = NetworkProcess(sc, rng)
    first = proc.state.B
    assert all(proc.step().B == first for _ in range(500))


def test_uniform_markov_occupancy(rng):
    states = tuple(NetworkState((i + 1) * MBPS, 0.01) for i in range(4))
    sc = NetworkScenario("markov", states, markov_matrix(4, 0.25), 1)
    proc = NetworkProcess(sc, rng)
    counts = np.zeros(4)
    for _ in range(100_000):
        counts[int(round(proc.step().B / MBPS)) - 1] += 1
    assert np.all(np.abs(counts / counts.sum() - 0.25) <= 0.01)


def test_markov_dwell(rng):
    sc = make_scenario("var", stay=0.0, dwell=5)
    proc = NetworkProcess(sc, rng)
    seq = [proc.state.B] + [proc.step().B for _ in range(49)]
    runs = [seq[i:i + 5] for i in range(0, 50, 5)]
    assert all(len(set(r)) == 1 for r in runs)
    assert any(a[0] != b[0] for a, b in zip(runs, runs[1:]))


def test_markov_matrix_rows():
    P = np.array(markov_matrix(4, 0.9))
    assert np.allclose(P.sum(axis=1), 1) and np.allclose(np.diag(P), 0.9)


def test_bad_transition_matrix():
    with pytest.raises(ValueError):
        NetworkScenario("markov", (NetworkState(1e6, 0),), ((0.5,),), 1)


def test_trace_roundtrip_and_exhaustion(tmp_path, rng):
    states = [NetworkState(12.5 * MBPS, 30 * MS, 0.0, 0.001), NetworkState(80 * MBPS, 5 * MS, 0.0, 0.0)]
    p = tmp_path / "net.csv"
    write_trace(p, states)
    text = p.read_text()
    assert text.splitlines()[0] == "slot,B_mbps,latency_ms,loss"
    back = read_trace(p)
    assert [(s.B, s.l_n, s.loss) for s in back] == [(s.B, s.l_n, s.loss) for s in states]
    q = tmp_path / "again.csv"
    write_trace(q, back)
    assert q.read_text() == text
    proc = NetworkProcess(NetworkScenario("trace", path=str(p)), rng)
    assert proc.state.B == states[0].B and proc.step().B == states[1].B
    with pytest.raises(TraceExhausted):
        proc.step()
    looped = NetworkProcess(NetworkScenario("trace", path=str(p), loop=True), rng)
    assert [looped.step().B for _ in range(3)] == [states[1].B, states[0].B, states[1].B]


def test_failure_probability_closed_form():
    assert packets(1500) == 1 and packets(1501) == 2
    assert transfer_failure_prob(0.0, 1e9) == 0.0
    assert transfer_failure_prob(0.01, 15_000) == pytest.approx(1 - 0.99**10)


def test_failure_sampling_rates(rng):
    assert not any(sample_transfer_failure(rng, 0.0, 1e6) for _ in range(1000))
    x = np.mean([sample_transfer_failure(rng, 0.5, 1500) for _ in range(100_000)])
    assert abs(x - 0.5) <= 0.01
