import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepnt.graph import DenseAdjacency, GraphError, is_weakly_connected
from deepnt.ppm import (
    MetricKind,
    SamplingError,
    SimulationError,
    all_pairs_ground_truth,
    assign_edge_metrics,
    corrupt_topology,
    generate_graph,
    optimal_ppm,
    read_metrics,
    read_observations,
    sample_observations,
    write_metrics,
    write_observations,
)

from conftest import exhaustive_ppm, random_graph

KINDS = ["additive", "multiplicative", "minmax", "boolean"]


def _metrics(rng, a, kind):
    """Random edge values without the boolean balancing loop."""
    if kind == "boolean":
        x = (rng.random(a.shape) < 0.6).astype(float)
    else:
        lo, hi = MetricKind.parse(kind).value_range
        x = rng.uniform(lo, hi, a.shape)
    x = np.triu(x, 1)
    x = x + x.T
    return np.where(a > 0, x, np.nan)


def _weighted(edges, n, values):
    a = np.zeros((n, n))
    m = np.full((n, n), np.nan)
    for (u, v), x in zip(edges, values):
        a[u, v] = a[v, u] = 1
        m[u, v] = m[v, u] = x
    return DenseAdjacency(a), m


def test_metric_kind_algebra():
    for k in MetricKind:
        x = {"boolean": 1.0}.get(k.value, 0.7)
        assert k.combine(x, k.identity) == x
    assert MetricKind.ADDITIVE.combine(MetricKind.ADDITIVE.combine(1, 2), 3) == 6
    assert MetricKind.MINMAX.combine(5, 7) == 5
    assert MetricKind.BOOLEAN.combine(1, 0) == 0.0
    assert MetricKind.ADDITIVE.penalty_diff(10, 7) == 3
    assert MetricKind.MINMAX.penalty_diff(2, 5) == 3
    assert MetricKind.parse("MinMax") is MetricKind.MINMAX
    with pytest.raises(ValueError):
        MetricKind.parse("latency")


def test_optimal_ppm_examples():
    G, m = _weighted([(0, 1), (1, 2)], 3, [2, 3])
    assert optimal_ppm(G, m, "additive", 0, 2) == 5
    G, m = _weighted([(0, 1), (1, 2), (0, 2)], 3, [5, 7, 4])
    assert optimal_ppm(G, m, "minmax", 0, 2) == 5
    G, m = _weighted([(0, 1), (1, 2), (0, 2)], 3, [0.9, 0.9, 0.95])
    assert optimal_ppm(G, m, "multiplicative", 0, 2) == pytest.approx(0.95, rel=1e-12)
    G, m = _weighted([(0, 1), (1, 2), (0, 2)], 3, [1, 1, 1])
    gt = all_pairs_ground_truth(G, m, "boolean")
    assert np.all(gt.y == 1)
    with pytest.raises(GraphError):
        optimal_ppm(G, m, "additive", 0, 3)


def test_unreachable_is_none():
    a = np.zeros((4, 4))
    a[0, 1] = a[1, 0] = 1
    m = np.where(a > 0, 3.0, np.nan)
    assert optimal_ppm(DenseAdjacency(a), m, "additive", 0, 3) is None


def test_boolean_blocked_edge():
    G, m = _weighted([(0, 1), (1, 2)], 3, [1, 0])
    assert optimal_ppm(G, m, "boolean", 0, 2) == 0.0
    assert optimal_ppm(G, m, "boolean", 0, 1) == 1.0


@pytest.mark.parametrize("kind", KINDS)
def test_ground_truth_matches_enumeration(kind, rng):
    for trial in range(15):
        n = int(rng.integers(3, 8))
        a = random_graph(rng, n, rng.uniform(0.3, 0.8))
        G = DenseAdjacency(a)
        m = _metrics(rng, a, kind)
        gt = all_pairs_ground_truth(G, m, kind)
        assert np.allclose(np.diag(gt.y), MetricKind.parse(kind).identity)
        np.testing.assert_array_equal(np.nan_to_num(gt.y, nan=-1), np.nan_to_num(gt.y.T, nan=-1))
        for u in range(n):
            for v in range(n):
                if u == v:
                    continue
                want = exhaustive_ppm(a, m, kind, u, v)
                got = optimal_ppm(G, m, kind, u, v)
                if want is None:
                    assert got is None
                else:
                    assert got == pytest.approx(want, rel=1e-9)


@given(st.integers(0, 2**32 - 1), st.sampled_from(KINDS))
@settings(max_examples=25, deadline=None)
def test_triangle_premise(seed, kind):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 10))
    G = DenseAdjacency(random_graph(rng, n, 0.4))
    m = _metrics(rng, G.w, kind)
    k = MetricKind.parse(kind)
    y = all_pairs_ground_truth(G, m, k).y
    for u in range(n):
        for v in range(n):
            for z in range(n):
                if len({u, v, z}) < 3 or np.isnan(y[u, z]) or np.isnan(y[z, v]):
                    continue
                assert k.better_or_equal(y[u, v], k.combine(y[u, z], y[z, v]), rtol=1e-12)


def test_generators():
    G = generate_graph("er", 4, seed=0, p=1.0)
    assert G.num_edges() == 6
    assert generate_graph("ba", 10, seed=3, m=2).num_edges() == 1 + 2 * (10 - 2)
    assert generate_graph("ba", 12, seed=3, m=3).num_edges() == 3 + 3 * (12 - 3)
    ws = generate_graph("ws", 20, seed=1, k=4, beta=0.0)
    assert ws.num_edges() == 40 and np.all(ws.w.sum(axis=1) == 4)
    for model, kw in (("er", {"p": 0.2}), ("ws", {"k": 4, "beta": 0.3}), ("ba", {"m": 2})):
        a = generate_graph(model, 30, seed=5, **kw)
        b = generate_graph(model, 30, seed=5, **kw)
        assert a.edges() == b.edges()
        assert is_weakly_connected(a.w)
    with pytest.raises(GraphError):
        generate_graph("ba", 10, seed=0, m=0)
    with pytest.raises(GraphError):
        generate_graph("ws", 10, seed=0, k=3)
    with pytest.raises(SimulationError):
        generate_graph("er", 50, seed=0, p=0.001, max_attempts=3)


def test_edge_metric_ranges():
    G = generate_graph("er", 40, seed=2, p=0.15)
    on_edge = G.w > 0
    for kind, (lo, hi) in (("additive", (1, 100)), ("minmax", (1, 100)),
                           ("multiplicative", (0.9, 0.999))):
        m = assign_edge_metrics(G, kind, seed=2)
        assert np.all((m[on_edge] >= lo) & (m[on_edge] <= hi))
        assert np.all(np.isnan(m[~on_edge]))
    mb = assign_edge_metrics(G, "boolean", seed=2)
    assert set(np.unique(mb[on_edge])) <= {0.0, 1.0}
    y = all_pairs_ground_truth(G, mb, "boolean").y
    off = y[~np.eye(40, dtype=bool)]
    assert 0.1 < off.mean() < 0.9


def test_corrupt_topology_counts():
    a = np.zeros((6, 6))
    for u, v in [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (0, 2), (1, 3), (2, 4), (3, 5)]:
        a[u, v] = a[v, u] = 1
    G = DenseAdjacency(a)
    c0 = corrupt_topology(G, 0.0, seed=1)
    np.testing.assert_array_equal(c0.A_obs.w, G.w)
    c = corrupt_topology(G, 0.2, seed=1)
    assert len(c.removed) == len(c.added) == 2
    true_e, obs_e = set(G.edges()), set(c.A_obs.edges())
    assert len(true_e ^ obs_e) == 4
    assert not set(c.added) & true_e
    np.testing.assert_array_equal(c.M, (c.A_obs.w > 0).astype(np.int8))
    with pytest.raises(GraphError):
        corrupt_topology(G, 0.99, seed=1)


def test_sample_observations_contract():
    G = generate_graph("er", 100, seed=0, p=0.05)
    m = assign_edge_metrics(G, "additive", seed=0)
    gt = all_pairs_ground_truth(G, m, "additive")
    obs = sample_observations(gt, 0.3, seed=0)
    assert len(obs.train) + len(obs.validation) == 1485
    assert len(obs.train) - len(obs.validation) == 1
    keys = [{(u, v) for u, v, _ in getattr(obs, s)} for s in ("train", "validation", "test")]
    assert not keys[0] & keys[1] and not keys[0] & keys[2] and not keys[1] & keys[2]
    assert sum(map(len, keys)) == 4950
    mons = set(obs.monitors)
    assert len(mons) == 20
    assert all(u in mons or v in mons for u, v, _ in obs.train + obs.validation)
    assert all(y == gt.y[u, v] for u, v, y in obs.test)
    again = sample_observations(gt, 0.3, seed=0)
    assert again.train == obs.train and again.test == obs.test


def test_sampling_errors():
    G = generate_graph("er", 10, seed=0, p=0.4)
    gt = all_pairs_ground_truth(G, assign_edge_metrics(G, "additive", 0), "additive")
    with pytest.raises(SamplingError):
        sample_observations(gt, 0.01, seed=0)
    with pytest.raises(SamplingError):
        sample_observations(gt, 0.9, monitor_fraction=0.1, seed=0)


def test_file_roundtrips(tmp_path):
    G = generate_graph("er", 15, seed=4, p=0.3)
    m = assign_edge_metrics(G, "multiplicative", seed=4)
    write_metrics(tmp_path / "m.txt", G, m)
    back = read_metrics(tmp_path / "m.txt", G)
    np.testing.assert_array_equal(np.isnan(back), np.isnan(m))
    np.testing.assert_array_equal(back[~np.isnan(m)], m[~np.isnan(m)])
    gt = all_pairs_ground_truth(G, m, "multiplicative")
    obs = sample_observations(gt, 0.3, seed=4)
    write_observations(tmp_path / "o.csv", obs)
    o2 = read_observations(tmp_path / "o.csv", 15)
    assert o2.train == obs.train and o2.validation == obs.validation and o2.test == obs.test
    assert math.isclose(sum(y for *_, y in o2.test), sum(y for *_, y in obs.test))
