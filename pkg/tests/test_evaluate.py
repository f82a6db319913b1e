import numpy as np
import pytest

from deepnt import evaluate as ev
from deepnt import learner
from deepnt.ppm import ObservationSet


def test_score_examples():
    assert ev.mape([110], [100]) == pytest.approx(0.1)
    assert ev.mape([50, 200], [100, 100]) == pytest.approx(0.75)
    assert ev.mape([3, 4], [3, 4]) == 0
    assert ev.mape([1, 5], [0, 5], return_excluded=True) == (0.0, 1)
    with pytest.raises(ev.MetricError):
        ev.mape([1.0], [0.0])
    assert ev.mse([3], [1]) == 4
    assert ev.accuracy([0.9, 0.8], [1, 0]) == 0.5
    assert ev.f1([0.9, 0.8], [1, 0]) == pytest.approx(2 / 3)
    assert ev.accuracy([0.9, 0.1], [1, 0]) == 1 and ev.f1([0.9, 0.1], [1, 0]) == 1


def _ring(n=10):
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
    return a


def test_topology_f1_examples():
    a = _ring()
    assert ev.topology_f1(a, a) == (1.0, 1.0, 1.0)
    assert ev.topology_f1(a, np.zeros_like(a)) == (0.0, 0.0, 0.0)
    b = a.copy()
    b[0, 1] = b[1, 0] = b[2, 3] = b[3, 2] = 0
    b[0, 5] = b[5, 0] = b[2, 7] = b[7, 2] = 0.7
    p, r, f = ev.topology_f1(a, b, tau=0.1)
    assert (p, r, f) == pytest.approx((0.8, 0.8, 0.8))


def test_nmf_rank_one_recovery(rng):
    a, b = rng.uniform(1, 3, 12), rng.uniform(1, 3, 12)
    X = np.outer(a, b)
    W = (rng.random((12, 12)) < 0.6).astype(float)
    F, G, hist = ev.masked_nmf(X, W, rank=1, iters=3000, seed=0)
    assert np.max(np.abs(W * (X - F @ G))) < 1e-6
    assert np.all(np.diff(hist) <= 1e-9 * max(hist))
    assert np.all(F >= 0) and np.all(G >= 0)


def test_nmf_objective_monotone_and_mask(rng):
    for seed in range(5):
        X = rng.uniform(0, 5, (15, 15))
        W = (rng.random((15, 15)) < 0.4).astype(float)
        F, G, hist = ev.masked_nmf(X, W, rank=3, iters=200, seed=seed)
        assert all(h1 <= h0 * (1 + 1e-12) for h0, h1 in zip(hist, hist[1:]))
        Y = X + (1 - W) * rng.uniform(-100, 100, X.shape)
        F2, G2, _ = ev.masked_nmf(Y, W, rank=3, iters=200, seed=seed)
        np.testing.assert_array_equal(F, F2)
        np.testing.assert_array_equal(G, G2)


def _toy_obs():
    train = [(0, 1, 2.0), (0, 2, 4.0), (1, 3, 6.0), (2, 3, 8.0)]
    val = [(0, 3, 5.0), (1, 2, 5.0)]
    test = [(0, 4, 10.0), (3, 4, 4.0)]
    return ObservationSet(train=train, validation=val, test=test, n=5)


def test_nmf_rank_validation():
    with pytest.raises(ValueError):
        ev.baseline_nmf(_toy_obs(), 5, rank=5)


def test_mean_baseline_hand_value():
    obs = _toy_obs()
    preds = ev.baseline_mean(obs)
    np.testing.assert_array_equal(preds, [5.0, 5.0])
    # |5-10|/10 and |5-4|/4
    assert ev.mape(preds, [10.0, 4.0]) == pytest.approx((0.5 + 0.25) / 2)


def test_mlp_baseline():
    rows = [(u, v, 7.0) for u in range(12) for v in range(u + 1, 12)]
    obs = ObservationSet(train=rows[0::2], validation=rows[1::2], test=rows[:10], n=12)
    preds = ev.baseline_mlp(obs, 12, seed=0, max_epochs=300)
    assert ev.mape(preds, np.full(10, 7.0)) < 0.01
    again = ev.baseline_mlp(obs, 12, seed=0, max_epochs=300)
    np.testing.assert_array_equal(preds, again)
    with pytest.raises(ValueError):
        ev.baseline_mlp(obs, 12, hidden=0)


def test_ablation_switches():
    base = learner.OptimConfig(alpha=1e-3, gamma=4.0)
    a = ev.method_config(base, "deepnt_alpha")
    g = ev.method_config(base, "deepnt_gamma")
    assert (a.alpha, a.gamma) == (1e-4, 0.0)
    assert (g.alpha, g.gamma) == (0.0, 1.0)
    assert ev.method_config(base, "deepnt") is base


def test_block_pool_conserves(rng):
    X = rng.normal(size=(120, 120))
    P = ev.block_pool(X, 50)
    assert P.shape == (3, 3)
    assert abs(P.sum() - X.sum()) < 1e-9
    assert P[0, 0] == pytest.approx(X[:50, :50].sum())


def test_heatmap_files(tmp_path):
    X = np.arange(6, dtype=float).reshape(2, 3)
    ev.write_heatmap(tmp_path / "h", X)
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "h.csv", delimiter=","), X)
    raw = (tmp_path / "h.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n")
    np.testing.assert_array_equal(np.frombuffer(raw[-6:], np.uint8), [0, 51, 102, 153, 204, 255])
    assert "max 5.0" in (tmp_path / "h.scale.txt").read_text()
    a = np.zeros((4, 4))
    ev.export_heatmaps(tmp_path / "maps", a, a, a, block=2)
    names = sorted(p.name for p in (tmp_path / "maps").iterdir())
    assert "learned_minus_true.pgm" in names and "true.csv" in names


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ev.ExperimentConfig(delta=0.0)
    with pytest.raises(ValueError):
        ev.ExperimentConfig(seeds=())
    with pytest.raises(ValueError):
        ev.ExperimentConfig(method="svd")
    assert ev.ExperimentConfig().digest() == ev.ExperimentConfig().digest()
    assert ev.ExperimentConfig().digest() != ev.ExperimentConfig(delta=0.2).digest()


def test_run_experiment_deterministic(tmp_path):
    cfg = ev.ExperimentConfig(n=20, p=0.25, seeds=(0, 1), method="nmf", delta=0.3)
    r1 = ev.run_experiment(cfg, out_csv=tmp_path / "a.csv")
    r2 = ev.run_experiment(cfg)
    strip = lambda rows: [{k: v for k, v in r.items() if k != "seconds"} for r in rows]  # noqa: E731
    assert strip(r1.rows) == strip(r2.rows) and r1.digest == r2.digest
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == ",".join(ev.RESULT_FIELDS) and len(lines) == 3
    assert np.isfinite(r1.aggregate["mape"])


def test_run_seed_deepnt_small(tmp_path):
    optim = learner.OptimConfig(hidden=8, N=1, L=4, max_epochs=3, patience=3)
    cfg = ev.ExperimentConfig(n=20, p=0.25, seeds=(0,), method="deepnt", kind="boolean",
                              Delta=0.1, optim=optim)
    rec = ev.run_experiment(cfg, heatmap_dir=tmp_path, block=10)
    row = rec.rows[0]
    assert 0 <= row["acc"] <= 1 and 0 <= row["f1"] <= 1 and np.isnan(row["mape"])
    assert (tmp_path / "seed0" / "true.pgm").exists()


def test_stage_errors():
    cfg = ev.ExperimentConfig(model="ba", n=10, m=0, seeds=(0,), method="mean")
    with pytest.raises(ev.StageError) as info:
        ev.run_experiment(cfg)
    assert info.value.stage == "graph"
