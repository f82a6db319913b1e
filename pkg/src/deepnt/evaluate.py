"""Scores, baselines, and the experiment runner."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import learner, ppm
from .graph import DEFAULT_TAU, DenseAdjacency, read_edge_list
from .model import node_features
from .ppm import MetricKind, ObservationSet

RESULT_FIELDS = ("method", "kind", "n", "delta", "Delta", "seed", "mape", "mse", "acc", "f1",
                 "topo_p", "topo_r", "topo_f1", "seconds")
METHODS = ("deepnt", "deepnt_alpha", "deepnt_gamma", "nmf", "mlp", "mean")


class MetricError(ValueError):
    pass


class StageError(RuntimeError):
    """Wraps a failure with the pipeline stage it came from."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage
        self.__cause__ = exc


# -- scores -----------------------------------------------------------------------

def mape(preds, truths, return_excluded: bool = False):
    """Mean absolute percentage error; zero-truth entries are skipped.

    With ``return_excluded`` the number of skipped entries comes back too.
    """
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape or preds.size == 0:
        raise MetricError("mape needs equal, non-empty inputs")
    keep = truths != 0
    if not keep.any():
        raise MetricError("every truth is zero")
    value = float(np.mean(np.abs(preds[keep] - truths[keep]) / np.abs(truths[keep])))
    return (value, int((~keep).sum())) if return_excluded else value


def mse(preds, truths) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    return float(np.mean((preds - truths) ** 2))


def accuracy(preds, truths, threshold: float = 0.5) -> float:
    p = np.asarray(preds) >= threshold
    t = np.asarray(truths) >= 0.5
    return float(np.mean(p == t))


def f1(preds, truths, threshold: float = 0.5) -> float:
    """F1 of class 1."""
    p = np.asarray(preds) >= threshold
    t = np.asarray(truths) >= 0.5
    tp = np.sum(p & t)
    denom = 2 * tp + np.sum(p & ~t) + np.sum(~p & t)
    return float(2 * tp / denom) if denom else 0.0


def topology_f1(A_true, A_learned, tau: float = DEFAULT_TAU) -> tuple[float, float, float]:
    """Edge precision, recall and F1 of ``A_learned > tau`` against the true edges."""
    t = np.triu(np.asarray(getattr(A_true, "w", A_true)) > 0, 1)
    a = np.asarray(getattr(A_learned, "w", A_learned))
    p = np.triu((a > tau) | (a.T > tau), 1)
    tp = int(np.sum(p & t))
    prec = tp / int(p.sum()) if p.any() else 0.0
    rec = tp / int(t.sum()) if t.any() else 0.0
    f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f


# -- baselines --------------------------------------------------------------------

def _observed_matrix(rows, n):
    X = np.zeros((n, n))
    W = np.zeros((n, n))
    for u, v, y in rows:
        X[u, v] = X[v, u] = y
        W[u, v] = W[v, u] = 1.0
    return X, W


def masked_nmf(X, W, rank: int, iters: int = 500, seed: int = 0, eps: float = 1e-12):
    """Weighted multiplicative updates for ``min ||W * (X - F G)||_F^2``, F, G >= 0.

    Returns (F, G, objective history).
    """
    n, m = X.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max((W * X).sum() / max(W.sum(), 1.0), eps) / rank)
    F = rng.uniform(0.5, 1.5, size=(n, rank)) * scale
    G = rng.uniform(0.5, 1.5, size=(rank, m)) * scale
    WX = W * X
    hist = [float(np.sum((W * (X - F @ G)) ** 2))]
    for _ in range(iters):
        F *= (WX @ G.T) / ((W * (F @ G)) @ G.T + eps)
        G *= (F.T @ WX) / (F.T @ (W * (F @ G)) + eps)
        hist.append(float(np.sum((W * (X - F @ G)) ** 2)))
    return F, G, hist


def baseline_nmf(obs: ObservationSet, n: int, rank: int = 4, iters: int = 500, seed: int = 0,
                 pairs=None) -> np.ndarray:
    """Masked NMF fitted on the training split; predicts ``pairs`` (default: test)."""
    if not 1 <= rank < n:
        raise ValueError("rank must satisfy 1 <= rank < n")
    X, W = _observed_matrix(obs.train, n)
    shift = max(0.0, -float(X[W > 0].min())) + 1e-6 if W.any() else 0.0
    X = np.where(W > 0, X + shift, 0.0)
    F, G, _ = masked_nmf(X, W, rank, iters, seed)
    R = F @ G - shift
    pairs = [(u, v) for u, v, _ in obs.test] if pairs is None else pairs
    return np.array([(R[u, v] + R[v, u]) / 2 for u, v in pairs])


def baseline_mean(obs: ObservationSet, pairs=None) -> np.ndarray:
    pairs = [(u, v) for u, v, _ in obs.test] if pairs is None else pairs
    return np.full(len(pairs), np.mean([y for _, _, y in obs.train]))


def baseline_mlp(obs: ObservationSet, n: int, seed: int = 0, kind="additive", hidden: int = 64,
                 eta: float = 1e-2, max_epochs: int = 500, patience: int = 10,
                 pairs=None) -> np.ndarray:
    """Two-layer perceptron on concatenated binary codes of (u, v).

    Adam on MSE (regression) or cross-entropy (boolean) with early stopping
    on the validation split.
    """
    if hidden < 1:
        raise ValueError("hidden width must be positive")
    kind = MetricKind.parse(kind)
    codes = node_features(n)
    rng = ppm.stage_rng(seed, "model")

    def feats(rows):
        u = np.array([min(r[0], r[1]) for r in rows])
        v = np.array([max(r[0], r[1]) for r in rows])
        return np.hstack([codes[u], codes[v]])

    Xtr, ytr = feats(obs.train), np.array([r[2] for r in obs.train])
    val = obs.validation or obs.train
    Xva, yva = feats(val), np.array([r[2] for r in val])
    shift, scale = (ytr.mean(), ytr.std() or 1.0) if kind.is_regression else (0.0, 1.0)
    d = Xtr.shape[1]
    o = 1 if kind.is_regression else 2
    s1, s2 = 1 / np.sqrt(d), 1 / np.sqrt(hidden)
    P = {"W1": rng.uniform(-s1, s1, (d, hidden)), "b1": rng.uniform(-s1, s1, hidden),
         "W2": rng.uniform(-s2, s2, (hidden, o)), "b2": rng.uniform(-s2, s2, o)}
    m = {k: np.zeros_like(a) for k, a in P.items()}
    v2 = {k: np.zeros_like(a) for k, a in P.items()}

    def fwd(X, P):
        Z = X @ P["W1"] + P["b1"]
        Hd = np.maximum(Z, 0)
        return Z, Hd, Hd @ P["W2"] + P["b2"]

    def loss_grad(X, y, P):
        Z, Hd, out = fwd(X, P)
        B = len(y)
        if kind.is_regression:
            r = out[:, 0] - (y - shift) / scale
            dout = np.zeros_like(out)
            dout[:, 0] = 2 * r / B
            loss = float(np.mean(r ** 2))
        else:
            e = np.exp(out - out.max(1, keepdims=True))
            p = e / e.sum(1, keepdims=True)
            lab = (y > 0.5).astype(int)
            loss = float(-np.mean(np.log(np.clip(p[np.arange(B), lab], 1e-300, None))))
            dout = p.copy()
            dout[np.arange(B), lab] -= 1
            dout /= B
        dH = dout @ P["W2"].T * (Z > 0)
        return loss, {"W1": X.T @ dH, "b1": dH.sum(0), "W2": Hd.T @ dout, "b2": dout.sum(0)}

    best, best_P, stale = math.inf, {k: a.copy() for k, a in P.items()}, 0
    for t in range(1, max_epochs + 1):
        _, g = loss_grad(Xtr, ytr, P)
        for k in P:
            m[k] = 0.9 * m[k] + 0.1 * g[k]
            v2[k] = 0.999 * v2[k] + 0.001 * g[k] ** 2
            P[k] = P[k] - eta * (m[k] / (1 - 0.9 ** t)) / (np.sqrt(v2[k] / (1 - 0.999 ** t)) + 1e-8)
        vl, _ = loss_grad(Xva, yva, P)
        if vl < best:
            best, best_P, stale = vl, {k: a.copy() for k, a in P.items()}, 0
        else:
            stale += 1
            if stale >= patience:
                break
    rows = obs.test if pairs is None else [(u, v, 0.0) for u, v in pairs]
    _, _, out = fwd(feats(rows), best_P)
    if kind.is_regression:
        return out[:, 0] * scale + shift
    e = np.exp(out - out.max(1, keepdims=True))
    return (e / e.sum(1, keepdims=True))[:, 1]


# -- heatmaps ---------------------------------------------------------------------

def block_pool(X, block: int = 50) -> np.ndarray:
    """Sum-pool a matrix into ``block x block`` tiles; totals are conserved."""
    X = np.asarray(X, dtype=np.float64)
    nb = [math.ceil(s / block) for s in X.shape]
    out = np.zeros(nb)
    for i in range(nb[0]):
        for j in range(nb[1]):
            out[i, j] = X[i * block:(i + 1) * block, j * block:(j + 1) * block].sum()
    return out


def write_heatmap(stem, X) -> None:
    """Write ``stem.csv``, an 8-bit ``stem.pgm`` and the value scale in ``stem.scale.txt``."""
    stem = Path(stem)
    X = np.asarray(X, dtype=np.float64)
    np.savetxt(stem.with_suffix(".csv"), X, delimiter=",", fmt="%.17g")
    lo, hi = float(X.min()), float(X.max())
    span = hi - lo if hi > lo else 1.0
    img = np.round(255 * (X - lo) / span).astype(np.uint8)
    with open(stem.with_suffix(".pgm"), "wb") as fh:
        fh.write(f"P5\n{X.shape[1]} {X.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    stem.with_suffix(".scale.txt").write_text(
        f"min {lo!r}\nmax {hi!r}\n# pixel = round(255 * (value - min) / (max - min))\n", encoding="utf-8")


def export_heatmaps(out_dir, A_true, A_obs, A_learned, block: int = 50) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = np.asarray(getattr(A_true, "w", A_true))
    write_heatmap(out_dir / "true", block_pool(t > 0, block))
    write_heatmap(out_dir / "observed_minus_true",
                  block_pool((np.asarray(getattr(A_obs, "w", A_obs)) > 0).astype(float) - (t > 0), block))
    write_heatmap(out_dir / "learned_minus_true",
                  block_pool(np.asarray(getattr(A_learned, "w", A_learned)) - (t > 0), block))


# -- experiments ------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    model: str = "er"
    n: int = 100
    p: float = 0.05
    k: int = 4
    beta: float = 0.1
    m: int = 2
    edge_list: str | None = None
    kind: str = "additive"
    delta: float = 0.3
    Delta: float = 0.2
    monitor_fraction: float = 0.2
    seeds: tuple = (0, 1, 2)
    method: str = "deepnt"
    optim: learner.OptimConfig = field(default_factory=learner.OptimConfig)
    nmf_rank: int = 4
    nmf_iters: int = 500
    mlp_hidden: int = 64

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        MetricKind.parse(self.kind)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def method_config(cfg: learner.OptimConfig, method: str) -> learner.OptimConfig:
    """Ablation switches: DeepNT-alpha keeps only sparsity, DeepNT-gamma only the bound."""
    if method == "deepnt_alpha":
        return replace(cfg, alpha=1e-4, gamma=0.0)
    if method == "deepnt_gamma":
        return replace(cfg, alpha=0.0, gamma=1.0)
    return cfg


@dataclass
class Instance:
    A_true: DenseAdjacency
    metrics: np.ndarray
    truth: ppm.GroundTruth
    topo: ppm.CorruptedTopology
    obs: ObservationSet


def build_instance(cfg: ExperimentConfig, seed: int) -> Instance:
    stage = "graph"
    try:
        if cfg.edge_list:
            G = read_edge_list(cfg.edge_list)
        else:
            G = ppm.generate_graph(cfg.model, cfg.n, seed, p=cfg.p, k=cfg.k, beta=cfg.beta, m=cfg.m)
        stage = "metrics"
        metrics = ppm.assign_edge_metrics(G, cfg.kind, seed)
        truth = ppm.all_pairs_ground_truth(G, metrics, cfg.kind)
        stage = "corruption"
        topo = ppm.corrupt_topology(G, cfg.Delta, seed)
        stage = "sampling"
        obs = ppm.sample_observations(truth, cfg.delta, cfg.monitor_fraction, seed)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    return Instance(G, metrics, truth, topo, obs)


def score(kind, preds, truths) -> dict:
    kind = MetricKind.parse(kind)
    out = {"mape": math.nan, "mse": math.nan, "acc": math.nan, "f1": math.nan}
    if kind.is_regression:
        out["mape"] = mape(preds, truths)
        out["mse"] = mse(preds, truths)
    else:
        out["acc"] = accuracy(preds, truths)
        out["f1"] = f1(preds, truths)
    return out


def run_seed(cfg: ExperimentConfig, seed: int, return_model: bool = False):
    inst = build_instance(cfg, seed)
    start = time.perf_counter()
    pairs = [(u, v) for u, v, _ in inst.obs.test]
    truths = np.array([y for _, _, y in inst.obs.test])
    A_learned = inst.topo.A_obs.w
    result = None
    try:
        if cfg.method.startswith("deepnt"):
            result = learner.train(inst.obs, inst.topo.A_obs, cfg.kind, method_config(cfg.optim, cfg.method), seed)
            preds = result.predict(pairs)
            A_learned = result.A
        elif cfg.method == "nmf":
            preds = baseline_nmf(inst.obs, inst.A_true.n, cfg.nmf_rank, cfg.nmf_iters, seed)
        elif cfg.method == "mlp":
            preds = baseline_mlp(inst.obs, inst.A_true.n, seed, cfg.kind, cfg.mlp_hidden)
        else:
            preds = baseline_mean(inst.obs)
    except Exception as exc:
        raise StageError("training", exc) from exc
    seconds = time.perf_counter() - start
    row = {"method": cfg.method, "kind": MetricKind.parse(cfg.kind).value, "n": inst.A_true.n,
           "delta": cfg.delta, "Delta": cfg.Delta, "seed": seed, **score(cfg.kind, preds, truths)}
    row["topo_p"], row["topo_r"], row["topo_f1"] = topology_f1(inst.A_true, A_learned, cfg.optim.tau)
    row["seconds"] = seconds
    if return_model:
        return row, inst, result
    return row


@dataclass
class ResultRecord:
    digest: str
    rows: list[dict]

    @property
    def aggregate(self) -> dict:
        keys = ("mape", "mse", "acc", "f1", "topo_p", "topo_r", "topo_f1", "seconds")
        return {k: float(np.mean([r[k] for r in self.rows])) for k in keys}


def run_experiment(cfg: ExperimentConfig, out_csv=None, heatmap_dir=None, block: int = 50) -> ResultRecord:
    """Run every seed of one configuration and optionally write results."""
    rows = []
    for seed in cfg.seeds:
        row, inst, result = run_seed(cfg, seed, return_model=True)
        rows.append(row)
        if heatmap_dir is not None:
            learned = result.A if result is not None else inst.topo.A_obs.w
            export_heatmaps(Path(heatmap_dir) / f"seed{seed}", inst.A_true, inst.topo.A_obs, learned, block)
    record = ResultRecord(cfg.digest(), rows)
    if out_csv is not None:
        write_results(out_csv, rows)
    return record


def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return x


def write_results(path, rows, timing: bool = True, append: bool = False) -> None:
    """Results CSV. ``timing=False`` writes 0 seconds for byte-stable comparisons."""
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if not new else "w", newline="", encoding="utf-8") as fh:
        out = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        if new:
            out.writeheader()
        for r in rows:
            r = dict(r)
            if not timing:
                r["seconds"] = 0.0
            out.writerow({k: _fmt(r[k]) for k in RESULT_FIELDS})
