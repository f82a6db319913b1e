"""Joint training of the path GNN and the adjacency matrix.

Extrapolated proximal gradient over (theta, A): a momentum look-ahead,
a gradient step on the smooth part ``g = L_gnn + gamma L_tri + structure``,
l1 soft-thresholding on A, then the connectivity projection.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import model as nn
from .graph import DEFAULT_TAU, SccPartition, reachability, sym, tarjan_scc, z_matrix
from .paths import DEFAULT_L, PathCache
from .ppm import MetricKind, ObservationSet, stage_rng
from .structure import connectivity_projection, soft_threshold, structure_term

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "objective", "train_loss", "val_loss", "lambda_min_Z", "l1_norm",
                  "edges_above_tau")


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class OptimConfig:
    omega: float = 0.9
    eta: float = 1e-4
    eta_adj: float | None = None     # step on the adjacency; defaults to eta
    alpha: float = 1e-4
    gamma: float = 1.0
    max_epochs: int = 500
    patience: int = 10
    eps_pd: float = 1e-3
    tau: float = DEFAULT_TAU
    refresh_period: int = 5
    refresh_change: float = 0.01
    walk_cap: int = 8
    batch_size: int = 1024
    N: int = 3
    L: int = DEFAULT_L
    hidden: int = 64
    feature_dim: int | None = None
    path_mode: str = "hops"
    init_adjacency: str = "observed"   # or "zero"
    optimizer: str = "prox"            # "adam" is an off-paper option for theta
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999

    def __post_init__(self):
        for name in ("eta", "max_epochs", "patience", "refresh_period", "walk_cap", "batch_size",
                     "N", "L", "hidden"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("alpha", "gamma", "eps_pd", "tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.omega <= 1:
            raise ValueError("omega must lie in (0, 1]")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.init_adjacency not in ("observed", "zero"):
            raise ValueError("init_adjacency is 'observed' or 'zero'")
        if self.optimizer not in ("prox", "adam"):
            raise ValueError("optimizer is 'prox' or 'adam'")

    @property
    def step_adj(self) -> float:
        return self.eta if self.eta_adj is None else self.eta_adj


@dataclass
class TrainingProblem:
    """Everything the objective depends on besides (theta, A)."""

    kind: MetricKind
    config: OptimConfig
    H0: np.ndarray
    M: np.ndarray
    R_target: np.ndarray
    components: SccPartition
    scaler: nn.TargetScaler
    train: tuple
    val: tuple
    observed: dict
    seed: int
    cache: PathCache = field(repr=False, default=None)

    @property
    def n(self):
        return self.H0.shape[0]


@dataclass
class TrainResult:
    params: nn.ModelParams
    A: np.ndarray
    history: list[dict]
    problem: TrainingProblem
    best_epoch: int

    def predict(self, pairs) -> np.ndarray:
        return predict_pairs(self.params, self.A, self.problem, pairs)


def make_problem(obs: ObservationSet, A_obs, kind, config: OptimConfig, seed: int, M=None) -> TrainingProblem:
    kind = MetricKind.parse(kind)
    if not obs.train:
        raise ValueError("training split is empty")
    A_obs = np.asarray(getattr(A_obs, "w", A_obs), dtype=np.float64)
    n = A_obs.shape[0]
    M = (A_obs > 0).astype(np.float64) if M is None else np.asarray(M, dtype=np.float64)
    train = obs.arrays("train")
    val = obs.arrays("validation") if obs.validation else train
    observed = {}
    for u, v, y in zip(*train):
        observed[(int(u), int(v))] = observed[(int(v), int(u))] = float(y)
    # PPM evidence: every measured pair is mutually reachable
    evidence = A_obs.copy()
    for u, v in observed:
        evidence[u, v] = max(evidence[u, v], 1.0)
    components = tarjan_scc(evidence, tau=0.0)
    return TrainingProblem(
        kind=kind, config=config, H0=nn.node_features(n, config.feature_dim), M=M,
        R_target=reachability(A_obs, tau=0.0).astype(np.float64), components=components,
        scaler=nn.TargetScaler.fit(train[2], kind), train=train, val=val, observed=observed,
        seed=seed, cache=PathCache(config.N, config.L, config.tau, config.path_mode))


# -- forward helpers ------------------------------------------------------------

def _batch(problem: TrainingProblem, A, u, v, paths=None):
    pairs = list(zip(u.tolist(), v.tolist()))
    canon = [(min(a, b), max(a, b)) for a, b in pairs]
    sets = paths if paths is not None else problem.cache.get(A, canon)
    return nn.PairBatch.build(canon, sets), sets


def predict_pairs(params, A, problem: TrainingProblem, pairs) -> np.ndarray:
    """Raw-unit predictions for arbitrary pairs."""
    pairs = list(pairs)
    if not pairs:
        return np.zeros(0)
    u = np.array([p[0] for p in pairs])
    v = np.array([p[1] for p in pairs])
    out = []
    bs = max(problem.config.batch_size, 2048)
    for s in range(0, len(pairs), bs):
        batch, _ = _batch(problem, A, u[s:s + bs], v[s:s + bs])
        logits, _ = nn.forward(A, params, problem.H0, batch)
        out.append(nn.head_outputs(logits, problem.kind, problem.scaler))
    return np.concatenate(out)


def predict_with(params, A, H0, kind, scaler, config: OptimConfig, pairs) -> np.ndarray:
    """Predictions from a bare snapshot (for example a loaded checkpoint)."""
    view = TrainingProblem(kind=MetricKind.parse(kind), config=config, H0=np.asarray(H0), M=None,
                           R_target=None, components=None, scaler=scaler, train=(), val=(),
                           observed={}, seed=0,
                           cache=PathCache(config.N, config.L, config.tau, config.path_mode))
    return predict_pairs(params, np.asarray(A, dtype=np.float64), view, pairs)


def choose_intermediates(problem: TrainingProblem, u, v, path_sets) -> np.ndarray:
    """A random interior node of each pair's best path; -1 when there is none.

    The draw is a pure function of (seed, u, v, path).
    """
    z = np.full(len(path_sets), -1, dtype=np.int64)
    for i, ps in enumerate(path_sets):
        if len(ps) and len(ps.paths[0]) > 2:
            interior = ps.paths[0][1:-1]
            rng = np.random.default_rng([problem.seed, int(u[i]), int(v[i]), len(interior)])
            z[i] = interior[int(rng.integers(len(interior)))]
    return z


def triangle_bounds(params, A, problem: TrainingProblem, u, v, z) -> np.ndarray:
    """Raw-unit bounds through ``z``; observed legs when measured, else predictions."""
    legs = []
    need = []
    for a, b, c in zip(u.tolist(), v.tolist(), z.tolist()):
        if c < 0:
            legs.append((None, None))
            continue
        pair = []
        for x, y in ((a, c), (c, b)):
            val = problem.observed.get((x, y))
            if val is None:
                need.append((min(x, y), max(x, y)))
            pair.append(val if val is not None else (min(x, y), max(x, y)))
        legs.append(tuple(pair))
    need = sorted(set(need))
    pred = dict(zip(need, predict_pairs(params, A, problem, need))) if need else {}
    bounds = np.full(len(legs), np.nan)
    for i, (l1, l2) in enumerate(legs):
        if l1 is None:
            continue
        y1 = pred[l1] if isinstance(l1, tuple) else l1
        y2 = pred[l2] if isinstance(l2, tuple) else l2
        bounds[i] = float(nn.triangle_bound(y1, y2, problem.kind))
    return bounds


def _loss_and_grads(params, A, problem: TrainingProblem, paths, bounds, with_grad=True):
    """Smooth objective g on the training split and its gradients."""
    cfg = problem.config
    u, v, y = problem.train
    B = len(y)
    l_gnn = l_m = 0.0
    grads = {k: np.zeros_like(a) for k, a in params.arrays().items()}
    grads["A"] = np.zeros_like(A)
    for s in range(0, B, cfg.batch_size):
        sl = slice(s, s + cfg.batch_size)
        batch, _ = _batch(problem, A, u[sl], v[sl], paths[sl])
        out, trace = nn.forward(A, params, problem.H0, batch)
        lg, lm, dout = nn.batch_loss(out, y[sl], bounds[sl], problem.kind, cfg.gamma, problem.scaler)
        frac = len(batch) / B
        l_gnn += frac * lg
        l_m += frac * lm
        if with_grad:
            for k, gk in nn.backward(trace, dout * frac).items():
                grads[k] += gk
    s_val, s_grad = structure_term(A, problem.M, problem.R_target, cfg.walk_cap, with_grad)
    if with_grad:
        grads["A"] += s_grad
    g = l_gnn + cfg.gamma * l_m + s_val
    return {"g": g, "l_gnn": l_gnn, "l_m": l_m, "structure": s_val}, grads


def objective(params, A, problem: TrainingProblem, paths=None) -> dict:
    """Full objective ``g + alpha ||A||_1`` on the training split, term by term."""
    u, v, _ = problem.train
    if paths is None:
        _, paths = _batch(problem, A, u, v)
    z = choose_intermediates(problem, u, v, paths)
    bounds = triangle_bounds(params, A, problem, u, v, z)
    terms, _ = _loss_and_grads(params, A, problem, paths, bounds, with_grad=False)
    terms["l1"] = float(np.abs(A).sum())
    terms["F"] = terms["g"] + problem.config.alpha * terms["l1"]
    return terms


def validation_loss(params, A, problem: TrainingProblem) -> float:
    u, v, y = problem.val
    batch, _ = _batch(problem, A, u, v)
    out, _ = nn.forward(A, params, problem.H0, batch)
    lg, _, _ = nn.batch_loss(out, y, None, problem.kind, 0.0, problem.scaler)
    return lg


# -- the optimizer ----------------------------------------------------------------

class _Adam:
    def __init__(self, cfg: OptimConfig):
        self.b1, self.b2, self.eta = cfg.adam_beta1, cfg.adam_beta2, cfg.eta
        self.m = self.v = None
        self.t = 0

    def step(self, params, grads):
        if self.m is None:
            self.m = {k: np.zeros_like(a) for k, a in params.items()}
            self.v = {k: np.zeros_like(a) for k, a in params.items()}
        self.t += 1
        out = {}
        for k, a in params.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            mh = self.m[k] / (1 - self.b1 ** self.t)
            vh = self.v[k] / (1 - self.b2 ** self.t)
            out[k] = a - self.eta * mh / (np.sqrt(vh) + 1e-8)
        return out


def _lambda_min(A):
    return float(np.linalg.eigvalsh(sym(z_matrix(sym(A))))[0])


def train(obs: ObservationSet, A_obs, kind, config: OptimConfig | None = None, seed: int = 0,
          M=None, log_every: int = 0) -> TrainResult:
    """Run the extrapolated proximal gradient loop with early stopping.

    Returns the snapshot with the best validation loss.
    """
    cfg = config or OptimConfig()
    problem = make_problem(obs, A_obs, kind, cfg, seed, M)
    o = 1 if problem.kind.is_regression else 2
    theta = nn.init_params(problem.H0.shape[1], cfg.hidden, o, stage_rng(seed, "model"))
    theta_prev = theta.copy()
    A0 = np.asarray(getattr(A_obs, "w", A_obs), dtype=np.float64)
    A = sym(A0) if cfg.init_adjacency == "observed" else np.zeros_like(A0)
    np.fill_diagonal(A, 0.0)
    A = connectivity_projection(A, problem.components, cfg.eps_pd)
    A_prev = A.copy()
    adam = _Adam(cfg) if cfg.optimizer == "adam" else None
    u, v, _ = problem.train

    _, paths = _batch(problem, A, u, v)
    z = choose_intermediates(problem, u, v, paths)
    ref_support = A > cfg.tau

    def record(epoch, params, adj):
        bounds = triangle_bounds(params, adj, problem, u, v, z)
        terms, _ = _loss_and_grads(params, adj, problem, paths, bounds, with_grad=False)
        l1 = float(np.abs(adj).sum())
        row = {"epoch": epoch, "objective": terms["g"] + cfg.alpha * l1, "train_loss": terms["l_gnn"],
               "val_loss": validation_loss(params, adj, problem), "lambda_min_Z": _lambda_min(adj),
               "l1_norm": l1, "edges_above_tau": int(np.count_nonzero(np.triu(adj > cfg.tau, 1)))}
        if not all(math.isfinite(float(x)) for x in row.values()):
            raise TrainingDiverged(f"non-finite objective at epoch {epoch}",
                                   snapshot={"params": params, "A": adj, "row": row})
        return row

    history = [record(0, theta, A)]
    best = (history[0]["val_loss"], 0, theta.copy(), A.copy())
    stale = 0
    beta = 1.0 - cfg.omega
    for epoch in range(1, cfg.max_epochs + 1):
        if epoch % cfg.refresh_period == 0 or np.mean((A > cfg.tau) != ref_support) > cfg.refresh_change:
            _, paths = _batch(problem, A, u, v)
            z = choose_intermediates(problem, u, v, paths)
            ref_support = A > cfg.tau
        th_bar = nn.ModelParams(**{k: a + beta * (a - theta_prev.arrays()[k])
                                   for k, a in theta.arrays().items()})
        A_bar = np.maximum(A + beta * (A - A_prev), 0.0)
        bounds = triangle_bounds(th_bar, A_bar, problem, u, v, z)
        try:
            _, grads = _loss_and_grads(th_bar, A_bar, problem, paths, bounds)
        except nn.NumericError as exc:
            raise TrainingDiverged(str(exc), snapshot={"params": theta, "A": A}) from exc
        gA = grads.pop("A")
        if adam is not None:
            new_theta = nn.ModelParams(**adam.step(th_bar.arrays(), grads))
        else:
            new_theta = nn.ModelParams(**{k: a - cfg.eta * grads[k] for k, a in th_bar.arrays().items()})
        step = cfg.step_adj
        new_A = soft_threshold(sym(A_bar - step * gA), step * cfg.alpha)
        new_A = connectivity_projection(new_A, problem.components, cfg.eps_pd)
        theta_prev, theta = theta, new_theta
        A_prev, A = A, new_A

        row = record(epoch, theta, A)
        history.append(row)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d objective %.6g train %.6g val %.6g", epoch, row["objective"],
                     row["train_loss"], row["val_loss"])
        if row["val_loss"] < best[0]:
            best = (row["val_loss"], epoch, theta.copy(), A.copy())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(params=best[2], A=best[3], history=history, problem=problem, best_epoch=best[1])


def write_history(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        out.writeheader()
        for row in history:
            out.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in HISTORY_FIELDS})


def config_dict(cfg: OptimConfig) -> dict:
    return asdict(cfg)


def with_overrides(cfg: OptimConfig, **kw) -> OptimConfig:
    return replace(cfg, **kw)
