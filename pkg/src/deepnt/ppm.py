"""Network simulation: graphs, edge metrics, optimal path performance, sampling.

Each path performance metric (PPM) family is a semiring-like triple: a
combine operator over edges, an order saying which value is better, and a
hinge difference used by the triangle-inequality penalty.
"""

from __future__ import annotations

import csv
import enum
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import DenseAdjacency, GraphError, connected_components_undirected, reachability

STAGES = ("graph", "metrics", "corruption", "sampling", "model", "training")


class SimulationError(RuntimeError):
    """Raised when a generator cannot satisfy its constraints."""


class SamplingError(RuntimeError):
    """Raised when monitors cannot supply the requested observations."""


class MetricKind(enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"
    MINMAX = "minmax"
    BOOLEAN = "boolean"

    @classmethod
    def parse(cls, value) -> "MetricKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown metric kind {value!r}") from None

    @property
    def identity(self) -> float:
        return {"additive": 0.0, "multiplicative": 1.0, "minmax": math.inf, "boolean": 1.0}[self.value]

    @property
    def smaller_is_better(self) -> bool:
        return self is MetricKind.ADDITIVE

    @property
    def is_regression(self) -> bool:
        return self is not MetricKind.BOOLEAN

    def combine(self, a, b):
        if self is MetricKind.ADDITIVE:
            return a + b
        if self is MetricKind.MULTIPLICATIVE:
            return a * b
        if self is MetricKind.MINMAX:
            return np.minimum(a, b)
        return np.logical_and(a, b).astype(np.float64) if np.ndim(a) else float(bool(a) and bool(b))

    def better_or_equal(self, a, b, rtol: float = 0.0):
        """True where ``a`` is at least as good as ``b``."""
        slack = rtol * np.maximum(np.abs(a), np.abs(b))
        if self.smaller_is_better:
            return a <= b + slack
        return a >= b - slack

    def penalty_diff(self, pred, bound):
        """Signed amount by which ``pred`` is better than ``bound``."""
        if self.smaller_is_better:
            return pred - bound
        return bound - pred

    @property
    def value_range(self) -> tuple[float, float]:
        return {
            "additive": (1.0, 100.0),
            "multiplicative": (0.9, 0.999),
            "minmax": (1.0, 100.0),
            "boolean": (0.0, 1.0),
        }[self.value]


@dataclass(frozen=True)
class GroundTruth:
    y: np.ndarray
    reachable: np.ndarray
    kind: MetricKind


@dataclass(frozen=True)
class CorruptedTopology:
    A_obs: DenseAdjacency
    M: np.ndarray
    Delta: float
    removed: list[tuple[int, int]]
    added: list[tuple[int, int]]


@dataclass
class ObservationSet:
    train: list[tuple[int, int, float]]
    validation: list[tuple[int, int, float]]
    test: list[tuple[int, int, float]]
    monitors: list[int] = field(default_factory=list)
    delta: float = 0.0
    n: int = 0

    def arrays(self, split: str):
        rows = getattr(self, split)
        u = np.array([r[0] for r in rows], dtype=np.int64)
        v = np.array([r[1] for r in rows], dtype=np.int64)
        y = np.array([r[2] for r in rows], dtype=np.float64)
        return u, v, y


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    """Independent PCG64 stream for one named pipeline stage."""
    key = STAGES.index(stage) if stage in STAGES else sum(map(ord, stage))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), key])))


# -- graph generators ---------------------------------------------------------

def _erdos_renyi(n, p, rng):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return upper | upper.T


def _watts_strogatz(n, k, beta, rng):
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(1, k // 2 + 1):
            adj[i, (i + j) % n] = adj[(i + j) % n, i] = True
    for j in range(1, k // 2 + 1):
        for i in range(n):
            t = (i + j) % n
            if rng.random() < beta and adj[i, t]:
                free = np.flatnonzero(~adj[i])
                free = free[free != i]
                if free.size == 0:
                    continue
                new = int(free[rng.integers(free.size)])
                adj[i, t] = adj[t, i] = False
                adj[i, new] = adj[new, i] = True
    return adj


def _barabasi_albert(n, m, rng):
    adj = np.zeros((n, n), dtype=bool)
    for i in range(m):
        for j in range(i + 1, m):
            adj[i, j] = adj[j, i] = True
    # degree-weighted urn; the seed nodes enter with weight 1 so an edgeless seed still works
    urn = list(range(m))
    for i in range(m):
        urn.extend([i] * int(adj[i].sum()))
    for v in range(m, n):
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(urn[rng.integers(len(urn))])
        for t in sorted(targets):
            adj[v, t] = adj[t, v] = True
            urn.extend([v, t])
        urn.append(v)
    return adj


def generate_graph(model: str, n: int, seed: int, *, p: float = 0.1, k: int = 4,
                   beta: float = 0.1, m: int = 2, max_attempts: int = 100) -> DenseAdjacency:
    """Connected undirected 0/1 graph from the ER, WS or BA model."""
    model = model.lower()
    if n < 3:
        raise GraphError("n must be at least 3")
    if model == "er":
        if not 0 < p <= 1:
            raise GraphError("ER edge probability must lie in (0, 1]")
        build = lambda rng: _erdos_renyi(n, p, rng)  # noqa: E731
    elif model == "ws":
        if k % 2 or not 2 <= k < n or not 0 <= beta <= 1:
            raise GraphError("WS needs even k with 2 <= k < n and beta in [0, 1]")
        build = lambda rng: _watts_strogatz(n, k, beta, rng)  # noqa: E731
    elif model == "ba":
        if not 1 <= m < n:
            raise GraphError("BA needs 1 <= m < n")
        build = lambda rng: _barabasi_albert(n, m, rng)  # noqa: E731
    else:
        raise GraphError(f"unknown graph model {model!r}")

    for attempt in range(max_attempts):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0, attempt])))
        adj = build(rng)
        if len(connected_components_undirected(adj)) == 1:
            return DenseAdjacency(adj.astype(np.float64))
    raise SimulationError(f"{model} graph with n={n} stayed disconnected after {max_attempts} attempts")


# -- edge metrics and the optimal-PPM oracle ---------------------------------

def assign_edge_metrics(G: DenseAdjacency, kind, seed: int, *, probe_pairs: int = 200,
                        max_retries: int = 50, balance: float = 0.3) -> np.ndarray:
    """Per-edge metric values as an n x n matrix, NaN where there is no edge.

    Boolean states are redrawn until positive and negative optimal labels on
    a fixed probe of node pairs each exceed ``balance``. The on-probability
    is nudged toward balance between retries.
    """
    kind = MetricKind.parse(kind)
    rng = stage_rng(seed, "metrics")
    n = G.n
    edges = G.edges()
    lo, hi = kind.value_range

    def fill(values):
        y = np.full((n, n), np.nan)
        for (u, v), x in zip(edges, values):
            y[u, v] = x
            if not G.directed:
                y[v, u] = x
        return y

    if kind is not MetricKind.BOOLEAN:
        return fill(rng.uniform(lo, hi, size=len(edges)))

    pairs = [(int(a), int(b)) for a, b in rng.integers(0, n, size=(probe_pairs * 4, 2)) if a != b]
    pairs = pairs[:probe_pairs]
    p_on = 0.5
    for _ in range(max_retries):
        y = fill((rng.random(len(edges)) < p_on).astype(np.float64))
        R = reachability(np.where(y == 1.0, 1.0, 0.0), tau=0.5)
        labels = np.array([R[a, b] for a, b in pairs], dtype=float)
        pos = labels.mean()
        if pos > balance and 1 - pos > balance:
            return y
        p_on = float(np.clip(p_on + (0.08 if pos <= balance else -0.08), 0.02, 0.98))
    raise SimulationError("could not balance boolean path labels")


def _out_lists(G: DenseAdjacency, metrics: np.ndarray):
    a = G.w
    return [[(int(j), float(metrics[i, j])) for j in np.flatnonzero(a[i] > 0)] for i in range(G.n)]


def _single_source(adj, kind: MetricKind, s: int, n: int) -> np.ndarray:
    """Optimal values from ``s`` to every node; NaN when unreachable."""
    out = np.full(n, np.nan)
    if kind is MetricKind.BOOLEAN:
        out[s] = 1.0
        frontier = [s]
        seen = {s}
        while frontier:
            nxt = []
            for v in frontier:
                for w, x in adj[v]:
                    if x == 1.0 and w not in seen:
                        seen.add(w)
                        nxt.append(w)
            frontier = nxt
        # pairs connected in the topology but not through all-1 edges score 0
        reach = {s}
        frontier = [s]
        while frontier:
            nxt = []
            for v in frontier:
                for w, _ in adj[v]:
                    if w not in reach:
                        reach.add(w)
                        nxt.append(w)
            frontier = nxt
        for w in reach:
            out[w] = 1.0 if w in seen else 0.0
        return out

    if kind is MetricKind.MINMAX:
        best = {s: math.inf}
        heap = [(-math.inf, s)]
        done = set()
        while heap:
            negw, v = heapq.heappop(heap)
            if v in done:
                continue
            done.add(v)
            width = -negw
            for w, x in adj[v]:
                cand = min(width, x)
                if w not in done and cand > best.get(w, -math.inf):
                    best[w] = cand
                    heapq.heappush(heap, (-cand, w))
        for v, x in best.items():
            out[v] = x
        return out

    # additive directly, multiplicative as a shortest path on -log weights
    dist = {s: 0.0}
    heap = [(0.0, s)]
    done = set()
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        for w, x in adj[v]:
            cost = x if kind is MetricKind.ADDITIVE else -math.log(x)
            nd = d + cost
            if w not in done and nd < dist.get(w, math.inf):
                dist[w] = nd
                heapq.heappush(heap, (nd, w))
    for v, d in dist.items():
        out[v] = d if kind is MetricKind.ADDITIVE else math.exp(-d)
    return out


def optimal_ppm(G: DenseAdjacency, metrics: np.ndarray, kind, u: int, v: int):
    """Best path value from ``u`` to ``v``, or ``None`` if unreachable."""
    kind = MetricKind.parse(kind)
    if not (0 <= u < G.n and 0 <= v < G.n):
        raise GraphError(f"node out of range: ({u}, {v})")
    if u == v:
        raise GraphError("optimal_ppm needs distinct endpoints")
    val = _single_source(_out_lists(G, metrics), kind, u, G.n)[v]
    return None if np.isnan(val) else float(val)


def all_pairs_ground_truth(G: DenseAdjacency, metrics: np.ndarray, kind) -> GroundTruth:
    kind = MetricKind.parse(kind)
    adj = _out_lists(G, metrics)
    y = np.vstack([_single_source(adj, kind, s, G.n) for s in range(G.n)])
    if not G.directed:
        # path reversal gives the same value; mirror so rounding order cannot break symmetry
        iu = np.triu_indices(G.n, 1)
        y.T[iu] = y[iu]
    np.fill_diagonal(y, kind.identity)
    reach = (~np.isnan(y)).astype(np.int8)
    return GroundTruth(y=y, reachable=reach, kind=kind)


# -- observation model --------------------------------------------------------

def corrupt_topology(A_true: DenseAdjacency, Delta: float, seed: int) -> CorruptedTopology:
    """Swap ``ceil(Delta |E|)`` true edges for the same number of non-edges."""
    if not 0 <= Delta < 1:
        raise GraphError("Delta must lie in [0, 1)")
    rng = stage_rng(seed, "corruption")
    edges = A_true.edges()
    k = math.ceil(Delta * len(edges) - 1e-12)
    n = A_true.n
    iu, ju = np.triu_indices(n, k=1)
    absent = ~(A_true.support()[iu, ju] | A_true.support()[ju, iu])
    non_edges = [(int(a), int(b)) for a, b in zip(iu[absent], ju[absent])]
    if k > len(non_edges):
        raise GraphError(f"cannot insert {k} edges; only {len(non_edges)} non-edges")
    removed = sorted(edges[i] for i in rng.choice(len(edges), size=k, replace=False)) if k else []
    added = sorted(non_edges[i] for i in rng.choice(len(non_edges), size=k, replace=False)) if k else []
    w = A_true.w.copy()
    for u, v in removed:
        w[u, v] = w[v, u] = 0.0
    for u, v in added:
        w[u, v] = w[v, u] = 1.0
    A_obs = DenseAdjacency(w, directed=A_true.directed)
    return CorruptedTopology(A_obs=A_obs, M=(A_obs.w > 0).astype(np.int8), Delta=Delta,
                             removed=removed, added=added)


def sample_observations(gt: GroundTruth, delta: float, monitor_fraction: float = 0.2,
                        seed: int = 0) -> ObservationSet:
    """Monitor-based sampling of ``floor(delta * n(n-1)/2)`` measured pairs."""
    if not 0 < delta < 1:
        raise SamplingError("delta must lie in (0, 1)")
    if not 0 < monitor_fraction <= 1:
        raise SamplingError("monitor_fraction must lie in (0, 1]")
    rng = stage_rng(seed, "sampling")
    n = gt.y.shape[0]
    total = n * (n - 1) // 2
    want = math.floor(delta * total)
    if want == 0:
        raise SamplingError("delta selects no node pairs")
    k = math.ceil(monitor_fraction * n)
    monitors = sorted(int(x) for x in rng.choice(n, size=k, replace=False))
    is_mon = np.zeros(n, dtype=bool)
    is_mon[monitors] = True

    iu, ju = np.triu_indices(n, k=1)
    reach = (gt.reachable[iu, ju] == 1) & (gt.reachable[ju, iu] == 1)
    cand_mask = reach & (is_mon[iu] | is_mon[ju])
    cand = np.flatnonzero(cand_mask)
    if cand.size < want:
        raise SamplingError(f"monitors supply {cand.size} pairs but {want} are needed; "
                            "raise monitor_fraction")
    chosen = rng.choice(cand, size=want, replace=False)
    chosen = chosen[rng.permutation(want)]
    rows = [(int(iu[c]), int(ju[c]), float(gt.y[iu[c], ju[c]])) for c in chosen]
    train, validation = rows[0::2], rows[1::2]
    taken = np.zeros(iu.size, dtype=bool)
    taken[chosen] = True
    test = [(int(iu[c]), int(ju[c]), float(gt.y[iu[c], ju[c]]))
            for c in np.flatnonzero(reach & ~taken)]
    return ObservationSet(train=train, validation=validation, test=test, monitors=monitors,
                          delta=delta, n=n)


# -- file formats -------------------------------------------------------------

def write_metrics(path, G: DenseAdjacency, metrics: np.ndarray) -> None:
    lines = [f"{u} {v} {float(metrics[u, v])!r}" for u, v in G.edges()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics(path, G: DenseAdjacency) -> np.ndarray:
    y = np.full((G.n, G.n), np.nan)
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        u, v, x = line.split()
        y[int(u), int(v)] = float(x)
        if not G.directed:
            y[int(v), int(u)] = float(x)
    return y


def write_observations(path, obs: ObservationSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["split", "u", "v", "y"])
        for split in ("train", "validation", "test"):
            for u, v, y in getattr(obs, split):
                out.writerow([split, u, v, repr(float(y))])


def read_observations(path, n: int | None = None) -> ObservationSet:
    splits: dict[str, list] = {"train": [], "validation": [], "test": []}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["split"] not in splits:
                raise ValueError(f"unknown split {row['split']!r}")
            splits[row["split"]].append((int(row["u"]), int(row["v"]), float(row["y"])))
    if n is None:
        n = 1 + max(max(u, v) for rows in splits.values() for u, v, _ in rows)
    return ObservationSet(**splits, n=n)
