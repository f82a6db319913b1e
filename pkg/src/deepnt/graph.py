"""Dense graph representation and connectivity machinery.

Connectivity is certified spectrally through the shifted Laplacian

    Z = diag(A 1) - A + 11^T / n

which is positive definite exactly when the (undirected) graph is connected,
and combinatorially through Tarjan's SCC algorithm and BFS reachability.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_TAU = 0.1


class GraphError(ValueError):
    """Raised on malformed graph input."""


@dataclass(frozen=True)
class DenseAdjacency:
    """Square non-negative weight matrix with a zero diagonal.

    ``w[i, j]`` is the weight of edge i -> j; 0 means no edge. Undirected
    graphs are symmetrized on construction.
    """

    w: np.ndarray
    directed: bool = False

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] == 0:
            raise GraphError(f"adjacency must be square and non-empty, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise GraphError("adjacency has non-finite entries")
        if np.any(w < 0):
            raise GraphError("adjacency has negative entries")
        np.fill_diagonal(w, 0.0)
        if not self.directed:
            w = np.maximum(w, w.T)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def support(self, tau: float = 0.0) -> np.ndarray:
        """Boolean edge mask ``w > tau``."""
        return self.w > tau

    def edges(self, tau: float = 0.0) -> list[tuple[int, int]]:
        """Edge list; undirected graphs report each edge once with u < v."""
        s = self.support(tau)
        if not self.directed:
            s = np.triu(s)
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(s))]

    def num_edges(self, tau: float = 0.0) -> int:
        return len(self.edges(tau))


@dataclass(frozen=True)
class SccPartition:
    components: list[list[int]]

    def labels(self, n: int) -> np.ndarray:
        lab = np.full(n, -1, dtype=np.int64)
        for c, comp in enumerate(self.components):
            lab[comp] = c
        return lab


def _as_array(A) -> np.ndarray:
    return A.w if isinstance(A, DenseAdjacency) else np.asarray(A, dtype=np.float64)


def sym(A) -> np.ndarray:
    """Symmetrization ``(A + A^T) / 2``."""
    a = _as_array(A)
    return (a + a.T) / 2.0


def z_matrix(A) -> np.ndarray:
    """Shifted Laplacian ``diag(A 1) - A + 11^T / n``."""
    a = _as_array(A)
    n = a.shape[0]
    return np.diag(a.sum(axis=1)) - a + np.full((n, n), 1.0 / n)


def min_eigenvalue_sym(M) -> float:
    """Smallest eigenvalue of the symmetric part of ``M``."""
    m = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise GraphError("matrix has non-finite entries")
    return float(np.linalg.eigvalsh(sym(m))[0])


def _out_neighbors(a: np.ndarray, tau: float) -> list[list[int]]:
    s = a > tau
    return [np.flatnonzero(s[i]).tolist() for i in range(a.shape[0])]


def tarjan_scc(A, tau: float = DEFAULT_TAU) -> SccPartition:
    """Strongly connected components over edges with weight > ``tau``.

    Iterative Tarjan; components come out in reverse topological order of
    the condensation. Nodes and neighbors are visited in index order.
    """
    a = _as_array(A)
    n = a.shape[0]
    adj = _out_neighbors(a, tau)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0

    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, i = work[-1]
            if i == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            nbrs = adj[v]
            while i < len(nbrs):
                w = nbrs[i]
                if index[w] == -1:
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
                i += 1
            if i < len(nbrs):
                work[-1] = (v, i + 1)
                work.append((nbrs[i], 0))
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
    return SccPartition(comps)


def reachability(A, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Binary path-existence matrix; every node reaches itself."""
    a = _as_array(A)
    n = a.shape[0]
    adj = _out_neighbors(a, tau)
    R = np.zeros((n, n), dtype=np.int8)
    for s in range(n):
        seen = R[s]
        seen[s] = 1
        frontier = [s]
        while frontier:
            nxt = []
            for v in frontier:
                for w in adj[v]:
                    if not seen[w]:
                        seen[w] = 1
                        nxt.append(w)
            frontier = nxt
    return R


def is_weakly_connected(A, tol: float = 1e-8) -> bool:
    """Spectral connectivity test: ``lambda_min(Z(sym A)) > tol``."""
    return min_eigenvalue_sym(z_matrix(sym(A))) > tol


def connected_components_undirected(A, tau: float = 0.0) -> list[list[int]]:
    """Weak components via union-find on the undirected support."""
    a = _as_array(A)
    n = a.shape[0]
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in zip(*np.nonzero((a > tau) | (a.T > tau))):
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for v in range(n):
        groups.setdefault(find(v), []).append(v)
    return list(groups.values())


# -- edge-list files ---------------------------------------------------------

def write_edge_list(path, A: DenseAdjacency, tau: float = 0.0) -> None:
    """Write ``nodes N directed D`` header then ``u v weight`` lines."""
    lines = [f"nodes {A.n} directed {int(A.directed)}"]
    for u, v in A.edges(tau):
        lines.append(f"{u} {v} {float(A.w[u, v])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _content_lines(path):
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line.split()


def read_edge_list(path) -> DenseAdjacency:
    lines = _content_lines(path)
    try:
        lineno, head = next(lines)
    except StopIteration:
        raise GraphError(f"{path}: empty edge list") from None
    if len(head) != 4 or head[0] != "nodes" or head[2] != "directed" or head[3] not in ("0", "1"):
        raise GraphError(f"{path}:{lineno}: expected header 'nodes N directed {{0|1}}'")
    n, directed = int(head[1]), head[3] == "1"
    w = np.zeros((n, n))
    for lineno, parts in lines:
        if len(parts) != 3:
            raise GraphError(f"{path}:{lineno}: expected 'u v weight'")
        u, v, x = int(parts[0]), int(parts[1]), float(parts[2])
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"{path}:{lineno}: node id out of range")
        w[u, v] = x
        if not directed:
            w[v, u] = x
    return DenseAdjacency(w, directed=directed)
