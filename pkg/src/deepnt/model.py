"""Path-centric GNN with hand-written reverse mode.

Pipeline for a node pair (u, v):

1. GCN backbone: ``H = relu(Ahat relu(Ahat H0 W1) W2)`` with
   ``Ahat = D^-1/2 (sym(A) + I) D^-1/2``.
2. For each candidate path p between u and v and each endpoint s, attention
   over the nodes z of p: ``e_z = leaky_relu(r . [h_s || h_z])``,
   ``alpha = softmax(e)``, ``hhat_s^p = h_s + relu(sum_z alpha_z h_z)``.
3. Mean readout over paths, then a linear head on ``[hhat_u || hhat_v]``.

Everything runs in float64 and is vectorized over a batch of pairs whose
paths are packed into padded index tensors.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .graph import sym
from .paths import PathSet
from .ppm import MetricKind

LEAKY_SLOPE = 0.2
CHECKPOINT_VERSION = 1


class NumericError(FloatingPointError):
    """Raised when activations or losses stop being finite."""


class StaleTraceError(RuntimeError):
    """Raised when a trace is replayed against changed inputs."""


def binary_encode(node_id: int, d: int) -> np.ndarray:
    """Most-significant-bit-first 0/1 code of ``node_id``."""
    if d < 1 or not 0 <= node_id < 2 ** d:
        raise ValueError(f"node id {node_id} does not fit in {d} bits")
    return np.array([(node_id >> (d - 1 - i)) & 1 for i in range(d)], dtype=np.float64)


def node_features(n: int, d: int | None = None) -> np.ndarray:
    d = d or max(1, int(np.ceil(np.log2(n))))
    return np.vstack([binary_encode(i, d) for i in range(n)])


@dataclass
class ModelParams:
    W1: np.ndarray
    W2: np.ndarray
    r: np.ndarray
    W_out: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()})

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return cls(**{k: np.zeros_like(v) for k, v in other.arrays().items()})


def init_params(d: int, h: int, o: int, rng: np.random.Generator) -> ModelParams:
    """Uniform(-s, s) init with ``s = 1/sqrt(fan_in)``."""
    def u(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    return ModelParams(W1=u((d, h), d), W2=u((h, h), h), r=u(2 * h, 2 * h),
                       W_out=u((2 * h, o), 2 * h), b=u(o, 2 * h))


def normalize_adjacency(A) -> np.ndarray:
    a = np.asarray(getattr(A, "w", A), dtype=np.float64)
    K = sym(a) + np.eye(a.shape[0])
    s = 1.0 / np.sqrt(K.sum(axis=1))
    return s[:, None] * K * s[None, :]


def gcn_forward(H0, Ahat, params: ModelParams):
    X1 = H0 @ params.W1
    Z1 = Ahat @ X1
    A1 = np.maximum(Z1, 0.0)
    M2 = Ahat @ A1
    Z2 = M2 @ params.W2
    H = np.maximum(Z2, 0.0)
    if not np.all(np.isfinite(H)):
        raise NumericError("non-finite GCN activations")
    return H, {"X1": X1, "Z1": Z1, "A1": A1, "M2": M2, "Z2": Z2}


def path_attention(h_v, path_embeddings, r):
    """Attention of one endpoint over one path; returns (alpha, hhat)."""
    h_v = np.asarray(h_v, dtype=np.float64)
    Zp = np.atleast_2d(np.asarray(path_embeddings, dtype=np.float64))
    hdim = h_v.shape[0]
    pre = r[:hdim] @ h_v + Zp @ r[hdim:]
    e = np.where(pre > 0, pre, LEAKY_SLOPE * pre)
    w = np.exp(e - e.max())
    alpha = w / w.sum()
    return alpha, h_v + np.maximum(alpha @ Zp, 0.0)


def pair_embed(u: int, v: int, H, paths, r):
    """Mean-readout path-centric embeddings (hhat_u, hhat_v) for one pair.

    With no paths both endpoints keep their GCN embedding.
    """
    paths = list(paths)
    if not paths:
        return H[u].copy(), H[v].copy()
    hu = np.mean([path_attention(H[u], H[list(p)], r)[1] for p in paths], axis=0)
    hv = np.mean([path_attention(H[v], H[list(p)], r)[1] for p in paths], axis=0)
    return hu, hv


def predict(u: int, v: int, A, params: "ModelParams", H0, paths, kind,
            scaler: "TargetScaler | None" = None) -> float:
    """Single-pair prediction in raw units (class-1 probability for boolean)."""
    u, v = min(u, v), max(u, v)
    H, _ = gcn_forward(H0, normalize_adjacency(A), params)
    hu, hv = pair_embed(u, v, H, paths, params.r)
    out = np.concatenate([hu, hv]) @ params.W_out + params.b
    return float(head_outputs(out[None, :], kind, scaler or TargetScaler())[0])


@dataclass
class PairBatch:
    """Pairs (canonicalized u < v) with their paths packed as padded tensors."""

    u: np.ndarray
    v: np.ndarray
    nodes: np.ndarray   # (B, P, T) node ids, padded with 0
    mask: np.ndarray    # (B, P, T) true where nodes is real
    valid: np.ndarray   # (B, P) true where the path exists

    @classmethod
    def build(cls, pairs, path_sets: list[PathSet]) -> "PairBatch":
        B = len(pairs)
        P = max([len(ps) for ps in path_sets] + [1])
        T = max([len(p) for ps in path_sets for p in ps] + [1])
        nodes = np.zeros((B, P, T), dtype=np.int64)
        mask = np.zeros((B, P, T), dtype=bool)
        for b, ps in enumerate(path_sets):
            for k, p in enumerate(ps):
                nodes[b, k, : len(p)] = p
                mask[b, k, : len(p)] = True
        u = np.array([min(a, c) for a, c in pairs], dtype=np.int64)
        v = np.array([max(a, c) for a, c in pairs], dtype=np.int64)
        return cls(u=u, v=v, nodes=nodes, mask=mask, valid=mask.any(axis=2))

    def __len__(self):
        return self.u.shape[0]


def _fingerprint(A, params: ModelParams, H0) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(np.ascontiguousarray(A).tobytes())
    h.update(np.ascontiguousarray(H0).tobytes())
    for arr in params.arrays().values():
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class ForwardTrace:
    A: np.ndarray
    H0: np.ndarray
    params: ModelParams
    batch: PairBatch
    Ahat: np.ndarray
    K: np.ndarray
    s: np.ndarray
    gcn: dict
    H: np.ndarray
    sides: list = field(default_factory=list)
    x: np.ndarray | None = None
    out: np.ndarray | None = None
    fingerprint: str = ""


def _side_forward(H, q, batch: PairBatch, r):
    h = H.shape[1]
    Zp = H[batch.nodes]                                    # (B, P, T, h)
    pre = (q @ r[:h])[:, None, None] + Zp @ r[h:]
    e = np.where(pre > 0, pre, LEAKY_SLOPE * pre)
    e = np.where(batch.mask, e, -np.inf)
    top = np.max(e, axis=2, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    w = np.where(batch.mask, np.exp(e - top), 0.0)
    total = w.sum(axis=2, keepdims=True)
    alpha = w / np.where(total > 0, total, 1.0)
    agg = np.einsum("bpt,bpth->bph", alpha, Zp)
    act = np.maximum(agg, 0.0)
    cnt = np.maximum(batch.valid.sum(axis=1), 1).astype(np.float64)
    hhat = q + (act * batch.valid[..., None]).sum(axis=1) / cnt[:, None]
    return hhat, {"q": q, "Zp": Zp, "pre": pre, "alpha": alpha, "agg": agg, "cnt": cnt}


def forward(A, params: ModelParams, H0, batch: PairBatch):
    """Pair logits of shape (B, o) and the trace needed by ``backward``."""
    A = np.asarray(getattr(A, "w", A), dtype=np.float64)
    K = sym(A) + np.eye(A.shape[0])
    s = 1.0 / np.sqrt(K.sum(axis=1))
    Ahat = s[:, None] * K * s[None, :]
    H, cache = gcn_forward(H0, Ahat, params)
    hu, cu = _side_forward(H, H[batch.u], batch, params.r)
    hv, cv = _side_forward(H, H[batch.v], batch, params.r)
    x = np.concatenate([hu, hv], axis=1)
    out = x @ params.W_out + params.b
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite pair logits")
    trace = ForwardTrace(A=A, H0=H0, params=params, batch=batch, Ahat=Ahat, K=K, s=s,
                         gcn=cache, H=H, sides=[(batch.u, cu), (batch.v, cv)], x=x, out=out,
                         fingerprint=_fingerprint(A, params, H0))
    return out, trace


def backward(trace: ForwardTrace, dout: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given ``dL/dout``; keys match ModelParams plus ``A``."""
    if _fingerprint(trace.A, trace.params, trace.H0) != trace.fingerprint:
        raise StaleTraceError("parameters or adjacency changed since the forward pass")
    p, batch = trace.params, trace.batch
    h = p.hidden
    dout = np.asarray(dout, dtype=np.float64).reshape(trace.out.shape)
    grads = {"W_out": trace.x.T @ dout, "b": dout.sum(axis=0)}
    dx = dout @ p.W_out.T
    dH = np.zeros_like(trace.H)
    dr = np.zeros_like(p.r)
    r1, r2 = p.r[:h], p.r[h:]
    flat_nodes = batch.nodes[batch.mask]

    for (idx, c), dhh in zip(trace.sides, (dx[:, :h], dx[:, h:])):
        dq = dhh.copy()
        share = (batch.valid / c["cnt"][:, None])[..., None]
        dagg = dhh[:, None, :] * share * (c["agg"] > 0)
        alpha, Zp = c["alpha"], c["Zp"]
        dalpha = np.einsum("bph,bpth->bpt", dagg, Zp)
        dZp = alpha[..., None] * dagg[:, :, None, :]
        de = alpha * (dalpha - (alpha * dalpha).sum(axis=2, keepdims=True))
        dpre = de * np.where(c["pre"] > 0, 1.0, LEAKY_SLOPE)
        per_pair = dpre.sum(axis=(1, 2))
        dr[:h] += c["q"].T @ per_pair
        dr[h:] += np.einsum("bpt,bpth->h", dpre, Zp)
        dq += per_pair[:, None] * r1[None, :]
        dZp += dpre[..., None] * r2
        np.add.at(dH, idx, dq)
        np.add.at(dH, flat_nodes, dZp[batch.mask])
    grads["r"] = dr

    g = trace.gcn
    Ahat = trace.Ahat
    dZ2 = dH * (g["Z2"] > 0)
    grads["W2"] = g["M2"].T @ dZ2
    dM2 = dZ2 @ p.W2.T
    dAhat = dM2 @ g["A1"].T
    dZ1 = (Ahat.T @ dM2) * (g["Z1"] > 0)
    dAhat += dZ1 @ g["X1"].T
    grads["W1"] = trace.H0.T @ (Ahat.T @ dZ1)

    K, s = trace.K, trace.s
    dK = dAhat * s[:, None] * s[None, :]
    G = dAhat * K
    ds = G @ s + G.T @ s
    dd = ds * (-0.5) * s ** 3
    dK += dd[:, None]
    dA = (dK + dK.T) / 2.0
    np.fill_diagonal(dA, 0.0)
    grads["A"] = dA
    return grads


# -- losses ---------------------------------------------------------------------

def softmax2(out):
    z = out - out.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_gnn(preds, targets, kind) -> float:
    """MSE for regression kinds, mean cross-entropy on probabilities for boolean."""
    kind = MetricKind.parse(kind)
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError("predictions and targets differ in length")
    if kind.is_regression:
        return float(np.mean((preds - targets) ** 2))
    p = np.clip(preds, 1e-15, 1 - 1e-15)
    return float(-np.mean(targets * np.log(p) + (1 - targets) * np.log(1 - p)))


def triangle_bound(y_uz, y_zv, kind):
    """Bound implied by going through an intermediate node."""
    kind = MetricKind.parse(kind)
    if kind is MetricKind.BOOLEAN:
        return np.asarray(y_uz, dtype=float) * np.asarray(y_zv, dtype=float)
    return kind.combine(np.asarray(y_uz, dtype=float), np.asarray(y_zv, dtype=float))


def loss_triangle(yhat_uv, y_uz, y_zv, kind):
    """Hinge ``max(0, yhat (-) bound)``; missing legs (NaN) contribute 0."""
    kind = MetricKind.parse(kind)
    b = triangle_bound(y_uz, y_zv, kind)
    pen = np.maximum(kind.penalty_diff(np.asarray(yhat_uv, dtype=float), b), 0.0)
    pen = np.where(np.isnan(pen), 0.0, pen)
    return float(pen) if np.ndim(pen) == 0 else pen


@dataclass
class TargetScaler:
    """Affine map between raw metric values and the model's output units."""

    shift: float = 0.0
    scale: float = 1.0

    @classmethod
    def fit(cls, y, kind) -> "TargetScaler":
        if not MetricKind.parse(kind).is_regression:
            return cls()
        y = np.asarray(y, dtype=np.float64)
        sd = float(np.std(y))
        return cls(float(np.mean(y)), sd if sd > 0 else 1.0)


def head_outputs(out, kind, scaler: TargetScaler):
    """Raw-unit predictions (probabilities of class 1 for boolean)."""
    if MetricKind.parse(kind).is_regression:
        return out[:, 0] * scaler.scale + scaler.shift
    return softmax2(out)[:, 1]


def batch_loss(out, targets, bounds, kind, gamma: float, scaler: TargetScaler):
    """Return (L_gnn, L_M, dL/dout) for one batch, both terms averaged over pairs.

    ``bounds`` are raw-unit triangle bounds treated as constants; NaN skips a pair.
    Regression losses are measured in scaled units.
    """
    kind = MetricKind.parse(kind)
    B = out.shape[0]
    targets = np.asarray(targets, dtype=np.float64)
    bounds = np.asarray(bounds, dtype=np.float64) if bounds is not None else np.full(B, np.nan)
    dout = np.zeros_like(out)
    if kind.is_regression:
        pred = out[:, 0]
        t = (targets - scaler.shift) / scaler.scale
        resid = pred - t
        l_gnn = float(np.mean(resid ** 2))
        dout[:, 0] = 2.0 * resid / B
        raw = pred * scaler.scale + scaler.shift
        diff = kind.penalty_diff(raw, bounds) / scaler.scale
        active = np.nan_to_num(diff, nan=-1.0) > 0
        l_m = float(np.sum(np.where(active, diff, 0.0)) / B)
        sign = 1.0 if kind.smaller_is_better else -1.0
        dout[:, 0] += gamma * sign * active / B
    else:
        prob = softmax2(out)
        lab = (targets > 0.5).astype(int)
        l_gnn = float(-np.mean(np.log(np.clip(prob[np.arange(B), lab], 1e-300, None))))
        onehot = np.zeros_like(prob)
        onehot[np.arange(B), lab] = 1.0
        dout += (prob - onehot) / B
        p1 = prob[:, 1]
        diff = bounds - p1
        active = np.nan_to_num(diff, nan=-1.0) > 0
        l_m = float(np.sum(np.where(active, diff, 0.0)) / B)
        dp1 = -gamma * active / B
        dout[:, 0] += dp1 * (-p1 * (1 - p1))
        dout[:, 1] += dp1 * (p1 * (1 - p1))
    return l_gnn, l_m, dout


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, H0, A, *, kind, scaler: TargetScaler,
                    meta: dict | None = None, rng_state: dict | None = None) -> None:
    """Write an ``.npz`` container; see README for the layout."""
    header = {"version": CHECKPOINT_VERSION, "kind": MetricKind.parse(kind).value,
              "shift": scaler.shift, "scale": scaler.scale, "meta": meta or {},
              "rng_state": rng_state}
    arrays = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
              "H0": np.asarray(H0), "A": np.asarray(getattr(A, "w", A)),
              **{f"param_{k}": v for k, v in params.arrays().items()}}
    # np.savez stamps entries with the wall clock; a fixed date keeps files byte-identical
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path) -> dict:
    path = Path(path)
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        params = ModelParams(**{f.name: z[f"param_{f.name}"].copy() for f in fields(ModelParams)})
        return {"params": params, "H0": z["H0"].copy(), "A": z["A"].copy(),
                "kind": MetricKind.parse(header["kind"]),
                "scaler": TargetScaler(header["shift"], header["scale"]),
                "meta": header["meta"], "rng_state": header["rng_state"]}
