"""Structure-learning operators: l1 prox, reachability surrogate, PD projection."""

from __future__ import annotations

import numpy as np

from .graph import SccPartition, reachability, sym, z_matrix

SURROGATE_SHARPNESS = 5.0


def soft_threshold(X, lam: float) -> np.ndarray:
    """l1 prox on a non-negative zero-diagonal adjacency.

    Elementwise ``sign(x) max(|x| - lam, 0)``, then the diagonal is zeroed and
    negatives clipped.
    """
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    X = np.asarray(X, dtype=np.float64)
    out = np.sign(X) * np.maximum(np.abs(X) - lam, 0.0)
    if out.ndim == 2:
        np.fill_diagonal(out, 0.0)
    return np.maximum(out, 0.0)


def _walk_matrix(X, walk_cap):
    B = X / (1.0 + X)
    powers = [B]
    for _ in range(walk_cap - 1):
        powers.append(powers[-1] @ B)
    return B, powers, sum(powers)


def reachability_surrogate(A, walk_cap: int = 8, sharpness: float = SURROGATE_SHARPNESS) -> np.ndarray:
    """Smooth path-existence score in [0, 1).

    ``B = A / (1 + A)`` elementwise, ``W = sum_{k=1..walk_cap} B^k`` and the
    score is ``1 - exp(-sharpness * W)``.
    """
    X = np.asarray(getattr(A, "w", A), dtype=np.float64)
    if np.any(X < 0):
        raise ValueError("surrogate needs a non-negative matrix")
    _, _, W = _walk_matrix(X, walk_cap)
    return 1.0 - np.exp(-sharpness * W)


def structure_term(A, M, R_target, walk_cap: int = 8, with_grad: bool = True):
    """``||surrogate(sym(M * A)) - R_target||_F^2`` over off-diagonal entries, and its gradient.

    Self-reachability carries no information about edges, so the diagonal is
    left out of the comparison.
    """
    A = np.asarray(A, dtype=np.float64)
    X = sym(np.asarray(M, dtype=np.float64) * A)
    B, powers, W = _walk_matrix(X, walk_cap)
    E = np.exp(-SURROGATE_SHARPNESS * W)
    diff = (1.0 - E) - R_target
    np.fill_diagonal(diff, 0.0)
    value = float(np.sum(diff ** 2))
    if not with_grad:
        return value, None
    dW = 2.0 * diff * SURROGATE_SHARPNESS * E
    # d/dB of sum_k B^k contracted with dW: sum_k sum_j (B^T)^j dW (B^T)^(k-1-j)
    Bt = [np.eye(X.shape[0])] + [P.T for P in powers[:-1]]
    tails = np.cumsum(np.stack(Bt), axis=0)
    dB = np.zeros_like(X)
    for j in range(walk_cap):
        dB += Bt[j] @ dW @ tails[walk_cap - 1 - j]
    dX = dB / (1.0 + X) ** 2
    grad = np.asarray(M, dtype=np.float64) * sym(dX)
    np.fill_diagonal(grad, 0.0)
    return value, grad


def structure_loss(A, M, A_obs, alpha: float, walk_cap: int = 8) -> float:
    """Reachability mismatch plus ``alpha * ||A||_1`` (bookkeeping value)."""
    R = reachability(A_obs, tau=0.0).astype(np.float64)
    value, _ = structure_term(A, M, R, walk_cap, with_grad=False)
    return value + alpha * float(np.abs(np.asarray(getattr(A, "w", A))).sum())


def _project_block(W, eps):
    n = W.shape[0]
    Z = z_matrix(W)
    lam, V = np.linalg.eigh(sym(Z))
    if lam[0] >= eps:
        return W
    Zc = (V * np.maximum(lam, eps)) @ V.T
    out = np.maximum(1.0 / n - Zc, 0.0)
    out = sym(out)
    np.fill_diagonal(out, 0.0)
    return out


def connectivity_projection(A, components: SccPartition | None = None, eps: float = 1e-3) -> np.ndarray:
    """Make ``Z(A)`` at least ``eps``-definite globally and on every component.

    Eigenvalues of ``Z`` below ``eps`` are raised to ``eps`` and the edge
    weights are read back from the off-diagonals, ``A_ij = max(0, 1/n - Z_ij)``.
    Inputs that already satisfy the bound are returned unchanged.
    """
    A = np.asarray(getattr(A, "w", A), dtype=np.float64)
    try:
        out = _project_block(A, eps)
        n = A.shape[0]
        for comp in (components.components if components else []):
            if 1 < len(comp) < n:
                idx = np.asarray(comp)
                out = out.copy() if out is A else out
                out[np.ix_(idx, idx)] = _project_block(out[np.ix_(idx, idx)], eps)
        if out is not A and np.linalg.eigvalsh(sym(z_matrix(out)))[0] < eps / 2:
            out = _project_block(out, eps)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"eigensolver failed: {exc}") from exc
    return out
