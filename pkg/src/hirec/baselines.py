"""Topology-only node-removal baselines: degree, NetShield, NetShield+, eigen-drop.

All selectors take a 0/1 adjacency of whatever the caller knows, with removed
nodes already zeroed (or passed via ``removed``), and return distinct active
node ids. Ties break toward the lower id.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

TIE_TOL = 1e-9


class NotConverged(RuntimeError):
    pass


@dataclass
class SpectralCache:
    eigenvalue: float
    eigenvector: np.ndarray
    iterations: int
    residual: float
    converged: bool


def _argmax_low_id(scores: np.ndarray, allowed: np.ndarray, tol: float = TIE_TOL) -> int:
    masked = np.where(allowed, scores, -np.inf)
    best = masked.max()
    return int(np.flatnonzero(allowed & (masked >= best - tol))[0])


def power_iteration(A, tol=1e-10, max_iter=10_000, seed=0, start=None) -> SpectralCache:
    """Leading eigenpair of a nonnegative symmetric matrix.

    Iterates on ``A + I`` so that bipartite graphs (eigenvalues ``+-lambda``)
    still converge to the Perron pair. Stops once ``||A u - lambda u|| < tol``.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if n == 0 or not A.any():
        u = np.full(n, 1.0 / np.sqrt(max(n, 1)))
        return SpectralCache(0.0, u, 0, 0.0, True)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.5, 1.0, size=n)
    if start is not None:
        x = np.abs(start) + 1e-3 * x
    x /= np.linalg.norm(x)
    lam, res = 0.0, np.inf
    for it in range(1, max_iter + 1):
        y = A @ x
        lam = float(x @ y)
        res = float(np.linalg.norm(y - lam * x))
        if res < tol:
            return SpectralCache(lam, x, it, res, True)
        x = y + x
        x /= np.linalg.norm(x)
    return SpectralCache(lam, x, max_iter, res, False)


def degree_select(adj, removed, m: int) -> list[int]:
    """The ``m`` highest-degree active nodes."""
    if m < 1:
        raise ValueError("m must be >= 1")
    adj = np.asarray(adj, dtype=np.float64)
    removed = np.asarray(removed, dtype=bool)
    active = ~removed
    if active.sum() < m:
        raise ValueError(f"only {int(active.sum())} active nodes, asked for {m}")
    live = adj * active[:, None] * active[None, :]
    deg = live.sum(axis=1)
    order = sorted(np.flatnonzero(active), key=lambda i: (-deg[i], i))
    return [int(i) for i in order[:m]]


def shield_value(A, u, lam, S) -> float:
    """Direct evaluation of ``sum_i 2 lam u_i^2 - sum_{i,j in S} A_ij u_i u_j``."""
    S = list(S)
    u = np.asarray(u)
    sub = np.asarray(A)[np.ix_(S, S)]
    return float(2 * lam * np.sum(u[S] ** 2) - u[S] @ sub @ u[S])


def _masked(adj, removed):
    adj = np.asarray(adj, dtype=np.float64)
    if removed is None:
        return adj, np.zeros(adj.shape[0], dtype=bool)
    active = ~np.asarray(removed, dtype=bool)
    return adj * active[:, None] * active[None, :], ~active


def netshield_select(adj, m: int, removed=None, seed=0, return_scores=False):
    """Greedy shield-value maximization, one node per round."""
    A, gone = _masked(adj, removed)
    n = A.shape[0]
    if (~gone).sum() < m:
        raise ValueError(f"only {int((~gone).sum())} active nodes, asked for {m}")
    spec = power_iteration(A, seed=seed)
    if not spec.converged:
        log.warning("power iteration did not converge; falling back to degree selection")
        picks = degree_select(A, gone, m)
        return (picks, []) if return_scores else picks
    u = spec.eigenvector
    if u.sum() < 0:
        u = -u
    lam = spec.eigenvalue
    v = (2 * lam - np.diag(A)) * u ** 2
    chosen: list[int] = []
    sv_running = []
    total = 0.0
    allowed = ~gone.copy()
    for _ in range(m):
        b = A[:, chosen] @ u[chosen] if chosen else np.zeros(n)
        gain = v - 2 * b * u
        k = _argmax_low_id(gain, allowed)
        total += float(gain[k])
        chosen.append(k)
        sv_running.append(total)
        allowed[k] = False
    if return_scores:
        return chosen, sv_running
    return chosen


def netshield_plus_select(adj, m: int, batch: int = 2, removed=None, seed=0) -> list[int]:
    """NetShield in batches of ``batch`` with the spectrum recomputed between batches."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    A, gone = _masked(adj, removed)
    gone = gone.copy()
    chosen: list[int] = []
    while len(chosen) < m:
        take = min(batch, m - len(chosen))
        picks = netshield_select(A, take, removed=gone, seed=seed)
        chosen.extend(picks)
        gone[picks] = True
    return chosen


def eigenvalue_after_removals(A, candidates, removed, tol=1e-10, max_iter=10_000, seed=0, start=None):
    """Leading eigenvalue of ``A`` with each candidate deleted, for all candidates at once.

    Runs one shifted power iteration per candidate in a single batched loop.
    Returns ``(eigenvalues, converged)`` arrays aligned with ``candidates``.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    cands = np.asarray(candidates, dtype=np.int64)
    c = len(cands)
    mask = np.tile(~np.asarray(removed, dtype=bool), (c, 1)).astype(np.float64)
    mask[np.arange(c), cands] = 0.0
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.5, 1.0, size=n)
    if start is not None:
        base = np.abs(start) + 1e-3 * base
    X = base[None, :] * mask
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    X /= norms
    lam = np.zeros(c)
    done = np.zeros(c, dtype=bool)
    edgeless = (((mask @ A) * mask).sum(axis=1) == 0)
    done |= edgeless
    for _ in range(max_iter):
        todo = np.flatnonzero(~done)
        if todo.size == 0:
            break
        Xt = X[todo]
        Mt = mask[todo]
        Y = (Xt @ A) * Mt
        lt = np.einsum("ij,ij->i", Xt, Y)
        res = np.linalg.norm(Y - lt[:, None] * Xt, axis=1)
        lam[todo] = lt
        fin = res < tol
        done[todo[fin]] = True
        Z = Y + Xt
        Z /= np.linalg.norm(Z, axis=1, keepdims=True)
        X[todo] = Z
    return lam, done


def eigendrop_select(adj, m: int, removed=None, seed=0) -> list[int]:
    """Greedily delete the node whose removal leaves the smallest leading eigenvalue."""
    A, gone = _masked(adj, removed)
    gone = gone.copy()
    if (~gone).sum() < m:
        raise ValueError(f"only {int((~gone).sum())} active nodes, asked for {m}")
    chosen: list[int] = []
    for _ in range(m):
        cands = np.flatnonzero(~gone)
        Ak = A * (~gone)[:, None] * (~gone)[None, :]
        parent = power_iteration(Ak, seed=seed)
        lam, ok = eigenvalue_after_removals(Ak, cands, gone, seed=seed, start=parent.eigenvector)
        if not ok.all():
            log.warning("power iteration did not converge; falling back to degree selection")
            picks = degree_select(Ak, gone, m - len(chosen))
            return chosen + picks
        scores = np.full(A.shape[0], np.inf)
        scores[cands] = lam
        allowed = ~gone
        k = _argmax_low_id(-scores, allowed)
        chosen.append(k)
        gone[k] = True
    return chosen


SELECTORS = {
    "degree": lambda adj, removed, m: degree_select(adj, removed, m),
    "netshield": lambda adj, removed, m: netshield_select(adj, m, removed=removed),
    "netshield_plus": lambda adj, removed, m: netshield_plus_select(adj, m, removed=removed),
    "eigendrop": lambda adj, removed, m: eigendrop_select(adj, m, removed=removed),
}
