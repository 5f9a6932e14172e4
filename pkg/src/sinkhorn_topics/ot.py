"""Discrete optimal transport: an exact transportation-simplex solver and
batched Sinkhorn scaling iterations with reverse-mode gradients.

The Sinkhorn routines follow the kernel form used for training: with
``H = exp(-M / alpha)`` the scaling matrices are updated as::

    Psi2 = X / (H @ Psi1)
    Psi1 = Z / (H.T @ Psi2)

and the plan for document ``b`` is ``diag(Psi2[:, b]) H diag(Psi1[:, b])``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class NumericalError(ArithmeticError):
    """Raised when an iteration produces values that cannot be represented."""


@dataclass(frozen=True)
class SinkhornConfig:
    alpha: float = 20.0
    max_iter: int = 1000
    tol: float = 0.005
    unroll_cap: int = 50

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.unroll_cap < 0:
            raise ValueError(f"unroll_cap must be >= 0, got {self.unroll_cap}")


@dataclass
class TransportPlan:
    P: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def marginal_violation(self):
        """L1 violations of the row and column constraints."""
        rows = np.abs(self.P.sum(axis=1) - self.row_marginal).sum()
        cols = np.abs(self.P.sum(axis=0) - self.col_marginal).sum()
        return float(rows), float(cols)


@dataclass
class SinkhornState:
    """Fixed-point data of one batched Sinkhorn run.

    ``history`` holds ``(psi1_prev, psi2)`` for the last ``unroll_cap``
    iterations, oldest first; it is what :func:`sinkhorn_backward` replays.
    """

    Psi1: np.ndarray
    Psi2: np.ndarray
    H: np.ndarray
    iterations_used: int
    converged: bool
    alpha: float
    tol: float
    Xnorm: np.ndarray
    Z: np.ndarray
    M: np.ndarray
    history: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# exact solver
# ---------------------------------------------------------------------------


def _northwest_corner(r, c):
    m, n = len(r), len(c)
    a, b = r.copy(), c.copy()
    X = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        q = min(a[i], b[j])
        X[i, j] = q
        basis.append((i, j))
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            b[j] = 0.0
            a[i] -= q
            j += 1
        elif j == n - 1:
            a[i] = 0.0
            b[j] -= q
            i += 1
        elif a[i] <= b[j]:
            b[j] -= q
            a[i] = 0.0
            i += 1
        else:
            a[i] -= q
            b[j] = 0.0
            j += 1
    return X, basis


def _potentials(M, basis, m, n):
    # Node ids: rows 0..m-1, columns m..m+n-1. The basis is a spanning tree.
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nxt in adj[node]:
            if np.isnan(pot[nxt]):
                i, j = (node, nxt - m) if node < m else (nxt, node - m)
                # u_i + v_j = M_ij
                pot[nxt] = M[i, j] - pot[node]
                queue.append(nxt)
    return pot[:m], pot[m:], adj


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt in adj[node]:
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def exact_ot(r, c, M, *, tol=1e-9, max_pivots=None):
    """Solve ``min <P, M>`` over the transport polytope of ``r`` and ``c``.

    Transportation simplex: a northwest-corner basis improved by pivoting
    on the most negative reduced cost (first negative one after a
    degenerate pivot, to avoid stalling).

    Parameters
    ----------
    r : array-like, shape (m,)
        Source weights, nonnegative.
    c : array-like, shape (n,)
        Target weights, nonnegative, same total mass as ``r``.
    M : array-like, shape (m, n)
        Finite cost matrix.

    Returns
    -------
    distance : float
    plan : TransportPlan
        An optimal vertex of the polytope.
    """
    r = np.asarray(r, dtype=float)
    c = np.asarray(c, dtype=float)
    M = np.asarray(M, dtype=float)
    if r.ndim != 1 or c.ndim != 1 or M.shape != (r.size, c.size):
        raise ValueError(f"shape mismatch: r {r.shape}, c {c.shape}, M {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("cost matrix must be finite")
    if np.any(r < 0) or np.any(c < 0):
        raise ValueError("marginals must be nonnegative")
    if abs(r.sum() - c.sum()) > tol:
        raise ValueError(
            f"infeasible marginals: row mass {r.sum():.12g} != column mass {c.sum():.12g}"
        )
    c = c * (r.sum() / c.sum()) if c.sum() > 0 else c

    m, n = M.shape
    X, basis = _northwest_corner(r, c)
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True

    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if max_pivots is None:
        max_pivots = 50 * (m + n) * max(m, n) + 1000
    degenerate = False
    for _ in range(max_pivots):
        u, v, adj = _potentials(M, basis, m, n)
        reduced = M - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        negative = reduced < -1e-12 * scale
        if not negative.any():
            break
        if degenerate:
            flat = int(np.flatnonzero(negative)[0])
        else:
            flat = int(np.argmin(reduced))
        ei, ej = divmod(flat, n)

        path = _tree_path(adj, ei, m + ej)
        cells = []
        for a, b in zip(path[:-1], path[1:]):
            cells.append((a, b - m) if a < m else (b, a - m))
        # Walking back from column ej, signs alternate starting with minus.
        minus = cells[::-1][0::2]
        plus = cells[::-1][1::2]
        theta_idx = min(range(len(minus)), key=lambda t: (X[minus[t]], t))
        theta = X[minus[theta_idx]]
        for cell in minus:
            X[cell] -= theta
        for cell in plus:
            X[cell] += theta
        X[ei, ej] = theta
        leave = minus[theta_idx]
        X[leave] = 0.0
        basis.remove(leave)
        in_basis[leave] = False
        basis.append((ei, ej))
        in_basis[ei, ej] = True
        degenerate = theta <= 1e-15
    else:
        raise NumericalError(f"transportation simplex did not terminate in {max_pivots} pivots")

    np.maximum(X, 0.0, out=X)
    plan = TransportPlan(P=X, row_marginal=r, col_marginal=c)
    return float(np.sum(X * M)), plan


# ---------------------------------------------------------------------------
# Sinkhorn iterations
# ---------------------------------------------------------------------------


def _check_batch(Xnorm, Z, M):
    Xnorm = np.asarray(Xnorm, dtype=float)
    Z = np.asarray(Z, dtype=float)
    M = np.asarray(M, dtype=float)
    if Xnorm.ndim == 1:
        Xnorm = Xnorm[:, None]
    if Z.ndim == 1:
        Z = Z[:, None]
    V, B = Xnorm.shape
    if M.shape[0] != V or Z.shape != (M.shape[1], B):
        raise ValueError(f"shape mismatch: Xnorm {Xnorm.shape}, Z {Z.shape}, M {M.shape}")
    for name, A in (("Xnorm", Xnorm), ("Z", Z)):
        if np.any(A < 0) or np.any(np.abs(A.sum(axis=0) - 1.0) > 1e-6):
            raise ValueError(f"columns of {name} must lie on the simplex")
    return Xnorm, Z, M


def _relative_change(new, old):
    mask = old > 0
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(new[mask] - old[mask]) / old[mask]))


def _scale(H, Xnorm, Z, xpos, zpos, psi1, psi2, history, cfg):
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        prev = psi1
        u = H @ psi1
        if np.any(u[xpos] <= 0):
            raise NumericalError(
                "kernel underflow in Sinkhorn iterations; use sinkhorn_log_domain for small alpha"
            )
        psi2 = np.divide(Xnorm, u, out=np.zeros_like(Xnorm), where=xpos)
        w = H.T @ psi2
        if np.any(w[zpos] <= 0):
            raise NumericalError(
                "kernel underflow in Sinkhorn iterations; use sinkhorn_log_domain for small alpha"
            )
        psi1 = np.divide(Z, w, out=np.zeros_like(Z), where=zpos)
        if not (np.all(np.isfinite(psi1)) and np.all(np.isfinite(psi2))):
            raise NumericalError(
                "non-finite Sinkhorn scaling; use sinkhorn_log_domain for small alpha"
            )
        if history is not None:
            history.append((prev, psi2))
        if _relative_change(psi1, prev) < cfg.tol:
            converged = True
            break
    return it, converged, psi1, psi2


def sinkhorn_batch(Xnorm, Z, M, cfg=SinkhornConfig()):
    """Batched Sinkhorn distances between word and topic distributions.

    Parameters
    ----------
    Xnorm : ndarray, shape (V, B)
        Column-normalized word distributions.
    Z : ndarray, shape (K, B)
        Topic distributions.
    M : ndarray, shape (V, K)
        Cost matrix.
    cfg : SinkhornConfig

    Returns
    -------
    cost : ndarray, shape (B,)
        Per-document transport cost ``psi2_b^T (H * M) psi1_b``.
    state : SinkhornState
    """
    Xnorm, Z, M = _check_batch(Xnorm, Z, M)
    V, B = Xnorm.shape
    K = M.shape[1]
    H = np.exp(-M / cfg.alpha)
    psi1 = np.full((K, B), 1.0 / K)
    psi2 = np.full((V, B), 1.0 / V)
    xpos = Xnorm > 0
    zpos = Z > 0
    history = deque(maxlen=cfg.unroll_cap) if cfg.unroll_cap else None
    try:
        with np.errstate(over="raise", invalid="raise"):
            it, converged, psi1, psi2 = _scale(H, Xnorm, Z, xpos, zpos, psi1, psi2, history, cfg)
    except FloatingPointError as exc:
        raise NumericalError(f"{exc} in Sinkhorn iterations; use sinkhorn_log_domain for small alpha") from None

    cost = np.einsum("vb,vk,kb->b", psi2, H * M, psi1)
    state = SinkhornState(
        Psi1=psi1, Psi2=psi2, H=H, iterations_used=it, converged=converged,
        alpha=cfg.alpha, tol=cfg.tol, Xnorm=Xnorm, Z=Z, M=M,
        history=list(history) if history is not None else [],
    )
    return cost, state


def _lse_rows(A):
    m = A.max(axis=1)
    return m + np.log(np.exp(A - m[:, None]).sum(axis=1))


def _log_sinkhorn_single(logx, logz, M, alpha, cfg, g0):
    # One document restricted to its support; returns (cost, f, g).
    g = g0
    for a in alpha:
        logH = -M / a
        lpsi1 = g / a
        for _ in range(cfg.max_iter):
            lpsi2 = logx - _lse_rows(logH + lpsi1[None, :])
            new = logz - _lse_rows(logH.T + lpsi2[None, :])
            change = np.max(np.abs(np.expm1(new - lpsi1)))
            lpsi1 = new
            if change < cfg.tol:
                break
        g = a * lpsi1
    P = np.exp(lpsi2[:, None] + logH + lpsi1[None, :])
    return float(np.sum(P * M)), alpha[-1] * lpsi2, alpha[-1] * lpsi1


def sinkhorn_log_domain(Xnorm, Z, M, cfg=SinkhornConfig(), anneal_from=None):
    """Same fixed point as :func:`sinkhorn_batch`, iterated on log scalings.

    Stable for very small ``alpha`` where ``exp(-M / alpha)`` underflows.
    With ``anneal_from`` set, the iterations first run at temperatures
    halving from ``anneal_from`` down to ``cfg.alpha``, each stage warm
    started from the previous dual potentials; this only changes how fast
    the fixed point is reached.

    Returns
    -------
    cost : ndarray, shape (B,)
    potentials : tuple of ndarray
        ``(f, g)`` with ``f = alpha * log Psi2`` (V x B) and
        ``g = alpha * log Psi1`` (K x B); ``-inf`` marks zero-mass entries.
    """
    Xnorm, Z, M = _check_batch(Xnorm, Z, M)
    V, B = Xnorm.shape
    K = M.shape[1]
    schedule = [cfg.alpha]
    if anneal_from is not None:
        a = float(anneal_from)
        while a > cfg.alpha:
            schedule.insert(-1, a)
            a /= 2.0

    cost = np.empty(B)
    f = np.full((V, B), -np.inf)
    g = np.full((K, B), -np.inf)
    for b in range(B):
        # Zero-mass words and topics carry no transport; drop them.
        rows = np.flatnonzero(Xnorm[:, b] > 0)
        cols = np.flatnonzero(Z[:, b] > 0)
        g0 = np.full(cols.size, -np.log(K) * schedule[0])
        cost[b], f[rows, b], g[cols, b] = _log_sinkhorn_single(
            np.log(Xnorm[rows, b]), np.log(Z[cols, b]), M[np.ix_(rows, cols)], schedule, cfg, g0,
        )
    return cost, (f, g)


def transport_plan_from_state(state, doc_index):
    """Reconstruct ``diag(psi2) H diag(psi1)`` for one document of a batch."""
    if not state.converged:
        raise ValueError("Sinkhorn state did not converge; plan is not on the fixed point")
    B = state.Psi1.shape[1]
    if not 0 <= doc_index < B:
        raise IndexError(f"doc_index {doc_index} out of range for batch of {B}")
    b = doc_index
    P = state.Psi2[:, b, None] * state.H * state.Psi1[None, :, b]
    return TransportPlan(P=P, row_marginal=state.Xnorm[:, b].copy(), col_marginal=state.Z[:, b].copy())


def sinkhorn_backward(state, upstream):
    """Gradients of the per-document costs with respect to ``Z`` and ``M``.

    Reverse mode through the retained iterations; iterations older than
    the retained window are treated as a constant initialization.

    Parameters
    ----------
    state : SinkhornState
        From :func:`sinkhorn_batch` run with ``unroll_cap >= 1``.
    upstream : ndarray, shape (B,)
        ``d loss / d cost``.

    Returns
    -------
    grad_Z : ndarray, shape (K, B)
    grad_M : ndarray, shape (V, K)
    """
    if not state.history:
        raise ValueError("no iterate history retained; rerun sinkhorn_batch with unroll_cap >= 1")
    g = np.asarray(upstream, dtype=float).reshape(-1)
    H, M, Z, alpha = state.H, state.M, state.Z, state.alpha
    psi1, psi2 = state.Psi1, state.Psi2
    if g.shape != (psi1.shape[1],):
        raise ValueError(f"upstream must have shape ({psi1.shape[1]},), got {g.shape}")

    C = H * M
    grad_C = (psi2 * g) @ psi1.T
    g_psi2 = (C @ psi1) * g
    g_psi1 = (C.T @ psi2) * g
    grad_H = np.zeros_like(H)
    grad_Z = np.zeros_like(Z)

    zpos = Z > 0
    for t in range(len(state.history) - 1, -1, -1):
        prev, psi2_t = state.history[t]
        psi1_t = state.history[t + 1][0] if t + 1 < len(state.history) else psi1
        u = H @ prev
        w = H.T @ psi2_t
        # psi1_t = Z / w
        inv_w = np.divide(1.0, w, out=np.zeros_like(w), where=zpos)
        grad_Z += g_psi1 * inv_w
        g_w = -g_psi1 * psi1_t * inv_w
        # w = H.T @ psi2_t
        grad_H += psi2_t @ g_w.T
        g_psi2 = g_psi2 + H @ g_w
        # psi2_t = X / u ; X is data
        ratio = np.divide(psi2_t, u, out=np.zeros_like(psi2_t), where=psi2_t > 0)
        g_u = -g_psi2 * ratio
        # u = H @ prev
        grad_H += g_u @ prev.T
        g_psi1 = H.T @ g_u
        g_psi2 = np.zeros_like(g_psi2)

    # H = exp(-M / alpha), C = H * M
    grad_M = grad_C * H * (1.0 - M / alpha) - grad_H * H / alpha
    return grad_Z, grad_M
