"""Randomized property suites: the likelihood bound on the exact transport
cost, full-loss gradient checks, and Sinkhorn-vs-exact comparisons."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings import cost_matrix
from .model import backward, encoder_forward, init_encoder, joint_loss, virtual_decoder
from .ot import exact_ot, sinkhorn_batch, sinkhorn_log_domain, SinkhornConfig, transport_plan_from_state
from .seeding import component_rng


@dataclass
class SuiteReport:
    name: str
    trials: int
    passed: bool
    worst: float
    threshold: float
    details: dict = field(default_factory=dict)

    def lines(self):
        status = "PASS" if self.passed else "FAIL"
        out = [f"{self.name}: {status} trials={self.trials} worst={self.worst:.6g} threshold={self.threshold:.6g}"]
        out += [f"  {k} = {v}" for k, v in self.details.items()]
        return out


def _random_simplex(rng, n):
    kind = rng.integers(3)
    if kind == 0:
        return rng.dirichlet(np.ones(n))
    if kind == 1:
        return rng.dirichlet(np.full(n, 0.1))
    # normalized counts of a short document
    x = rng.multinomial(int(rng.integers(1, 30)), rng.dirichlet(np.ones(n))).astype(float)
    return x / x.sum()


def likelihood_bound_margin(x, z, M):
    """``-x^T log phi(z) - d_M(x, z)``; nonnegative whenever V >= 8."""
    phi = virtual_decoder(M, z)[:, 0]
    nll = -float(x @ np.log(phi))
    dist, _ = exact_ot(x, z, M)
    return nll - dist


def bound_suite(trials=1000, seed=0, tol=1e-9):
    rng = component_rng(seed, "verify-bound")
    worst = np.inf
    worst_case = None
    for t in range(trials):
        V = int(rng.integers(8, 51))
        K = int(rng.integers(2, 11))
        M = rng.uniform(0.0, 2.0, size=(V, K))
        x = _random_simplex(rng, V)
        z = rng.dirichlet(np.ones(K) * rng.choice([0.1, 1.0]))
        margin = likelihood_bound_margin(x, z, M)
        if margin < worst:
            worst, worst_case = margin, (t, V, K)
    return SuiteReport(
        "bound", trials, bool(worst >= -tol), float(worst), -tol,
        {"min_slack": f"{worst:.6g}", "worst_trial(t,V,K)": worst_case},
    )


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


GRAD_PARAMS = ("W1", "b1", "bn_gamma", "bn_beta", "W2", "b2", "G")


def _gradcheck_instance(rng, V=10, K=4, B=3, L=5, hidden=16, alpha=20.0, epsilon=0.07, h=1e-5):
    params = init_encoder(V, K, hidden=hidden, seed=int(rng.integers(2**31)), dropout_rate=0.0)
    params.b1 = rng.normal(0, 0.1, hidden)
    params.b2 = rng.normal(0, 0.1, K)
    params.bn_gamma = rng.uniform(0.5, 1.5, hidden)
    params.bn_beta = rng.normal(0, 0.1, hidden)
    params.bn_running_mean = rng.normal(0, 0.1, hidden)
    params.bn_running_var = rng.uniform(0.5, 1.5, hidden)
    E = rng.standard_normal((L, V))
    G = rng.standard_normal((L, K))
    counts = rng.multinomial(20, rng.dirichlet(np.ones(V)), size=B).T.astype(float)
    X = counts / counts.sum(axis=0)
    cfg = SinkhornConfig(alpha=alpha, max_iter=1000, tol=1e-13, unroll_cap=1000)

    def loss_value():
        Z, _ = encoder_forward(X, params, "infer")
        return joint_loss(X, Z, cost_matrix(E, G), epsilon, cfg).total

    Z, cache = encoder_forward(X, params, "infer")
    loss = joint_loss(X, Z, cost_matrix(E, G), epsilon, cfg)
    grads = backward(loss, cache, params, E, G, epsilon)

    errors = {}
    for name in GRAD_PARAMS:
        arr = G if name == "G" else getattr(params, name)
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss_value()
            arr[idx] = old - h
            down = loss_value()
            arr[idx] = old
            fd[idx] = (up - down) / (2 * h)
        errors[name] = relative_error(grads[name], fd)
    return errors


def gradcheck_suite(trials=20, seed=0, threshold=1e-4, **kwargs):
    rng = component_rng(seed, "verify-gradcheck")
    worst = {name: 0.0 for name in GRAD_PARAMS}
    for _ in range(trials):
        for name, err in _gradcheck_instance(rng, **kwargs).items():
            worst[name] = max(worst[name], err)
    overall = max(worst.values())
    return SuiteReport(
        "gradcheck", trials, bool(overall <= threshold), overall, threshold,
        {f"max_rel_err[{k}]": f"{v:.3g}" for k, v in worst.items()},
    )


def oracle_suite(trials=200, seed=0, alphas=(0.05, 0.2, 1.0, 20.0), sharp_alpha=0.01):
    """Sharp log-domain Sinkhorn vs the exact cost, and the lower bound at
    several regularization levels."""
    rng = component_rng(seed, "verify-oracle")
    tight = dict(max_iter=100000, tol=1e-10, unroll_cap=0)
    worst_rel = 0.0
    worst_gap = 0.0
    min_excess = np.inf
    for _ in range(trials):
        m = int(rng.integers(1, 11))
        n = int(rng.integers(1, 11))
        r = _random_simplex(rng, m)
        c = _random_simplex(rng, n)
        M = rng.uniform(0.0, 2.0, size=(m, n))
        exact, _ = exact_ot(r, c, M)
        sharp = sinkhorn_log_domain(r, c, M, SinkhornConfig(alpha=sharp_alpha, **tight), anneal_from=1.0)[0][0]
        worst_gap = max(worst_gap, abs(sharp - exact))
        worst_rel = max(worst_rel, abs(sharp - exact) / (1 + exact))
        min_excess = min(min_excess, sharp - exact)
        for a in alphas:
            if a >= 0.2:
                cost = sinkhorn_batch(r, c, M, SinkhornConfig(alpha=a, **tight))[0][0]
            else:
                cost = sinkhorn_log_domain(r, c, M, SinkhornConfig(alpha=a, **tight), anneal_from=1.0)[0][0]
            min_excess = min(min_excess, cost - exact)
    passed = worst_rel <= 1e-2 and min_excess >= -1e-9
    return SuiteReport(
        "oracle", trials, bool(passed), worst_rel, 1e-2,
        {
            f"max_abs_gap(alpha={sharp_alpha})": f"{worst_gap:.6g}",
            "min(sinkhorn - exact) over all alphas": f"{min_excess:.3g}",
        },
    )


def feasibility_suite(trials=200, seed=0, tol=0.005, alpha_range=(0.1, 50.0)):
    """Marginal violations of reconstructed plans for converged batches,
    with alpha drawn log-uniformly from ``alpha_range`` per batch."""
    rng = component_rng(seed, "verify-feasibility")
    worst = 0.0
    converged = 0
    lo, hi = np.log(alpha_range[0]), np.log(alpha_range[1])
    for _ in range(trials):
        V = int(rng.integers(8, 60))
        K = int(rng.integers(2, 20))
        B = int(rng.integers(1, 8))
        X = np.stack([_random_simplex(rng, V) for _ in range(B)], axis=1)
        Z = rng.dirichlet(np.ones(K), size=B).T
        M = rng.uniform(0.0, 2.0, size=(V, K))
        cfg = SinkhornConfig(alpha=float(np.exp(rng.uniform(lo, hi))), tol=tol)
        _, state = sinkhorn_batch(X, Z, M, cfg)
        if not state.converged:
            continue
        converged += 1
        for b in range(B):
            rows, cols = transport_plan_from_state(state, b).marginal_violation()
            worst = max(worst, rows, cols)
    limit = 10 * tol
    return SuiteReport(
        "feasibility", trials, bool(worst <= limit and converged > 0), worst, limit,
        {"converged_batches": converged, "tol": tol, "alpha_range": alpha_range},
    )


SUITES = {
    "bound": bound_suite,
    "gradcheck": gradcheck_suite,
    "oracle": oracle_suite,
    "feasibility": feasibility_suite,
}
