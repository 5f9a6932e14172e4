import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from sinkhorn_topics.ot import (
    NumericalError, SinkhornConfig, exact_ot, sinkhorn_backward, sinkhorn_batch,
    sinkhorn_log_domain, transport_plan_from_state,
)

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])
TIGHT = dict(max_iter=100000, tol=1e-12, unroll_cap=0)


def lp_distance(r, c, M):
    """Independent oracle: the transport LP solved by HiGHS."""
    m, n = M.shape
    A_eq = np.vstack([np.kron(np.eye(m), np.ones(n)), np.kron(np.ones(m), np.eye(n))])
    res = linprog(M.ravel(), A_eq=A_eq, b_eq=np.concatenate([r, c]), bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0
    return res.fun


def two_row_vertex_min(r, c, M):
    """Independent oracle for 2 x n: the first row p of a plan satisfies
    0 <= p <= c, sum(p) = r[0]; vertices have at most one coordinate
    strictly between its bounds."""
    n = c.size
    best = np.inf
    for free in range(n):
        others = [j for j in range(n) if j != free]
        for bits in itertools.product([0, 1], repeat=n - 1):
            p = np.zeros(n)
            p[others] = np.array(bits) * c[others]
            p[free] = r[0] - p[others].sum()
            if -1e-12 <= p[free] <= c[free] + 1e-12:
                P = np.vstack([p, c - p])
                best = min(best, float(np.sum(P * M)))
    return best


@st.composite
def ot_instance(draw):
    m = draw(st.integers(1, 7))
    n = draw(st.integers(1, 7))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    r = rng.dirichlet(np.full(m, draw(st.sampled_from([0.1, 1.0]))))
    c = rng.dirichlet(np.full(n, draw(st.sampled_from([0.1, 1.0]))))
    return r, c, rng.uniform(0, 2, size=(m, n))


class TestExactOT:
    def test_identity_transport(self):
        r = np.array([0.2, 0.5, 0.3])
        M = 1.0 - np.eye(3)
        d, P = exact_ot(r, r, M)
        assert d == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(P.P, np.diag(r), atol=1e-15)

    def test_point_masses(self):
        d, P = exact_ot(np.array([1.0, 0.0]), np.array([0.0, 1.0]), SWAP)
        assert d == pytest.approx(1.0)
        np.testing.assert_allclose(P.P, [[0, 1], [0, 0]], atol=1e-15)

    def test_two_by_two_vertex(self):
        # Plans in U(r, c) are [[t, 0.7-t], [0.4-t, t-0.1]] for t in [0.1, 0.4];
        # cost 1.0 - 2t is minimal at t = 0.4.
        d, P = exact_ot(np.array([0.7, 0.3]), np.array([0.4, 0.6]), SWAP)
        assert d == pytest.approx(0.3, abs=1e-12)
        np.testing.assert_allclose(P.P, [[0.4, 0.3], [0.0, 0.3]], atol=1e-12)

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ValueError):
            exact_ot(np.ones(2) / 2, np.ones(3) / 3, np.zeros((3, 2)))

    def test_rejects_negative_mass(self):
        with pytest.raises(ValueError):
            exact_ot(np.array([1.2, -0.2]), np.array([0.5, 0.5]), SWAP)

    @settings(max_examples=60, deadline=None)
    @given(ot_instance())
    def test_matches_linear_program(self, inst):
        r, c, M = inst
        d, plan = exact_ot(r, c, M)
        assert d == pytest.approx(lp_distance(r, c, M), abs=1e-9)
        assert np.all(plan.P >= -1e-15)
        rows, cols = plan.marginal_violation()
        assert rows < 1e-12 and cols < 1e-12
        assert d == pytest.approx(float(np.sum(plan.P * M)), abs=1e-12)

    @pytest.mark.parametrize("n", [2, 3])
    def test_matches_vertex_enumeration(self, n):
        rng = np.random.default_rng(n)
        for _ in range(50):
            r, c = rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(n))
            M = rng.uniform(0, 2, (2, n))
            assert exact_ot(r, c, M)[0] == pytest.approx(two_row_vertex_min(r, c, M), abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(ot_instance())
    def test_symmetric_under_transpose(self, inst):
        r, c, M = inst
        assert exact_ot(r, c, M)[0] == pytest.approx(exact_ot(c, r, M.T)[0], abs=1e-10)


class TestSinkhornBatch:
    def test_sharp_identity_is_near_zero(self):
        x = np.array([0.1, 0.4, 0.2, 0.3])
        cost, _ = sinkhorn_log_domain(x, x, 1.0 - np.eye(4), SinkhornConfig(alpha=0.01, **TIGHT))
        assert cost[0] < 1e-3

    @pytest.mark.parametrize("c0", [0.0, 0.37, 1.5])
    def test_constant_cost(self, c0):
        rng = np.random.default_rng(1)
        X = rng.dirichlet(np.ones(6), size=3).T
        Z = rng.dirichlet(np.ones(4), size=3).T
        cost, state = sinkhorn_batch(X, Z, np.full((6, 4), c0), SinkhornConfig(alpha=1.0))
        np.testing.assert_allclose(cost, c0, atol=1e-12)
        assert state.converged

    def test_two_by_two_sharp(self):
        cost, _ = sinkhorn_log_domain(
            np.array([0.7, 0.3]), np.array([0.4, 0.6]), SWAP, SinkhornConfig(alpha=0.01, **TIGHT)
        )
        assert abs(cost[0] - 0.3) < 1e-2

    def test_cost_is_per_document(self):
        rng = np.random.default_rng(2)
        X = rng.dirichlet(np.ones(7), size=4).T
        Z = rng.dirichlet(np.ones(3), size=4).T
        M = rng.uniform(0, 2, (7, 3))
        cfg = SinkhornConfig(alpha=5.0, tol=1e-12, max_iter=10000)
        batch, _ = sinkhorn_batch(X, Z, M, cfg)
        single = [sinkhorn_batch(X[:, b], Z[:, b], M, cfg)[0][0] for b in range(4)]
        np.testing.assert_allclose(batch, single, rtol=1e-10)

    def test_max_iter_reports_not_converged(self):
        rng = np.random.default_rng(3)
        X = rng.dirichlet(np.ones(9), size=2).T
        Z = rng.dirichlet(np.ones(3), size=2).T
        _, state = sinkhorn_batch(X, Z, rng.uniform(0, 2, (9, 3)), SinkhornConfig(alpha=0.2, max_iter=2, tol=1e-12))
        assert not state.converged
        assert state.iterations_used == 2
        with pytest.raises(ValueError):
            transport_plan_from_state(state, 0)

    def test_underflow_raises_numerical_error(self):
        M = np.full((3, 2), 2.0)
        M[0, 0] = 0.0
        with pytest.raises(NumericalError, match="sinkhorn_log_domain"):
            sinkhorn_batch(np.array([0.0, 0.5, 0.5]), np.array([0.5, 0.5]), M, SinkhornConfig(alpha=0.001))

    def test_rejects_non_simplex(self):
        with pytest.raises(ValueError):
            sinkhorn_batch(np.array([0.5, 0.6]), np.array([1.0]), np.zeros((2, 1)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SinkhornConfig(alpha=0.0)
        with pytest.raises(ValueError):
            SinkhornConfig(max_iter=0)

    @settings(max_examples=40, deadline=None)
    @given(ot_instance(), st.sampled_from([0.5, 2.0, 20.0]))
    def test_never_below_exact(self, inst, alpha):
        r, c, M = inst
        cost = sinkhorn_batch(r, c, M, SinkhornConfig(alpha=alpha, **TIGHT))[0][0]
        assert cost >= exact_ot(r, c, M)[0] - 1e-9


    def test_topic_permutation_invariance(self):
        rng = np.random.default_rng(12)
        X = rng.dirichlet(np.ones(6), size=3).T
        Z = rng.dirichlet(np.ones(4), size=3).T
        M = rng.uniform(0, 2, (6, 4))
        perm = rng.permutation(4)
        cfg = SinkhornConfig(alpha=1.0, tol=1e-12, max_iter=10000)
        np.testing.assert_allclose(sinkhorn_batch(X, Z[perm], M[:, perm], cfg)[0],
                                   sinkhorn_batch(X, Z, M, cfg)[0], rtol=1e-12)

    def test_bit_identical_repeats(self):
        rng = np.random.default_rng(13)
        X = rng.dirichlet(np.ones(6), size=3).T
        Z = rng.dirichlet(np.ones(4), size=3).T
        M = rng.uniform(0, 2, (6, 4))
        assert sinkhorn_batch(X, Z, M)[0].tobytes() == sinkhorn_batch(X, Z, M)[0].tobytes()


class TestLogDomain:
    def test_agrees_with_plain_iterations(self):
        rng = np.random.default_rng(4)
        X = rng.dirichlet(np.ones(12), size=3).T
        Z = rng.dirichlet(np.ones(5), size=3).T
        M = rng.uniform(0, 2, (12, 5))
        cfg = SinkhornConfig(alpha=20.0, tol=1e-12, max_iter=10000)
        np.testing.assert_allclose(sinkhorn_log_domain(X, Z, M, cfg)[0], sinkhorn_batch(X, Z, M, cfg)[0], rtol=1e-6)

    def test_finite_where_kernel_underflows(self):
        rng = np.random.default_rng(5)
        M = rng.uniform(0, 2, (6, 3))
        x = rng.dirichlet(np.ones(6))
        z = rng.dirichlet(np.ones(3))
        # e^(-2/0.005) is still a normal double; the kernel only vanishes below ~e^(-745).
        assert np.exp(-2.0 / 0.001) == 0.0
        cost, (f, g) = sinkhorn_log_domain(x, z, M, SinkhornConfig(alpha=0.001, max_iter=100000, tol=1e-9), anneal_from=1.0)
        assert np.isfinite(cost[0])
        assert cost[0] == pytest.approx(exact_ot(x, z, M)[0], abs=0.05)

    def test_constant_cost(self):
        X = np.array([[0.5], [0.25], [0.25]])
        Z = np.array([[0.1], [0.9]])
        cost, _ = sinkhorn_log_domain(X, Z, np.full((3, 2), 0.8), SinkhornConfig(alpha=0.01))
        np.testing.assert_allclose(cost, 0.8, atol=1e-12)

    def test_zero_mass_entries_are_minus_infinity(self):
        _, (f, g) = sinkhorn_log_domain(np.array([0.0, 1.0]), np.array([0.5, 0.5]), SWAP)
        assert f[0][0] == -np.inf


class TestTransportPlan:
    def _state(self, alpha, seed=6):
        rng = np.random.default_rng(seed)
        X = rng.dirichlet(np.ones(8), size=3).T
        Z = rng.dirichlet(np.ones(4), size=3).T
        return sinkhorn_batch(X, Z, rng.uniform(0, 2, (8, 4)), SinkhornConfig(alpha=alpha))[1]

    def test_aligned_point_masses_concentrate(self):
        x = np.array([0.0, 1.0, 0.0])
        z = np.array([0.0, 1.0, 0.0])
        M = 1.0 - np.eye(3)
        _, state = sinkhorn_batch(x, z, M, SinkhornConfig(alpha=0.01))
        P = transport_plan_from_state(state, 0).P
        assert P.max() >= 1 - 1e-3
        assert np.unravel_index(P.argmax(), P.shape) == (1, 1)

    @pytest.mark.parametrize("alpha", [0.5, 20.0])
    def test_marginals_and_nonnegativity(self, alpha):
        state = self._state(alpha)
        for b in range(3):
            plan = transport_plan_from_state(state, b)
            assert np.all(plan.P >= 0)
            rows, cols = plan.marginal_violation()
            assert rows <= 10 * state.tol and cols <= 10 * state.tol
            # The last update matches columns exactly; rows carry the residual.
            assert cols < 1e-12

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            transport_plan_from_state(self._state(1.0), 3)


def _fd(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


class TestSinkhornBackward:
    cfg = SinkhornConfig(alpha=20.0, tol=1e-14, max_iter=5000, unroll_cap=5000)

    def test_zero_upstream(self):
        rng = np.random.default_rng(7)
        X = rng.dirichlet(np.ones(5), size=2).T
        Z = rng.dirichlet(np.ones(3), size=2).T
        _, state = sinkhorn_batch(X, Z, rng.uniform(0, 2, (5, 3)), self.cfg)
        gZ, gM = sinkhorn_backward(state, np.zeros(2))
        assert not gZ.any() and not gM.any()

    def test_constant_cost_grad_M(self):
        rng = np.random.default_rng(8)
        X = rng.dirichlet(np.ones(5), size=2).T
        Z = rng.dirichlet(np.ones(3), size=2).T
        M = np.full((5, 3), 0.6)
        w = rng.normal(size=2)
        _, state = sinkhorn_batch(X, Z, M, self.cfg)
        _, gM = sinkhorn_backward(state, w)
        fd = _fd(lambda: float(w @ sinkhorn_batch(X, Z, M, self.cfg)[0]), M)
        np.testing.assert_allclose(gM, fd, rtol=1e-4, atol=1e-8)

    @pytest.mark.parametrize("alpha", [20.0, 0.5])
    def test_grad_Z_on_simplex_tangent(self, alpha):
        cfg = SinkhornConfig(alpha=alpha, tol=1e-14, max_iter=20000, unroll_cap=20000)
        rng = np.random.default_rng(9)
        V, K, B = 10, 4, 2
        X = rng.dirichlet(np.ones(V), size=B).T
        Z = rng.dirichlet(np.ones(K), size=B).T
        M = rng.uniform(0, 2, (V, K))
        w = rng.normal(size=B)
        _, state = sinkhorn_batch(X, Z, M, cfg)
        gZ, gM = sinkhorn_backward(state, w)
        f = lambda: float(w @ sinkhorn_batch(X, Z, M, cfg)[0])  # noqa: E731
        # Directional derivatives along e_i - e_j keep each column on the simplex.
        h = 1e-6
        for b in range(B):
            for i, j in [(0, 1), (1, 3), (2, 0)]:
                Z[i, b] += h
                Z[j, b] -= h
                up = f()
                Z[i, b] -= 2 * h
                Z[j, b] += 2 * h
                down = f()
                Z[i, b] += h
                Z[j, b] -= h
                fd = (up - down) / (2 * h)
                an = gZ[i, b] - gZ[j, b]
                assert abs(an - fd) <= 1e-4 * max(abs(fd), 1e-3)
        np.testing.assert_allclose(gM, _fd(f, M), rtol=1e-4, atol=1e-8)

    def test_requires_history(self):
        rng = np.random.default_rng(10)
        X = rng.dirichlet(np.ones(4), size=2).T
        Z = rng.dirichlet(np.ones(2), size=2).T
        _, state = sinkhorn_batch(X, Z, rng.uniform(0, 2, (4, 2)), SinkhornConfig(unroll_cap=0))
        with pytest.raises(ValueError):
            sinkhorn_backward(state, np.ones(2))
