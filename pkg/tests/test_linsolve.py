import numpy as np
import pytest
import scipy.sparse as sp

from stokeslip.linsolve import (
    DrResolvent,
    FactorizationError,
    ReducedOperator,
    dr_resolvent_factorize,
    gmres,
    reduced_apply,
    reduced_diagonal,
    spd_factorize,
)
from stokeslip.sssn import approximation_step, scd_blocks


class TestSpdFactor:
    def test_identity(self, rng):
        factor = spd_factorize(sp.identity(5, format="csc"))
        y = rng.standard_normal(5)
        assert np.allclose(factor.solve(y), y, atol=1e-14)

    def test_two_by_two(self):
        factor = spd_factorize(sp.csc_matrix(np.array([[2.0, 1.0], [1.0, 2.0]])))
        x = factor.solve(np.array([1.0, 1.0]))
        assert np.allclose(x, [1.0 / 3.0, 1.0 / 3.0], atol=1e-14)

    def test_assembled_a_ii(self, cube2_case, rng):
        a_ii = cube2_case.problem.A_II
        factor = spd_factorize(a_ii)
        for _ in range(5):
            y = rng.standard_normal(a_ii.shape[0])
            x = factor.solve(y)
            assert np.linalg.norm(a_ii @ x - y) <= 1e-10 * np.linalg.norm(y)

    def test_indefinite_rejected(self):
        with pytest.raises(FactorizationError, match="pivot"):
            spd_factorize(sp.csc_matrix(np.diag([1.0, -1.0, 2.0])))

    def test_empty_matrix(self):
        factor = spd_factorize(sp.csc_matrix((0, 0)))
        assert factor.solve(np.zeros(0)).shape == (0,)


class TestGmres:
    def test_identity_one_iteration(self, rng):
        rhs = rng.standard_normal(8)
        res = gmres(lambda v: v, rhs, tol=1e-12)
        assert res.converged
        assert res.iterations == 1
        assert np.allclose(res.x, rhs, atol=1e-12)

    def test_zero_rhs(self):
        res = gmres(lambda v: 2 * v, np.zeros(6), tol=1e-10)
        assert res.converged
        assert res.iterations == 0
        assert np.all(res.x == 0.0)

    def test_dense_random_system(self, rng):
        a = rng.standard_normal((20, 20)) + 6.0 * np.eye(20)
        rhs = rng.standard_normal(20)
        exact = np.linalg.solve(a, rhs)
        res = gmres(lambda v: a @ v, rhs, tol=1e-12)
        assert res.converged
        assert np.linalg.norm(res.x - exact) < 1e-8 * np.linalg.norm(exact)

    def test_residual_contract(self, rng):
        a = rng.standard_normal((30, 30)) + 8.0 * np.eye(30)
        rhs = rng.standard_normal(30)
        for tol in (1e-2, 1e-5, 1e-9):
            res = gmres(lambda v: a @ v, rhs, tol=tol)
            assert res.converged
            assert np.linalg.norm(a @ res.x - rhs) <= tol * np.linalg.norm(rhs)

    def test_monotone_residual_within_cycle(self, rng):
        a = rng.standard_normal((40, 40)) + 10.0 * np.eye(40)
        rhs = rng.standard_normal(40)
        history = []
        gmres(lambda v: a @ v, rhs, tol=1e-12, restart=40, callback=history.append)
        assert all(b <= a_ + 1e-12 for a_, b in zip(history, history[1:]))

    def test_max_iters_signal(self, rng):
        a = rng.standard_normal((30, 30)) + 8.0 * np.eye(30)
        rhs = rng.standard_normal(30)
        res = gmres(lambda v: a @ v, rhs, tol=1e-14, max_iters=3, restart=3)
        assert not res.converged
        assert res.iterations == 3
        # best iterate is carried back
        assert np.linalg.norm(a @ res.x - rhs) < np.linalg.norm(rhs)

    def test_invalid_tolerance(self):
        with pytest.raises(ValueError):
            gmres(lambda v: v, np.ones(3), tol=0.0)


def _midsolve_state(problem, lam=1.0):
    """A representative nonzero iterate: one forward-backward step from 0."""
    state0 = approximation_step(problem, np.zeros(problem.size), lam)
    x = state0.x - 0.5 * lam * state0.y
    return approximation_step(problem, x, lam)


def _dense_reduced(problem, factor, p_blocks, w_blocks):
    """Explicitly formed reduced matrix for comparison."""
    n_s, n_p = problem.n_s, problem.n_p
    k = 3 * n_s
    a_nn = problem.A_NN.toarray()
    a_in = problem.A_IN.toarray()
    b_n = problem.B_N.toarray()
    b_i = problem.B_I.toarray()
    e = problem.E.toarray()
    a_ii_inv_ain = np.column_stack(
        [factor.solve(a_in[:, j]) for j in range(k)]
    ) if k else np.zeros((a_in.shape[0], 0))
    a_ii_inv_bit = np.column_stack(
        [factor.solve(b_i.T[:, j]) for j in range(n_p)]
    )
    p_big = np.zeros((k, k))
    w_big = np.zeros((k, k))
    for i in range(n_s):
        p_big[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = p_blocks[i]
        w_big[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = w_blocks[i]
    top_left = p_big @ (a_nn - a_in.T @ a_ii_inv_ain) + w_big
    top_right = -p_big @ (b_n.T - a_in.T @ a_ii_inv_bit)
    bot_left = b_n - b_i @ a_ii_inv_ain
    bot_right = e + b_i @ a_ii_inv_bit
    return np.block([[top_left, top_right], [bot_left, bot_right]])


class TestReducedOperator:
    def test_matches_dense_reduced_matrix(self, cube2_case, rng):
        pr = cube2_case.problem
        factor = spd_factorize(pr.A_II)
        state = _midsolve_state(pr)
        p_blocks, w_blocks = scd_blocks(pr, state.z_n)
        rop = ReducedOperator(pr, factor, p_blocks, w_blocks)
        dense = _dense_reduced(pr, factor, p_blocks, w_blocks)
        assert rop.size == 3 * pr.n_s + pr.n_p <= 200
        for _ in range(10):
            v = rng.standard_normal(rop.size)
            assert np.allclose(reduced_apply(rop, v), dense @ v, atol=1e-10)

    def test_all_stick_top_rows_identity(self, cube2_case, rng):
        pr = cube2_case.problem
        factor = spd_factorize(pr.A_II)
        n_s = pr.n_s
        p_blocks = np.zeros((n_s, 3, 3))
        w_blocks = np.broadcast_to(np.eye(3), (n_s, 3, 3)).copy()
        rop = ReducedOperator(pr, factor, p_blocks, w_blocks)
        v = rng.standard_normal(rop.size)
        out = rop.apply(v)
        assert np.allclose(out[: 3 * n_s], v[: 3 * n_s], atol=1e-12)

    def test_dimension_check(self, cube2_case):
        pr = cube2_case.problem
        factor = spd_factorize(pr.A_II)
        p_blocks, w_blocks = scd_blocks(pr, np.zeros(3 * pr.n_s))
        rop = ReducedOperator(pr, factor, p_blocks, w_blocks)
        with pytest.raises(ValueError):
            rop.apply(np.zeros(rop.size + 2))

    def test_diagonal_preconditioner_positive(self, cube2_case):
        pr = cube2_case.problem
        factor = spd_factorize(pr.A_II)
        state = _midsolve_state(pr)
        p_blocks, w_blocks = scd_blocks(pr, state.z_n)
        rop = ReducedOperator(pr, factor, p_blocks, w_blocks)
        d = reduced_diagonal(rop)
        assert d.shape == (rop.size,)
        assert np.all(d > 0)


class TestDrResolvent:
    def test_small_lambda_is_identity(self, cube2_case, rng):
        pr = cube2_case.problem
        res = dr_resolvent_factorize(pr, 1e-12)
        y = rng.standard_normal(pr.size)
        assert np.linalg.norm(res.solve(y) - y) <= 1e-8 * np.linalg.norm(y)

    def test_scalar_analogue(self):
        # fabricated 1-unknown problem: velocity block a I3, pressure block e
        from stokeslip.assembly import SaddleProblem
        from stokeslip.mesh import NodeSets

        a, e, lam = 2.5, 0.7, 0.8
        sets = NodeSets(
            dirichlet=np.array([], dtype=int),
            slip=np.array([], dtype=int),
            remaining=np.array([0]),
        )
        pr = SaddleProblem(
            A_kappa=sp.csr_matrix(a * np.eye(3)),
            B=sp.csr_matrix((1, 3)),
            E=sp.csr_matrix([[e]]),
            b=np.zeros(3),
            c=np.zeros(1),
            frames=[],
            sets=sets,
        )
        res = dr_resolvent_factorize(pr, lam)
        y = np.array([1.0, -2.0, 0.5, 3.0])
        expected = np.concatenate([y[:3] / (1 + lam * a), [y[3] / (1 + lam * e)]])
        assert np.allclose(res.solve(y), expected, atol=1e-13)

    def test_residual_contract(self, cube2_case, rng):
        pr = cube2_case.problem
        lam = 1.3
        res = dr_resolvent_factorize(pr, lam)
        m = sp.bmat([[pr.A_kappa, -pr.B.T], [pr.B, pr.E]]).tocsr()
        for _ in range(5):
            y = rng.standard_normal(pr.size)
            x = res.solve(y)
            assert np.linalg.norm(x + lam * (m @ x) - y) <= 1e-10 * np.linalg.norm(y)

    def test_invalid_lambda(self, cube2_case):
        with pytest.raises(ValueError):
            DrResolvent(cube2_case.problem, 0.0)
