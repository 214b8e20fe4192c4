import numpy as np
import pytest

from rmdn import rls
from rmdn.errors import InstabilityError, ParameterError, ShapeError, SingularityError
from rmdn.harness import linear_design


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def linear_data(n, seed, h=2, noise=0.1):
    x, rng = linear_design(n, seed)
    beta = rng.standard_normal((3, h))
    return x, x @ beta + noise * rng.standard_normal((n, h)), beta


class TestInit:
    def test_paper_scale(self):
        st = rls.init_state(3, 2, 100.0, 0.0)
        np.testing.assert_array_equal(st.p_inv, 100.0 * np.eye(3))
        np.testing.assert_array_equal(st.beta, np.zeros((3, 2)))
        assert st.n_seen == 0

    def test_unit_epsilon(self):
        np.testing.assert_array_equal(rls.init_state(2, 1, 1.0).p_inv, np.eye(2))

    @pytest.mark.parametrize("eps", [0.0, -1.0])
    def test_rejects_nonpositive_epsilon(self, eps):
        with pytest.raises(ParameterError):
            rls.init_state(3, 2, eps)

    def test_rejects_negative_lambda(self):
        with pytest.raises(ParameterError):
            rls.init_state(3, 2, 1.0, -1e-3)


class TestUpdateSample:
    def test_scalar_ridge_oracle(self):
        st = rls.init_state(1, 1, 1.0)
        out = rls.update_sample(st, [1.0], [2.0])
        # ridge: beta = (x^2 + 1/P0)^-1 x z = 2 / 2
        assert out.beta[0, 0] == pytest.approx(1.0, abs=1e-15)
        assert out.p_inv[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert out.n_seen == 1

    def test_zero_error_keeps_beta(self):
        beta = np.array([[1.0, -2.0], [0.5, 0.0], [3.0, 1.0]])
        st = rls.RmdnState(beta=beta, p_inv=np.eye(3), epsilon=1.0, lam=0.0)
        x = np.array([2.0, 1.0, 1.0])
        out = rls.update_sample(st, x, beta.T @ x)
        np.testing.assert_allclose(out.beta, beta, atol=1e-15)
        assert np.trace(out.p_inv) < np.trace(st.p_inv)

    def test_input_state_untouched(self):
        st = rls.init_state(3, 2, 10.0)
        rls.update_sample(st, [1.0, 1.0, 1.0], [1.0, 2.0])
        np.testing.assert_array_equal(st.beta, 0.0)
        assert st.n_seen == 0

    def test_streaming_matches_ols(self):
        x, z, _ = linear_data(2048, 0)
        st = rls.init_state(3, 2, 1000.0)
        for xi, zi in zip(x, z):
            st = rls.update_sample(st, xi, zi)
        assert np.linalg.norm(st.beta - rls.ols_fit(x, z)) < 1e-2

    def test_lambda_added_after_update(self):
        st = rls.init_state(2, 1, 1.0, lam=0.25)
        out = rls.update_sample(st, [1.0, 0.0], [0.0])
        np.testing.assert_allclose(out.p_inv, np.diag([0.5 + 0.25, 1.0 + 0.25]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            rls.update_sample(rls.init_state(3, 2, 1.0), [1.0, 1.0], [1.0, 1.0])

    def test_unstable(self):
        st = rls.RmdnState(beta=np.zeros((1, 1)), p_inv=-np.eye(1), epsilon=1.0, lam=0.0)
        with pytest.raises(InstabilityError):
            rls.update_sample(st, [1.0], [1.0])


class TestUpdateBatch:
    @pytest.mark.parametrize("seed", range(5))
    def test_single_row_equals_sample(self, seed):
        rng = np.random.default_rng(seed)
        st = rls.init_state(3, 4, 10.0, 1e-3)
        st = rls.update_batch(st, rng.standard_normal((5, 3)), rng.standard_normal((5, 4)))
        x, z = rng.standard_normal(3), rng.standard_normal(4)
        a = rls.update_batch(st, x[None], z[None])
        b = rls.update_sample(st, x, z)
        assert rel_err(a.beta, b.beta) < 1e-12
        assert rel_err(a.p_inv, b.p_inv) < 1e-12

    def test_zero_error_keeps_beta(self):
        rng = np.random.default_rng(0)
        beta = rng.standard_normal((3, 5))
        st = rls.RmdnState(beta=beta, p_inv=np.eye(3), epsilon=1.0, lam=0.0)
        xb = rng.standard_normal((8, 3))
        out = rls.update_batch(st, xb, xb @ beta)
        np.testing.assert_allclose(out.beta, beta, atol=1e-13)
        assert out.n_seen == 8

    @pytest.mark.parametrize("seed", range(5))
    def test_order_invariance(self, seed):
        x, z, _ = linear_data(64, seed)
        st = rls.init_state(3, 2, 10.0, 0.0)
        whole = rls.update_batch(st, x, z)
        halves = rls.update_batch(rls.update_batch(st, x[:32], z[:32]), x[32:], z[32:])
        assert rel_err(halves.beta, whole.beta) < 1e-6

    def test_lambda_breaks_order_invariance(self):
        x, z, _ = linear_data(64, 0)
        st = rls.init_state(3, 2, 10.0, 1e-1)
        whole = rls.update_batch(st, x, z)
        halves = rls.update_batch(rls.update_batch(st, x[:32], z[:32]), x[32:], z[32:])
        assert rel_err(halves.beta, whole.beta) > 1e-6

    def test_matches_exact_ridge_solution(self):
        # With lam = 0 the recursion equals (I/eps + X^T X)^-1 X^T z.
        x, z, _ = linear_data(40, 3)
        eps = 5.0
        st = rls.init_state(3, 2, eps, 0.0)
        for i in range(0, 40, 8):
            st = rls.update_batch(st, x[i : i + 8], z[i : i + 8])
        ref = np.linalg.solve(np.eye(3) / eps + x.T @ x, x.T @ z)
        assert rel_err(st.beta, ref) < 1e-8

    def test_empty_batch(self):
        with pytest.raises(ShapeError):
            rls.update_batch(rls.init_state(3, 1, 1.0), np.zeros((0, 3)), np.zeros((0, 1)))


@pytest.mark.parametrize("seed", range(5))
def test_p_tracks_true_inverse(seed):
    rng = np.random.default_rng(seed)
    eps = 10.0
    st = rls.init_state(4, 1, eps, 0.0)
    xs = rng.standard_normal((64, 4))
    for x in xs:
        st = rls.update_sample(st, x, [0.0])
    ref = np.linalg.inv(np.eye(4) / eps + xs.T @ xs)
    assert rel_err(st.p_inv, ref) < 1e-8


class TestResidualize:
    def test_zero_beta_is_identity(self):
        st = rls.init_state(3, 4, 1.0)
        z = np.arange(8.0).reshape(2, 4)
        np.testing.assert_array_equal(rls.residualize(st, [[1.0], [2.0]], z), z)

    def test_forced_arithmetic(self):
        st = rls.RmdnState(beta=np.array([[2.0], [7.0], [11.0]]), p_inv=np.eye(3), epsilon=1.0, lam=0.0)
        assert rls.residualize(st, [[1.0]], [[5.0]])[0, 0] == 3.0

    def test_ignores_label_bias_and_counter(self):
        beta = np.array([[2.0, 1.0], [np.nan, np.nan], [np.nan, np.nan]])
        st = rls.RmdnState(beta=beta, p_inv=np.eye(3), epsilon=1.0, lam=0.0, n_seen=-99)
        out = rls.residualize(st, [[1.0], [2.0]], [[0.0, 0.0], [1.0, 1.0]])
        np.testing.assert_array_equal(out, [[-2.0, -1.0], [-3.0, -1.0]])
        assert st.n_seen == -99

    def test_does_not_mutate(self):
        st = rls.RmdnState(beta=np.ones((3, 2)), p_inv=np.eye(3), epsilon=1.0, lam=0.0)
        before = st.beta.copy()
        rls.residualize(st, np.ones((4, 1)), np.ones((4, 2)))
        np.testing.assert_array_equal(st.beta, before)

    def test_removes_confounder_keeps_label(self):
        x, rng = linear_design(4000, 1)
        conf, y = x[:, 0], x[:, 1]
        z = np.column_stack([3.0 * conf + 2.0 * y, -conf + 0.5]) + 0.01 * rng.standard_normal((4000, 2))
        beta = rls.ols_fit(x, z)
        st = rls.RmdnState(beta=beta, p_inv=np.eye(3), epsilon=1.0, lam=0.0)
        r = rls.residualize(st, conf[:, None], z)
        np.testing.assert_allclose(beta[0], [3.0, -1.0], atol=1e-3)
        np.testing.assert_allclose(r[:, 0], 2.0 * y, atol=0.05)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            rls.residualize(rls.init_state(3, 2, 1.0), np.ones((4, 2)), np.ones((4, 2)))


class TestOls:
    def test_exact_recovery(self):
        x, _, _ = linear_data(50, 0)
        beta = np.array([[1.5], [-2.0], [0.25]])
        assert rel_err(rls.ols_fit(x, x @ beta), beta) < 1e-10

    def test_scalar(self):
        assert rls.ols_fit([[2.0]], [[6.0]])[0, 0] == pytest.approx(3.0, rel=1e-15)

    def test_residual_orthogonal_to_design(self):
        x, z, _ = linear_data(500, 2, h=1)
        r = z - x @ rls.ols_fit(x, z)
        assert np.max(np.abs(x.T @ r)) < 1e-6 * np.linalg.norm(z)

    def test_rank_deficient(self):
        x = np.ones((10, 3))
        with pytest.raises(SingularityError):
            rls.ols_fit(x, np.ones((10, 1)))


class TestMdnBatch:
    def test_full_batch_is_ols(self):
        x, z, _ = linear_data(300, 0)
        sigma_inv = np.linalg.inv(x.T @ x)
        assert rel_err(rls.mdn_batch_beta(sigma_inv, x, z, 300), rls.ols_fit(x, z)) < 1e-10

    def test_zero_features(self):
        x, _, _ = linear_data(30, 0)
        out = rls.mdn_batch_beta(np.linalg.inv(x.T @ x), x[:4], np.zeros((4, 2)), 30)
        np.testing.assert_array_equal(out, 0.0)

    def test_tiny_batch_is_off(self):
        x, z, _ = linear_data(2048, 0)
        sigma_inv = np.linalg.inv(x.T @ x)
        small = rls.mdn_batch_beta(sigma_inv, x[:2], z[:2], 2048)
        assert np.linalg.norm(small - rls.ols_fit(x, z)) > 0.1


def test_determinism():
    x, z, _ = linear_data(100, 4)
    runs = []
    for _ in range(2):
        st = rls.init_state(3, 2, 10.0, 1e-4)
        for i in range(0, 100, 7):
            st = rls.update_batch(st, x[i : i + 7], z[i : i + 7])
        runs.append(st)
    assert np.array_equal(runs[0].beta, runs[1].beta)
    assert np.array_equal(runs[0].p_inv, runs[1].p_inv)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("eps", [10.0, 100.0, 1000.0])
def test_converges_for_eps_grid(seed, eps):
    x, z, _ = linear_data(2048, seed)
    st = rls.init_state(3, 2, eps)
    for xi, zi in zip(x, z):
        st = rls.update_sample(st, xi, zi)
    assert np.linalg.norm(st.beta - rls.ols_fit(x, z)) < 1e-2
