import numpy as np
import pytest

from labelalign.linearlab import (
    FORMS,
    LinearLabError,
    alignment_residual,
    gen_synthetic,
    identity_suite,
    linear_objective,
    solve_linear_uda,
)

from conftest import rel_err


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def test_full_rank_alignment_leaves_no_zero_constraint():
    p = gen_synthetic(20, 6, k_star=6, k_tilde_star=6, seed=0)
    yu = p.u.T @ p.y
    assert (np.abs(yu) > 1e-3).all()


def test_rank_one_alignment():
    p = gen_synthetic(20, 6, k_star=1, k_tilde_star=1, seed=1)
    yu = p.u.T @ p.y
    assert abs(yu[0]) > 0.1
    assert np.abs(yu[1:]).max() <= 1e-10


def test_generation_is_deterministic():
    a = gen_synthetic(16, 5, 2, 3, noise=0.1, seed=42)
    b = gen_synthetic(16, 5, 2, 3, noise=0.1, seed=42)
    np.testing.assert_array_equal(a.phi, b.phi)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.phi_tilde, b.phi_tilde)


def test_generation_validates_ranks():
    with pytest.raises(LinearLabError):
        gen_synthetic(10, 4, k_star=5, k_tilde_star=2)
    with pytest.raises(LinearLabError):
        gen_synthetic(10, 4, k_star=0, k_tilde_star=2)
    with pytest.raises(LinearLabError):
        gen_synthetic(4, 10, k_star=2, k_tilde_star=2)
    with pytest.raises(LinearLabError):
        gen_synthetic(10, 4, 2, 2, noise=-0.1)


def test_factors_are_a_valid_svd():
    p = gen_synthetic(32, 8, 3, 3, seed=5)
    assert np.abs(p.u.T @ p.u - np.eye(8)).max() < 1e-12
    assert np.abs(p.v.T @ p.v - np.eye(8)).max() < 1e-12
    assert (np.diff(p.sigma) < 0).all() and (p.sigma > 0).all()
    np.testing.assert_allclose((p.u * p.sigma) @ p.v.T, p.phi, atol=1e-12)


# ---------------------------------------------------------------------------
# objective forms
# ---------------------------------------------------------------------------


def test_zero_weights_values():
    p = gen_synthetic(24, 6, 2, 2, seed=2)
    w = np.zeros(6)
    assert abs(linear_objective(p, w, 2, "full") - float(p.y @ p.y)) < 1e-12
    assert linear_objective(p, w, 2, "matrix_bottom") == 0.0


def test_unknown_form_rejected():
    p = gen_synthetic(12, 4, 2, 2)
    with pytest.raises(LinearLabError, match="unknown objective form"):
        linear_objective(p, np.zeros(4), 2, "eq1")
    with pytest.raises(LinearLabError, match="k must lie"):
        linear_objective(p, np.zeros(4), 9, "full")


def test_full_equals_decomposed_under_exact_alignment():
    p = gen_synthetic(40, 10, k_star=4, k_tilde_star=4, noise=0.0, seed=3)
    rng = np.random.default_rng(3)
    for _ in range(100):
        w = rng.standard_normal(10)
        a = linear_objective(p, w, 4, "full")
        b = linear_objective(p, w, 4, "decomposed")
        assert rel_err(a, b) <= 1e-8


def test_uda_equals_combined_under_exact_alignment():
    p = gen_synthetic(40, 10, k_star=4, k_tilde_star=4, noise=0.0, seed=4)
    rng = np.random.default_rng(4)
    for _ in range(100):
        w = rng.standard_normal(10)
        a = linear_objective(p, w, 4, "uda")
        b = linear_objective(p, w, 4, "combined")
        assert rel_err(a, b) <= 1e-8


def test_matrix_forms_match_sums():
    p = gen_synthetic(32, 8, k_star=3, k_tilde_star=3, noise=0.0, seed=5)
    rng = np.random.default_rng(5)
    for _ in range(50):
        w = rng.standard_normal(8)
        wv = p.v.T @ w
        yu = p.u.T @ p.y
        top_sum = float(np.sum((p.sigma[:3] * wv[:3] - yu[:3]) ** 2))
        wvt = p.v_tilde.T @ w
        bottom_sum = float(np.sum((p.sigma_tilde[3:] * wvt[3:]) ** 2))
        assert rel_err(top_sum, linear_objective(p, w, 3, "matrix_top")) <= 1e-8
        assert rel_err(bottom_sum, linear_objective(p, w, 3, "matrix_bottom")) <= 1e-8


def test_alignment_probe_grows_with_noise():
    noises = [0.0, 0.05, 0.1, 0.2]
    means = []
    for noise in noises:
        vals = []
        for seed in range(50):
            p = gen_synthetic(32, 8, 3, 3, noise=noise, seed=seed)
            vals.append(alignment_residual(p))
        means.append(np.mean(vals))
    assert means[0] <= 1e-10
    assert means[0] < means[1] < means[2] < means[3]


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def test_zero_labels_keep_zero_weights():
    p = gen_synthetic(16, 4, 2, 2, seed=6)
    p.y[:] = 0.0
    w, report = solve_linear_uda(p, 2, alpha=0.05)
    assert np.linalg.norm(w) <= 1e-6
    assert report.converged


def test_converged_run_satisfies_first_order_optimality():
    p = gen_synthetic(48, 12, 5, 5, seed=7)
    w, report = solve_linear_uda(p, 5, alpha=0.05, max_iters=50000)
    assert report.converged
    assert report.grad_norm <= 1e-6
    # independent check: numeric gradient of the combined objective
    eps = 1e-7
    for i in range(0, 12, 3):
        delta = np.zeros(12)
        delta[i] = eps
        hi = linear_objective(p, w + delta, 5, "combined")
        lo = linear_objective(p, w - delta, 5, "combined")
        assert abs((hi - lo) / (2 * eps)) < 1e-4


def test_solver_matches_random_restart_search():
    scipy_opt = pytest.importorskip("scipy.optimize")
    p = gen_synthetic(12, 4, 2, 2, seed=8)
    w, report = solve_linear_uda(p, 2, alpha=0.05, max_iters=50000)
    rng = np.random.default_rng(8)
    best = np.inf
    for _ in range(64):
        start = rng.standard_normal(4) * 2.0
        res = scipy_opt.minimize(
            lambda v: linear_objective(p, v, 2, "combined"),
            start,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000},
        )
        best = min(best, float(res.fun))
    assert report.objective <= best + 1e-4


def test_divergence_reports_step_size():
    p = gen_synthetic(16, 4, 2, 2, seed=9)
    with pytest.raises(LinearLabError, match="step size 10.0"):
        solve_linear_uda(p, 2, alpha=10.0)


def test_solver_validates_step_size():
    p = gen_synthetic(16, 4, 2, 2, seed=10)
    with pytest.raises(LinearLabError):
        solve_linear_uda(p, 2, alpha=0.0)


# ---------------------------------------------------------------------------
# suite runner
# ---------------------------------------------------------------------------


def test_identity_suite_all_ok_without_noise():
    rows = identity_suite(sizes=((32, 8), (64, 16)), k_star=4, seeds=5, draws=20)
    assert rows
    assert all(r.ok for r in rows)
    assert all(r.residual <= 1e-8 for r in rows)
    pairs = {r.pair for r in rows}
    assert pairs == {
        "full=decomposed",
        "uda=combined",
        "top-sum=matrix_top",
        "trail-sum=matrix_bottom",
    }


def test_identity_suite_noise_mode_uses_bounds():
    rows = identity_suite(sizes=((32, 8),), k_star=3, seeds=5, noise=0.1, draws=20)
    assert all(r.ok for r in rows)
    assert any("~" in r.pair for r in rows)


def test_identity_suite_rejects_wide_problems():
    with pytest.raises(LinearLabError):
        identity_suite(sizes=((8, 32),))


def test_forms_constant_is_public():
    assert FORMS == ("full", "decomposed", "uda", "combined", "matrix_top", "matrix_bottom")
