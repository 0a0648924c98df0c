import numpy as np
import pytest

from helpers import fit_residual_on, naive_exclusion, quadrature_l2_distance, random_model
from seprep.als import (
    FitConfig,
    assemble_design_matrix,
    exclusion_products,
    factor_table,
    fit_fixed,
    normalize_direction,
    solve_direction,
    sweep,
)
from seprep.basis import BasisSpec, Family, eval_basis_batch
from seprep.errors import DegenerateFactorError
from seprep.model import SampleSet, SeparatedModel, empirical_norm, evaluate_batch, mean


def _gauss_data(rng, n, d):
    return rng.standard_normal((n, d))


def _sampled_from(model, n, seed, noise=0.0):
    rng = np.random.default_rng(seed)
    pts = _gauss_data(rng, n, model.dims)
    out = evaluate_batch(model, pts)
    if noise:
        out = out + noise * rng.standard_normal(n)
    return SampleSet(pts, out, model.basis.family)


def test_design_matrix_constant_factors():
    # all factors identically one: columns reduce to the basis values
    coeffs = np.zeros((3, 1, 3))
    coeffs[:, 0, 0] = 1.0
    m = SeparatedModel(BasisSpec(Family.HERMITE, 2), np.array([1.0]), coeffs)
    rng = np.random.default_rng(0)
    data = SampleSet(_gauss_data(rng, 20, 3), np.zeros(20), Family.HERMITE)
    table = factor_table(data, m)
    A = assemble_design_matrix(data, m, 1, table)
    psi = eval_basis_batch(m.basis, data.inputs[:, 1])
    assert np.allclose(A, psi, atol=1e-14)


def test_design_matrix_hand_computed():
    # d=2, r=1, M=1, legendre; second factor sqrt(3)*y, scale 2, sample (0.5, -0.5)
    coeffs = np.zeros((2, 1, 2))
    coeffs[0, 0, 0] = 1.0
    coeffs[1, 0, 1] = 1.0
    m = SeparatedModel(BasisSpec(Family.LEGENDRE, 1), np.array([2.0]), coeffs)
    data = SampleSet(np.array([[0.5, -0.5]]), np.array([0.0]), Family.LEGENDRE)
    A = assemble_design_matrix(data, m, 0, factor_table(data, m))
    expected = np.array([[-np.sqrt(3.0), -1.5]])
    assert np.allclose(A, expected, atol=1e-14)


def test_exclusion_products_match_naive():
    rng = np.random.default_rng(1)
    table = rng.standard_normal((6, 30, 4))
    fast = exclusion_products(table)
    for k in range(6):
        ref = naive_exclusion(table, k)
        assert np.max(np.abs(fast[k] - ref)) < 1e-13 * max(1.0, np.max(np.abs(ref)))


def _dummy_model(d=2, r=1, M=1):
    coeffs = np.zeros((d, r, M + 1))
    coeffs[:, :, 0] = 1.0
    return SeparatedModel(BasisSpec(Family.HERMITE, M), np.ones(r), coeffs)


def test_solve_direction_interpolation():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    c_true = rng.standard_normal(4)
    u = A @ c_true
    cfg = FitConfig(rank_max=1, degree=3, regularize=False)
    res = solve_direction(A, u, _dummy_model(M=3), 0, cfg)
    assert np.allclose(res.coeffs, c_true, atol=1e-10)
    assert res.regularization is None


def test_solve_direction_large_lambda_shrinks():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((30, 4))
    u = rng.standard_normal(30)
    from seprep.regularize import TikhonovPath

    path = TikhonovPath(A, u, np.eye(4))
    c0 = path.solve(0.0)
    c_big = path.solve(1e8 * np.linalg.svd(A, compute_uv=False)[0])
    assert np.linalg.norm(c_big) <= 1e-6 * np.linalg.norm(c0)


def test_solve_direction_small_closed_form():
    A = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]])
    u = np.array([1.0, 2.0, 3.0])
    lam = 1.0
    ref = np.linalg.solve(A.T @ A + lam**2 * np.eye(2), A.T @ u)
    from seprep.regularize import TikhonovPath

    c = TikhonovPath(A, u, np.eye(2)).solve(lam)
    assert np.allclose(c, ref, atol=1e-12)


def test_normal_equation_residual_every_solve():
    rng = np.random.default_rng(4)
    m = random_model(rng, dims=3, rank=2, degree=2)
    data = _sampled_from(m, 200, seed=5, noise=0.05)
    table = factor_table(data, m)
    for k in range(3):
        A = assemble_design_matrix(data, m, k, table)
        for cfg in (
            FitConfig(rank_max=2, degree=2, regularize=False),
            FitConfig(rank_max=2, degree=2, regularize=True),
        ):
            res = solve_direction(A, data.outputs, m, k, cfg)
            lam = res.regularization.lambda_ if res.regularization else 0.0
            L = res.regularization.cholesky_L if res.regularization else np.zeros_like(A.T @ A)
            Mm = A.T @ A + lam**2 * (L.T @ L)
            err = np.linalg.norm(Mm @ res.coeffs - A.T @ data.outputs)
            assert err <= 1e-8 * np.linalg.norm(A.T @ data.outputs)


def test_normalize_direction_scaling():
    rng = np.random.default_rng(6)
    m = random_model(rng, dims=3, rank=2, degree=2)
    data = _sampled_from(m, 150, seed=7)
    normed = normalize_direction(m, 1, data)
    psi = eval_basis_batch(m.basis, data.inputs[:, 1])
    for l in range(m.rank):
        assert empirical_norm(psi @ normed.coeffs[1, l]) == pytest.approx(1.0, abs=1e-12)
    # evaluation unchanged
    pts = np.random.default_rng(8).standard_normal((40, 3))
    assert np.allclose(
        evaluate_batch(normed, pts), evaluate_batch(m, pts), rtol=1e-12, atol=1e-12
    )
    # idempotent on an already-normalized direction
    again = normalize_direction(normed, 1, data)
    assert np.allclose(again.coeffs[1], normed.coeffs[1], rtol=1e-14)
    assert np.allclose(again.scales, normed.scales, rtol=1e-14)


def test_normalize_direction_explicit_factor_norm():
    coeffs = np.zeros((2, 1, 2))
    coeffs[0, 0, 0] = 2.0  # factor identically 2 in dimension 0
    coeffs[1, 0, 0] = 1.0
    m = SeparatedModel(BasisSpec(Family.HERMITE, 1), np.array([1.0]), coeffs)
    data = SampleSet(np.zeros((5, 2)), np.zeros(5), Family.HERMITE)
    normed = normalize_direction(m, 0, data)
    assert normed.scales[0] == pytest.approx(2.0)
    assert normed.coeffs[0, 0, 0] == pytest.approx(1.0)


def test_normalize_direction_zero_norm_raises():
    coeffs = np.zeros((2, 1, 2))
    coeffs[1, 0, 0] = 1.0  # dimension-0 factor vanishes everywhere
    coeffs[0, 0, :] = 0.0
    m = SeparatedModel(BasisSpec(Family.HERMITE, 1), np.array([1.0]), coeffs)
    m.coeffs[0, 0, :] = 0.0
    data = SampleSet(np.zeros((5, 2)), np.zeros(5), Family.HERMITE)
    with pytest.raises(DegenerateFactorError):
        normalize_direction(m, 0, data)


def test_sweep_recovers_separable_data_quickly():
    rng = np.random.default_rng(9)
    truth = random_model(rng, dims=3, rank=1, degree=1)
    data = _sampled_from(truth, 240, seed=10)
    cfg = FitConfig(rank_max=1, degree=1, regularize=False, rng_seed=3)
    model = random_model(np.random.default_rng(11), dims=3, rank=1, degree=1)
    resid = None
    for _ in range(10):
        model, resid, _ = sweep(data, model, cfg)
    assert resid < 1e-8 * empirical_norm(data.outputs)


def test_sweep_monotone_unregularized():
    rng = np.random.default_rng(12)
    truth = random_model(rng, dims=4, rank=2, degree=2)
    data = _sampled_from(truth, 300, seed=13, noise=0.3)
    cfg = FitConfig(rank_max=2, degree=2, regularize=False, rng_seed=0)
    model = random_model(np.random.default_rng(14), dims=4, rank=2, degree=2)
    prev = fit_residual_on(data, model)
    for _ in range(8):
        model, resid, _ = sweep(data, model, cfg)
        assert resid <= prev * (1.0 + 1e-10)
        prev = resid


def test_constant_data_fit():
    rng = np.random.default_rng(15)
    pts = rng.standard_normal((60, 3))
    data = SampleSet(pts, np.full(60, 5.0), Family.HERMITE)
    for degree in (0, 1, 2):
        cfg = FitConfig(rank_max=1, degree=degree, regularize=False, rng_seed=4)
        model, _ = fit_fixed(data, 1, cfg, init_seed=4)
        assert mean(model) == pytest.approx(5.0, abs=1e-10)
    # regularized fits carry the O(floor^2) shrinkage of the lambda-grid lower
    # bound, so the constant is recovered to ~0.3% rather than machine level
    cfg = FitConfig(rank_max=1, degree=2, regularize=True, rng_seed=4)
    model, _ = fit_fixed(data, 1, cfg, init_seed=4)
    assert mean(model) == pytest.approx(5.0, rel=1e-2)


def test_fit_fixed_constant_degree_zero_residual():
    rng = np.random.default_rng(16)
    pts = rng.standard_normal((200, 4))
    out = rng.standard_normal(200) * 2.0 + 1.0
    data = SampleSet(pts, out, Family.HERMITE)
    cfg = FitConfig(rank_max=1, degree=0, regularize=False, rng_seed=0)
    model, diag = fit_fixed(data, 1, cfg, init_seed=0)
    assert mean(model) == pytest.approx(float(out.mean()), abs=1e-10)
    assert diag.per_rank[-1].residual == pytest.approx(float(out.std(ddof=0)), abs=1e-10)


def test_fit_fixed_recovers_separable_data():
    rng = np.random.default_rng(17)
    truth = random_model(rng, dims=4, rank=1, degree=2)
    data = _sampled_from(truth, 240, seed=18)
    cfg = FitConfig(rank_max=1, degree=2, regularize=False, rng_seed=0)
    model, diag = fit_fixed(data, 1, cfg, init_seed=0)
    rel = diag.per_rank[-1].residual / empirical_norm(data.outputs)
    assert rel < 1e-6


def test_fit_fixed_deterministic():
    rng = np.random.default_rng(19)
    truth = random_model(rng, dims=3, rank=2, degree=2)
    data = _sampled_from(truth, 200, seed=20, noise=0.1)
    cfg = FitConfig(rank_max=2, degree=2, rng_seed=0,
                    init_candidates=3, candidate_burn_sweeps=5, max_sweeps_per_rank=40)
    m1, d1 = fit_fixed(data, 2, cfg, init_seed=77)
    m2, d2 = fit_fixed(data, 2, cfg, init_seed=77)
    assert np.array_equal(m1.coeffs, m2.coeffs)
    assert np.array_equal(m1.scales, m2.scales)
    for r1, r2 in zip(d1.per_rank, d2.per_rank):
        assert r1.residual_trace == r2.residual_trace
        assert r1.candidate == r2.candidate
        for s1, s2 in zip(r1.reg_states, r2.reg_states):
            assert s1.lambda_ == s2.lambda_
            assert s1.error_indicator == s2.error_indicator


def test_fit_fixed_warns_when_underdetermined():
    rng = np.random.default_rng(21)
    data = SampleSet(rng.standard_normal((5, 2)), rng.standard_normal(5), Family.HERMITE)
    cfg = FitConfig(rank_max=2, degree=2, regularize=True,
                    init_candidates=1, candidate_burn_sweeps=2, max_sweeps_per_rank=3)
    with pytest.warns(UserWarning, match="below the direction-solve unknown count"):
        fit_fixed(data, 2, cfg, init_seed=0)


def test_output_rescaling_scales_the_fit():
    rng = np.random.default_rng(22)
    truth = random_model(rng, dims=3, rank=2, degree=2)
    data = _sampled_from(truth, 250, seed=23, noise=0.05)
    gamma = 2.0
    scaled = SampleSet(data.inputs.copy(), gamma * data.outputs, Family.HERMITE)
    cfg = FitConfig(rank_max=2, degree=2, regularize=False, rng_seed=0,
                    init_candidates=2, candidate_burn_sweeps=5, max_sweeps_per_rank=30)
    m1, _ = fit_fixed(data, 2, cfg, init_seed=9)
    m2, _ = fit_fixed(scaled, 2, cfg, init_seed=9)
    assert np.allclose(m2.scales, gamma * m1.scales, rtol=1e-13)
    assert np.allclose(m2.coeffs, m1.coeffs, rtol=1e-13, atol=1e-15)


def test_exact_recovery_success_rate():
    # rank-1 targets with random coefficients at the feasibility margin of the
    # restart protocol: require 19 of 20 seeds below 1e-6 relative L2 error
    d, M = 4, 2
    n = 20 * d * (M + 1)
    cfg = FitConfig(rank_max=1, degree=M, regularize=False, sweep_tol=1e-10,
                    max_sweeps_per_rank=600)
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        truth = SeparatedModel(
            BasisSpec(Family.HERMITE, M),
            np.ones(1),
            rng.standard_normal((d, 1, M + 1)),
        )
        pts = rng.standard_normal((n, d))
        data = SampleSet(pts, evaluate_batch(truth, pts), Family.HERMITE)
        model, _ = fit_fixed(data, 1, cfg, init_seed=seed)
        if quadrature_l2_distance(model, truth) < 1e-6:
            hits += 1
    assert hits >= 19
