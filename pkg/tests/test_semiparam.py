import warnings

import numpy as np
import pytest

import oracles
from ntumatch.dgp import DgpConfig, simulate_market
from ntumatch.errors import EstimationError, InvalidInput, RankDeficiencyError
from ntumatch.market import Market
from ntumatch.semiparam import (DerivativeMatrices, KernelConfig, KernelFit, LinearIndex, LowDensityWarning,
                                NormalIndexModel, analytic_gradients, average_derivatives, estimate_sigma,
                                kernel_gradients, match_probabilities, outcome_matrix, rank_condition,
                                rank_report, solve_coefficients)


def index_market(n, C, delta, seed):
    """Market whose shifters are the indices of a NormalIndexModel:
    r_c = y_c, t_c = w_c, outcomes drawn at fixed cutoffs."""
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(n, C))
    w = rng.normal(size=(n, C))
    a = NormalIndexModel(tuple(delta)).draw_outcomes(y, w, rng)
    m = Market(y=y, w=w, z=rng.normal(size=(n, 1)), capacities=[n] * C, z_names=("z",))
    return m, a


def test_config_validation():
    with pytest.raises(InvalidInput):
        KernelConfig(kernel="epanechnikov")
    with pytest.raises(InvalidInput):
        KernelConfig(bandwidths=(1.0, -1.0))
    with pytest.raises(InvalidInput):
        KernelConfig(trim_fraction=0.5)
    with pytest.raises(InvalidInput):
        KernelConfig(bandwidths="scott")
    assert KernelConfig(bandwidths=[0.5, 2]).bandwidths == (0.5, 2.0)


def test_degenerate_outcome():
    rng = np.random.default_rng(0)
    n = 200
    m = Market(y=rng.normal(size=(n, 1)), w=rng.normal(size=(n, 1)), z=np.zeros((n, 0)), capacities=[n])
    est = estimate_sigma(m, np.ones(n, dtype=np.int64), [0.1, -0.2], ["y1", "w1"])
    assert est.prob.tolist() == [0.0, 1.0]
    assert np.all(np.abs(est.grad) < 1e-12)
    mats = average_derivatives(Market(y=m.y, w=m.w, z=rng.normal(size=(n, 3)), capacities=[n],
                                      z_names=("s", "z", "m")), np.ones(n, dtype=np.int64))
    for arr in (mats.d_y, mats.d_w, mats.d_s, mats.d_m, mats.z_lhs, mats.z_rhs):
        assert np.all(np.abs(arr) < 1e-12)


def test_one_college_against_analytic():
    m, a = index_market(10_000, 1, (0.3,), seed=1)
    at = np.median(np.column_stack([m.y[:, 0], m.w[:, 0]]), axis=0)
    est = estimate_sigma(m, a, at, ["y1", "w1"])
    truth = oracles.one_college_sigma(at[0], at[1], 0.3)
    assert abs(est.prob[1] - truth) <= 0.05
    assert abs(est.prob.sum() - 1) < 1e-9


def test_symmetric_two_colleges():
    # at n=1e4 the pointwise sd of the difference is about 0.026 on (y1, y2)
    # and 0.047 on all four shifters, so the bound is three sds of the former
    m, a = index_market(10_000, 2, (0.0, 0.0), seed=2)
    est = estimate_sigma(m, a, np.zeros(2), ["y1", "y2"])
    assert abs(est.prob[1] - est.prob[2]) <= 0.08


def test_smoother_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(400, 3))
    Y = outcome_matrix(rng.integers(0, 3, 400), 2)
    fit = KernelFit(X, Y, KernelConfig().resolve(X))
    P = rng.normal(scale=0.7, size=(10, 3))
    _, grad, _ = fit.evaluate(P)
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1e-5
        fd = (fit.evaluate(P + e)[0] - fit.evaluate(P - e)[0]) / 2e-5
        rel = np.abs(fd - grad[:, :, k]) / np.maximum(np.abs(grad[:, :, k]), 1e-3)
        assert rel.max() <= 1e-6


def test_probabilities_valid_everywhere():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 2))
    fit = KernelFit(X, outcome_matrix(rng.integers(0, 4, 300), 3), np.array([0.4, 0.4]))
    p, _, _ = fit.evaluate(rng.normal(scale=3, size=(50, 2)))
    assert np.all((p >= 0) & (p <= 1))
    assert np.allclose(p.sum(axis=1), 1, atol=1e-9)


def test_low_density_warning():
    m, a = index_market(500, 1, (0.0,), seed=5)
    with pytest.warns(LowDensityWarning):
        est = estimate_sigma(m, a, [8.0, 0.0], ["y1", "w1"])
    assert est.low_density
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert not estimate_sigma(m, a, [0.0, 0.0], ["y1", "w1"]).low_density


def test_input_errors():
    m, a = index_market(40, 1, (0.0,), seed=6)
    with pytest.raises(InvalidInput):
        estimate_sigma(m, a, [0, 0], ["y1", "w1"])  # fewer than 50 observations
    m, a = index_market(100, 1, (0.0,), seed=6)
    with pytest.raises(InvalidInput):
        estimate_sigma(m, a, [0, 0], ["y1", "nope"])
    with pytest.raises(InvalidInput):
        estimate_sigma(m, a, [0, 0], ["y3", "w1"])
    flat = Market(y=np.ones((100, 1)), w=np.ones((100, 1)), z=np.zeros((100, 0)), capacities=[100])
    with pytest.raises(InvalidInput):
        estimate_sigma(flat, a, [1, 1], ["y1", "w1"])  # zero spread, Silverman bandwidth 0


def test_everything_trimmed():
    from ntumatch.semiparam import average_gradient

    X = np.ones((60, 1))
    fit = KernelFit(X, outcome_matrix(np.zeros(60, dtype=int), 1), np.array([1.0]))
    with pytest.raises(EstimationError):
        average_gradient(fit, KernelConfig(bandwidths=(1.0,)))


def test_sign_of_own_shifters():
    sim = simulate_market(DgpConfig.appendix_c1(seed=4))
    mats = average_derivatives(sim.market, sim.matching)
    assert np.all(np.diag(mats.d_y) < 0)  # y holds the disliked demand shifter
    assert np.all(np.diag(mats.d_w) > 0)
    assert np.all(np.diag(mats.d_r) > 0)
    assert mats.masks["student"].mean() == pytest.approx(0.95, abs=0.01)


def synthetic(C=3, seed=0, y_coef=-1.0):
    rng = np.random.default_rng(seed)
    beta_s, gamma_m = rng.normal(size=C), rng.normal(size=C)
    bz, gz = 0.7, -1.3
    d_r = rng.normal(size=(C, C)) + 3 * np.eye(C)
    d_w = rng.normal(size=(C, C)) + 3 * np.eye(C)
    z_rhs = np.column_stack([d_w.sum(axis=1), d_r.sum(axis=1)])
    mats = DerivativeMatrices(d_y=y_coef * d_r, d_w=d_w, d_s=d_r @ beta_s, d_m=d_w @ gamma_m,
                              z_lhs=z_rhs @ [gz, bz], z_rhs=z_rhs, y_coef=y_coef)
    return mats, beta_s, gamma_m, bz, gz


def test_noiseless_recovery_and_variant_agreement():
    mats, beta_s, gamma_m, bz, gz = synthetic()
    est = solve_coefficients(mats)
    assert np.allclose(est.beta_s, beta_s, rtol=0, atol=1e-10)
    assert np.allclose(est.gamma_m, gamma_m, rtol=0, atol=1e-10)
    assert set(est.shared) == {"gmm", "1,2", "1,3", "2,3"}
    for b, g in est.shared.values():
        assert abs(b - bz) < 1e-9 and abs(g - gz) < 1e-9
    row = est.row("1,3")
    assert row["beta_z"] == pytest.approx(bz, abs=1e-9) and "gamma_m_3" in row


def test_scale_consistency():
    mats = synthetic(seed=1)[0]
    mats.z_lhs = mats.z_lhs + np.array([0.01, -0.02, 0.03])  # make the GMM row over-identified
    a, b = solve_coefficients(mats), solve_coefficients(mats.scaled(37.5))
    assert np.allclose(a.beta_s, b.beta_s, atol=1e-12) and np.allclose(a.gamma_m, b.gamma_m, atol=1e-12)
    for k in a.shared:
        assert np.allclose(a.shared[k], b.shared[k], atol=1e-12)


def test_singular_system_raises_with_report():
    mats = synthetic()[0]
    mats.d_y[1] = mats.d_y[0]
    with pytest.raises(RankDeficiencyError) as exc:
        solve_coefficients(mats)
    assert exc.value.report.rank == 2


def test_rank_report():
    rep = rank_report(np.diag([3.0, 2.0, 1.0]))
    assert rep.passes and rep.rank == 3 and rep.condition_number == pytest.approx(3.0)
    assert list(rep.singular_values) == sorted(rep.singular_values, reverse=True)
    rep = rank_report(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert not rep.passes and rep.rank == 1


def test_analytic_model_against_simulation_and_fd():
    model = NormalIndexModel((0.2, -0.4, np.inf * -1))
    r, t = np.array([0.3, -0.1, 0.5]), np.array([0.1, 0.4, 0.0])
    sig, dr, dt = model.probabilities(r, t)
    assert sig.sum() == pytest.approx(1, abs=1e-12)
    rng = np.random.default_rng(7)
    n = 200_000
    out = model.draw_outcomes(np.tile(r, (n, 1)), np.tile(t, (n, 1)), rng)
    freq = np.bincount(out, minlength=4) / n
    assert np.all(np.abs(freq - sig) < 4 * np.sqrt(sig * (1 - sig) / n))
    h = 1e-5
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd_r = (model.probabilities(r + e, t)[0] - model.probabilities(r - e, t)[0]) / (2 * h)
        fd_t = (model.probabilities(r, t + e)[0] - model.probabilities(r, t - e)[0]) / (2 * h)
        assert np.allclose(fd_r, dr[:, k], atol=1e-8)
        assert np.allclose(fd_t, dt[:, k], atol=1e-8)
    assert np.all(dt[:, 2] == 0)  # no cutoff, no dependence on t_3


def test_rank_condition_cases():
    idx = LinearIndex(beta=(0.5,), gamma=(0.8,), y_coef=1.0)
    fn = analytic_gradients(NormalIndexModel((0.1,)), idx)
    rep = rank_condition(fn, 0.2, np.array([0.1]), np.array([-0.3]), np.array([0.6]))
    assert rep.passes and rep.rank == 2
    fn2 = analytic_gradients(NormalIndexModel((0.1, -np.inf)), LinearIndex((0.5, 0.5), (0.8, 0.8)))
    rep = rank_condition(fn2, 0.0, np.zeros(2), np.zeros(2), np.ones(2))
    assert not rep.passes and rep.rank < 4
    fn3 = analytic_gradients(NormalIndexModel((0.1, 0.3)), LinearIndex((0.5, 0.5), (0.8, 0.8)))
    rep = rank_condition(fn3, 0.0, np.zeros(2), np.full(2, 0.2), np.full(2, 0.2))
    assert not rep.passes and rep.rank <= 2


def test_match_probability_chain_rule():
    idx = LinearIndex(beta=(0.4, -0.2), gamma=(1.1, 0.3), y_coef=-1.0)
    model = NormalIndexModel((0.0, 0.5))
    sig, dz, dy, dw = match_probabilities(model, idx, 0.3, np.array([0.2, -0.1]), np.array([0.5, 0.0]))
    h = 1e-5
    fd = (match_probabilities(model, idx, 0.3 + h, np.array([0.2, -0.1]), np.array([0.5, 0.0]))[0]
          - match_probabilities(model, idx, 0.3 - h, np.array([0.2, -0.1]), np.array([0.5, 0.0]))[0]) / (2 * h)
    assert np.allclose(fd, dz, atol=1e-8)
    assert np.allclose(dz, dy @ (np.array(idx.beta) / idx.y_coef) + dw @ np.array(idx.gamma), atol=1e-12)


def test_kernel_gradients_shape():
    sim = simulate_market(DgpConfig(n_students=400, capacities=(100, 90, 100), seed=1))
    fn = kernel_gradients(sim.market, sim.matching, shared="z")
    dy, dw = fn(0.0, np.zeros(3), np.zeros(3))
    assert dy.shape == (4, 3) and dw.shape == (4, 3)
    assert np.allclose(dy.sum(axis=0), 0, atol=1e-12)
