import warnings

import numpy as np
import pytest

from ntumatch.dgp import DgpConfig, index_model, simulate_market, substreams
from ntumatch.errors import ConfigError
from ntumatch.market import audit_stability


@pytest.fixture(scope="module")
def sim():
    return simulate_market(DgpConfig.appendix_c1(seed=3))


def test_default_design(sim):
    cfg = sim.config
    assert sum(cfg.capacities) == 2200 and cfg.n_students == 3000
    assert np.all(sim.matching.binding(sim.market.capacities))
    assert np.all(np.isfinite(sim.matching.cutoffs))
    assert sim.nonbinding == ()
    assert audit_stability(sim.market, sim.utilities, sim.matching).stable


def test_truth_order_and_length(sim):
    t = sim.truth
    assert t.size == 19
    names = sim.model.param_names
    assert names[:3] == ("beta_d_1", "beta_s_1", "beta_z_1") and names[-1] == "sigma_eps_3"
    assert t[names.index("beta_d_2")] == -1 and t[names.index("gamma_z_3")] == 1


def test_no_excess_demand_rejected():
    with pytest.raises(ConfigError):
        DgpConfig(n_students=3000, capacities=(1500, 1500, 1500))


def test_bad_configs():
    with pytest.raises(ConfigError):
        DgpConfig(beta_d=(1.0, 1.0))
    with pytest.raises(ConfigError):
        DgpConfig(covariates={"d": (0, 0.0), "s": (5, 36), "z": (0, 36), "w": (0, 36), "m": (0, 36)})
    with pytest.raises(ConfigError):
        DgpConfig(sigma_eps=(1.0, 1.0, 0.0))


def test_seed_determinism():
    a = simulate_market(DgpConfig.appendix_c1(seed=42))
    b = simulate_market(DgpConfig.appendix_c1(seed=42))
    for x, y in [(a.market.y, b.market.y), (a.market.w, b.market.w), (a.market.z, b.market.z),
                 (a.utilities.student, b.utilities.student), (a.utilities.college, b.utilities.college)]:
        assert np.array_equal(x, y)
    assert a.matching == b.matching
    c = simulate_market(DgpConfig.appendix_c1(seed=43))
    assert not np.array_equal(a.market.y, c.market.y)


def test_substreams_independent():
    a, b, _ = substreams(5)
    assert not np.array_equal(a.standard_normal(10), b.standard_normal(10))


def test_covariate_moments(sim):
    n = sim.market.n_students
    se_mean = 6 / np.sqrt(n)
    se_var = 36 * np.sqrt(2 / (n - 1))
    z = sim.market.z
    for k, mean in enumerate((5.0, 0.0, 0.0)):
        assert abs(z[:, k].mean() - mean) < 4 * se_mean
        assert abs(z[:, k].var(ddof=1) - 36) < 4 * se_var
    for arr in (sim.market.y, sim.market.w):
        for c in range(3):
            assert abs(arr[:, c].mean()) < 4 * se_mean
            assert abs(arr[:, c].var(ddof=1) - 36) < 4 * se_var


def test_utilities_follow_index(sim):
    # deterministic part recovered exactly from the truth: residuals are the shocks
    model = sim.model
    beta, gamma, _ = model.split(sim.truth)
    eps = sim.utilities.student[:, 1:] - model.student_mean(beta)
    eta = sim.utilities.college - model.college_mean(gamma)
    assert abs(eps.std() - 1) < 0.03 and abs(eta.std() - 1) < 0.03


def test_nonbinding_warns():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        s = simulate_market(DgpConfig(n_students=300, capacities=(10, 10, 270), seed=1))
    assert s.nonbinding and any("not binding" in str(w.message) for w in rec)


def test_reduced_design():
    cfg = DgpConfig.reduced(seed=0)
    assert cfg.beta_z == (1.0, 0.0, 0.0) and cfg.gamma_z == (0.0, 0.0, 1.0)


def test_index_model_free_sigma(sim):
    m = index_model(sim.market, free_sigma=(0, 2))
    assert m.sigma_names == ("sigma_eps_1", "sigma_eps_3")
    assert m.n_params == 20
