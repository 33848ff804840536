import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy import testing as npt

from romes.regression import (GPConfig, GPModel, LegendreBasis, NormalPrediction, RBFBasis,
                              RVMConfig, RVMModel, ScalingError, SquaredExponential,
                              TrainingSet, equivalent_kernel, fit_scaling, gp_condition,
                              gp_train, legendre, log_likelihood, rvm_train, scale_features)
from romes.regression.rvm import _posterior

from . import oracles


# -- feature scaling ---------------------------------------------------------------------

def test_legendre_scaling_example():
    x = np.array([[0.0], [2.5], [10.0]])
    s = fit_scaling(x, "legendre")
    npt.assert_allclose(s.apply([[-1.0], [11.0], [5.0]]).ravel(), [-1.0, 1.0, 0.0], atol=1e-15)


@given(st.lists(st.floats(-1e3, 1e3).map(lambda v: round(v, 6)), min_size=3, max_size=20,
                unique=True),
       st.sampled_from(["standard", "minmax", "legendre", "identity"]))
def test_scaling_roundtrip(vals, mode):
    x = np.array(vals).reshape(-1, 1)
    z, s = scale_features(x, mode)
    npt.assert_allclose(s.inverse(z), x, rtol=1e-12, atol=1e-12 * np.abs(x).max())


def test_minmax_range():
    z, _ = scale_features(np.array([[1.0, 5.0], [3.0, 7.0], [2.0, 6.0]]), "minmax")
    npt.assert_allclose(z.min(axis=0), -1.0)
    npt.assert_allclose(z.max(axis=0), 1.0)


def test_constant_feature_rejected():
    with pytest.raises(ScalingError, match=r"\[1\]"):
        fit_scaling(np.array([[0.0, 2.0], [1.0, 2.0]]), "standard")


def test_unknown_scaling_mode():
    with pytest.raises(ValueError):
        fit_scaling(np.array([0.0, 1.0]), "robust")


# -- containers --------------------------------------------------------------------------

@pytest.mark.parametrize("x, y", [
    (np.zeros(3), np.zeros(2)),
    (np.zeros(1), np.zeros(1)),
    (np.array([0.0, np.nan]), np.zeros(2)),
    (np.zeros(2), np.array([0.0, np.inf])),
])
def test_training_set_rejects(x, y):
    with pytest.raises(ValueError):
        TrainingSet(x, y)


def test_prediction_variance_modes():
    p = NormalPrediction(mean=np.zeros(2), var_mean=np.array([1.0, 2.0]), noise_var=0.5)
    npt.assert_array_equal(p.variance("full"), [1.5, 2.5])
    npt.assert_array_equal(p.variance("noise"), [0.5, 0.5])
    with pytest.raises(ValueError):
        p.variance("mean")


# -- Gaussian process -------------------------------------------------------------------------

@pytest.fixture
def small_data():
    rng = np.random.default_rng(5)
    x = rng.uniform(-2, 2, (5, 2))
    y = np.sin(x[:, 0]) + 0.3 * x[:, 1] ** 2
    return x, y


def test_gp_matches_dense_oracle(small_data):
    x, y = small_data
    xs = np.random.default_rng(6).uniform(-3, 3, (7, 2))
    l2, s2 = 0.7, 1e-3
    m = gp_condition(SquaredExponential(l2), x, y, s2, jitter=0.0)
    p = m.predict(xs)
    mean, var = oracles.gp_dense(x, y, xs, l2, s2)
    npt.assert_allclose(p.mean, mean, rtol=1e-10, atol=1e-12)
    npt.assert_allclose(p.var_mean, var, rtol=1e-10, atol=1e-12)
    assert p.noise_var == s2


def test_log_likelihood_matches_oracle(small_data):
    x, y = small_data
    for l2, s2 in [(0.3, 1e-2), (2.0, 0.5), (10.0, 1e-6)]:
        assert log_likelihood(x, y, l2, s2, jitter=0.0) == pytest.approx(
            oracles.gp_loglik_dense(x, y, l2, s2), rel=1e-10)


@pytest.mark.parametrize("l2, s2", [(0.5, 1e-2), (3.0, 0.2)])
def test_log_likelihood_gradient(small_data, l2, s2):
    x, y = small_data
    _, g = log_likelihood(x, y, l2, s2, jitter=0.0, grad=True)
    h = 1e-6
    fd = []
    for i in range(2):
        t = np.log([l2, s2])
        tp, tm = t.copy(), t.copy()
        tp[i] += h
        tm[i] -= h
        fd.append((log_likelihood(x, y, *np.exp(tp), jitter=0.0)
                   - log_likelihood(x, y, *np.exp(tm), jitter=0.0)) / (2 * h))
    npt.assert_allclose(g, fd, rtol=1e-5)


def test_gp_interpolates_noise_free_data():
    x = np.random.default_rng(0).uniform(-2, 2, (20, 2))
    y = np.sin(x[:, 0]) * np.cos(x[:, 1])
    m = gp_train((x, y))
    assert m.noise_variance <= 1e-6 * np.var(y)
    npt.assert_allclose(m.predict(x).mean, y, atol=1e-6)


def test_gp_far_field_returns_prior():
    x = np.linspace(0, 1, 10)
    y = 3.0 + np.cos(3 * x)
    m = gp_train((x, y))
    p = m.predict(np.array([1e4]))
    assert p.mean[0] == pytest.approx(m.y_offset, abs=1e-12)
    assert m.y_offset == pytest.approx(y.mean())
    assert p.var_mean[0] == pytest.approx(m.y_scale ** 2)


def test_gp_recovers_noise_level():
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 6, 200)
    y = np.sin(x) + 0.1 * rng.standard_normal(200)
    m = gp_train((x, y))
    assert 0.07 <= np.sqrt(m.noise_variance) <= 0.13


def test_gp_constant_targets():
    m = gp_train((np.linspace(0, 1, 8), np.full(8, 2.5)))
    assert m.noise_variance <= 1e-10
    npt.assert_allclose(m.predict(np.array([0.3, 7.0])).mean, 2.5, atol=1e-12)


def test_gp_duplicate_inputs_need_noise():
    x = np.array([0.0, 0.0, 1.0, 1.0, 2.0, 2.0])
    y = np.array([0.0, 0.4, 1.0, 1.4, 0.0, 0.4])
    m = gp_train((x, y))
    assert m.noise_variance > 1e-3


@pytest.mark.parametrize("targets", ["center", "standardize", "none"])
def test_gp_target_normalization(targets):
    x = np.linspace(0, 2, 15)
    y = 100.0 + 5 * np.sin(3 * x)
    m = gp_train((x, y), GPConfig(targets=targets))
    assert m.y_offset == (0.0 if targets == "none" else pytest.approx(y.mean()))
    assert m.y_scale == (pytest.approx(y.std()) if targets == "standardize" else 1.0)


def test_gp_bad_target_option():
    with pytest.raises(ValueError):
        gp_train((np.arange(3.0), np.arange(3.0)), GPConfig(targets="whiten"))


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=10),
       st.floats(-3, 3), st.floats(-4, 4))
def test_posterior_variance_never_grows(xs, xnew, xq):
    x = np.array(xs)
    y = np.sin(x)
    k = SquaredExponential(0.8)
    before = gp_condition(k, x, y, 1e-4).predict(np.array([xq])).var_mean[0]
    after = gp_condition(k, np.append(x, xnew), np.append(y, 0.0), 1e-4) \
        .predict(np.array([xq])).var_mean[0]
    assert after <= before + 1e-9


def test_gp_deterministic(small_data):
    x, y = small_data
    a, b = gp_train((x, y)), gp_train((x, y))
    assert (a.l2, a.sigma2) == (b.l2, b.sigma2)


def test_gp_serialization_roundtrip(small_data):
    x, y = small_data
    m = gp_train((x, y))
    back = GPModel.from_dict(json.loads(json.dumps(m.to_dict())))
    xs = np.random.default_rng(2).uniform(-2, 2, (20, 2))
    pa, pb = m.predict(xs), back.predict(xs)
    npt.assert_allclose(pb.mean, pa.mean, rtol=1e-12, atol=1e-14)
    npt.assert_allclose(pb.var_mean, pa.var_mean, rtol=1e-12, atol=1e-14)
    d = m.to_dict()
    d["format"] = "romes.gp/0"
    with pytest.raises(ValueError):
        GPModel.from_dict(d)


def test_gp_wrong_feature_count(small_data):
    m = gp_train(small_data)
    with pytest.raises(ValueError, match="features"):
        m.predict(np.zeros((2, 3)))


# -- relevance vector machine --------------------------------------------------------------

@pytest.mark.parametrize("order", range(6))
def test_legendre_matches_recursion(order):
    z = np.linspace(-1, 1, 41)
    npt.assert_allclose(legendre(order, z), oracles.legendre_rec(order, z), atol=1e-14)


def test_legendre_values():
    assert legendre(0, 0.3) == 1.0
    assert legendre(1, 0.3) == pytest.approx(0.3)
    assert legendre(2, 0.0) == -0.5


def test_legendre_basis_layout():
    b = LegendreBasis(2, 3)
    assert len(b.names()) == 1 + 2 * 3
    z = np.array([[0.5, -0.2]])
    Phi = b.design(z)
    assert Phi[0, 0] == 1.0
    expected = [legendre(o, z[0, f]) for f, o in b.terms()[1:]]
    npt.assert_allclose(Phi[0, 1:], expected)


def test_posterior_matches_oracle():
    rng = np.random.default_rng(3)
    Phi = rng.standard_normal((30, 5))
    y = rng.standard_normal(30)
    alpha = 10.0 ** rng.uniform(-4, 8, 5)
    m, S = _posterior(Phi, y, alpha, 0.3)
    mo, So = oracles.rvm_posterior(Phi, y, alpha, 0.3)
    npt.assert_allclose(m, mo, rtol=1e-8, atol=1e-12)
    npt.assert_allclose(S, So, rtol=1e-8, atol=1e-14)


def test_single_basis_ridge():
    # one constant term with fixed noise: posterior mean is sum(y) / (N + alpha sigma2)
    rng = np.random.default_rng(4)
    y = 2.0 + 0.5 * rng.standard_normal(40)
    m = rvm_train((rng.uniform(-1, 1, 40), y), RVMConfig(max_order=0, noise_variance=0.25))
    a = m.alpha[0]
    assert m.mean[0] == pytest.approx(y.sum() / (40 + a * 0.25), rel=1e-10)
    assert m.cov[0, 0] == pytest.approx(1.0 / (40 / 0.25 + a), rel=1e-10)
    # fixed point of the re-estimation
    gamma = 1 - a * m.cov[0, 0]
    assert a == pytest.approx(gamma / m.mean[0] ** 2, rel=1e-5)


def test_rvm_prunes_high_orders_on_linear_data():
    rng = np.random.default_rng(8)
    x = rng.uniform(-1, 1, (60, 2))
    y = 1.0 + 2.0 * x[:, 0] - 0.5 * x[:, 1]
    m = rvm_train((x, y), RVMConfig(feature_scaling="identity"))
    orders = [m.basis.terms()[i][1] for i in m.active]
    assert max(orders) <= 1
    assert set(m.active.tolist()) == {0, 1, 5}
    npt.assert_allclose(m.weights()[[0, 1, 5]], [1.0, 2.0, -0.5], atol=1e-6)


def test_rvm_recovers_quadratic():
    x = np.linspace(-1, 1, 25)
    y = 0.5 + 1.5 * legendre(2, x)
    m = rvm_train((x, y), RVMConfig(feature_scaling="identity"))
    w = m.weights()
    npt.assert_allclose(w[[0, 2]], [0.5, 1.5], atol=1e-6)
    npt.assert_allclose(np.delete(w, [0, 2]), 0.0, atol=1e-6)


def test_rvm_equals_equivalent_kernel_gp():
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 4, (40, 3))
    y = np.log1p(x[:, 0]) + 0.2 * x[:, 1] - 0.1 * x[:, 2] ** 2 + 0.05 * rng.standard_normal(40)
    m = rvm_train((x, y))
    gp = gp_condition(equivalent_kernel(m), x, y, m.sigma2, scaling=m.scaling, jitter=0.0)
    xs = rng.uniform(0, 4, (30, 3))
    pr, pg = m.predict(xs), gp.predict(xs)
    scale = np.abs(pr.mean).max()
    npt.assert_allclose(pg.mean, pr.mean, atol=1e-8 * scale)
    npt.assert_allclose(pg.var_mean, pr.var_mean, atol=1e-8 * pr.var_mean.max())
    assert pg.noise_var == pr.noise_var


def test_rvm_extrapolation_flag():
    x = np.linspace(0, 1, 20)
    m = rvm_train((x, x ** 2))
    p = m.predict(np.array([0.5, 1.05, 2.0]))
    npt.assert_array_equal(p.extrapolated, [False, False, True])


def test_rvm_rbf_basis():
    rng = np.random.default_rng(10)
    x = rng.uniform(-2, 2, (50, 1))
    y = np.tanh(2 * x[:, 0]) + 0.02 * rng.standard_normal(50)
    m = rvm_train((x, y), RVMConfig(basis="rbf"))
    assert isinstance(m.basis, RBFBasis)
    assert len(m.active) < 51
    assert np.sqrt(m.noise_variance) < 0.1
    assert m.predict(np.array([[0.5]])).extrapolated is None


@pytest.mark.parametrize("basis", ["legendre", "rbf"])
def test_rvm_serialization_roundtrip(basis):
    rng = np.random.default_rng(12)
    x = rng.uniform(0, 1, (30, 2))
    y = x[:, 0] ** 2 - x[:, 1] + 0.01 * rng.standard_normal(30)
    m = rvm_train((x, y), RVMConfig(basis=basis))
    back = RVMModel.from_dict(json.loads(json.dumps(m.to_dict())))
    xs = rng.uniform(0, 1, (10, 2))
    npt.assert_allclose(back.predict(xs).mean, m.predict(xs).mean, rtol=1e-12, atol=1e-14)
    npt.assert_allclose(back.predict(xs).var_mean, m.predict(xs).var_mean, rtol=1e-12)


def test_rvm_deterministic():
    x = np.linspace(0, 1, 20)
    a, b = rvm_train((x, np.exp(x))), rvm_train((x, np.exp(x)))
    npt.assert_array_equal(a.alpha, b.alpha)
    assert a.sigma2 == b.sigma2


def test_rvm_unknown_basis():
    with pytest.raises(ValueError):
        rvm_train((np.arange(3.0), np.arange(3.0)), RVMConfig(basis="wavelet"))
