import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from aan_gaitsim.controller import GainSet
from aan_gaitsim.optimizer import (
    BayesOpt,
    GpModel,
    Hyperparams,
    ObjectiveWeights,
    Region,
    _hyper_bounds,
    activation,
    check_stop,
    expected_improvement,
    gp_posterior,
    gp_posterior_batch,
    log_marginal_likelihood,
    next_params,
    objective,
    optimize_hyperparams,
)

REGION = Region()
e_t = st.floats(0.001, 10.0)


def gains_in_region(rng, n):
    return [GainSet(*(REGION.lower + rng.random(2) * REGION.span)) for _ in range(n)]


def model_from(rng, n, hyper=Hyperparams(), fn=None):
    m = GpModel(hyper=hyper)
    for g in gains_in_region(rng, n):
        m.add(g, fn(g) if fn else float(rng.normal()))
    return m


# --- activation and objective ----------------------------------------------


def test_activation_examples():
    assert activation(0.0, 2.5) == 0.0
    assert activation(1.25, 2.5) == pytest.approx(0.25 * 2.5, rel=1e-8)
    assert activation(5.0, 2.5) == pytest.approx(5.0, rel=1e-3)


@given(e=st.floats(-100, 100), t=e_t)
def test_activation_squeeze_even_and_oracle(e, t):
    v = activation(e, t)
    assert 0.0 <= v <= abs(e) * (1 + 1e-12)
    assert v == activation(-e, t)
    if abs(e / t) < 30:
        assert v == pytest.approx(oracles.activation(e, t), rel=1e-9, abs=1e-300)


@given(a=st.floats(0, 100), b=st.floats(0, 100), t=e_t)
def test_activation_monotone_in_magnitude(a, b, t):
    lo, hi = sorted((a, b))
    assert activation(hi, t) >= activation(lo, t)


def test_activation_survives_huge_ratios():
    assert activation(1e6, 1e-3) == pytest.approx(1e6)
    with pytest.raises(ValueError):
        activation(1.0, 0.0)


def test_objective_examples():
    assert objective(0.0, 0.0, 0.0) == 0.0
    assert objective(12.14, 0.0, 0.0) == pytest.approx(-12.14, rel=1e-6)
    assert objective(0.0, 0.0, 10.0) == pytest.approx(-1.0)


@given(
    st.tuples(st.floats(-30, 30), st.floats(-0.5, 0.5), st.floats(0, 19.8)),
    st.integers(0, 2),
    st.floats(0, 1),
)
def test_objective_ordering(stats, which, shrink):
    e_th, e_ph, f = stats
    base = objective(e_th, e_ph, f)
    smaller = list(stats)
    smaller[which] *= shrink
    assert objective(*smaller) >= base - 1e-12
    assert base == pytest.approx(oracles.objective(e_th, e_ph, f), rel=1e-9, abs=1e-12)


def test_objective_weight_validation():
    with pytest.raises(ValueError):
        ObjectiveWeights(gamma=(1.0, -1.0, 0.0))
    with pytest.raises(ValueError):
        ObjectiveWeights(e_t_phi=0.0)


# --- region ----------------------------------------------------------------


def test_region_init_sets_are_corners_and_centre():
    s = REGION.init_sets()
    assert set(g.as_tuple() for g in s[:4]) == set(itertools.product((0.2, 2.0), (0.0, 2.0)))
    assert s[4].as_tuple() == pytest.approx((1.1, 1.0))
    assert REGION.diameter == pytest.approx(math.hypot(1.8, 2.0))


def test_model_rejects_gains_outside_region():
    with pytest.raises(ValueError):
        GpModel().add(GainSet(2.5, 0.0), 1.0)


# --- GP posterior ----------------------------------------------------------


def test_empty_model_returns_prior():
    assert gp_posterior(GpModel(hyper=Hyperparams(sigma=2.5)), GainSet(1, 1)) == (0.0, 2.5)


def test_single_noiseless_observation_is_interpolated():
    m = GpModel(hyper=Hyperparams(sigma=1.0, sigma_noise=1e-9))
    m.add(GainSet(1.0, 0.5), 3.0)
    mu, sd = gp_posterior(m, GainSet(1.0, 0.5))
    assert mu == pytest.approx(3.0, abs=1e-9)
    assert sd == pytest.approx(0.0, abs=1e-6)


@settings(max_examples=100)
@given(
    seed=st.integers(0, 10**6),
    n=st.integers(1, 12),
    sigma=st.floats(0.1, 5),
    sn=st.floats(0.01, 1),
    l1=st.floats(0.1, 3),
    l2=st.floats(0.1, 3),
)
def test_posterior_matches_dense_oracle(seed, n, sigma, sn, l1, l2):
    rng = np.random.default_rng(seed)
    m = model_from(rng, n, Hyperparams(sigma, sn, l1, l2))
    xs = REGION.lower + rng.random((6, 2)) * REGION.span
    mu, sd = gp_posterior_batch(m, xs)
    x, y = m.arrays()
    mu_o, sd_o = oracles.gp_dense(x, y, xs, sigma, sn, l1, l2)
    np.testing.assert_allclose(mu, mu_o, atol=1e-10 * max(1.0, np.abs(mu_o).max()))
    np.testing.assert_allclose(sd, sd_o, atol=1e-7)
    assert np.all(sd >= 0)


def test_duplicate_noiseless_points_fall_back_to_jitter():
    m = GpModel(hyper=Hyperparams(sigma=1.0, sigma_noise=0.0))
    m.add(GainSet(1.0, 1.0), 1.0)
    m.add(GainSet(1.0, 1.0), 1.0)
    mu, sd = gp_posterior(m, GainSet(1.0, 1.0))
    assert m.jitter_used
    assert mu == pytest.approx(1.0, abs=1e-6)


@given(seed=st.integers(0, 10**6), n=st.integers(2, 10))
def test_log_evidence_and_gradient(seed, n):
    rng = np.random.default_rng(seed)
    x = REGION.lower + rng.random((n, 2)) * REGION.span
    y = rng.normal(size=n)
    theta = np.exp(rng.uniform(-1, 0.5, 4))
    v, g = log_marginal_likelihood(x, y, theta, grad=True)
    assert v == pytest.approx(oracles.gp_log_evidence(x, y, *theta), rel=1e-9, abs=1e-9)
    h = 1e-6
    for i in range(4):
        zp, zm = np.log(theta).copy(), np.log(theta).copy()
        zp[i] += h
        zm[i] -= h
        fd = (log_marginal_likelihood(x, y, np.exp(zp)) - log_marginal_likelihood(x, y, np.exp(zm))) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-5)


# --- hyperparameters -------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_hyperparams_beat_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    m = model_from(rng, 12, fn=lambda g: math.sin(2 * g.k_theta) + 0.5 * g.k_phi + rng.normal(0, 0.1))
    h = optimize_hyperparams(m)
    x, y = m.arrays()
    b = _hyper_bounds(REGION, y)
    axes = [np.exp(np.linspace(np.log(lo), np.log(hi), 10)) for lo, hi in b]
    best_grid = max(oracles.gp_log_evidence(x, y, *t) for t in itertools.product(*axes))
    assert log_marginal_likelihood(x, y, h.as_array()) >= best_grid - 1e-6
    assert not m.hyper_fit_failed
    assert np.all(h.as_array() >= b[:, 0] * (1 - 1e-9)) and np.all(h.as_array() <= b[:, 1] * (1 + 1e-9))


@pytest.mark.parametrize("seed", range(5))
def test_length_scales_recovered_from_gp_draw(seed):
    rng = np.random.default_rng(seed)
    ls = 0.3 * REGION.span
    x = REGION.lower + rng.random((40, 2)) * REGION.span
    d = (x[:, None, :] - x[None, :, :]) / ls
    k = np.exp(-0.5 * np.sum(d * d, axis=-1)) + 1e-10 * np.eye(40)
    y = np.linalg.cholesky(k) @ rng.normal(size=40) + rng.normal(0, 0.05, 40)
    m = GpModel()
    for xi, yi in zip(x, y):
        m.add(GainSet(*xi), yi)
    h = optimize_hyperparams(m)
    for got, true in ((h.l1, ls[0]), (h.l2, ls[1])):
        assert true / 2 <= got <= true * 2


def test_zero_data_drives_signal_and_noise_to_lower_bounds():
    m = model_from(np.random.default_rng(0), 8, fn=lambda g: 0.0)
    h = optimize_hyperparams(m)
    b = _hyper_bounds(REGION, np.zeros(8))
    assert h.sigma == pytest.approx(b[0, 0], rel=1e-3)
    assert h.sigma_noise == pytest.approx(b[1, 0], rel=1e-3)


def test_hyperparam_fit_needs_two_points():
    m = GpModel()
    m.add(GainSet(1, 1), 0.0)
    with pytest.raises(ValueError):
        optimize_hyperparams(m)


def test_failed_fit_keeps_previous_hyperparams():
    m = model_from(np.random.default_rng(5), 10)
    best = optimize_hyperparams(m)
    again = optimize_hyperparams(m)  # already optimal: nothing improves
    assert m.hyper_fit_failed
    assert again.as_array() == pytest.approx(best.as_array())


# --- expected improvement ---------------------------------------------------


def test_ei_examples():
    assert expected_improvement(5.0, 0.0, 0.0) == 0.0
    assert expected_improvement(1.01, 1.0, 1.0, 0.01) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    assert expected_improvement(0.0, 1.0, 1.0, 0.01) == pytest.approx(oracles.ei_integral(0.0, 1.0, 1.0, 0.01), rel=1e-7)
    tail = expected_improvement(-10.0, 0.5, 0.0, 0.01)
    assert tail < 1e-12
    assert tail == pytest.approx(oracles.ei_integral(-10.0, 0.5, 0.0, 0.01), abs=1e-20)
    with pytest.raises(ValueError):
        expected_improvement(0.0, 1.0, 0.0, -0.1)


@given(mu=st.floats(-5, 5), sd=st.floats(0.01, 5), yb=st.floats(-5, 5), z=st.floats(0, 1))
def test_ei_matches_integral_oracle(mu, sd, yb, z):
    assert expected_improvement(mu, sd, yb, z) == pytest.approx(oracles.ei_integral(mu, sd, yb, z), rel=1e-6, abs=1e-12)


@given(mu=st.floats(-10, 10), a=st.floats(0, 10), b=st.floats(0, 10), yb=st.floats(-10, 10), z=st.floats(0, 1))
def test_ei_non_negative_and_monotone_in_sigma(mu, a, b, yb, z):
    lo, hi = sorted((a, b))
    e_lo, e_hi = expected_improvement(mu, lo, yb, z), expected_improvement(mu, hi, yb, z)
    assert e_lo >= 0.0 and e_hi >= 0.0
    if mu <= yb + z:
        assert e_hi >= e_lo - 1e-15


def test_ei_vectorized():
    out = expected_improvement(np.array([0.0, 1.0]), np.array([1.0, 0.0]), 0.0, 0.0)
    assert out.shape == (2,) and out[1] == 0.0


# --- next_params -----------------------------------------------------------


def test_next_params_returns_dominant_corner():
    m = GpModel(hyper=Hyperparams(sigma=1.0, sigma_noise=0.1, l1=0.4, l2=0.4))
    m.add(GainSet(2.0, 2.0), 5.0)
    sel = next_params(m, y_best=-10.0)
    assert sel.gains.as_tuple() == pytest.approx((2.0, 2.0))


def test_next_params_moves_away_from_noiseless_observation():
    m = GpModel(hyper=Hyperparams(sigma=1.0, sigma_noise=1e-6, l1=0.5, l2=0.5))
    m.add(GainSet(1.1, 1.0), 0.0)
    sel = next_params(m)
    assert np.max(np.abs(REGION.normalize(sel.gains) - REGION.normalize(GainSet(1.1, 1.0)))) > 0.1
    assert gp_posterior(m, GainSet(1.1, 1.0))[1] < 1e-4


def test_next_params_tie_breaks_toward_small_k_theta():
    m = GpModel(hyper=Hyperparams(sigma=1.0, sigma_noise=0.05, l1=0.3, l2=0.3))
    m.add(GainSet(0.65, 1.0), -1.0)
    m.add(GainSet(1.55, 1.0), -1.0)
    # EI peaks equally at the four corners mirrored about the centre
    assert next_params(m, y_best=0.0).gains.as_tuple() == pytest.approx((0.2, 0.0))


def test_next_params_falls_back_to_exploration():
    m = GpModel(hyper=Hyperparams(sigma=1.0, sigma_noise=0.01, l1=0.3, l2=0.3))
    m.add(GainSet(0.2, 0.0), 0.0)
    sel = next_params(m, y_best=1e6)
    assert sel.exploration_fallback and sel.ei == 0.0
    assert sel.gains.as_tuple() != (0.2, 0.0)


@settings(max_examples=25)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 10))
def test_next_params_stays_inside_region(seed, n):
    m = model_from(np.random.default_rng(seed), n, Hyperparams(1.0, 0.1, 0.3, 0.3))
    sel = next_params(m, n_grid=31)
    assert REGION.contains(sel.gains)


# --- check_stop ------------------------------------------------------------


def walk(deltas, start=(0.5, 0.5)):
    u = np.array(start, dtype=float)
    out = [GainSet(*(REGION.lower + u * REGION.span))]
    for d in deltas:
        u = u + np.array([d, 0.0])
        out.append(GainSet(*(REGION.lower + u * REGION.span)))
    return out


def test_check_stop_examples():
    x = GainSet(1.0, 1.0)
    assert check_stop([x, x, x, x])
    assert check_stop(walk([0.02, 0.01, 0.029]))
    assert not check_stop(walk([0.02, 0.05, 0.01]))
    assert not check_stop([x, x, x])
    assert check_stop(walk([0.5, 0.0, 0.0, 0.0]))


# --- BO driver -------------------------------------------------------------


def test_bayes_opt_loop_proposes_feasible_gains():
    bo = BayesOpt()
    f = lambda g: -((g.k_theta - 1.3) ** 2 + (g.k_phi - 0.7) ** 2)
    for g in bo.region.init_sets():
        bo.tell(g, f(g))
    for _ in range(4):
        sel = bo.ask()
        assert bo.region.contains(sel.gains)
        bo.tell(sel.gains, f(sel.gains))
    assert bo.best_evaluated() in bo.gains
    assert bo.incumbent() == pytest.approx(max(gp_posterior_batch(bo.model, np.array(bo.model.x))[0]))
    with pytest.raises(ValueError):
        BayesOpt().best_evaluated()
