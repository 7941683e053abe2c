import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynstack.dlm import (FilterState, Prior, SystemMatrices, build_seasonal_design,
                          build_spatiotemporal_system, default_prior, filter_step, forecast_recursion,
                          observation_variance, one_step_marginal_logdensity, row_logdensities,
                          smooth_step, smoothing_gain)
from dynstack.errors import DimensionMismatch, InvalidAlpha, InvalidMonth, NotPositiveDefinite
from dynstack.matvar import MatrixTParams, mt_logdensity
from dynstack.spatial import LocationSet, exp_correlation, pairwise_distances
from oracles import batch_conjugate_posterior, information_filter, information_smoother_params


def random_problem(rng, n=4, p=2, q=2, T=4, alpha=0.7, phi=3.0):
    locs = LocationSet.from_coords(rng.uniform(size=(n, 2)))
    corr = exp_correlation(pairwise_distances(locs, locs), phi)
    prior = default_prior(locs, p, q, psi_scale=2.0)
    prior = Prior(rng.standard_normal(prior.m0.shape), prior.C0, prior.nu0 + 1.0, prior.Psi0)
    systems = [build_spatiotemporal_system(rng.standard_normal((n, p)), corr, alpha) for _ in range(T)]
    Ys = [rng.standard_normal((n, q)) for _ in range(T)]
    return prior, systems, Ys


def run_filter(prior, systems, Ys):
    states = [prior.initial_state()]
    for sys, y in zip(systems, Ys):
        states.append(filter_step(states[-1], y, sys))
    return states


@given(st.integers(0, 10_000))
def test_filter_matches_batch_conjugate_posterior(seed):
    rng = np.random.default_rng(seed)
    prior, systems, Ys = random_problem(rng)
    states = run_filter(prior, systems, Ys)
    means, covs, nu, psi = batch_conjugate_posterior(
        [s.F for s in systems], Ys, systems[0].V, systems[0].W, prior.m0, prior.C0, prior.nu0, prior.Psi0)
    last = states[-1]
    np.testing.assert_allclose(last.m, means[-1], atol=1e-8)
    np.testing.assert_allclose(last.C, covs[-1], atol=1e-8)
    assert last.nu == pytest.approx(nu)
    np.testing.assert_allclose(last.Psi, psi, atol=1e-8)


def test_filter_matches_information_form(rng):
    prior, systems, Ys = random_problem(rng, n=5, p=1, q=3, T=6)
    states = run_filter(prior, systems, Ys)
    ref = information_filter([s.F for s in systems], Ys, systems[0].V, systems[0].W,
                             prior.m0, prior.C0, prior.nu0, prior.Psi0)
    for st_, (m, c, nu, psi) in zip(states, ref):
        np.testing.assert_allclose(st_.m, m, atol=1e-8)
        np.testing.assert_allclose(st_.C, c, atol=1e-8)
        np.testing.assert_allclose(st_.Psi, psi, atol=1e-8)
        assert st_.nu == pytest.approx(nu)


def test_filter_general_evolution_matrix(rng):
    prior, systems, Ys = random_problem(rng, T=3)
    g = 0.9 * np.eye(prior.m0.shape[0])
    g[0, 1] = 0.1
    sys = [SystemMatrices(s.F, g, s.V, s.W) for s in systems]
    got = run_filter(prior, sys, Ys)[-1]
    # same filter with the state explicitly propagated first
    m, c, psi = prior.m0, prior.C0, prior.Psi0
    for s_, y in zip(sys, Ys):
        a, r = g @ m, g @ c @ g.T + s_.W
        Q = s_.F @ r @ s_.F.T + s_.V
        k = r @ s_.F.T @ np.linalg.inv(Q)
        e = y - s_.F @ a
        m, c = a + k @ e, r - k @ s_.F @ r
        psi = psi + 0.5 * e.T @ np.linalg.inv(Q) @ e
    np.testing.assert_allclose(got.m, m, atol=1e-9)
    np.testing.assert_allclose(got.C, c, atol=1e-9)
    np.testing.assert_allclose(got.Psi, psi, atol=1e-9)


def test_smoothed_moments_match_batch(rng):
    prior, systems, Ys = random_problem(rng, n=3, p=1, q=2, T=5)
    states = run_filter(prior, systems, Ys)
    means, covs, _, _ = batch_conjugate_posterior(
        [s.F for s in systems], Ys, systems[0].V, systems[0].W, prior.m0, prior.C0, prior.nu0, prior.Psi0)
    mean, cov = states[-1].m, states[-1].C
    for t in range(len(systems) - 1, -1, -1):
        gain, hh = smoothing_gain(states[t], systems[t])
        mean = states[t].m + gain @ (mean - states[t].m)
        cov = hh + gain @ cov @ gain.T
        np.testing.assert_allclose(mean, means[t], atol=1e-8)
        np.testing.assert_allclose(cov, covs[t], atol=1e-8)


def test_smooth_step_matches_information_form(rng):
    prior, systems, Ys = random_problem(rng)
    st2 = run_filter(prior, systems[:2], Ys[:2])[-1]
    theta = rng.standard_normal(st2.m.shape)
    sp = smooth_step(st2, systems[2], theta)
    h, H = information_smoother_params(st2.m, st2.C, systems[2].W, theta)
    np.testing.assert_allclose(sp.h, h, atol=1e-9)
    np.testing.assert_allclose(sp.H, H, atol=1e-9)


def test_row_logdensities_match_matrix_t(rng):
    prior, systems, Ys = random_problem(rng, q=3)
    st1 = run_filter(prior, systems[:1], Ys[:1])[-1]
    ld = one_step_marginal_logdensity(st1, systems[1], Ys[1])
    st2 = filter_step(st1, Ys[1], systems[1])
    d = 2 * st1.nu
    for i in range(len(ld)):
        ref = mt_logdensity(Ys[1][i:i + 1], MatrixTParams(d, st2.pred_q[i:i + 1],
                                                          st2.pred_Q[i:i + 1, i:i + 1], 2 * st1.Psi))
        assert ld[i] == pytest.approx(ref, abs=1e-10)
    np.testing.assert_allclose(
        ld, row_logdensities(Ys[1], st2.pred_q, np.diag(st2.pred_Q), st1.nu, st1.Psi))


def test_forecast_recursion_random_walk(rng):
    prior, systems, Ys = random_problem(rng)
    st_ = run_filter(prior, systems, Ys)[-1]
    sys = systems[-1]
    for k in (1, 3):
        fp = forecast_recursion(st_, sys, k)
        np.testing.assert_allclose(fp.A, st_.m)
        np.testing.assert_allclose(fp.R, st_.C + k * sys.W, atol=1e-12)
        np.testing.assert_allclose(fp.Q, sys.F @ fp.R @ sys.F.T + sys.V, atol=1e-12)
        np.testing.assert_allclose(fp.joint_mean, np.vstack([fp.A, sys.F @ fp.A]))
    with pytest.raises(DimensionMismatch):
        forecast_recursion(st_, [sys], 2)
    with pytest.raises(ValueError):
        forecast_recursion(st_, sys, 0)


def test_observation_variance():
    assert observation_variance(0.8) == pytest.approx(0.25)
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(InvalidAlpha):
            observation_variance(bad)


def test_seasonal_design():
    x = np.ones((3, 2))
    jan = build_seasonal_design(x, 1)
    assert jan.shape == (3, 13) and np.all(jan[:, 2] == 1) and jan[:, 3:].sum() == 0
    dec = build_seasonal_design(x, 12)
    assert dec[:, 2:].sum() == 0
    for bad in (0, 13, 2.5):
        with pytest.raises(InvalidMonth):
            build_seasonal_design(x, bad)


def test_filter_shape_check_and_tagging(rng):
    prior, systems, Ys = random_problem(rng)
    with pytest.raises(DimensionMismatch):
        filter_step(prior.initial_state(), Ys[0][:, :1], systems[0])
    bad = SystemMatrices(systems[0].F, systems[0].G, -10 * systems[0].V, systems[0].W)
    with pytest.raises(NotPositiveDefinite) as info:
        filter_step(prior.initial_state(), Ys[0], bad)
    assert info.value.t == 1


def test_default_prior_shapes():
    locs = LocationSet.from_coords(np.random.default_rng(0).uniform(size=(4, 2)))
    pr = default_prior(locs, 2, 3)
    assert pr.m0.shape == (6, 3) and pr.C0.shape == (6, 6) and pr.nu0 == 4.0
    np.testing.assert_allclose(pr.C0[:2, :2], 0.05 * np.eye(2))
    assert isinstance(pr.initial_state(), FilterState)
