import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_problem, zero_noise_problem
from oracles import kf_dare

from dlqg.controller import GainSchedule, synthesize
from dlqg.estimator import (
    ConvergenceError, FilterState2, c1_cov_rollforward, c1_step, c1_update, c2_cov_predict, c2_step, c2_update,
    covariance_pipeline, is_detectable, joseph_update, kalman_gain, steady_filters,
)
from dlqg.linalg import min_eig
from dlqg.model import Dimensions, ProblemDef, scalar_problem
from dlqg.riccati import solve_finite_horizon
from dlqg.simulator import SimConfig, draw_noise, monte_carlo, simulate_batch


def test_c1_first_update_benchmark(bench):
    s = c1_update(np.zeros(1), [[0.1]], np.zeros(2), bench)
    # G = 0.1 H' / (0.1 H H' + I): scalar algebra with H = [1.2; 1.1]
    denom = 1 + 0.1 * (1.2 ** 2 + 1.1 ** 2)
    assert s.gain.ravel() == pytest.approx([0.12 / denom, 0.11 / denom], abs=1e-12)
    assert s.gain.ravel() == pytest.approx([0.09486, 0.08696], abs=1e-5)
    assert s.Sig_filt[0, 0] == pytest.approx(0.1 / denom, abs=1e-14)
    assert s.Sig_filt[0, 0] == pytest.approx(0.07905, abs=1e-5)


def test_c2_first_update_benchmark(bench):
    s = c2_update(np.zeros(1), [[0.1]], np.zeros(1), bench)
    assert s.gain[0, 0] == pytest.approx(0.11 / 1.121, abs=1e-14)
    assert s.Sig_filt[0, 0] == pytest.approx(0.1 / 1.121, abs=1e-14)
    assert s.Sig_filt[0, 0] == pytest.approx(0.089206, abs=1e-6)


def test_c1_rollforward_benchmark(bench):
    c = c1_cov_rollforward([[0.1]], bench, 3)
    s00 = 0.1 / (1 + 0.1 * 2.65)
    assert c.Sig_filt[0, 0, 0] == pytest.approx(s00, abs=1e-15)
    assert c.Sig_pred[1, 0, 0] == pytest.approx(2.7 ** 2 * s00 + 1, abs=1e-14)
    assert c.Sig_pred[1, 0, 0] == pytest.approx(1.57628, abs=1e-5)


def test_joseph_equals_short_form_at_optimal_gain(rng):
    pr = random_problem(3, 3, 1, 1, 2, 2)
    S = pr.Sigma0
    H, V = pr.aug.H, pr.aug.Qv
    G = kalman_gain(S, H, V)
    assert np.allclose(joseph_update(S, G, H, V), S - G @ H @ S, atol=1e-12)


def test_uninformative_measurement(bench):
    pr = bench.replace(Qv1=[[1e12]], Qv2=[[1e12]])
    s = c1_update(np.array([0.7]), [[2.0]], np.array([5.0, -3.0]), pr)
    assert np.abs(s.gain).max() < 1e-10
    assert s.x_filt[0] == pytest.approx(0.7, rel=1e-6)
    assert s.Sig_filt[0, 0] == pytest.approx(2.0, rel=1e-6)


def test_perfect_measurement_c2():
    pr = ProblemDef(dims=Dimensions(2, 1, 1, 1, 2), A=np.eye(2), B1=np.ones((2, 1)), B2=np.ones((2, 1)),
                    H1=np.ones((1, 2)), H2=np.eye(2), Qw=np.eye(2), Qv1=[[1.0]], Qv2=1e-12 * np.eye(2),
                    Q=np.eye(2), R1=[[1.0]], R2=[[1.0]], Theta=np.eye(2), mu=[0.0, 0.0], Sigma0=np.eye(2))
    y2 = np.array([3.0, -1.5])
    s = c2_update(np.zeros(2), np.eye(2), y2, pr)
    assert np.allclose(s.x_filt, y2, atol=1e-5)


def test_c2_static_prediction():
    pr = scalar_problem(1.0, 1.0, 1.0, 1.0, 1.0, qw=0.0)
    prev = FilterState2(np.array([0.0]), np.array([4.2]), np.eye(1), np.eye(1), np.zeros((1, 1)), 0)
    s = c2_step(prev, np.array([0.0]), np.zeros(2), np.eye(1), pr)
    assert s.x_pred[0] == 4.2


def test_c1_prediction_uses_correction(bench):
    prev = c1_update(np.zeros(1), [[1.0]], np.zeros(2), bench)
    a = c1_step(prev, np.zeros(2), np.array([1.0, 2.0]), np.array([0.5]), bench)
    assert a.x_pred[0] == pytest.approx(1.2 * 1.0 + 1.1 * 2.0 + 1.2 * 0.5)
    assert a.Sig_pred[0, 0] == pytest.approx(2.7 ** 2 * prev.Sig_filt[0, 0] + 1.0)


def test_c2_prediction_ignores_correction(bench):
    prev = c2_update(np.zeros(1), [[1.0]], np.zeros(1), bench)
    s = c2_step(prev, np.zeros(1), np.array([1.0, 2.0]), [[1.0]], bench)
    assert s.x_pred[0] == pytest.approx(1.2 * 1.0 + 1.1 * 2.0)


def test_noise_free_rollforward_is_zero():
    c = c1_cov_rollforward([[0.0]], zero_noise_problem(), 5)
    assert not c.Sig_filt.any() and not c.gain.any() and not c.Sig_pred.any()


def test_memoryless_state_prediction(bench):
    c = c1_cov_rollforward(np.eye(1), bench.replace(A=[[0.0]], Qw=[[0.7]]), 4)
    assert np.allclose(c.Sig_pred[1:], 0.7)


def test_c2_cov_predict_reductions(bench):
    S2, S1 = np.array([[0.5]]), np.array([[0.3]])
    no_b1 = bench.replace(B1=[[0.0]])
    assert c2_cov_predict(S2, S1, [[1.7]], no_b1)[0, 0] == pytest.approx(2.7 ** 2 * 0.5 + 1)
    for gamma in (0.0, 1.0, 5.0):
        assert c2_cov_predict(S1, S1, [[gamma]], bench)[0, 0] == pytest.approx(2.7 ** 2 * 0.3 + 1)


def test_steady_c1_matches_filter_are(bench):
    sf = steady_filters(bench, [[1.9]])
    assert np.allclose(sf.Sig1, kf_dare(bench), rtol=1e-10)


def test_steady_c2_without_b1_is_plain_filter(bench):
    pr = bench.replace(B1=[[0.0]])
    sf = steady_filters(pr, [[0.0]])
    import scipy.linalg
    ref = scipy.linalg.solve_discrete_are(pr.A.T, pr.H2.T, pr.Qw, pr.Qv2)
    assert np.allclose(sf.Sig2, ref, rtol=1e-10)


def test_steady_filters_vanishing_noise(bench):
    sf = steady_filters(bench.replace(A=[[0.5]], Qw=[[0.0]]), [[0.0]])
    assert abs(sf.Sig1[0, 0]) < 1e-10 and abs(sf.Sig2[0, 0]) < 1e-10


def test_steady_filters_benchmark_fixed_point(bench, bench_steady):
    ss, _ = bench_steady
    sf = steady_filters(bench, ss.Gamma)
    assert sf.Sig1[0, 0] == pytest.approx(ss.Sig1[0, 0], rel=1e-9)
    assert sf.Sig2[0, 0] == pytest.approx(ss.Sig2[0, 0], rel=1e-9)
    assert min_eig(sf.Sig2_filt - sf.Sig1_filt) >= 0


def test_steady_filters_max_iter(bench):
    with pytest.raises(ConvergenceError) as info:
        steady_filters(bench, [[1.9]], max_iter=2)
    assert info.value.iterations == 2


def test_detectability(bench):
    assert is_detectable(bench.A, bench.aug.H)
    assert not is_detectable(bench.A, np.zeros((2, 1)))
    assert is_detectable(np.array([[0.5]]), np.zeros((1, 1)))
    with pytest.raises(ValueError, match="detectable"):
        steady_filters(bench.replace(H1=[[0.0]], H2=[[0.0]]), [[0.0]])


def test_pipeline_covariances_symmetric_psd_and_ordered(bench_n20):
    fh, _ = bench_n20
    f = fh.filters
    for seq in (f.Sig1_pred, f.Sig1_filt, f.Sig2_pred, f.Sig2_filt):
        for X in seq:
            assert np.array_equal(X, X.T)
            assert min_eig(X) >= -1e-12
    assert min(min_eig(a - b) for a, b in zip(f.Sig2_filt, f.Sig1_filt)) >= -1e-8


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), m=st.integers(1, 3), N=st.integers(1, 8))
def test_gap_covariance_psd_random(seed, m, N):
    pr = random_problem(seed, m, 1, 1, 1, 1, a_scale=0.7)
    Gammas = np.random.default_rng(seed).normal(size=(N + 1, 1, m))
    f = covariance_pipeline(pr, Gammas)
    for a, b in zip(f.Sig2_filt, f.Sig1_filt):
        assert min_eig(a - b) >= -1e-8 * (1 + np.linalg.norm(a))


def test_batched_update_matches_single(bench, rng):
    xs = rng.normal(size=(5, 1))
    ys = rng.normal(size=(5, 2))
    batch = c1_update(xs, [[0.4]], ys, bench)
    for i in range(5):
        one = c1_update(xs[i], [[0.4]], ys[i], bench)
        assert np.allclose(one.x_filt, batch.x_filt[i], rtol=0, atol=1e-15)


@pytest.mark.slow
def test_first_step_c2_covariance_monte_carlo():
    """Brute-force covariance of x_1 - xhat2_{1|0} over 10^6 paths.

    Prior covariance 0.1 and Gamma_0 from Phi_0 = 3 as in the iteration seed.
    The recursion gives 1.57890; the value 2.34 implied by reading Phi_1 = 3.8788
    back through Phi = (P - S) G2 H2 + S is rejected.
    """
    from dlqg.model import benchmark_problem
    pr = benchmark_problem(sigma0=0.1)
    gamma0 = 1.2 * 3.0 * 2.7 / (1.2 ** 2 * 3.0 + 1)
    sched = GainSchedule(np.zeros((2, 2, 1)), np.full((2, 1, 1), gamma0))
    predicted = covariance_pipeline(pr, sched.Gamma).Sig2_pred[1, 0, 0]
    assert predicted == pytest.approx(1.57890018, abs=1e-8)
    s = monte_carlo(pr, sched, SimConfig(seed=11, N=1, replications=1_000_000))
    emp, se = s.Sig2_pred_emp[1, 0, 0], s.Sig2_pred_emp_se[1, 0, 0]
    assert abs(emp - predicted) <= 3 * se
    assert abs(emp - 2.34) > 100 * se


@pytest.mark.slow
def test_gap_cross_moment_monte_carlo(bench, bench_n20):
    fh, gains = bench_n20
    s = monte_carlo(bench, gains, SimConfig(seed=5, N=20, replications=100_000, mode="finite-horizon"))
    gap = fh.filters.Sig2_filt[:21] - fh.filters.Sig1_filt[:21]
    z = np.abs(s.gap_cross - gap) / s.gap_cross_se
    assert z.max() <= 4.0  # 21 steps: allow the max of 21 roughly normal scores
    for k in (1, 2, 5, 10, 20):
        assert z[k, 0, 0] <= 3.0


def test_innovation_whiteness(bench, bench_n20):
    _, gains = bench_n20
    n = 20_000
    noise = draw_noise(bench, 20, 3, range(n))
    b = simulate_batch(bench, gains, noise, 20)
    A, B, B1, H = bench.A, bench.aug.B, bench.B1, bench.aug.H
    x1pred = b.x1hat[:, :-1] @ A.T + b.u[:, :-1] @ B.T + b.utilde1[:, :-1] @ B1.T
    nu = b.y[:, 1:] - x1pred @ H.T
    a, c = nu[:, 9, 0], nu[:, 10, 0]
    corr = np.corrcoef(a, c)[0, 1]
    assert abs(corr) < 3 / np.sqrt(n)


def test_finite_horizon_pipeline_matches_sweep(bench):
    fh = solve_finite_horizon(bench, 5)
    again = covariance_pipeline(bench, synthesize(fh.riccati).Gamma)
    assert np.allclose(again.Sig2_pred, fh.filters.Sig2_pred, rtol=1e-12)
