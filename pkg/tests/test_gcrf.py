import json
import warnings

import numpy as np
import pytest
from scipy import sparse

from conftest import central_diff, random_instance, random_similarity, rel_err
from dflgcrf.gcrf import (GcrfParams, Potentials, build_b, build_precision, fit_gcrf,
                          gcrf_objective, grad_uv, log_likelihood, posterior, predict)
from dflgcrf.optim import ConvergenceWarning, NumericalError, maximize
from dflgcrf.synth import sample_gcrf

PAIR = sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))


def two_node(v=0.0, R=(1.0, 0.0)):
    return GcrfParams([0.0], [v]), Potentials(np.array(R), (PAIR,))


# --- assembly ----------------------------------------------------------------

def test_two_node_precision():
    p, pot = two_node()
    np.testing.assert_allclose(build_precision(p, pot.S).toarray(), [[4, -2], [-2, 4]])


def test_decoupled_precision_is_diagonal():
    p = GcrfParams([0.3], [-30.0])
    Q = build_precision(p, (PAIR,)).toarray()
    np.testing.assert_allclose(np.diag(Q), 2 * np.exp(0.3), rtol=1e-12)
    assert abs(Q[0, 1]) < 1e-12


def test_precision_matches_dense_loop():
    rng = np.random.default_rng(0)
    N = 6
    S = [random_similarity(rng, N) for _ in range(2)]
    p = GcrfParams(rng.standard_normal(2), rng.standard_normal(2))
    dense = [s.toarray() for s in S]
    Q = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            if i == j:
                Q[i, i] = 2 * p.alpha.sum() + sum(2 * b * d[i].sum() for b, d in zip(p.beta, dense))
            else:
                Q[i, j] = -sum(2 * b * d[i, j] for b, d in zip(p.beta, dense))
    np.testing.assert_allclose(build_precision(p, S).toarray(), Q, rtol=1e-13)
    assert sparse.issparse(build_precision(p, S))


def test_precision_rejects_invalid_similarity():
    p = GcrfParams([0.0], [0.0])
    with pytest.raises(ValueError):
        build_precision(p, (np.array([[0.0, 1.0], [0.5, 0.0]]),))
    with pytest.raises(ValueError):
        build_precision(p, (np.array([[0.0, -1.0], [-1.0, 0.0]]),))


def test_build_b_cases():
    np.testing.assert_allclose(build_b(GcrfParams([0.0], [0.0]), [0.5, -0.5]), [1.0, -1.0])
    p = GcrfParams(np.log([1.0, 2.0]), [0.0])
    np.testing.assert_allclose(build_b(p, np.ones((3, 2))), [6.0, 6.0, 6.0])
    rng = np.random.default_rng(1)
    R = rng.standard_normal((5, 3))
    p = GcrfParams(rng.standard_normal(3), [0.0])
    loop = [sum(2 * p.alpha[k] * R[i, k] for k in range(3)) for i in range(5)]
    np.testing.assert_allclose(build_b(p, R), loop, rtol=1e-13)


# --- posterior ---------------------------------------------------------------

def test_two_node_posterior_mean():
    p, pot = two_node()
    post = posterior(p, pot)
    np.testing.assert_allclose(post.b, [2.0, 0.0])
    np.testing.assert_allclose(post.mu, [2 / 3, 1 / 3], rtol=1e-12)
    np.testing.assert_allclose(predict(p, pot), post.mu)
    np.testing.assert_allclose(post.covariance(), np.array([[4, 2], [2, 4]]) / 12, rtol=1e-12)


def test_interaction_free_limit_returns_R():
    rng = np.random.default_rng(2)
    R = rng.standard_normal(8)
    pot = Potentials(R, (random_similarity(rng, 8),))
    np.testing.assert_allclose(predict(GcrfParams([0.7], [-30.0]), pot), R, atol=1e-10)


def test_coupling_pulls_means_together():
    gaps = [np.ptp(predict(*two_node(v))) for v in (0.0, 2.0, 4.0)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_posterior_residual_small():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p, pot, _ = random_instance(rng)
        post = posterior(p, pot)
        res = post.precision @ post.mu - post.b
        assert np.linalg.norm(res) <= 1e-8 * max(np.linalg.norm(post.b), 1e-300)


# --- log-likelihood ----------------------------------------------------------

def test_univariate_log_likelihood():
    pot = Potentials(np.array([0.3]), (sparse.csr_matrix((1, 1)),))
    ll = log_likelihood(GcrfParams([0.0], [0.0]), pot, [0.3])
    assert ll == pytest.approx(-0.5 * np.log(2 * np.pi * 0.5), abs=1e-12)
    assert ll == pytest.approx(-0.57236494, abs=1e-8)


def test_log_likelihood_peaks_at_mean():
    rng = np.random.default_rng(4)
    p, pot, _ = random_instance(rng, N=6)
    mu = predict(p, pot)
    top = log_likelihood(p, pot, mu)
    for _ in range(10):
        assert log_likelihood(p, pot, mu + 0.01 * rng.standard_normal(6)) < top


def test_log_likelihood_matches_dense_density():
    rng = np.random.default_rng(5)
    p, pot, y = random_instance(rng, N=5)
    Q = build_precision(p, pot.S).toarray()
    Sigma = np.linalg.inv(Q)
    mu = Sigma @ build_b(p, pot.R)
    r = y - mu
    dense = -0.5 * r @ Q @ r - 0.5 * np.linalg.slogdet(Sigma)[1] - 2.5 * np.log(2 * np.pi)
    assert log_likelihood(p, pot, y) == pytest.approx(dense, rel=1e-11)


def test_scale_invariance_of_beta_times_S():
    rng = np.random.default_rng(6)
    p, pot, y = random_instance(rng, N=7, K=1, L=1)
    c = 3.7
    p2 = GcrfParams(p.u, p.v - np.log(c))
    pot2 = Potentials(pot.R, (pot.S[0] * c,))
    np.testing.assert_allclose(build_precision(p, pot.S).toarray(),
                               build_precision(p2, pot2.S).toarray(), atol=1e-12)
    np.testing.assert_allclose(predict(p, pot), predict(p2, pot2), atol=1e-12)
    assert log_likelihood(p, pot, y) == pytest.approx(log_likelihood(p2, pot2, y), abs=1e-12)


# --- gradients ---------------------------------------------------------------

def _fd_uv(p, pot, y):
    K = len(p.u)
    f = lambda x: log_likelihood(GcrfParams(x[:K], x[K:]), pot, y)
    return central_diff(f, np.concatenate([p.u, p.v]))


def test_grad_uv_matches_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        p, pot, y = random_instance(rng)
        du, dv = grad_uv(p, pot, y)
        worst = max(worst, rel_err(np.concatenate([du, dv]), _fd_uv(p, pot, y)))
    assert worst < 1e-5


def test_grad_uv_at_mode_two_node():
    p, pot = two_node(v=0.5)
    y = predict(p, pot)
    du, dv = grad_uv(p, pot, y)
    assert rel_err(np.concatenate([du, dv]), _fd_uv(p, pot, y)) < 1e-5
    # with y = μ only the trace part survives: dℓ/dv = β·2(tr(Σ diag-part) - Σ S∘Σ)
    Sigma = posterior(p, pot).covariance()
    trace_only = p.beta[0] * (Sigma[0, 0] + Sigma[1, 1] - 2 * Sigma[0, 1])
    assert dv[0] == pytest.approx(trace_only, rel=1e-12)


def test_uv_gradient_closed_forms_need_half_trace():
    """Closed forms -½rᵀQ'r + (b' - Q'μ)ᵀr + c·tr(ΣQ') match only with c = ½."""
    rng = np.random.default_rng(8)
    p, pot, y = random_instance(rng, N=6, K=1, L=1)
    post = posterior(p, pot)
    Sigma, mu, r = post.covariance(), post.mu, y - post.mu
    R, S = pot.R[:, 0], pot.S[0].toarray()
    dQ_alpha, db_alpha = 2 * np.eye(6), 2 * R
    dQ_beta = 2 * (np.diag(S.sum(1)) - S)

    def closed(c):
        d_alpha = -0.5 * r @ dQ_alpha @ r + (db_alpha - dQ_alpha @ mu) @ r + c * np.trace(Sigma @ dQ_alpha)
        d_beta = -0.5 * (y + mu) @ dQ_beta @ r + c * np.trace(Sigma @ dQ_beta)
        return p.alpha[0] * d_alpha, p.beta[0] * d_beta

    du, dv = grad_uv(p, pot, y)
    a, b = closed(0.5)
    assert du[0] == pytest.approx(a, rel=1e-10) and dv[0] == pytest.approx(b, rel=1e-10)
    a, b = closed(1.0)
    assert abs(du[0] - a) > 1e-3 * abs(a)


# --- fitting -----------------------------------------------------------------

def test_fit_reaches_stationarity():
    rng = np.random.default_rng(9)
    p, pot, y = random_instance(rng, N=15, K=2, L=1)
    fit = fit_gcrf(pot, y, reg=0.0, gtol=1e-8)
    du, dv = grad_uv(fit, pot, y)
    assert np.linalg.norm(np.concatenate([du, dv])) < 1e-5


def test_fit_trace_monotone():
    rng = np.random.default_rng(10)
    _, pot, y = random_instance(rng, N=20, K=2, L=2)
    fit = fit_gcrf(pot, y)
    assert np.all(np.diff(fit.info["trace"]) >= -1e-9)
    assert fit.info["objective"] == pytest.approx(gcrf_objective(fit, pot, y), rel=1e-12)


def test_fit_trusts_the_informative_predictor():
    rng = np.random.default_rng(11)
    N = 100
    y = rng.standard_normal(N)
    R = np.c_[y, rng.standard_normal(N)]
    pot = Potentials(R, (random_similarity(rng, N, 0.05),))
    fit = fit_gcrf(pot, y, warn=False)
    assert fit.alpha[0] / fit.alpha[1] > 10


def test_planted_recovery_single_seed():
    rng = np.random.default_rng(12)
    N = 200
    from dflgcrf.synth import knn_graph
    S = knn_graph(rng.standard_normal((N, 2)), 8)
    truth = GcrfParams([0.0], [0.0])
    pots, ys = [], []
    for t in range(20):
        R = rng.standard_normal(N)
        pots.append(Potentials(R, (S,)))
        ys.append(sample_gcrf(truth, R, (S,), seed=rng))
    fit = fit_gcrf(pots, ys)
    ratio = fit.alpha[0] / fit.beta[0]
    assert ratio == pytest.approx(1.0, rel=0.2)


def test_pooled_objective_sums_snapshots():
    rng = np.random.default_rng(13)
    p, pot, y = random_instance(rng, N=6, K=1, L=1)
    _, pot2, y2 = random_instance(rng, N=4, K=1, L=1)
    total = gcrf_objective(p, [pot, pot2], [y, y2], reg=0.0)
    assert total == pytest.approx(log_likelihood(p, pot, y) + log_likelihood(p, pot2, y2))


def test_fit_warns_at_iteration_cap():
    rng = np.random.default_rng(14)
    _, pot, y = random_instance(rng, N=10, K=2, L=1)
    with pytest.warns(ConvergenceWarning):
        fit = fit_gcrf(pot, y, maxiter=1, gtol=1e-14, ftol=0.0)
    assert not fit.info["converged"]


def test_params_json_round_trip_is_exact():
    rng = np.random.default_rng(15)
    _, pot, y = random_instance(rng, N=10, K=2, L=1)
    fit = fit_gcrf(pot, y)
    back = GcrfParams.from_dict(json.loads(json.dumps(fit.to_dict())))
    assert back.u.tobytes() == fit.u.tobytes() and back.v.tobytes() == fit.v.tobytes()
    assert back.info["n_iter"] == fit.info["n_iter"]


def test_nonfinite_params_rejected():
    with pytest.raises(ValueError):
        GcrfParams([np.nan], [0.0])


# --- optimizer ---------------------------------------------------------------

def test_maximize_concave_quadratic():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    c = np.array([1.0, -1.0])
    res = maximize(lambda x: (-(x - c) @ A @ (x - c), -2 * A @ (x - c)), np.zeros(2), gtol=1e-10)
    np.testing.assert_allclose(res.x, c, atol=1e-7)
    assert res.converged and np.all(np.diff(res.trace) >= 0)


def test_maximize_backs_off_numerical_failures():
    def f(x):
        if x[0] > 1.0:
            raise NumericalError("outside domain")
        return -(x[0] - 0.9) ** 2, np.array([-2 * (x[0] - 0.9)])

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = maximize(f, np.array([-5.0]))
    assert res.x[0] == pytest.approx(0.9, abs=1e-4)
