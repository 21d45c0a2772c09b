import numpy as np
import pytest

from dflgcrf.nets import MLP, Encoder, corrupt, fit_autoencoder, fit_mlp, reconstruction_error, sigmoid


def test_sigmoid_range_and_center():
    x = np.array([-800.0, 0.0, 800.0])
    s = sigmoid(x)
    assert s[1] == 0.5 and 0.0 <= s[0] < 1e-300 + 1e-12 and s[2] == 1.0
    assert np.all(np.isfinite(s))


def test_corrupt_zeroes_about_the_requested_share():
    rng = np.random.default_rng(0)
    X = np.ones((200, 50))
    share = 1.0 - corrupt(X, 0.3, rng).mean()
    assert share == pytest.approx(0.3, abs=0.02)
    np.testing.assert_array_equal(corrupt(X, 0.0, rng), X)


def test_autoencoder_learns_low_rank_data():
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((200, 2))
    X = Z @ rng.standard_normal((2, 6))
    good = reconstruction_error(X, 2, seed=0, maxiter=400)
    assert good < 0.1 * X.var()


def test_autoencoder_is_deterministic():
    X = np.random.default_rng(2).standard_normal((40, 4))
    a = fit_autoencoder(X, 3, noise_prob=0.2, seed=5, maxiter=50)
    b = fit_autoencoder(X, 3, noise_prob=0.2, seed=5, maxiter=50)
    assert a.w.tobytes() == b.w.tobytes()
    H = a(X)
    assert H.shape == (40, 3) and np.all((H > 0) & (H < 1))
    assert Encoder.from_dict(a.to_dict()).w.tobytes() == a.w.tobytes()


def test_mlp_fits_smooth_function():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, (400, 2))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1] ** 2
    net = fit_mlp(X, y, hidden=12, seed=0, maxiter=1500)
    resid = y - net.predict(X)
    assert resid.var() < 0.1 * y.var()


def test_mlp_forward_matches_loop():
    rng = np.random.default_rng(4)
    net = MLP(rng.standard_normal((3, 2)), rng.standard_normal(3), rng.standard_normal((2, 3)),
              rng.standard_normal(2), rng.standard_normal(2), 0.5)
    x = rng.standard_normal(2)
    z1 = [1 / (1 + np.exp(-(net.w1[j] @ x + net.b1[j]))) for j in range(3)]
    z2 = [1 / (1 + np.exp(-(net.w2[j] @ z1 + net.b2[j]))) for j in range(2)]
    expected = sum(net.w3[j] * z2[j] for j in range(2)) + net.b3
    assert net.predict(x[None])[0] == pytest.approx(expected, rel=1e-12)
    back = MLP.from_dict(net.to_dict())
    assert back.predict(x[None])[0] == net.predict(x[None])[0]
