import json

import numpy as np
import pytest
from scipy import sparse

from dflgcrf.baselines import fit_lr
from dflgcrf.gcrf import GcrfParams, Potentials, posterior
from dflgcrf.harness import r_squared
from dflgcrf.synth import (ConfigError, GeneratorConfig, generate_network, knn_graph,
                           sample_gcrf, write_network)
from dflgcrf.data import load_dataset

PAIR = sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_noiseless_purchase_only_signal_is_linear():
    cfg = GeneratorConfig(n_nodes=60, n_steps=3, noise_std=0.0, signal_split=0.0, edge_knn=0)
    ds, truth = generate_network(cfg)
    assert truth.params is None
    P = cfg.purchase_dims
    for fm, y in ds.snapshots():
        # purchase columns are rank-deficient (P > latent_dims), so use minimum-norm least squares
        A = np.c_[np.ones(len(y)), fm.values[:, :P]]
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        assert r_squared(y, A @ coef) == pytest.approx(1.0, abs=1e-9)


def test_generation_is_deterministic():
    cfg = GeneratorConfig(n_nodes=50, n_steps=2, seed=3)
    (a, _), (b, _) = generate_network(cfg), generate_network(cfg)
    for (fa, ya), (fb, yb) in zip(a.snapshots(), b.snapshots()):
        assert fa.values.tobytes() == fb.values.tobytes() and ya.tobytes() == yb.tobytes()


def test_seeds_differ():
    a, _ = generate_network(GeneratorConfig(n_nodes=100, n_steps=2, seed=0))
    b, _ = generate_network(GeneratorConfig(n_nodes=100, n_steps=2, seed=1))
    assert not np.allclose(a.targets[0], b.targets[0])


def test_graph_is_valid_similarity():
    _, truth = generate_network(GeneratorConfig(n_nodes=80, n_steps=2, edge_knn=5))
    S = truth.edges
    assert abs(S - S.T).max() == 0
    assert S.data.min() >= 0 and not S.diagonal().any()
    assert (np.asarray((S > 0).sum(axis=1)).ravel() >= 5).all()


def test_knn_graph_matches_brute_force():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((12, 2))
    S = knn_graph(X, 3, bandwidth=1.5).toarray()
    D = np.linalg.norm(X[:, None] - X[None], axis=2)
    W = np.zeros_like(D)
    for i in range(12):
        for j in np.argsort(np.where(np.arange(12) == i, np.inf, D[i]))[:3]:
            W[i, j] = W[j, i] = np.exp(-(D[i, j] / 1.5) ** 2)
    np.testing.assert_allclose(S, W, rtol=1e-13)


@pytest.mark.parametrize("bad", [dict(n_nodes=1), dict(n_steps=1), dict(latent_dims=0),
                                 dict(edge_knn=300), dict(noise_std=-1.0), dict(signal_split=1.5)])
def test_degenerate_config_rejected(bad):
    with pytest.raises(ConfigError):
        generate_network(GeneratorConfig(**bad))


def test_unknown_config_field_rejected():
    with pytest.raises(ConfigError):
        GeneratorConfig.from_dict({"n_nodes": 10, "colour": 1})


def test_sampler_concentrates_at_R_when_decoupled():
    rng = np.random.default_rng(1)
    R = rng.standard_normal(5)
    S = knn_graph(rng.standard_normal((5, 2)), 2)
    draws = sample_gcrf(GcrfParams([10.0], [-30.0]), R, (S,), seed=2, n_draws=10_000)
    assert np.max(np.abs(draws.mean(axis=0) - R)) < 1e-3


def test_sampler_covariance_two_node():
    draws = sample_gcrf(GcrfParams([0.0], [0.0]), np.array([1.0, 0.0]), (PAIR,), seed=3,
                        n_draws=100_000)
    target = np.array([[4.0, 2.0], [2.0, 4.0]]) / 12
    np.testing.assert_allclose(np.cov(draws.T), target, rtol=0.02)
    np.testing.assert_allclose(draws.mean(axis=0), [2 / 3, 1 / 3], atol=0.01)


def test_sampler_deterministic_and_matches_single_draw():
    args = (GcrfParams([0.0], [0.0]), np.array([1.0, 0.0]), (PAIR,))
    a, b = sample_gcrf(*args, seed=4), sample_gcrf(*args, seed=4)
    assert a.tobytes() == b.tobytes()


def test_sampler_moments_random_graph():
    rng = np.random.default_rng(5)
    N = 6
    R = rng.standard_normal(N)
    S = knn_graph(rng.standard_normal((N, 2)), 2)
    p = GcrfParams([0.2], [-0.3])
    post = posterior(p, Potentials(R, (S,)))
    draws = sample_gcrf(p, R, (S,), seed=6, n_draws=200_000)
    np.testing.assert_allclose(draws.mean(axis=0), post.mu, atol=5 * np.sqrt(post.covariance().max() / 2e5))
    np.testing.assert_allclose(np.cov(draws.T), post.covariance(), atol=0.01 * post.covariance().max())


def test_noise_never_helps_an_oracle_on_latents():
    levels = [0.1, 0.3, 0.6, 1.0]
    means = []
    for sd in levels:
        scores = []
        for seed in range(10):
            ds, truth = generate_network(GeneratorConfig(n_nodes=100, n_steps=2, noise_std=sd, seed=seed))
            Z = truth.latents
            feats = np.c_[Z, np.tanh(1.5 * Z), Z ** 2]
            y = ds.targets[0]
            scores.append(r_squared(y, fit_lr(feats, y).predict(feats)))
        means.append(np.mean(scores))
    assert all(a >= b for a, b in zip(means, means[1:]))


def test_write_network(tmp_path):
    ds, truth = generate_network(GeneratorConfig(n_nodes=20, n_steps=3))
    paths = write_network(ds, truth, tmp_path)
    train, test = load_dataset(paths["train"]), load_dataset(paths["test"])
    assert train.n_steps == 2 and test.n_steps == 1
    np.testing.assert_array_equal(test.targets[0], ds.targets[2])
    sidecar = json.loads(paths["truth"].read_text())
    assert sidecar["alpha"][0] == pytest.approx(np.exp(sidecar["u"][0]))
    assert len(sidecar["edges"]) == truth.edges.nnz // 2
