"""Synthetic temporal attributed networks with a planted GCRF.

Each node has a static latent vector made of two independent blocks. Purchase
features at every step are a noisy linear image of the first block plus a
per-step activity perturbation; demographic features are a noisy linear image
of the second block. The unstructured signal mixes a linear purchase-driven
part with a nonlinear demographic-driven part, and responses are exact draws
from a GCRF whose graph is a k-nearest-neighbor graph on the full latent.
Because the blocks are independent, demographics carry no information about
the response when ``signal_split`` is 0.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import linalg, sparse
from scipy.spatial.distance import pdist, squareform

from .data import FeatureMatrix, TemporalDataset, save_dataset
from .gcrf import GcrfParams, Potentials, posterior


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    n_nodes: int = 300
    n_steps: int = 5
    purchase_dims: int = 4
    demographic_dims: int = 4
    latent_dims: int = 3
    noise_std: float = 0.3
    edge_knn: int = 10
    signal_split: float = 0.5
    seed: int = 0
    drift_std: float = 0.5
    base_log_alpha: float = 0.0
    base_log_beta: float = 0.0

    def validate(self) -> None:
        if self.n_nodes < 2:
            raise ConfigError("n_nodes must be at least 2")
        if self.n_steps < 2:
            raise ConfigError("n_steps must be at least 2")
        if self.latent_dims < 1 or self.purchase_dims < 1 or self.demographic_dims < 0:
            raise ConfigError("latent_dims and purchase_dims must be positive")
        if self.noise_std < 0 or self.drift_std < 0:
            raise ConfigError("noise_std and drift_std must be nonnegative")
        if not 0 <= self.edge_knn < self.n_nodes:
            raise ConfigError("edge_knn must lie in [0, n_nodes)")
        if not 0.0 <= self.signal_split <= 1.0:
            raise ConfigError("signal_split must lie in [0, 1]")
        if self.signal_split > 0 and self.demographic_dims == 0:
            raise ConfigError("signal_split > 0 needs demographic columns")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GroundTruth:
    config: GeneratorConfig
    latents: np.ndarray
    params: GcrfParams | None
    edges: sparse.csr_matrix
    signal: list

    def to_dict(self) -> dict:
        S = sparse.triu(self.edges, k=1).tocoo()
        return {
            "config": asdict(self.config),
            "latents": self.latents.tolist(),
            "u": None if self.params is None else self.params.u.tolist(),
            "v": None if self.params is None else self.params.v.tolist(),
            "alpha": None if self.params is None else self.params.alpha.tolist(),
            "beta": None if self.params is None else self.params.beta.tolist(),
            "edges": [[int(i), int(j), float(w)] for i, j, w in zip(S.row, S.col, S.data)],
            "signal": [s.tolist() for s in self.signal],
        }


def knn_graph(points, k: int, bandwidth: float | None = None) -> sparse.csr_matrix:
    """Symmetric k-NN graph with Gaussian weights ``exp(-d²/σ²)``.

    ``σ`` defaults to the median pairwise distance. A pair is an edge if either
    endpoint lists the other among its ``k`` nearest neighbors.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N = X.shape[0]
    if k == 0 or N < 2:
        return sparse.csr_matrix((N, N))
    k = min(k, N - 1)
    D = squareform(pdist(X))
    if bandwidth is None:
        bandwidth = float(np.median(pdist(X)))
        if bandwidth <= 0:
            bandwidth = 1.0
    np.fill_diagonal(D, np.inf)
    nbrs = np.argsort(D, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(N), k)
    cols = nbrs.ravel()
    W = np.exp(-(D[rows, cols] / bandwidth) ** 2)
    A = sparse.csr_matrix((W, (rows, cols)), shape=(N, N))
    return A.maximum(A.T).tocsr()


def sample_gcrf(params: GcrfParams, R, S, seed=None, n_draws: int | None = None) -> np.ndarray:
    """Exact draw from the GCRF's Gaussian ``N(μ, Q⁻¹)``.

    With ``Q = L Lᵀ`` the draw is ``μ + L⁻ᵀ z`` for standard normal ``z``.
    ``seed`` may be an integer or a ``numpy.random.Generator``. With
    ``n_draws`` the result is an ``n_draws x N`` array of independent draws.
    """
    post = posterior(params, Potentials(R, tuple(S)))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    N = len(post.mu)
    z = rng.standard_normal(N if n_draws is None else (n_draws, N))
    draws = linalg.solve_triangular(post.cholesky, z.T, lower=True, trans="T").T
    return post.mu + draws


def _standardize(v):
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else v - v.mean()


def generate_network(cfg: GeneratorConfig) -> tuple[TemporalDataset, GroundTruth]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    N, d, P, D = cfg.n_nodes, cfg.latent_dims, cfg.purchase_dims, cfg.demographic_dims
    Z = rng.standard_normal((N, d))
    W = rng.standard_normal((N, d)) if D else np.zeros((N, 0))
    A_p = rng.standard_normal((d, P)) / np.sqrt(d)
    A_d = rng.standard_normal((d, D)) / np.sqrt(d)
    w_p = rng.standard_normal(d)
    c_d = rng.standard_normal(d)
    c_d /= np.linalg.norm(c_d)
    X_d = W @ A_d + cfg.noise_std * rng.standard_normal((N, D))
    demo_part = _standardize(np.tanh(1.5 * W @ c_d) + 0.5 * (W @ c_d) ** 2) if D else np.zeros(N)

    latents = np.hstack([Z, W])
    S = knn_graph(latents, cfg.edge_knn)
    if cfg.noise_std > 0:
        shift = -2.0 * np.log(cfg.noise_std)
        params = GcrfParams([cfg.base_log_alpha + shift], [cfg.base_log_beta + shift])
    else:
        params = None
    draw_params = params or GcrfParams([cfg.base_log_alpha], [cfg.base_log_beta])

    feats, ys, signal = [], [], []
    for _ in range(cfg.n_steps):
        Z_t = Z + cfg.drift_std * rng.standard_normal((N, d))
        X_p = Z_t @ A_p + cfg.noise_std * rng.standard_normal((N, P))
        purchase_part = _standardize(Z_t @ w_p)
        r = (1.0 - cfg.signal_split) * purchase_part + cfg.signal_split * demo_part
        if params is None:
            y = posterior(draw_params, Potentials(r, (S,))).mu
        else:
            y = sample_gcrf(params, r, (S,), seed=rng)
        X = np.hstack([X_p, X_d])
        feats.append(FeatureMatrix(X, np.ones_like(X, dtype=bool), P, D))
        ys.append(y)
        signal.append(r)
    ids = tuple(f"n{i:05d}" for i in range(N))
    ds = TemporalDataset(tuple(feats), tuple(ys), ids)
    return ds, GroundTruth(cfg, latents, params, S, signal)


def write_network(ds: TemporalDataset, truth: GroundTruth, out_dir, split: int | None = None) -> dict:
    """Write ``data.csv`` (all steps), ``train.csv``/``test.csv`` and ``truth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if split is None:
        split = ds.n_steps - 1
    paths = {"data": out / "data.csv", "train": out / "train.csv",
             "test": out / "test.csv", "truth": out / "truth.json"}
    save_dataset(ds, paths["data"])
    save_dataset(ds.steps(0, split), paths["train"])
    save_dataset(ds.steps(split, split + 1), paths["test"], start_time=split + 1)
    paths["truth"].write_text(json.dumps(truth.to_dict(), indent=1) + "\n", encoding="utf-8")
    return paths
