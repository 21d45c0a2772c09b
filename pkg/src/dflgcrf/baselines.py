"""Comparison models: linear, GP and GCRF regressors on raw, imputed or mapped inputs.

Every baseline standardizes features with statistics of the observed
training entries and then fills masked cells with zero (the column mean).
The ``i`` variants instead drop nodes with missing demographics before
fitting; at prediction time such nodes receive the training mean.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist

from . import gcrf
from .data import EmptyDatasetError, FeatureMatrix, Standardizer, TemporalDataset, drop_incomplete
from .dfl import DflArch
from .gcrf import GcrfParams, Potentials
from .nets import MLP, Encoder, fit_autoencoder, fit_mlp
from .optim import ConvergenceWarning, NumericalError, maximize
from .synth import knn_graph


class Kind(str, enum.Enum):
    iLR = "iLR"
    iGP = "iGP"
    iGCRF = "iGCRF"
    LR0 = "LR0"
    GP0 = "GP0"
    GCRF0 = "GCRF0"
    PCA_GCRF = "PCA_GCRF"
    DAE_GCRF = "DAE_GCRF"
    NM_GCRF = "NM_GCRF"
    NN = "NN"


DELETION_KINDS = {Kind.iLR, Kind.iGP, Kind.iGCRF}

DEFAULT_HYPERPARAMS = {
    "ridge": 1e-6,        # linear predictors
    "gp_noise": 1e-2,     # initial GP noise variance (relative to var(y))
    "gp_max_points": 400,
    "neighbor_k": 10,     # k-NN sparsification of kernel graphs
    "dims": 3,            # PCA / DAE output size
    "dae_noise": 0.2,
    "gamma": 5.0,         # NN hidden sizing, as in the DFL map
    "h": 3,
    "reg": 1e-3,
}


@dataclass(frozen=True)
class BaselineSpec:
    kind: Kind
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        unknown = set(self.hyperparams) - set(DEFAULT_HYPERPARAMS)
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.kind.value}: {sorted(unknown)}")
        hp = dict(DEFAULT_HYPERPARAMS)
        hp.update(self.hyperparams)
        if hp["ridge"] < 0 or hp["gp_noise"] <= 0 or hp["dims"] < 1 or hp["neighbor_k"] < 1:
            raise ValueError("invalid baseline hyperparameters")
        if not 0 <= hp["dae_noise"] < 1:
            raise ValueError("dae_noise must lie in [0, 1)")
        object.__setattr__(self, "hyperparams", hp)


# ---------------------------------------------------------------------------
# linear regression
# ---------------------------------------------------------------------------

@dataclass
class LinearModel:
    coef: np.ndarray
    intercept: float

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    def to_dict(self):
        return {"coef": self.coef.tolist(), "intercept": float(self.intercept)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["coef"], dtype=float), float(d["intercept"]))


def fit_lr(X, y, ridge: float = 0.0) -> LinearModel:
    """Ridge regression with an unpenalized intercept."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    A = Xc.T @ Xc + ridge * np.eye(X.shape[1])
    if ridge == 0 and np.linalg.matrix_rank(Xc) < X.shape[1]:
        raise NumericalError("singular least-squares system; use ridge > 0")
    try:
        coef = linalg.solve(A, Xc.T @ (y - ym), assume_a="pos")
    except linalg.LinAlgError as exc:
        raise NumericalError(f"least-squares solve failed ({exc}); use ridge > 0") from None
    return LinearModel(coef, float(ym - xm @ coef))


# ---------------------------------------------------------------------------
# Gaussian process regression
# ---------------------------------------------------------------------------

def gaussian_kernel(A, B, lengthscale: float) -> np.ndarray:
    """``exp(-|a - b|² / ℓ²)``."""
    return np.exp(-cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean") / lengthscale ** 2)


@dataclass
class GPModel:
    X: np.ndarray
    weights: np.ndarray  # (K + σ² I)⁻¹ (y - ȳ)
    y_mean: float
    lengthscale: float
    signal_var: float
    noise_var: float

    def predict(self, Xs):
        Ks = self.signal_var * gaussian_kernel(Xs, self.X, self.lengthscale)
        return Ks @ self.weights + self.y_mean

    def kernel_matrix(self, X=None):
        """Unit-amplitude Gaussian kernel with the fitted lengthscale."""
        X = self.X if X is None else X
        return gaussian_kernel(X, X, self.lengthscale)

    def to_dict(self):
        return {"X": self.X.tolist(), "weights": self.weights.tolist(), "y_mean": self.y_mean,
                "lengthscale": self.lengthscale, "signal_var": self.signal_var,
                "noise_var": self.noise_var}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["X"], dtype=float).reshape(len(d["X"]), -1),
                   np.array(d["weights"], dtype=float), float(d["y_mean"]),
                   float(d["lengthscale"]), float(d["signal_var"]), float(d["noise_var"]))


def _gp_cholesky(K, noise_var):
    jitter = 1e-8
    n = len(K)
    for _ in range(8):
        try:
            return linalg.cholesky(K + (noise_var + jitter) * np.eye(n), lower=True)
        except linalg.LinAlgError:
            jitter *= 10
    raise NumericalError("GP covariance is not positive definite even with jitter")


def gp_from_hyperparameters(X, y, lengthscale, signal_var, noise_var) -> GPModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    ym = y.mean()
    L = _gp_cholesky(signal_var * gaussian_kernel(X, X, lengthscale), noise_var)
    w = linalg.cho_solve((L, True), y - ym)
    return GPModel(X, w, float(ym), float(lengthscale), float(signal_var), float(noise_var))


def gp_log_marginal(X, y, log_hyper, want_grad=True):
    """Log marginal likelihood of centered ``y`` and its gradient in log-hyperparameters."""
    log_l, log_s, log_n = log_hyper
    ell2, s2, n2 = np.exp(2 * log_l), np.exp(log_s), np.exp(log_n)
    D2 = cdist(X, X, "sqeuclidean")
    E = np.exp(-D2 / ell2)
    K = s2 * E
    L = _gp_cholesky(K, n2)
    a = linalg.cho_solve((L, True), y)
    n = len(y)
    f = -0.5 * y @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    if not want_grad:
        return f, None
    Kinv = linalg.cho_solve((L, True), np.eye(n))
    W = np.outer(a, a) - Kinv
    dK_dl = K * (2.0 * D2 / ell2)
    g = 0.5 * np.array([np.sum(W * dK_dl), np.sum(W * K), n2 * np.trace(W)])
    return f, g


def fit_gp(X, y, noise: float = 1e-2, *, learn_noise: bool = True, max_points: int | None = 400,
           seed: int = 0) -> GPModel:
    """GP regression with a Gaussian kernel, hyperparameters by marginal likelihood.

    A log-space grid over lengthscale and noise picks the start point for
    L-BFGS. ``noise`` is the noise variance relative to ``var(y)``; it seeds
    the grid, or is kept fixed when ``learn_noise`` is false. Training sets
    larger than ``max_points`` are subsampled.
    """
    if noise <= 0:
        raise ValueError("noise must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if max_points is not None and len(y) > max_points:
        idx = np.sort(np.random.default_rng(seed).choice(len(y), max_points, replace=False))
        X, y = X[idx], y[idx]
    yc = y - y.mean()
    var = float(yc.var())
    if var <= 1e-14:
        return gp_from_hyperparameters(X, y, 1.0, 1.0, 1.0)
    d = pdist(X)
    med = float(np.median(d)) if d.size and np.median(d) > 0 else 1.0
    noises = [noise] if not learn_noise else sorted({noise, 1e-2, 1e-1, 0.5})
    best = None
    for sl in (0.25, 0.5, 1.0, 2.0, 4.0):
        for nz in noises:
            h = np.log([sl * med, var, nz * var])
            f, _ = gp_log_marginal(X, yc, h, want_grad=False)
            if best is None or f > best[0]:
                best = (f, h)
    h0 = best[1]
    if learn_noise:
        bounds = [(np.log(1e-3 * med), np.log(1e3 * med)), (np.log(1e-4 * var), np.log(1e4 * var)),
                  (np.log(max(1e-8, 1e-8 * var)), np.log(10 * var))]
        res = maximize(lambda h: gp_log_marginal(X, yc, h), h0, bounds=bounds, maxiter=100,
                       gtol=1e-6, warn=False)
        h = res.x
    else:
        bounds = [(np.log(1e-3 * med), np.log(1e3 * med)), (np.log(1e-4 * var), np.log(1e4 * var))]

        def fixed(hh):
            f, g = gp_log_marginal(X, yc, [hh[0], hh[1], h0[2]])
            return f, g[:2]
        res = maximize(fixed, h0[:2], bounds=bounds, maxiter=100, gtol=1e-6, warn=False)
        h = np.array([res.x[0], res.x[1], h0[2]])
    return gp_from_hyperparameters(X, y, np.exp(h[0]), np.exp(h[1]), np.exp(h[2]))


def predict_gp(model: GPModel, Xs) -> np.ndarray:
    return model.predict(Xs)


# ---------------------------------------------------------------------------
# unsupervised and supervised mappings
# ---------------------------------------------------------------------------

@dataclass
class PCAProjection:
    mean: np.ndarray
    components: np.ndarray  # dims x m, orthonormal rows
    explained_variance: np.ndarray

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) @ self.components.T

    def inverse_transform(self, Z):
        return np.asarray(Z, dtype=float) @ self.components + self.mean

    def to_dict(self):
        return {"type": "pca", "mean": self.mean.tolist(), "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist()}


def fit_pca(X, dims: int) -> PCAProjection:
    """Top principal directions of column-centered ``X``.

    Each direction's sign is chosen so its largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=float)
    n, m = X.shape
    if dims > m:
        raise ValueError(f"dims={dims} exceeds the number of columns {m}")
    mean = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - mean, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-12)) if s.size and s[0] > 0 else 0
    if dims > rank:
        warnings.warn(f"requested {dims} components but data rank is {rank}", stacklevel=2)
    comps = Vt[:dims].copy()
    for c in comps:
        j = np.argmax(np.abs(c))
        if c[j] < 0:
            c *= -1
    return PCAProjection(mean, comps, s[:dims] ** 2 / max(n - 1, 1))


@dataclass
class EncoderMapping:
    encoder: Encoder

    def transform(self, X):
        return self.encoder(X)

    def to_dict(self):
        return {"type": "dae", **self.encoder.to_dict()}


@dataclass
class HiddenLayerMapping:
    net: MLP

    def transform(self, X):
        return self.net.hidden(X)

    def to_dict(self):
        return {"type": "nm", **self.net.to_dict()}


class IdentityMapping:
    def transform(self, X):
        return np.asarray(X, dtype=float)

    def to_dict(self):
        return {"type": "identity"}


def mapping_from_dict(d):
    t = d["type"]
    if t == "identity":
        return IdentityMapping()
    if t == "pca":
        return PCAProjection(np.array(d["mean"]), np.array(d["components"]),
                             np.array(d["explained_variance"]))
    if t == "dae":
        return EncoderMapping(Encoder.from_dict(d))
    if t == "nm":
        return HiddenLayerMapping(MLP.from_dict(d))
    raise ValueError(f"unknown mapping type {t!r}")


def fit_dae(X, dims: int, noise_prob: float = 0.2, seed: int = 0, maxiter: int = 300) -> Encoder:
    """Denoising autoencoder with masking noise; the encoder is the hidden layer."""
    if dims < 1:
        raise ValueError("dims must be at least 1")
    enc = fit_autoencoder(X, dims, noise_prob=noise_prob, seed=seed, maxiter=maxiter)
    if not (np.isfinite(enc.w).all() and np.isfinite(enc.b).all()):
        raise NumericalError("autoencoder training diverged")
    return enc


def encode(encoder: Encoder, X) -> np.ndarray:
    return encoder(X)


def nn_hidden_size(n_nodes: int, m: int, hp: dict) -> int:
    return DflArch(h=hp["h"], gamma=hp["gamma"]).hidden_size(n_nodes, m)


def fit_nn(X, y, hidden: int, h: int = 3, seed: int = 0, reg: float = 1e-3) -> MLP:
    """Sigmoid MLP with the DFL map's shape plus a linear output unit."""
    net = fit_mlp(X, y, hidden, out=h, seed=seed, reg=reg)
    if not np.isfinite(net.predict(np.asarray(X)[:1])).all():
        raise NumericalError("network training diverged")
    return net


# ---------------------------------------------------------------------------
# the shared structured set-up: linear R + Gaussian-kernel S + GCRF
# ---------------------------------------------------------------------------

@dataclass
class StructuredModel:
    lr: LinearModel
    lengthscale: float
    neighbor_k: int
    crf: GcrfParams

    def potentials(self, H) -> Potentials:
        H = np.asarray(H, dtype=float)
        S = knn_graph(H, self.neighbor_k, bandwidth=self.lengthscale)
        return Potentials(self.lr.predict(H)[:, None], (S,))

    def predict(self, H):
        return gcrf.predict(self.crf, self.potentials(H))

    def to_dict(self):
        return {"lr": self.lr.to_dict(), "lengthscale": self.lengthscale,
                "neighbor_k": self.neighbor_k, "crf": self.crf.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(LinearModel.from_dict(d["lr"]), float(d["lengthscale"]), int(d["neighbor_k"]),
                   GcrfParams.from_dict(d["crf"]))


def fit_structured(Hs, ys, *, ridge=1e-6, neighbor_k=10, gp_noise=1e-2, gp_max_points=400,
                   seed=0, reg=1e-3, gp: GPModel | None = None) -> StructuredModel:
    """Fit the linear predictor, the GP-optimized kernel and then the GCRF weights."""
    H = np.vstack(Hs)
    y = np.concatenate(ys)
    lr = fit_lr(H, y, ridge)
    if gp is None:
        gp = fit_gp(H, y, gp_noise, max_points=gp_max_points, seed=seed)
    model = StructuredModel(lr, gp.lengthscale, neighbor_k, GcrfParams.zeros())
    pots = [model.potentials(h) for h in Hs]
    model.crf = gcrf.fit_gcrf(pots, ys, reg=reg, warn=False)
    return model


# ---------------------------------------------------------------------------
# fitted baselines
# ---------------------------------------------------------------------------

@dataclass
class FittedBaseline:
    kind: Kind
    scaler: Standardizer | None
    mapping: object
    head: object
    fallback_mean: float
    seed: int = 0

    @property
    def complete_only(self) -> bool:
        return self.kind in DELETION_KINDS

    def predict(self, fm: FeatureMatrix) -> np.ndarray:
        N = fm.n_nodes
        out = np.full(N, self.fallback_mean)
        if self.head is None:
            return out
        rows = fm.complete_rows() if self.complete_only else np.ones(N, dtype=bool)
        if not rows.any():
            return out
        X = self.scaler.transform(fm.take(rows))
        H = self.mapping.transform(X)
        out[rows] = self.head.predict(H)
        return out

    def to_dict(self):
        return {"kind": self.kind.value, "seed": self.seed, "fallback_mean": self.fallback_mean,
                "scaler": None if self.scaler is None else self.scaler.to_dict(),
                "mapping": self.mapping.to_dict(),
                "head": None if self.head is None else
                {"type": type(self.head).__name__, **self.head.to_dict()}}

    @classmethod
    def from_dict(cls, d):
        head = d["head"]
        if head is not None:
            head = dict(head)
            t = head.pop("type")
            head = {"LinearModel": LinearModel, "GPModel": GPModel, "MLP": MLP,
                    "StructuredModel": StructuredModel}[t].from_dict(head)
        return cls(Kind(d["kind"]), None if d["scaler"] is None else Standardizer.from_dict(d["scaler"]),
                   mapping_from_dict(d["mapping"]), head, float(d["fallback_mean"]), int(d["seed"]))


def compose_pipeline(mapping, train: TemporalDataset, gcrf_opts: dict | None = None,
                     scaler: Standardizer | None = None, seed: int = 0) -> FittedBaseline:
    """GCRF with linear R and Gaussian-kernel S on an already fitted mapping."""
    opts = dict(DEFAULT_HYPERPARAMS)
    opts.update(gcrf_opts or {})
    scaler = scaler or Standardizer.fit(train.features)
    Hs = [mapping.transform(scaler.transform(fm)) for fm in train.features]
    head = fit_structured(Hs, list(train.targets), ridge=opts["ridge"], neighbor_k=opts["neighbor_k"],
                          gp_noise=opts["gp_noise"], gp_max_points=opts["gp_max_points"],
                          seed=seed, reg=opts["reg"])
    ymean = float(np.mean(np.concatenate(train.targets)))
    return FittedBaseline(Kind.GCRF0, scaler, mapping, head, ymean, seed)


def fit_baseline(spec: BaselineSpec, train: TemporalDataset) -> FittedBaseline:
    hp, kind, seed = spec.hyperparams, spec.kind, spec.seed
    ymean = float(np.mean(np.concatenate(train.targets)))
    if kind in DELETION_KINDS:
        try:
            train = drop_incomplete(train)
        except EmptyDatasetError:
            warnings.warn(f"{kind.value}: no complete training nodes; predicting the mean",
                          ConvergenceWarning, stacklevel=2)
            return FittedBaseline(kind, None, IdentityMapping(), None, ymean, seed)
    scaler = Standardizer.fit(train.features)
    Xs = [scaler.transform(fm) for fm in train.features]
    X, y = np.vstack(Xs), np.concatenate(train.targets)
    identity = IdentityMapping()

    if kind in (Kind.iLR, Kind.LR0):
        return FittedBaseline(kind, scaler, identity, fit_lr(X, y, hp["ridge"]), ymean, seed)
    if kind in (Kind.iGP, Kind.GP0):
        gp = fit_gp(X, y, hp["gp_noise"], max_points=hp["gp_max_points"], seed=seed)
        return FittedBaseline(kind, scaler, identity, gp, ymean, seed)
    if kind is Kind.NN:
        net = fit_nn(X, y, nn_hidden_size(train.n_nodes, X.shape[1], hp), hp["h"], seed, hp["reg"])
        return FittedBaseline(kind, scaler, identity, net, ymean, seed)

    if kind in (Kind.iGCRF, Kind.GCRF0):
        mapping = identity
    elif kind is Kind.PCA_GCRF:
        mapping = fit_pca(X, min(hp["dims"], X.shape[1]))
    elif kind is Kind.DAE_GCRF:
        mapping = EncoderMapping(fit_dae(X, hp["dims"], hp["dae_noise"], seed))
    elif kind is Kind.NM_GCRF:
        net = fit_nn(X, y, nn_hidden_size(train.n_nodes, X.shape[1], hp), hp["h"], seed, hp["reg"])
        mapping = HiddenLayerMapping(net)
    else:  # pragma: no cover
        raise ValueError(kind)
    fitted = compose_pipeline(mapping, train, hp, scaler=scaler, seed=seed)
    fitted.kind = kind
    fitted.fallback_mean = ymean
    return fitted


def run_baseline(spec: BaselineSpec, train: TemporalDataset, test: TemporalDataset) -> np.ndarray:
    """Fit on ``train`` and predict the (single) test snapshot for every node."""
    model = fit_baseline(spec, train)
    return model.predict(test.features[-1])
