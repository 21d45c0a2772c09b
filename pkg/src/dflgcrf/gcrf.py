"""Gaussian conditional random fields with fixed unstructured predictors and graphs.

The model over responses ``y`` of ``N`` nodes is

    P(y | X) ∝ exp(-Σ_i Σ_k α_k (y_i - R_ik)² - Σ_{i~j} Σ_l β_l S^l_ij (y_i - y_j)²)

which is the Gaussian ``N(μ, Q⁻¹)`` with precision
``Q = 2(Σ_k α_k) I + 2 Σ_l β_l (diag(S^l 1) - S^l)`` and mean ``μ = Q⁻¹ b``,
``b = 2 Σ_k α_k R_k``. Weights are kept as logs, ``α = exp(u)``, ``β = exp(v)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, sparse

from .optim import NumericalError, maximize

LOG_2PI = np.log(2.0 * np.pi)
LOG_BOUND = 40.0


@dataclass(frozen=True)
class GcrfParams:
    u: np.ndarray
    v: np.ndarray
    info: dict | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float)).copy()
        v = np.atleast_1d(np.asarray(self.v, dtype=float)).copy()
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("GCRF log-parameters must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(self.u)

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.v)

    @classmethod
    def zeros(cls, K: int = 1, L: int = 1) -> "GcrfParams":
        return cls(np.zeros(K), np.zeros(L))

    def to_dict(self) -> dict:
        d = {"u": self.u.tolist(), "v": self.v.tolist(), "K": len(self.u), "L": len(self.v)}
        if self.info:
            d["diagnostics"] = self.info
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GcrfParams":
        return cls(np.array(d["u"], dtype=float), np.array(d["v"], dtype=float),
                   info=d.get("diagnostics"))


def as_similarity(S, tol=1e-12) -> sparse.csr_matrix:
    """Validate a similarity matrix and return it in CSR form."""
    S = sparse.csr_matrix(S, dtype=float)
    S.eliminate_zeros()
    if S.shape[0] != S.shape[1]:
        raise ValueError("similarity matrix must be square")
    if S.nnz and S.data.min() < 0:
        raise ValueError("similarity entries must be nonnegative")
    if S.nnz and abs(S - S.T).max() > tol:
        raise ValueError("similarity matrix must be symmetric")
    if S.diagonal().any():
        S = S.tolil()
        S.setdiag(0.0)
        S = S.tocsr()
        S.eliminate_zeros()
    return S


@dataclass(frozen=True)
class Potentials:
    """Unstructured predictions ``R`` (N x K) and similarity graphs ``S``."""

    R: np.ndarray
    S: tuple

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        if R.ndim == 1:
            R = R[:, None]
        if not np.isfinite(R).all():
            raise ValueError("unstructured predictions must be finite")
        S = tuple(as_similarity(s) for s in self.S)
        for s in S:
            if s.shape != (R.shape[0], R.shape[0]):
                raise ValueError("similarity shape does not match number of nodes")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "S", S)

    @property
    def n_nodes(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class GaussianPosterior:
    mu: np.ndarray
    precision: sparse.csr_matrix
    b: np.ndarray
    cholesky: np.ndarray

    def log_det_precision(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky))))

    def covariance(self) -> np.ndarray:
        N = len(self.mu)
        return linalg.cho_solve((self.cholesky, True), np.eye(N))


def laplacian(S: sparse.spmatrix) -> sparse.csr_matrix:
    d = np.asarray(S.sum(axis=1)).ravel()
    return (sparse.diags(d) - S).tocsr()


def build_precision(p: GcrfParams, S: Sequence) -> sparse.csr_matrix:
    S = [as_similarity(s) for s in S]
    if len(S) != len(p.v):
        raise ValueError(f"got {len(S)} similarity matrices for {len(p.v)} beta weights")
    if not S:
        raise ValueError("at least one similarity matrix (possibly empty) is required")
    N = S[0].shape[0]
    Q = sparse.identity(N, format="csr") * (2.0 * p.alpha.sum())
    for beta, s in zip(p.beta, S):
        Q = Q + 2.0 * beta * laplacian(s)
    return Q.tocsr()


def build_b(p: GcrfParams, R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    return 2.0 * R @ p.alpha


def _cholesky(Q) -> np.ndarray:
    Qd = Q.toarray() if sparse.issparse(Q) else np.asarray(Q)
    try:
        return linalg.cholesky(Qd, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"precision matrix is not positive definite: {exc}") from None


def posterior(p: GcrfParams, pot: Potentials) -> GaussianPosterior:
    Q = build_precision(p, pot.S)
    b = build_b(p, pot.R)
    L = _cholesky(Q)
    mu = linalg.cho_solve((L, True), b)
    return GaussianPosterior(mu=mu, precision=Q, b=b, cholesky=L)


def predict(p: GcrfParams, pot: Potentials) -> np.ndarray:
    return posterior(p, pot).mu


def gaussian_log_density(post: GaussianPosterior, y) -> float:
    r = np.asarray(y, dtype=float) - post.mu
    N = len(r)
    return float(-0.5 * r @ (post.precision @ r) + 0.5 * post.log_det_precision()
                 - 0.5 * N * LOG_2PI)


def log_likelihood(p: GcrfParams, pot: Potentials, y) -> float:
    """``log N(y; μ, Q⁻¹)`` with the log-determinant taken from the Cholesky factor."""
    return gaussian_log_density(posterior(p, pot), y)


def precision_sensitivity(post: GaussianPosterior, y) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the log-density with respect to ``Q`` and ``b``.

    Returns ``(G, r)`` such that ``d logN = tr(G dQ) + r·db`` for symmetric
    perturbations ``dQ``, where ``G = (Σ + μμᵀ - yyᵀ)/2`` and ``r = y - μ``.
    """
    y = np.asarray(y, dtype=float)
    Sigma = post.covariance()
    G = 0.5 * (Sigma + np.outer(post.mu, post.mu) - np.outer(y, y))
    return G, y - post.mu


def _grad_from_sensitivity(p, pot, G, r):
    alpha, beta = p.alpha, p.beta
    # dQ/dα_k = 2I, db/dα_k = 2 R_k
    d_alpha = 2.0 * np.trace(G) + 2.0 * (pot.R.T @ r)
    d_beta = np.empty(len(beta))
    dG = np.diag(G)
    for l, s in enumerate(pot.S):
        # dQ/dβ_l = 2 (diag(S 1) - S)
        deg = np.asarray(s.sum(axis=1)).ravel()
        d_beta[l] = 2.0 * (deg @ dG - s.multiply(G).sum())
    return alpha * d_alpha, beta * d_beta


def grad_uv(p: GcrfParams, pot: Potentials, y) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`log_likelihood` with respect to ``(u, v)``."""
    post = posterior(p, pot)
    G, r = precision_sensitivity(post, y)
    return _grad_from_sensitivity(p, pot, G, r)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

class _PooledProblem:
    """Sum of per-snapshot log-likelihoods with dense cached Laplacians."""

    def __init__(self, pots, ys):
        self.pots = list(pots)
        self.ys = [np.asarray(y, dtype=float) for y in ys]
        self.laps = [[laplacian(s).toarray() for s in pot.S] for pot in self.pots]
        self.degs = [[np.asarray(s.sum(axis=1)).ravel() for s in pot.S] for pot in self.pots]
        self.K = self.pots[0].R.shape[1]
        self.L = len(self.pots[0].S)
        for pot in self.pots:
            if pot.R.shape[1] != self.K or len(pot.S) != self.L:
                raise ValueError("all snapshots must share K and L")

    def __call__(self, x, reg):
        u, v = x[:self.K], x[self.K:]
        alpha, beta = np.exp(u), np.exp(v)
        total = 0.0
        du = np.zeros(self.K)
        dv = np.zeros(self.L)
        for pot, y, laps, degs in zip(self.pots, self.ys, self.laps, self.degs):
            N = len(y)
            Q = 2.0 * alpha.sum() * np.eye(N)
            for bl, lap in zip(beta, laps):
                Q += 2.0 * bl * lap
            b = 2.0 * pot.R @ alpha
            L = _cholesky(Q)
            mu = linalg.cho_solve((L, True), b)
            r = y - mu
            total += (-0.5 * r @ (Q @ r) + np.sum(np.log(np.diag(L))) - 0.5 * N * LOG_2PI)
            Sigma = linalg.cho_solve((L, True), np.eye(N))
            G = 0.5 * (Sigma + np.outer(mu, mu) - np.outer(y, y))
            du += alpha * (2.0 * np.trace(G) + 2.0 * (pot.R.T @ r))
            dG = np.diag(G)
            for l, (s, deg) in enumerate(zip(pot.S, degs)):
                dv[l] += beta[l] * 2.0 * (deg @ dG - s.multiply(G).sum())
        total -= reg * (u @ u + v @ v)
        grad = np.concatenate([du - 2.0 * reg * u, dv - 2.0 * reg * v])
        return total, grad


def _pool(pot, y):
    if isinstance(pot, Potentials):
        return [pot], [y]
    return list(pot), list(y)


def gcrf_objective(p: GcrfParams, pot, y, reg: float = 1e-3) -> float:
    """Regularized pooled log-likelihood ``Σ_t log P(y_t) - reg (|u|² + |v|²)``."""
    prob = _PooledProblem(*_pool(pot, y))
    return prob(np.concatenate([p.u, p.v]), reg)[0]


def fit_gcrf(pot, y, *, reg: float = 1e-3, init: GcrfParams | None = None,
             gtol: float = 1e-5, ftol: float = 1e-12, maxiter: int = 500,
             warn: bool = True) -> GcrfParams:
    """Maximize the regularized conditional log-likelihood over ``(u, v)``.

    ``pot`` and ``y`` may be a single snapshot or equal-length sequences of
    snapshots, in which case the log-likelihoods are summed (a block-diagonal
    precision over all snapshots).
    """
    pots, ys = _pool(pot, y)
    prob = _PooledProblem(pots, ys)
    if init is None:
        init = GcrfParams.zeros(prob.K, prob.L)
    x0 = np.concatenate([init.u, init.v])
    bounds = [(-LOG_BOUND, LOG_BOUND)] * len(x0)
    res = maximize(lambda x: prob(x, reg), x0, gtol=gtol, ftol=ftol, maxiter=maxiter,
                   bounds=bounds, warn=warn)
    info = {"objective": res.objective, "grad_norm": res.grad_norm, "n_iter": res.n_iter,
            "converged": res.converged, "trace": res.trace,
            "n_nodes": int(sum(len(t) for t in ys))}
    return GcrfParams(res.x[:prob.K], res.x[prob.K:], info=info)
