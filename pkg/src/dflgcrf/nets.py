"""Small sigmoid networks trained full-batch: autoencoders and MLP regressors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .optim import maximize


def sigmoid(x):
    return expit(x)


def uniform_init(rng, fan_out, fan_in):
    lim = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=(fan_out, fan_in)), rng.uniform(-lim, lim, size=fan_out)


class _Packer:
    """Flatten a list of arrays into one vector and back."""

    def __init__(self, shapes):
        self.shapes = [tuple(s) for s in shapes]
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.offsets = np.cumsum([0] + self.sizes)

    def pack(self, arrays):
        return np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays])

    def unpack(self, x):
        return [x[a:b].reshape(s) for a, b, s in zip(self.offsets[:-1], self.offsets[1:], self.shapes)]


@dataclass
class Encoder:
    """Sigmoid encoding layer ``σ(X Wᵀ + b)``."""

    w: np.ndarray
    b: np.ndarray

    def __call__(self, X):
        return sigmoid(np.asarray(X, dtype=float) @ self.w.T + self.b)

    def to_dict(self):
        return {"w": self.w.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["w"], dtype=float), np.array(d["b"], dtype=float))


def corrupt(X, noise_prob, rng):
    """Masking noise: zero each entry independently with probability ``noise_prob``."""
    if noise_prob <= 0:
        return X.copy()
    return X * (rng.random(X.shape) >= noise_prob)


def fit_autoencoder(X, hidden: int, *, noise_prob: float = 0.0, seed: int = 0,
                    reg: float = 1e-4, maxiter: int = 300, n_copies: int = 3) -> Encoder:
    """Single hidden layer autoencoder, sigmoid encoder and linear decoder.

    Minimizes mean squared reconstruction of the clean ``X`` from
    masking-noise corrupted copies. The corrupted copies are drawn once, so the
    objective is deterministic and L-BFGS applies.
    """
    X = np.asarray(X, dtype=float)
    n, m = X.shape
    rng = np.random.default_rng(seed)
    w1, b1 = uniform_init(rng, hidden, m)
    w2, b2 = uniform_init(rng, m, hidden)
    copies = n_copies if noise_prob > 0 else 1
    Xin = np.vstack([corrupt(X, noise_prob, rng) for _ in range(copies)])
    Xout = np.vstack([X] * copies)
    packer = _Packer([w1.shape, b1.shape, w2.shape, b2.shape])
    scale = 1.0 / Xin.shape[0]

    def objective(x):
        w1, b1, w2, b2 = packer.unpack(x)
        Hd = sigmoid(Xin @ w1.T + b1)
        E = Hd @ w2.T + b2 - Xout
        f = -0.5 * scale * np.sum(E * E) - reg * (np.sum(w1 * w1) + np.sum(w2 * w2))
        dE = -scale * E
        gw2 = dE.T @ Hd - 2 * reg * w2
        gb2 = dE.sum(axis=0)
        dA = (dE @ w2) * Hd * (1 - Hd)
        gw1 = dA.T @ Xin - 2 * reg * w1
        gb1 = dA.sum(axis=0)
        return f, packer.pack([gw1, gb1, gw2, gb2])

    res = maximize(objective, packer.pack([w1, b1, w2, b2]), maxiter=maxiter, gtol=1e-7,
                   ftol=1e-12, warn=False)
    w1, b1, _, _ = packer.unpack(res.x)
    enc = Encoder(w1.copy(), b1.copy())
    enc.info = {"objective": res.objective, "n_iter": res.n_iter}
    return enc


def reconstruction_error(X, hidden: int, **kw) -> float:
    """Mean squared reconstruction error of the trained autoencoder on ``X``."""
    X = np.asarray(X, dtype=float)
    enc = fit_autoencoder(X, hidden, **kw)
    H = enc(X)
    H1 = np.hstack([H, np.ones((len(H), 1))])
    coef, *_ = np.linalg.lstsq(H1, X, rcond=None)
    return float(np.mean((H1 @ coef - X) ** 2))


@dataclass
class MLP:
    """``x → σ(W1 x + b1) → σ(W2 · + b2) → w3 · + b3`` regressor."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: float

    def hidden(self, X):
        """Activations of the last hidden layer."""
        Z1 = sigmoid(np.asarray(X, dtype=float) @ self.w1.T + self.b1)
        return sigmoid(Z1 @ self.w2.T + self.b2)

    def predict(self, X):
        return self.hidden(X) @ self.w3 + self.b3

    def to_dict(self):
        return {"w1": self.w1.tolist(), "b1": self.b1.tolist(), "w2": self.w2.tolist(),
                "b2": self.b2.tolist(), "w3": self.w3.tolist(), "b3": float(self.b3)}

    @classmethod
    def from_dict(cls, d):
        a = {k: np.array(d[k], dtype=float) for k in ("w1", "b1", "w2", "b2", "w3")}
        return cls(b3=float(d["b3"]), **a)


def fit_mlp(X, y, hidden: int, out: int = 3, *, seed: int = 0, reg: float = 1e-3,
            maxiter: int = 1000, chunk: int = 50, holdout: float = 0.1) -> MLP:
    """Squared-error regression with early stopping on a random holdout.

    Training runs L-BFGS in chunks of ``chunk`` iterations and keeps the
    parameters with the lowest holdout error.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_hold = int(round(holdout * n)) if n >= 20 else 0
    hold, fit_idx = perm[:n_hold], perm[n_hold:]
    Xf, yf = X[fit_idx], y[fit_idx]
    y_mean, y_sd = yf.mean(), yf.std() or 1.0
    t = (yf - y_mean) / y_sd

    w1, b1 = uniform_init(rng, hidden, m)
    w2, b2 = uniform_init(rng, out, hidden)
    w3, b3 = uniform_init(rng, 1, out)
    packer = _Packer([w1.shape, b1.shape, w2.shape, b2.shape, (out,), (1,)])
    scale = 1.0 / len(t)

    def objective(x):
        w1, b1, w2, b2, w3, b3 = packer.unpack(x)
        Z1 = sigmoid(Xf @ w1.T + b1)
        H = sigmoid(Z1 @ w2.T + b2)
        e = H @ w3 + b3[0] - t
        f = -0.5 * scale * e @ e - reg * (np.sum(w1 * w1) + np.sum(w2 * w2) + w3 @ w3)
        de = -scale * e
        gw3 = H.T @ de - 2 * reg * w3
        gb3 = np.array([de.sum()])
        dA2 = np.outer(de, w3) * H * (1 - H)
        gw2 = dA2.T @ Z1 - 2 * reg * w2
        gb2 = dA2.sum(axis=0)
        dA1 = (dA2 @ w2) * Z1 * (1 - Z1)
        gw1 = dA1.T @ Xf - 2 * reg * w1
        gb1 = dA1.sum(axis=0)
        return f, packer.pack([gw1, gb1, gw2, gb2, gw3, gb3])

    def to_model(x):
        w1, b1, w2, b2, w3, b3 = packer.unpack(x)
        return MLP(w1.copy(), b1.copy(), w2.copy(), b2.copy(), w3 * y_sd, float(b3[0] * y_sd + y_mean))

    x = packer.pack([w1, b1, w2, b2, w3, [b3[0]]])
    best_x, best_err = x, np.inf
    done = 0
    while done < maxiter:
        res = maximize(objective, x, maxiter=min(chunk, maxiter - done), gtol=1e-6, warn=False)
        done += max(res.n_iter, 1)
        x = res.x
        if n_hold:
            err = float(np.mean((to_model(x).predict(X[hold]) - y[hold]) ** 2))
        else:
            err = -res.objective
        if err < best_err:
            best_x, best_err = x, err
        elif n_hold:
            break
        if res.converged:
            break
    return to_model(best_x)
