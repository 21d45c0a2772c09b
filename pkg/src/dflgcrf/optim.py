"""Gradient-based maximization used by every fitter in the package."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize


class ConvergenceWarning(UserWarning):
    pass


class NumericalError(ArithmeticError):
    """A factorization failed where the model guarantees it should not."""


@dataclass
class AscentResult:
    x: np.ndarray
    objective: float
    grad_norm: float
    n_iter: int
    converged: bool
    trace: list = field(default_factory=list)
    message: str = ""


def maximize(fun, x0, *, gtol=1e-5, ftol=1e-12, maxiter=500, bounds=None,
             warn=True, memory=10) -> AscentResult:
    """Maximize ``fun(x) -> (value, grad)`` with L-BFGS-B.

    The line search enforces sufficient increase, so the recorded ``trace``
    of objective values is non-decreasing. Convergence means the gradient
    infinity-norm fell below ``gtol`` or the relative objective change fell
    below ``ftol``.

    A trial point where ``fun`` raises :class:`NumericalError` (e.g. a
    precision matrix that is numerically singular) scores as a large finite
    loss so the line search backtracks away from it.
    """
    x0 = np.asarray(x0, dtype=float)
    trace = []

    f0, g0 = fun(x0)
    trace.append(float(f0))
    last = {"g": -np.asarray(g0, dtype=float)}
    penalty = 1e10 * (1.0 + abs(float(f0)))

    def neg(x):
        try:
            f, g = fun(x)
        except NumericalError:
            return penalty, last["g"]
        last["g"] = -np.asarray(g, dtype=float)
        return -f, last["g"]

    def record(intermediate_result):
        trace.append(float(-intermediate_result.fun))

    res = optimize.minimize(
        neg, x0, jac=True, method="L-BFGS-B", bounds=bounds, callback=record,
        options={"maxiter": maxiter, "gtol": gtol, "ftol": ftol, "maxcor": memory,
                 "maxls": 40},
    )
    x = res.x
    f, g = fun(x)
    g = np.asarray(g, dtype=float)
    if bounds is not None:
        lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
        hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
        g = np.where((x <= lo) & (g < 0), 0.0, g)
        g = np.where((x >= hi) & (g > 0), 0.0, g)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    converged = bool(res.success) and res.nit < maxiter
    if not converged and warn:
        warnings.warn(f"ascent stopped without meeting tolerance: {res.message}",
                      ConvergenceWarning, stacklevel=2)
    return AscentResult(x=x, objective=float(f), grad_norm=gnorm, n_iter=int(res.nit),
                        converged=converged, trace=trace, message=str(res.message))
