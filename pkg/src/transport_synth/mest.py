"""Stacked estimating-equation solver with empirical sandwich variance.

An estimator is specified as a function ``phi`` mapping (data, theta) to an
``n x k`` matrix of per-observation estimating-function contributions. The
point estimate solves ``sum_i phi(O_i; theta) = 0`` by damped Newton with a
numerically differentiated Jacobian; the variance is the empirical sandwich

    V(theta_hat) = (1/n) * B^{-1} F B^{-T}

with bread ``B = (1/n) sum_i -phi'(O_i; theta_hat)`` (the derivative matrix of
the per-observation contributions) and filling ``F = (1/n) sum_i phi phi^T``.
Stacking nuisance-model scores and target parameters into one ``phi`` makes
the sandwich propagate nuisance-estimation uncertainty automatically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

__all__ = [
    "MEstimationError",
    "NonConvergenceError",
    "SingularJacobianError",
    "SingularBreadError",
    "NonFiniteEvaluationError",
    "EstimatingFunction",
    "MEstimate",
    "solve",
    "numerical_jacobian",
    "sandwich",
    "estimate",
]

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200
_MAX_HALVINGS = 60
_FD_STEP = 1e-6  # central-difference step, scaled by max(1, |theta_j|)


class MEstimationError(RuntimeError):
    """Base class for estimation failures."""


class NonConvergenceError(MEstimationError):
    """Root finding stopped without meeting the tolerance."""

    def __init__(self, message: str, residual_norm: float):
        super().__init__(f"{message} (sup-norm of summed equations: {residual_norm:.3e})")
        self.residual_norm = residual_norm


class SingularJacobianError(MEstimationError):
    """The Newton step could not be computed from a singular Jacobian."""


class SingularBreadError(MEstimationError):
    """The bread matrix is singular; the sandwich variance does not exist."""


class NonFiniteEvaluationError(MEstimationError):
    """Estimating functions evaluated to NaN or infinity."""

    def __init__(self, message: str, coordinate: Optional[int] = None):
        super().__init__(message)
        self.coordinate = coordinate


@dataclass(frozen=True)
class EstimatingFunction:
    """A system of ``arity`` estimating equations.

    ``evaluate(data, theta)`` must return an ``n x arity`` array whose rows
    are per-observation contributions; the estimator is the root of their
    column sums. Evaluators are expected to be vectorized over observations.
    """

    arity: int
    evaluate: Callable[[Any, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MEstimate:
    """A solved system: point estimates plus sandwich variance pieces."""

    theta: np.ndarray
    bread: np.ndarray
    filling: np.ndarray
    covariance: np.ndarray
    converged: bool
    residual_norm: float

    def se(self) -> np.ndarray:
        """Standard errors: square roots of the covariance diagonal."""
        return np.sqrt(np.diag(self.covariance))


def _summed(ef: EstimatingFunction, data: Any, theta: np.ndarray) -> np.ndarray:
    contrib = ef.evaluate(data, theta)
    contrib = np.asarray(contrib, dtype=float)
    if contrib.ndim != 2 or contrib.shape[1] != ef.arity:
        raise ValueError(
            f"evaluator returned shape {contrib.shape}, expected (n, {ef.arity})"
        )
    return contrib.sum(axis=0)


def solve(
    ef: EstimatingFunction,
    data: Any,
    init: np.ndarray,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> np.ndarray:
    """Find ``theta`` with ``||sum_i phi(O_i; theta)||_inf <= tol``.

    Damped Newton iteration: each step solves the linearized system and is
    halved until the 2-norm of the summed equations strictly decreases.
    ``callback`` (if given) sees every accepted iterate; it may raise to
    abort with a more specific diagnosis (e.g. a separation guard).

    Raises
    ------
    NonConvergenceError
        If the iteration or line search stalls before reaching ``tol``.
    SingularJacobianError
        If the numerical Jacobian cannot be inverted for the Newton step.
    NonFiniteEvaluationError
        If the equations are non-finite at the initial value.
    """
    theta = np.array(init, dtype=float).ravel()
    if theta.size != ef.arity:
        raise ValueError(f"init has length {theta.size}, expected {ef.arity}")

    s = _summed(ef, data, theta)
    if not np.all(np.isfinite(s)):
        raise NonFiniteEvaluationError(
            "summed estimating equations are non-finite at the initial value"
        )

    for _ in range(max_iter):
        sup = float(np.max(np.abs(s)))
        if sup <= tol:
            return theta

        jac = numerical_jacobian(ef, data, theta)
        try:
            step = np.linalg.solve(jac, -s)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(
                f"singular Jacobian at theta={theta!r}; cannot take a Newton step"
            ) from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobianError(
                f"non-finite Newton step at theta={theta!r} (near-singular Jacobian)"
            )

        norm2 = float(np.linalg.norm(s))
        scale = 1.0
        for _ in range(_MAX_HALVINGS):
            candidate = theta + scale * step
            s_new = _summed(ef, data, candidate)
            if np.all(np.isfinite(s_new)) and float(np.linalg.norm(s_new)) < norm2:
                theta, s = candidate, s_new
                break
            scale *= 0.5
        else:
            raise NonConvergenceError(
                "line search could not reduce the residual", residual_norm=sup
            )
        if callback is not None:
            callback(theta)

    raise NonConvergenceError(
        f"no convergence within {max_iter} iterations",
        residual_norm=float(np.max(np.abs(s))),
    )


def numerical_jacobian(
    ef: EstimatingFunction, data: Any, theta: np.ndarray
) -> np.ndarray:
    """Central-difference Jacobian of the summed estimating equations.

    Entry ``(i, j)`` is the derivative of the i-th summed equation with
    respect to ``theta_j``, using step ``max(1e-6, 1e-6 * |theta_j|)``.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    k = ef.arity
    jac = np.empty((k, k))
    for j in range(k):
        h = max(_FD_STEP, _FD_STEP * abs(theta[j]))
        up = theta.copy()
        up[j] += h
        down = theta.copy()
        down[j] -= h
        s_up = _summed(ef, data, up)
        s_down = _summed(ef, data, down)
        if not (np.all(np.isfinite(s_up)) and np.all(np.isfinite(s_down))):
            raise NonFiniteEvaluationError(
                f"estimating equations non-finite when perturbing coordinate {j}",
                coordinate=j,
            )
        jac[:, j] = (s_up - s_down) / (2.0 * h)
    return jac


def sandwich(
    ef: EstimatingFunction,
    data: Any,
    theta: np.ndarray,
    *,
    tol: float = DEFAULT_TOL,
) -> MEstimate:
    """Empirical sandwich variance at ``theta`` (normally a root from solve).

    The bread is inverted by LU factorization with partial pivoting
    (``numpy.linalg.inv``); a singular or numerically unusable bread raises
    :class:`SingularBreadError` rather than silently falling back to a
    pseudo-inverse.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    contrib = np.asarray(ef.evaluate(data, theta), dtype=float)
    n = contrib.shape[0]
    summed = contrib.sum(axis=0)
    residual_norm = float(np.max(np.abs(summed)))

    jac = numerical_jacobian(ef, data, theta)
    bread = -jac / n
    filling = contrib.T @ contrib / n
    try:
        bread_inv = np.linalg.inv(bread)
    except np.linalg.LinAlgError as exc:
        raise SingularBreadError("bread matrix is singular") from exc
    if not np.all(np.isfinite(bread_inv)):
        raise SingularBreadError("bread matrix inverse is non-finite")

    covariance = bread_inv @ filling @ bread_inv.T / n
    return MEstimate(
        theta=theta,
        bread=bread,
        filling=filling,
        covariance=covariance,
        converged=residual_norm <= tol,
        residual_norm=residual_norm,
    )


def estimate(
    ef: EstimatingFunction,
    data: Any,
    init: np.ndarray,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> MEstimate:
    """Solve the system and return the sandwich in one call."""
    theta = solve(ef, data, init, tol=tol, max_iter=max_iter, callback=callback)
    return sandwich(ef, data, theta, tol=tol)
