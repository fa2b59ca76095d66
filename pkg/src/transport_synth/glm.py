"""Logistic working models on explicit design specifications.

Designs are ordered term lists (intercept, linear, quadratic, two-way
interaction, threshold interaction) parseable from compact strings such as
``["1", "A", "V", "V^2"]`` or ``["1", "V", "V*I(V>25)"]``. Fits run through
the estimating-equation engine so every fitted model carries a sandwich
covariance and can be stacked with downstream parameters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import mest

__all__ = [
    "SeparationError",
    "RankDeficientDesignError",
    "Term",
    "DesignSpec",
    "FittedLogistic",
    "expit",
    "fit_logistic",
    "predict",
]

SEPARATION_BOUND = 30.0  # |coefficient| beyond this while improving => separation


class SeparationError(mest.MEstimationError):
    """The likelihood keeps improving as coefficients diverge."""


class RankDeficientDesignError(mest.MEstimationError):
    """The design matrix does not have full column rank."""


def expit(x):
    """Inverse logit, safe against overflow on both tails.

    Branches on the sign of the argument so that ``exp`` is only ever called
    on non-positive values: ``expit(750.0)`` is exactly 1.0 and
    ``expit(-750.0)`` exactly 0.0, with no overflow warning. Accepts scalars
    or arrays; returns a float for scalar input.
    """
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    exp_neg = np.exp(arr[~pos])
    out[~pos] = exp_neg / (1.0 + exp_neg)
    if np.ndim(x) == 0:
        return float(out[0])
    return out.reshape(np.shape(x))


_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_RE_INTERCEPT = re.compile(r"^1$")
_RE_QUADRATIC = re.compile(rf"^({_NAME})\s*\^\s*2$")
_RE_THRESHOLD = re.compile(
    rf"^({_NAME})\s*[*:]\s*I\(\s*\1\s*>\s*([-+]?[0-9.]+(?:[eE][-+]?[0-9]+)?)\s*\)$"
)
_RE_INTERACTION = re.compile(rf"^({_NAME})\s*[*:]\s*({_NAME})$")
_RE_LINEAR = re.compile(rf"^({_NAME})$")


@dataclass(frozen=True)
class Term:
    """One design column. ``kind`` selects which fields are meaningful."""

    kind: str  # intercept | linear | quadratic | interaction | threshold_interaction
    var: Optional[str] = None
    var2: Optional[str] = None
    cutpoint: Optional[float] = None

    @classmethod
    def from_string(cls, spec: str) -> "Term":
        text = spec.strip()
        if _RE_INTERCEPT.match(text):
            return cls("intercept")
        match = _RE_QUADRATIC.match(text)
        if match:
            return cls("quadratic", var=match.group(1))
        match = _RE_THRESHOLD.match(text)
        if match:
            return cls("threshold_interaction", var=match.group(1),
                       cutpoint=float(match.group(2)))
        match = _RE_INTERACTION.match(text)
        if match:
            return cls("interaction", var=match.group(1), var2=match.group(2))
        match = _RE_LINEAR.match(text)
        if match:
            return cls("linear", var=match.group(1))
        raise ValueError(
            f"cannot parse design term {spec!r}; expected forms like "
            f"'1', 'V', 'V^2', 'A*W', or 'V*I(V>25)'"
        )

    def label(self) -> str:
        if self.kind == "intercept":
            return "1"
        if self.kind == "linear":
            return self.var
        if self.kind == "quadratic":
            return f"{self.var}^2"
        if self.kind == "interaction":
            return f"{self.var}*{self.var2}"
        return f"{self.var}*I({self.var}>{self.cutpoint:g})"

    def variables(self) -> tuple[str, ...]:
        if self.kind == "intercept":
            return ()
        if self.kind == "interaction":
            return (self.var, self.var2)
        return (self.var,)

    def column(self, resolved: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        if self.kind == "intercept":
            return np.ones(n)
        if self.kind == "linear":
            return resolved[self.var]
        if self.kind == "quadratic":
            return resolved[self.var] ** 2
        if self.kind == "interaction":
            return resolved[self.var] * resolved[self.var2]
        values = resolved[self.var]
        return values * (values > self.cutpoint)


@dataclass(frozen=True)
class DesignSpec:
    """An ordered tuple of terms defining a model matrix."""

    terms: tuple[Term, ...]

    @classmethod
    def from_strings(cls, specs: Sequence[str]) -> "DesignSpec":
        return cls(terms=tuple(Term.from_string(s) for s in specs))

    @property
    def n_params(self) -> int:
        return len(self.terms)

    def labels(self) -> tuple[str, ...]:
        return tuple(term.label() for term in self.terms)

    def variables(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for term in self.terms:
            for var in term.variables():
                seen.setdefault(var)
        return tuple(seen)

    def matrix(self, columns: Mapping[str, object], n: Optional[int] = None) -> np.ndarray:
        """Build the ``n x n_params`` model matrix from named columns.

        ``columns`` maps variable names to arrays or scalars; scalars are
        broadcast. ``n`` may be omitted when at least one referenced variable
        is an array (or when everything is scalar, in which case n = 1).
        """
        resolved_raw: dict[str, np.ndarray] = {}
        for var in self.variables():
            if var not in columns:
                raise ValueError(f"design references unknown variable {var!r}")
            resolved_raw[var] = np.asarray(columns[var], dtype=float)
        if n is None:
            lengths = {arr.shape[0] for arr in resolved_raw.values() if arr.ndim > 0}
            if len(lengths) > 1:
                raise ValueError(f"inconsistent column lengths {sorted(lengths)}")
            n = lengths.pop() if lengths else 1
        resolved = {}
        for var, arr in resolved_raw.items():
            if arr.ndim == 0:
                resolved[var] = np.full(n, float(arr))
            elif arr.shape[0] == n:
                resolved[var] = arr
            else:
                raise ValueError(
                    f"column {var!r} has length {arr.shape[0]}, expected {n}"
                )
        return np.column_stack([term.column(resolved, n) for term in self.terms])


@dataclass(frozen=True, eq=False)
class FittedLogistic:
    """A fitted logistic model: design, coefficients, sandwich covariance."""

    design: DesignSpec
    coefficients: np.ndarray
    covariance: np.ndarray

    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def _separation_guard(theta: np.ndarray) -> None:
    # Called on accepted (residual-reducing) iterates only, so a runaway
    # coefficient here means the likelihood keeps improving toward a
    # boundary: (quasi-)separation rather than a solver artifact.
    if np.max(np.abs(theta)) > SEPARATION_BOUND:
        raise SeparationError(
            "logistic fit diverged (|coefficient| > "
            f"{SEPARATION_BOUND:g} with improving fit); data are separated "
            "or nearly so"
        )


def fit_logistic(
    design: DesignSpec,
    columns: Mapping[str, object],
    y: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> FittedLogistic:
    """Fit a logistic model by its (optionally weighted) score equations.

    Parameters
    ----------
    design : DesignSpec
        Model matrix specification; variables are resolved from ``columns``.
    columns : mapping
        Variable name -> value array (or scalar) for the fitting rows.
    y : array
        Binary outcome (0/1), same length as the columns.
    weights : array, optional
        Non-negative per-row weights for a weighted score
        ``sum_i w_i (y_i - expit(x_i' b)) x_i = 0``. Omitted means 1.

    Raises
    ------
    RankDeficientDesignError
        If the design matrix is column-rank deficient.
    SeparationError
        If coefficients diverge while the fit keeps improving.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("cannot fit a logistic model to zero rows")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("logistic outcome must be coded 0/1 with no missing values")
    X = design.matrix(columns, n=y.size)
    if not np.all(np.isfinite(X)):
        raise ValueError("design matrix contains non-finite values")
    if np.linalg.matrix_rank(X) < design.n_params:
        raise RankDeficientDesignError(
            f"design {design.labels()} is rank deficient on the fitting rows"
        )
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != y.shape or not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite, non-negative, and match y")

    def score(_data, beta: np.ndarray) -> np.ndarray:
        resid = w * (y - expit(X @ beta))
        return resid[:, None] * X

    ef = mest.EstimatingFunction(arity=design.n_params, evaluate=score)
    result = mest.estimate(
        ef, None, np.zeros(design.n_params), callback=_separation_guard
    )
    return FittedLogistic(
        design=design, coefficients=result.theta, covariance=result.covariance
    )


def predict(
    fit: FittedLogistic,
    columns: Mapping[str, object],
    overrides: Optional[Mapping[str, object]] = None,
    n: Optional[int] = None,
):
    """Predicted probabilities, with optional variable overrides.

    Overrides take precedence over ``columns`` for every design variable
    they name (e.g. ``overrides={"A": 1}`` predicts under treatment
    regardless of the observed treatment column). Returns a float when all
    referenced inputs are scalar, else an array.
    """
    merged = dict(columns)
    if overrides:
        merged.update(overrides)
    needed = fit.design.variables()
    scalar = n is None and all(
        np.ndim(merged[var]) == 0 for var in needed if var in merged
    )
    X = fit.design.matrix(merged, n=n)
    probs = expit(X @ fit.coefficients)
    if scalar and probs.size == 1:
        return float(probs[0])
    return probs
