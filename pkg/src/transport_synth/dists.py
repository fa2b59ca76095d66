"""Seeded random streams and the parameter distributions used for synthesis.

Every stochastic piece of the package draws through :class:`SeededRng`, which
derives independent substreams from a single master seed so that whole
pipelines are reproducible and safe to parallelize. The distribution classes
cover what external-evidence specifications need: a point mass, a trapezoid
(sampled by inverting its piecewise-linear CDF), a univariate normal, and a
multivariate normal (sampled through its Cholesky factor).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "DistributionError",
    "SeededRng",
    "PointMass",
    "Trapezoid",
    "Normal",
    "MultivariateNormal",
    "ParameterDistribution",
    "sample",
    "bernoulli",
    "resample_indices",
    "distribution_from_config",
    "distribution_to_config",
]


class DistributionError(ValueError):
    """Invalid distribution parameters or an unusable specification."""


@dataclass(frozen=True)
class SeededRng:
    """A reproducible random stream: a master seed plus a derivation path.

    Two instances with the same ``(master_seed, stream)`` produce identical
    draws; instances with different paths are statistically independent.
    Derivation uses ``numpy.random.SeedSequence`` spawn keys with the default
    64-bit PCG64 bit generator, so streams are stable across runs and
    platforms and safe to hand to parallel workers.
    """

    master_seed: int
    stream: tuple[int, ...] = ()

    def child(self, *ids: int) -> "SeededRng":
        """Derive the substream at ``ids`` below this stream."""
        return SeededRng(self.master_seed, self.stream + tuple(ids))

    def generator(self) -> np.random.Generator:
        """Materialize a fresh stateful generator positioned at the start."""
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=self.stream)
        return np.random.default_rng(seq)


RngLike = Union[SeededRng, np.random.Generator]


def _generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, SeededRng):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected SeededRng or numpy Generator, got {type(rng)!r}")


@dataclass(frozen=True)
class PointMass:
    """Degenerate distribution: every draw equals ``value``."""

    value: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise DistributionError("point mass value must be finite")


@dataclass(frozen=True)
class Trapezoid:
    """Trapezoidal density: rises on [min, mode1], flat to mode2, falls to max.

    Degenerate edges are allowed (``min == mode1`` and/or ``mode2 == max``),
    which yields triangular or uniform shapes; only ``min < max`` is required.
    """

    min: float
    mode1: float
    mode2: float
    max: float

    def __post_init__(self) -> None:
        if not (self.min <= self.mode1 <= self.mode2 <= self.max):
            raise DistributionError(
                f"trapezoid requires min <= mode1 <= mode2 <= max, got "
                f"({self.min}, {self.mode1}, {self.mode2}, {self.max})"
            )
        if not self.min < self.max:
            raise DistributionError("trapezoid requires min < max")

    def ppf(self, q: np.ndarray) -> np.ndarray:
        """Quantile function (inverse CDF) evaluated elementwise on ``q``."""
        a, b, c, d = self.min, self.mode1, self.mode2, self.max
        height = 2.0 / (d + c - b - a)  # density on the flat segment
        mass_rise = 0.5 * height * (b - a)
        cdf_at_c = 1.0 - 0.5 * height * (d - c)

        q = np.asarray(q, dtype=float)
        out = np.empty_like(q)
        rise = q < mass_rise
        fall = q > cdf_at_c
        flat = ~(rise | fall)
        if rise.any():
            out[rise] = a + np.sqrt(2.0 * q[rise] * (b - a) / height)
        out[flat] = b + (q[flat] - mass_rise) / height
        if fall.any():
            out[fall] = d - np.sqrt(2.0 * (1.0 - q[fall]) * (d - c) / height)
        return out


@dataclass(frozen=True)
class Normal:
    """Univariate normal with mean ``mu`` and standard deviation ``sigma``."""

    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if self.sigma < 0 or not np.isfinite(self.sigma):
            raise DistributionError(f"normal sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class MultivariateNormal:
    """Multivariate normal; draws are mean + L z with L the Cholesky factor."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DistributionError(
                f"mean must be a vector and cov square of matching size, "
                f"got shapes {mean.shape} and {cov.shape}"
            )
        if not np.allclose(cov, cov.T, rtol=1e-8, atol=1e-12):
            raise DistributionError("covariance matrix must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor; raises if the covariance is not PD."""
        try:
            return np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise DistributionError(
                "covariance matrix is not positive definite; cannot sample"
            ) from exc


ParameterDistribution = Union[PointMass, Trapezoid, Normal, MultivariateNormal]


def sample(dist: ParameterDistribution, rng: RngLike, size: int | None = None):
    """Draw from ``dist`` using ``rng``.

    Parameters
    ----------
    dist : ParameterDistribution
        The distribution to sample.
    rng : SeededRng or numpy.random.Generator
        Stream to draw from. A ``SeededRng`` is materialized fresh, so the
        same stream always yields the same draw; pass a ``Generator`` to
        consume a stream sequentially.
    size : int, optional
        Number of draws. ``None`` returns a scalar (a vector for the
        multivariate normal); an integer returns an array of that length
        (``size x dim`` for the multivariate normal).
    """
    gen = _generator(rng)
    if isinstance(dist, PointMass):
        if size is None:
            return float(dist.value)
        return np.full(size, dist.value, dtype=float)
    if isinstance(dist, Trapezoid):
        q = gen.random(size if size is not None else ())
        out = dist.ppf(q)
        return float(out) if size is None else out
    if isinstance(dist, Normal):
        out = gen.normal(dist.mu, dist.sigma, size)
        return float(out) if size is None else out
    if isinstance(dist, MultivariateNormal):
        chol = dist.cholesky()
        z = gen.standard_normal((dist.dim,) if size is None else (size, dist.dim))
        return dist.mean + z @ chol.T
    raise TypeError(f"unknown distribution type {type(dist)!r}")


def bernoulli(p, rng: RngLike, size: int | None = None):
    """Draw 0/1 variates with success probability ``p`` (scalar or per-draw array)."""
    probs = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(probs)) or np.any(probs < 0.0) or np.any(probs > 1.0):
        raise DistributionError("bernoulli probabilities must lie in [0, 1]")
    if probs.ndim > 0 and size is not None and probs.shape != (size,):
        raise DistributionError(
            f"probability array of shape {probs.shape} does not match size {size}"
        )
    gen = _generator(rng)
    shape = probs.shape if size is None else (size,)
    draws = (gen.random(shape) < probs).astype(float)
    return float(draws) if draws.ndim == 0 else draws


def resample_indices(n: int, rng: RngLike) -> np.ndarray:
    """Indices of a with-replacement resample of size ``n`` from ``range(n)``."""
    if n < 1:
        raise ValueError(f"cannot resample from {n} rows")
    return _generator(rng).integers(0, n, size=n)


_KINDS = ("point_mass", "trapezoid", "normal", "multivariate_normal")


def distribution_from_config(record: Mapping) -> ParameterDistribution:
    """Build a distribution from a tagged mapping, e.g. parsed JSON.

    Recognized records::

        {"kind": "point_mass", "value": 0.0}
        {"kind": "trapezoid", "min": -2, "mode1": -1, "mode2": 1, "max": 2}
        {"kind": "normal", "mu": -0.627, "sigma": 0.2227}
        {"kind": "multivariate_normal", "mu": [...], "cov": [[...], ...]}
    """
    if not isinstance(record, Mapping):
        raise DistributionError(f"distribution record must be a mapping, got {record!r}")
    kind = record.get("kind")
    try:
        if kind == "point_mass":
            return PointMass(value=float(record["value"]))
        if kind == "trapezoid":
            return Trapezoid(
                min=float(record["min"]),
                mode1=float(record["mode1"]),
                mode2=float(record["mode2"]),
                max=float(record["max"]),
            )
        if kind == "normal":
            return Normal(mu=float(record["mu"]), sigma=float(record["sigma"]))
        if kind == "multivariate_normal":
            return MultivariateNormal(mean=np.asarray(record["mu"], dtype=float),
                                      cov=np.asarray(record["cov"], dtype=float))
    except KeyError as exc:
        raise DistributionError(f"distribution record {record!r} is missing field {exc}") from exc
    raise DistributionError(
        f"unknown distribution kind {kind!r}; expected one of {_KINDS}"
    )


def distribution_to_config(dist: ParameterDistribution) -> dict:
    """Inverse of :func:`distribution_from_config`."""
    if isinstance(dist, PointMass):
        return {"kind": "point_mass", "value": dist.value}
    if isinstance(dist, Trapezoid):
        return {"kind": "trapezoid", "min": dist.min, "mode1": dist.mode1,
                "mode2": dist.mode2, "max": dist.max}
    if isinstance(dist, Normal):
        return {"kind": "normal", "mu": dist.mu, "sigma": dist.sigma}
    if isinstance(dist, MultivariateNormal):
        return {"kind": "multivariate_normal", "mu": dist.mean.tolist(),
                "cov": dist.cov.tolist()}
    raise TypeError(f"unknown distribution type {type(dist)!r}")
