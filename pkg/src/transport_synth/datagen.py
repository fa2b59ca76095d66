"""Synthetic two-population study generator for the simulation experiments.

A "clinic" target population contains both strata of a binary covariate W
(about two thirds W=1) with ages from a left-skewed trapezoid; a trial
enrolls only W=0 with an older age profile and randomizes treatment. A
third, larger trial drawn from the clinic covariate law plays the role of
external evidence: it is summarized into coefficient estimates (with
covariances) for the stratum shift, and only those summaries leave this
module — synthesis estimators never see its rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mest
from .data import StudyDataset
from .dists import RngLike, SeededRng, Trapezoid, _generator, bernoulli, sample
from .glm import DesignSpec, expit, fit_logistic

__all__ = [
    "GenerationConfig",
    "EvidenceSummary",
    "GeneratedRows",
    "rounded_ages",
    "outcome_probability",
    "generate_target",
    "generate_trial",
    "generate_study",
    "combine_rows",
    "generate_evidence_trial",
    "true_risk_difference",
]

_TRUTH_CHUNK = 1_000_000  # rows simulated per block; part of the random stream

EVIDENCE_GCOMP_DESIGN = DesignSpec.from_strings(("1", "A", "V", "W", "A*W"))
EVIDENCE_IPW_DESIGN = DesignSpec.from_strings(("1", "A", "W", "A*W"))


@dataclass(frozen=True)
class GenerationConfig:
    """Parameters of the synthetic study.

    ``outcome_coefficients`` are the logistic coefficients on
    (1, A, V, W, A*W); the default interaction is strongly negative, so
    ignoring the W=1 stratum overstates the benefit of treatment in the
    target population.
    """

    n_target: int = 1000
    n_trial: int = 1000
    n_evidence: int = 2000
    outcome_coefficients: tuple[float, float, float, float, float] = (
        -3.25, 1.5, 0.08, -0.02, -0.65)
    target_w_prob: float = 0.667
    target_age: Trapezoid = Trapezoid(18.0, 18.0, 25.0, 30.0)
    trial_age: Trapezoid = Trapezoid(18.0, 25.0, 30.0, 30.0)
    treatment_prob: float = 0.5


@dataclass(frozen=True, eq=False)
class EvidenceSummary:
    """Shift-coefficient summaries from the external evidence trial.

    ``gcomp_*`` summarize (W, A*W) coefficients from the conditional
    outcome model (1, A, V, W, A*W); ``ipw_*`` the same two coefficients
    from the marginal-form model (1, A, W, A*W). Means are length-2 arrays
    (main effect, interaction); covariances are the matching 2x2 blocks.
    """

    gcomp_mean: np.ndarray
    gcomp_cov: np.ndarray
    ipw_mean: np.ndarray
    ipw_cov: np.ndarray


@dataclass(frozen=True, eq=False)
class GeneratedRows:
    """Rows for a single population; combine blocks to get a StudyDataset.

    A full :class:`StudyDataset` requires both populations, so the
    per-population generators return this thin carrier instead.
    """

    r: np.ndarray
    a: np.ndarray
    y: np.ndarray
    v: np.ndarray
    w: np.ndarray


def combine_rows(*blocks: GeneratedRows) -> StudyDataset:
    """Stack generated row blocks into a validated study dataset."""
    return StudyDataset(
        r=np.concatenate([b.r for b in blocks]),
        a=np.concatenate([b.a for b in blocks]),
        y=np.concatenate([b.y for b in blocks]),
        v=np.concatenate([b.v for b in blocks]),
        w=np.concatenate([b.w for b in blocks]),
    )


def rounded_ages(dist: Trapezoid, n: int, rng: RngLike) -> np.ndarray:
    """Ages drawn from ``dist`` and rounded to the nearest integer.

    Rounding is floor(v + 0.5) — half-up, not banker's — so the supported
    ages form a small integer grid and positivity violations are discrete.
    """
    raw = sample(dist, rng, size=n)
    return np.floor(raw + 0.5)


def outcome_probability(a, v, w, coefficients) -> np.ndarray:
    """P(Y=1 | A=a, V=v, W=w) under the generating logistic model."""
    c0, c1, c2, c3, c4 = coefficients
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    return expit(c0 + c1 * a + c2 * np.asarray(v, dtype=float) + c3 * w + c4 * a * w)


def generate_target(rng: RngLike, config: GenerationConfig = GenerationConfig()
                    ) -> GeneratedRows:
    """Clinic sample: covariates only (no treatment, no outcome)."""
    gen = _generator(rng)
    n = config.n_target
    w = bernoulli(config.target_w_prob, gen, n)
    v = rounded_ages(config.target_age, n, gen)
    nan = np.full(n, np.nan)
    return GeneratedRows(r=np.ones(n, dtype=np.int64), a=nan, y=nan.copy(), v=v, w=w)


def generate_trial(rng: RngLike, config: GenerationConfig = GenerationConfig()
                   ) -> GeneratedRows:
    """Trial sample: W=0 only, randomized treatment, outcome from the model."""
    gen = _generator(rng)
    n = config.n_trial
    w = np.zeros(n)
    v = rounded_ages(config.trial_age, n, gen)
    a = bernoulli(config.treatment_prob, gen, n)
    y = bernoulli(outcome_probability(a, v, w, config.outcome_coefficients), gen, n)
    return GeneratedRows(r=np.full(n, 2, dtype=np.int64), a=a, y=y, v=v, w=w)


def generate_study(rng: SeededRng, config: GenerationConfig = GenerationConfig()
                   ) -> StudyDataset:
    """One simulated study: target rows (stream 0) then trial rows (stream 1)."""
    return combine_rows(generate_target(rng.child(0), config),
                        generate_trial(rng.child(1), config))


def _evidence_rows(gen: np.random.Generator, config: GenerationConfig):
    n = config.n_evidence
    w = bernoulli(config.target_w_prob, gen, n)
    v = rounded_ages(config.target_age, n, gen)
    a = bernoulli(config.treatment_prob, gen, n)
    y = bernoulli(outcome_probability(a, v, w, config.outcome_coefficients), gen, n)
    return a, v, w, y


def _shift_block(design: DesignSpec, columns: dict, y: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
    fit = fit_logistic(design, columns, y)
    labels = design.labels()
    idx = [labels.index("W"), labels.index("A*W")]
    mean = fit.coefficients[idx]
    cov = fit.covariance[np.ix_(idx, idx)]
    return mean, cov


def generate_evidence_trial(rng: SeededRng,
                            config: GenerationConfig = GenerationConfig()
                            ) -> EvidenceSummary:
    """Simulate the external trial and return shift summaries only.

    Both working models are fit to the same simulated rows. If either fit
    fails (separation or a degenerate draw — possible at small sizes), one
    fresh draw is attempted before giving up.
    """
    last_error: Exception | None = None
    for attempt in (0, 1):
        a, v, w, y = _evidence_rows(rng.child(attempt).generator(), config)
        columns = {"A": a, "V": v, "W": w}
        try:
            gcomp_mean, gcomp_cov = _shift_block(EVIDENCE_GCOMP_DESIGN, columns, y)
            ipw_mean, ipw_cov = _shift_block(EVIDENCE_IPW_DESIGN, columns, y)
        except mest.MEstimationError as exc:
            last_error = exc
            continue
        return EvidenceSummary(gcomp_mean=gcomp_mean, gcomp_cov=gcomp_cov,
                               ipw_mean=ipw_mean, ipw_cov=ipw_cov)
    raise mest.MEstimationError(
        f"evidence-trial models failed on two independent draws: {last_error}"
    )


def true_risk_difference(n: int, rng: RngLike,
                         config: GenerationConfig = GenerationConfig()) -> float:
    """Monte Carlo truth: E[p(1,V,W) - p(0,V,W)] over the target law.

    Averages the generating model's arm-probability contrast over ``n``
    fresh target covariate draws, in fixed-size chunks so ten million rows
    run in bounded memory. The chunk size is part of the random stream.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    gen = _generator(rng)
    total = 0.0
    done = 0
    coeffs = config.outcome_coefficients
    while done < n:
        size = min(_TRUTH_CHUNK, n - done)
        w = bernoulli(config.target_w_prob, gen, size)
        v = rounded_ages(config.target_age, size, gen)
        contrast = (outcome_probability(1.0, v, w, coeffs)
                    - outcome_probability(0.0, v, w, coeffs))
        total += float(contrast.sum())
        done += size
    return total / n
