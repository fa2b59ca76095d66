"""Target-population effect estimators under structural positivity violations.

The trial only enrolled one stratum of a binary covariate (W = 0, "men");
the target population contains both strata. Six estimators of the
target-population risk difference are provided, in three families:

* restriction: redefine the question to the population the trial can speak
  to, either by restricting the target population to men
  (``restrict_population_*``) or by dropping W from the adjustment set
  (``restrict_covariates_*``); each family has a g-computation and an
  inverse-odds-weighted (Hajek) variant, estimated jointly with their
  nuisance models in one stacked system so the sandwich variance accounts
  for nuisance estimation;
* synthesis: keep the full target population and complete the unidentified
  stratum with an external shift model whose parameters are drawn from a
  user-specified distribution, propagated by Monte Carlo simulation plus a
  semiparametric bootstrap of the target rows;
* bounds: replace the unidentified stratum with the worst/best cases,
  yielding an interval whose width is exactly twice the target share of the
  unrepresented stratum.

All estimators filter trial rows to W = 0; trial rows from other strata (if
any) are excluded, matching the structural violation being studied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import mest
from .data import StudyDataset
from .dists import (
    MultivariateNormal,
    ParameterDistribution,
    SeededRng,
    sample,
)
from .glm import DesignSpec, expit, fit_logistic, predict
from .glm import _separation_guard  # shared divergence policy for stacked solves

__all__ = [
    "EstimationInputError",
    "WeightOverflowError",
    "MonteCarloError",
    "SynthesisSpec",
    "EffectEstimate",
    "StratumGap",
    "DEFAULT_OUTCOME_DESIGN",
    "DEFAULT_SELECTION_DESIGN",
    "MSM_DESIGN",
    "restrict_population_gcomp",
    "restrict_population_ipw",
    "restrict_covariates_gcomp",
    "restrict_covariates_ipw",
    "synthesis_gcomp",
    "synthesis_ipw",
    "nonparametric_bounds",
    "positivity_diagnostic",
    "summarize_draws",
    "hajek_mean",
    "working_subset",
    "gcomp_system",
    "ipw_system",
    "msm_system",
]

Z_95 = 1.96  # Wald multiplier for 95% intervals

DEFAULT_OUTCOME_DESIGN = DesignSpec.from_strings(("1", "A", "V", "V^2"))
DEFAULT_SELECTION_DESIGN = DesignSpec.from_strings(("1", "V", "V^2"))
MSM_DESIGN = DesignSpec.from_strings(("1", "A"))

_MC_BLOCK = 512  # Monte Carlo reps vectorized per batch
_MC_RETRIES = 5
_MC_FAIL_FRACTION = 0.01


class EstimationInputError(mest.MEstimationError):
    """The data cannot support the requested estimator."""


class WeightOverflowError(mest.MEstimationError):
    """A fitted selection probability of 1 makes an inverse-odds weight infinite."""


class MonteCarloError(mest.MEstimationError):
    """Too many Monte Carlo reps failed even after retries."""


@dataclass(frozen=True, eq=False)
class EffectEstimate:
    """A risk-difference estimate with per-arm risks and a 95% interval.

    M-estimation methods report Wald intervals and carry ``se``; synthesis
    methods report 2.5/97.5 percentile intervals of the Monte Carlo draws
    and carry the draws themselves (unless dropped to save memory).
    """

    method: str
    rd: float
    ci_lower: float
    ci_upper: float
    risk1: float
    risk0: float
    se: Optional[float] = None
    draws: Optional[np.ndarray] = None
    n_failed_reps: int = 0

    def to_record(self) -> dict:
        """JSON-ready summary (draws excluded; write those separately)."""
        record = {
            "method": self.method,
            "rd": float(self.rd),
            "ci_lower": float(self.ci_lower),
            "ci_upper": float(self.ci_upper),
            "risk1": float(self.risk1),
            "risk0": float(self.risk0),
        }
        if self.se is not None:
            record["se"] = float(self.se)
        if self.draws is not None:
            record["n_draws"] = int(self.draws.size)
            record["n_failed_reps"] = int(self.n_failed_reps)
        return record


@dataclass(frozen=True, eq=False)
class SynthesisSpec:
    """External-evidence specification for the synthesis estimators.

    The shift parameters (b0: main effect of the unrepresented stratum,
    b1: its treatment interaction) are drawn each Monte Carlo rep, either
    independently from ``b0``/``b1`` or jointly from ``joint`` (a bivariate
    normal). Exactly one of the two forms must be given. ``stat_design`` is
    the design of the statistical model estimated from the trial: the
    outcome regression for the g-computation flavor, the marginal model
    ("1", "A") for the weighted flavor.
    """

    stat_design: DesignSpec
    mc_reps: int
    seed: Union[int, SeededRng]
    b0: Optional[ParameterDistribution] = None
    b1: Optional[ParameterDistribution] = None
    joint: Optional[MultivariateNormal] = None

    def __post_init__(self) -> None:
        if self.mc_reps < 1:
            raise ValueError(f"mc_reps must be >= 1, got {self.mc_reps}")
        pair = self.b0 is not None or self.b1 is not None
        if pair == (self.joint is not None):
            raise ValueError(
                "specify either independent b0 and b1 distributions or a "
                "joint bivariate normal, not both"
            )
        if pair and (self.b0 is None or self.b1 is None):
            raise ValueError("independent form requires both b0 and b1")
        if pair and any(isinstance(d, MultivariateNormal) for d in (self.b0, self.b1)):
            raise ValueError("b0 and b1 must be scalar distributions")
        if self.joint is not None:
            if not isinstance(self.joint, MultivariateNormal):
                raise ValueError("joint must be a multivariate normal")
            if self.joint.dim != 2:
                raise ValueError(
                    f"joint distribution must be bivariate, got dim {self.joint.dim}"
                )

    def rng(self) -> SeededRng:
        if isinstance(self.seed, SeededRng):
            return self.seed
        return SeededRng(int(self.seed))


@dataclass(frozen=True)
class StratumGap:
    """A covariate stratum observed in the target but absent from the trial."""

    values: tuple[tuple[str, float], ...]
    n_target: int

    def to_record(self) -> dict:
        record = {name: value for name, value in self.values}
        record["target_count"] = int(self.n_target)
        record["trial_count"] = 0
        return record


def hajek_mean(values: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean with normalization by the weight total.

    Invariant to rescaling all weights by a positive constant, which is why
    the inverse-odds estimators need only relative selection odds.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0:
        raise EstimationInputError("Hajek mean requires a positive, finite weight total")
    return float(np.sum(weights * values) / total)


def summarize_draws(draws: np.ndarray) -> tuple[float, float, float]:
    """Median and 2.5/97.5 percentiles (linear interpolation) of the draws."""
    arr = np.asarray(draws, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("cannot summarize zero draws")
    if not np.all(np.isfinite(arr)):
        raise ValueError("draws contain non-finite values")
    med, lo, hi = np.percentile(arr, [50.0, 2.5, 97.5])
    return float(med), float(lo), float(hi)


# ---------------------------------------------------------------------------
# Working data
# ---------------------------------------------------------------------------


def working_subset(data: StudyDataset, *, population_restricted: bool) -> StudyDataset:
    """Rows an estimator actually uses.

    Trial rows are always restricted to the represented stratum (W = 0).
    With ``population_restricted`` the target is restricted to W = 0 as
    well (the "restrict the population" reading); otherwise all target rows
    are kept (the "restrict the covariate set" and synthesis readings).
    """
    if np.isnan(data.w[data.trial]).any():
        raise EstimationInputError(
            "trial rows have missing W; cannot restrict the trial to W=0"
        )
    trial_keep = data.trial & (data.w == 0.0)
    if not trial_keep.any():
        raise EstimationInputError("no trial rows with W=0; estimators are undefined")
    if population_restricted:
        target_keep = data.target & (data.w == 0.0)
        if not target_keep.any():
            raise EstimationInputError(
                "no target rows with W=0; the population-restricted estimand "
                "is undefined"
            )
    else:
        target_keep = data.target
    return data.subset(trial_keep | target_keep)


def _require_finite(design: DesignSpec, columns: Mapping[str, np.ndarray],
                    mask: np.ndarray, role: str, skip: Sequence[str] = ("A",)) -> None:
    for var in design.variables():
        if var in skip:
            continue
        values = np.asarray(columns[var], dtype=float)[mask]
        if np.isnan(values).any():
            raise EstimationInputError(
                f"{role} design references {var!r} but it is missing on "
                f"{int(np.isnan(values).sum())} of the rows used"
            )


# ---------------------------------------------------------------------------
# Stacked systems
# ---------------------------------------------------------------------------


def gcomp_system(work: StudyDataset, outcome_design: DesignSpec
                 ) -> tuple[mest.EstimatingFunction, np.ndarray]:
    """Estimating-function stack for the g-computation estimators.

    Blocks: the trial outcome-model score; the mean of the untreated and
    treated predictions over the target rows of ``work``; and the
    difference. Returns the system and its initial value (zeros for the
    regression block, the marginal trial outcome mean for the risks).
    """
    n = work.n
    trial = work.trial
    tgt = work.target
    p = outcome_design.n_params
    cols = work.columns()
    _require_finite(outcome_design, cols, trial | tgt, "outcome")
    a_fill = np.where(trial, work.a, 0.0)
    y_fill = np.where(trial, work.y, 0.0)
    x_obs = outcome_design.matrix({**cols, "A": a_fill}, n)
    x_0 = outcome_design.matrix({**cols, "A": 0.0}, n)
    x_1 = outcome_design.matrix({**cols, "A": 1.0}, n)

    def evaluate(_data, theta: np.ndarray) -> np.ndarray:
        alpha = theta[:p]
        th0, th1, th2 = theta[p], theta[p + 1], theta[p + 2]
        score = np.where(trial, y_fill - expit(x_obs @ alpha), 0.0)
        eq_model = score[:, None] * x_obs
        eq_risk0 = np.where(tgt, expit(x_0 @ alpha) - th0, 0.0)
        eq_risk1 = np.where(tgt, expit(x_1 @ alpha) - th1, 0.0)
        eq_diff = np.full(n, (th1 - th0) - th2)
        return np.column_stack([eq_model, eq_risk0, eq_risk1, eq_diff])

    y_bar = float(work.y[trial].mean())
    init = np.concatenate([np.zeros(p), [y_bar, y_bar, 0.0]])
    return mest.EstimatingFunction(arity=p + 3, evaluate=evaluate), init


def ipw_system(work: StudyDataset, selection_design: DesignSpec
               ) -> tuple[mest.EstimatingFunction, np.ndarray]:
    """Estimating-function stack for the inverse-odds-weighted estimators.

    Blocks: an intercept-only treatment model on trial rows; a logistic
    selection model for target membership over all rows of ``work``; two
    Hajek-weighted arm means over trial rows with weights
    (target-membership odds) x (inverse treatment probability); and the
    difference. Which rows ``work`` contains determines the flavor:
    restrict-population passes the men-only subset, restrict-covariates
    passes trial men plus the full target.
    """
    n = work.n
    trial = work.trial
    q = selection_design.n_params
    cols = work.columns()
    _require_finite(selection_design, cols, np.ones(n, dtype=bool), "selection")
    is_target = work.target.astype(float)
    a_fill = np.where(trial, work.a, 0.0)
    y_fill = np.where(trial, work.y, 0.0)
    sel_matrix = selection_design.matrix(cols, n)

    def evaluate(_data, theta: np.ndarray) -> np.ndarray:
        mu = theta[0]
        sigma = theta[1:1 + q]
        th0, th1, th2 = theta[-3], theta[-2], theta[-1]
        p_treat = expit(mu)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            p_sel = expit(sel_matrix @ sigma)
            odds = p_sel / (1.0 - p_sel)
            w0 = np.where(trial, odds * (1.0 - a_fill) / (1.0 - p_treat), 0.0)
            w1 = np.where(trial, odds * a_fill / p_treat, 0.0)
        eq_treat = np.where(trial, a_fill - p_treat, 0.0)
        eq_sel = (is_target - p_sel)[:, None] * sel_matrix
        eq_risk0 = (y_fill - th0) * w0
        eq_risk1 = (y_fill - th1) * w1
        eq_diff = np.full(n, (th1 - th0) - th2)
        return np.column_stack([eq_treat, eq_sel, eq_risk0, eq_risk1, eq_diff])

    y_bar = float(work.y[trial].mean())
    init = np.concatenate([np.zeros(1 + q), [y_bar, y_bar, 0.0]])
    return mest.EstimatingFunction(arity=1 + q + 3, evaluate=evaluate), init


def msm_system(work: StudyDataset, selection_design: DesignSpec
               ) -> tuple[mest.EstimatingFunction, np.ndarray]:
    """Stack for the weighted marginal model used by the weighted synthesis.

    Blocks: intercept-only treatment model; selection model over all rows
    of ``work`` (pass the men-only subset); and the inverse-odds-weighted
    score of the marginal logistic model of Y on (1, A) over trial rows.
    The sandwich of the full stack propagates weight estimation into the
    marginal coefficients, whose covariance block feeds the Monte Carlo
    draws.
    """
    n = work.n
    trial = work.trial
    q = selection_design.n_params
    cols = work.columns()
    _require_finite(selection_design, cols, np.ones(n, dtype=bool), "selection")
    is_target = work.target.astype(float)
    a_fill = np.where(trial, work.a, 0.0)
    y_fill = np.where(trial, work.y, 0.0)
    sel_matrix = selection_design.matrix(cols, n)
    msm_matrix = np.column_stack([np.ones(n), a_fill])

    def evaluate(_data, theta: np.ndarray) -> np.ndarray:
        mu = theta[0]
        sigma = theta[1:1 + q]
        gamma = theta[-2:]
        p_treat = expit(mu)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            p_sel = expit(sel_matrix @ sigma)
            odds = p_sel / (1.0 - p_sel)
            inv_treat = a_fill / p_treat + (1.0 - a_fill) / (1.0 - p_treat)
            weight = np.where(trial, odds * inv_treat, 0.0)
        eq_treat = np.where(trial, a_fill - p_treat, 0.0)
        eq_sel = (is_target - p_sel)[:, None] * sel_matrix
        resid = weight * (y_fill - expit(msm_matrix @ gamma))
        eq_msm = resid[:, None] * msm_matrix
        return np.column_stack([eq_treat, eq_sel, eq_msm])

    init = np.zeros(1 + q + 2)
    return mest.EstimatingFunction(arity=1 + q + 2, evaluate=evaluate), init


# ---------------------------------------------------------------------------
# Restriction estimators
# ---------------------------------------------------------------------------


def _degenerate_outcome(work: StudyDataset) -> Optional[float]:
    """The constant trial outcome value, if the outcome is constant."""
    y_trial = work.y[work.trial]
    if np.all(y_trial == y_trial[0]):
        return float(y_trial[0])
    return None


def _solve_effect(method: str, system: mest.EstimatingFunction,
                  init: np.ndarray) -> EffectEstimate:
    result = mest.estimate(system, None, init, callback=_separation_guard)
    th0, th1, th2 = result.theta[-3:]
    variance = result.covariance[-1, -1]
    se = float(np.sqrt(max(variance, 0.0)))
    return EffectEstimate(
        method=method,
        rd=float(th2),
        ci_lower=float(th2 - Z_95 * se),
        ci_upper=float(th2 + Z_95 * se),
        risk1=float(th1),
        risk0=float(th0),
        se=se,
    )


def _gcomp(data: StudyDataset, outcome_design: DesignSpec, *,
           population_restricted: bool, method: str) -> EffectEstimate:
    work = working_subset(data, population_restricted=population_restricted)
    constant = _degenerate_outcome(work)
    if constant is not None:
        # The outcome-model MLE diverges when the outcome never varies, but
        # its predictions (and hence both risks) converge to the constant.
        return EffectEstimate(method=method, rd=0.0, ci_lower=0.0, ci_upper=0.0,
                              risk1=constant, risk0=constant, se=0.0)
    system, init = gcomp_system(work, outcome_design)
    return _solve_effect(method, system, init)


def restrict_population_gcomp(
    data: StudyDataset,
    outcome_design: DesignSpec = DEFAULT_OUTCOME_DESIGN,
) -> EffectEstimate:
    """G-computation for the risk difference in the W=0 target subpopulation.

    Fits the trial outcome model, averages its counterfactual predictions
    over target rows with W=0, and differences the arms; all parameters are
    estimated in one stacked system so the Wald interval reflects the
    outcome-model uncertainty.
    """
    return _gcomp(data, outcome_design, population_restricted=True,
                  method="restrict-pop-g")


def restrict_covariates_gcomp(
    data: StudyDataset,
    outcome_design: DesignSpec = DEFAULT_OUTCOME_DESIGN,
) -> EffectEstimate:
    """G-computation that drops W from adjustment and keeps the full target.

    Counterfactual predictions come from the same trial outcome model (fit
    on W=0 trial rows) but are averaged over *all* target rows, implicitly
    assuming the unrepresented stratum behaves like the represented one.
    """
    return _gcomp(data, outcome_design, population_restricted=False,
                  method="restrict-cov-g")


def _prefit_ipw_nuisances(work: StudyDataset, selection_design: DesignSpec) -> None:
    """Fit treatment and selection models standalone to fail specifically.

    The stacked solve would also diverge on separation or blow up on an
    infinite weight, but only with a generic non-convergence message; the
    standalone fits are cheap and produce targeted errors first. Point
    estimates are unaffected (tests confirm stacked == sequential).
    """
    a_trial = work.a[work.trial]
    if np.all(a_trial == a_trial[0]):
        raise EstimationInputError(
            "trial has a single treatment arm; arm-specific risks are undefined"
        )
    cols = work.columns()
    sel_fit = fit_logistic(selection_design, cols, work.target.astype(float))
    trial_probs = np.asarray(
        predict(sel_fit, cols, n=work.n), dtype=float
    )[work.trial]
    if np.any(trial_probs >= 1.0):
        raise WeightOverflowError(
            "fitted target-membership probability is 1 for at least one trial "
            "row; its inverse-odds weight is infinite"
        )


def _ipw(data: StudyDataset, selection_design: DesignSpec, *,
         population_restricted: bool, method: str) -> EffectEstimate:
    work = working_subset(data, population_restricted=population_restricted)
    _prefit_ipw_nuisances(work, selection_design)
    system, init = ipw_system(work, selection_design)
    return _solve_effect(method, system, init)


def restrict_population_ipw(
    data: StudyDataset,
    selection_design: DesignSpec = DEFAULT_SELECTION_DESIGN,
) -> EffectEstimate:
    """Inverse-odds weighting for the W=0 target subpopulation.

    Reweights W=0 trial rows by the odds of target membership (selection
    model fit on W=0 rows of both populations) over the estimated treatment
    probability; arm risks are Hajek means, estimated in one stack with the
    nuisance models.
    """
    return _ipw(data, selection_design, population_restricted=True,
                method="restrict-pop-ipw")


def restrict_covariates_ipw(
    data: StudyDataset,
    selection_design: DesignSpec = DEFAULT_SELECTION_DESIGN,
) -> EffectEstimate:
    """Inverse-odds weighting that drops W and keeps the full target.

    Identical to :func:`restrict_population_ipw` except the selection model
    is fit on all rows (trial men plus the entire target), so the weights
    carry trial men toward the covariate distribution of the whole target.
    """
    return _ipw(data, selection_design, population_restricted=False,
                method="restrict-cov-ipw")


# ---------------------------------------------------------------------------
# Synthesis estimators
# ---------------------------------------------------------------------------


def _shift_drawer(spec: SynthesisSpec) -> Callable[[np.random.Generator], tuple[float, float]]:
    if spec.joint is not None:
        mean = spec.joint.mean
        chol = spec.joint.cholesky()

        def draw_joint(gen: np.random.Generator) -> tuple[float, float]:
            z = gen.standard_normal(2)
            shift = mean + chol @ z
            return float(shift[0]), float(shift[1])

        return draw_joint

    def draw_pair(gen: np.random.Generator) -> tuple[float, float]:
        return float(sample(spec.b0, gen)), float(sample(spec.b1, gen))

    return draw_pair


def _run_monte_carlo(
    mc_reps: int,
    rng: SeededRng,
    n_target: int,
    draw_params: Callable[[np.random.Generator], np.ndarray],
    n_params: int,
    evaluate: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Drive the synthesis Monte Carlo: per-rep substreams, retries, batching.

    Each rep r (attempt t) owns substream (r, t), split into a parameter
    stream and a resampling stream so that the configured parameter
    distribution cannot perturb the resample indices. Parameter vectors are
    drawn rep by rep but evaluated in vectorized blocks. Reps that produce
    non-finite values are retried on fresh substreams up to five times, then
    counted as failed; more than 1% failures aborts the estimate.
    """
    rd = np.empty(mc_reps)
    risk1 = np.empty(mc_reps)
    risk0 = np.empty(mc_reps)

    def run_block(rep_ids: Sequence[int], attempt: int) -> tuple[np.ndarray, ...]:
        size = len(rep_ids)
        params = np.empty((size, n_params))
        indices = np.empty((size, n_target), dtype=np.int64)
        for row, rep in enumerate(rep_ids):
            base = rng.child(rep, attempt)
            params[row] = draw_params(base.child(0).generator())
            indices[row] = base.child(1).generator().integers(0, n_target, n_target)
        return evaluate(params, indices)

    for start in range(0, mc_reps, _MC_BLOCK):
        rep_ids = range(start, min(start + _MC_BLOCK, mc_reps))
        block_rd, block_r1, block_r0 = run_block(rep_ids, attempt=0)
        rd[rep_ids.start:rep_ids.stop] = block_rd
        risk1[rep_ids.start:rep_ids.stop] = block_r1
        risk0[rep_ids.start:rep_ids.stop] = block_r0

    good = np.isfinite(rd) & np.isfinite(risk1) & np.isfinite(risk0)
    n_failed = 0
    for rep in np.flatnonzero(~good):
        for attempt in range(1, _MC_RETRIES + 1):
            new_rd, new_r1, new_r0 = run_block([int(rep)], attempt=attempt)
            if np.isfinite(new_rd[0]) and np.isfinite(new_r1[0]) and np.isfinite(new_r0[0]):
                rd[rep], risk1[rep], risk0[rep] = new_rd[0], new_r1[0], new_r0[0]
                good[rep] = True
                break
        else:
            n_failed += 1
    if n_failed / mc_reps > _MC_FAIL_FRACTION:
        raise MonteCarloError(
            f"{n_failed} of {mc_reps} Monte Carlo reps failed after retries"
        )
    return rd[good], risk1[good], risk0[good], n_failed


def _summarize_synthesis(method: str, rd: np.ndarray, risk1: np.ndarray,
                         risk0: np.ndarray, n_failed: int,
                         keep_draws: bool) -> EffectEstimate:
    rd_med, rd_lo, rd_hi = summarize_draws(rd)
    risk1_med = float(np.percentile(risk1, 50.0))
    risk0_med = float(np.percentile(risk0, 50.0))
    return EffectEstimate(
        method=method,
        rd=rd_med,
        ci_lower=rd_lo,
        ci_upper=rd_hi,
        risk1=risk1_med,
        risk0=risk0_med,
        draws=rd.copy() if keep_draws else None,
        n_failed_reps=n_failed,
    )


def _chol_covariance(covariance: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(covariance)
    except np.linalg.LinAlgError as exc:
        raise mest.MEstimationError(
            f"covariance of the {what} is not positive definite; cannot draw"
        ) from exc


def synthesis_gcomp(
    data: StudyDataset,
    spec: SynthesisSpec,
    *,
    keep_draws: bool = True,
) -> EffectEstimate:
    """Monte Carlo synthesis around the trial outcome model.

    Fits ``spec.stat_design`` on W=0 trial rows, then repeatedly: draws
    outcome-model coefficients from their estimated sampling distribution,
    draws the unrepresented-stratum shifts (b0, b1) from the external
    specification, resamples the target rows with replacement, and averages

        f_a = expit(s(a, V) + b0*W + b1*a*W)

    over the resample for a = 1, 0. Point estimate and interval are the
    median and 2.5/97.5 percentiles of the resulting draws.
    """
    work = working_subset(data, population_restricted=False)
    trial = work.trial
    y_trial = work.y[trial]
    cols_trial = {"A": work.a[trial], "V": work.v[trial], "W": work.w[trial]}
    _require_finite(spec.stat_design, cols_trial, np.ones(y_trial.size, dtype=bool),
                    "outcome")
    fit = fit_logistic(spec.stat_design, cols_trial, y_trial)
    chol = _chol_covariance(fit.covariance, "outcome model")
    alpha = fit.coefficients
    p = alpha.size

    v_tgt = work.v[work.target]
    w_tgt = work.w[work.target]
    n_target = v_tgt.size
    x_1 = spec.stat_design.matrix({"A": 1.0, "V": v_tgt, "W": 0.0}, n_target)
    x_0 = spec.stat_design.matrix({"A": 0.0, "V": v_tgt, "W": 0.0}, n_target)
    draw_shifts = _shift_drawer(spec)

    def draw_params(gen: np.random.Generator) -> np.ndarray:
        alpha_star = alpha + chol @ gen.standard_normal(p)
        b0, b1 = draw_shifts(gen)
        return np.concatenate([alpha_star, [b0, b1]])

    def evaluate(params: np.ndarray, indices: np.ndarray):
        alpha_star = params[:, :p]
        b0 = params[:, p]
        b1 = params[:, p + 1]
        treated = expit(x_1 @ alpha_star.T + w_tgt[:, None] * (b0 + b1)[None, :])
        untreated = expit(x_0 @ alpha_star.T + w_tgt[:, None] * b0[None, :])
        rows = indices
        cols_idx = np.arange(params.shape[0])[:, None]
        risk1 = treated[rows, cols_idx].mean(axis=1)
        risk0 = untreated[rows, cols_idx].mean(axis=1)
        return risk1 - risk0, risk1, risk0

    rd, risk1, risk0, n_failed = _run_monte_carlo(
        spec.mc_reps, spec.rng(), n_target, draw_params, p + 2, evaluate
    )
    return _summarize_synthesis("synth-g", rd, risk1, risk0, n_failed, keep_draws)


def synthesis_ipw(
    data: StudyDataset,
    spec: SynthesisSpec,
    selection_design: DesignSpec = DEFAULT_SELECTION_DESIGN,
    *,
    keep_draws: bool = True,
) -> EffectEstimate:
    """Monte Carlo synthesis around the weighted marginal trial model.

    Estimates the marginal model expit(g0 + g1*a) on trial rows weighted to
    the W=0 target (selection model fit among W=0 rows of both
    populations), with its covariance from the stacked sandwich. Each rep
    draws marginal coefficients and external shifts, resamples the target,
    and averages expit(g0 + g1*a + d0*W + d1*a*W). The marginal model
    depends on covariates only through W, so the resample enters through
    its W mix.
    """
    if spec.stat_design.labels() != ("1", "A"):
        raise ValueError(
            "the weighted synthesis marginal model must have design ('1', 'A'); "
            f"got {spec.stat_design.labels()}"
        )
    work_all = working_subset(data, population_restricted=False)
    work_men = working_subset(data, population_restricted=True)
    _prefit_ipw_nuisances(work_men, selection_design)
    constant = _degenerate_outcome(work_men)
    if constant is not None:
        raise EstimationInputError(
            "trial outcome is constant; the marginal model cannot be fit"
        )
    system, init = msm_system(work_men, selection_design)
    result = mest.estimate(system, None, init, callback=_separation_guard)
    gamma = result.theta[-2:]
    gamma_cov = result.covariance[-2:, -2:]
    chol = _chol_covariance(gamma_cov, "marginal model")

    w_tgt = work_all.w[work_all.target]
    n_target = w_tgt.size
    draw_shifts = _shift_drawer(spec)

    def draw_params(gen: np.random.Generator) -> np.ndarray:
        gamma_star = gamma + chol @ gen.standard_normal(2)
        d0, d1 = draw_shifts(gen)
        return np.array([gamma_star[0], gamma_star[1], d0, d1])

    def evaluate(params: np.ndarray, indices: np.ndarray):
        g0, g1, d0, d1 = params.T
        share = w_tgt[indices].mean(axis=1)
        treated_rep = expit(g0 + g1)
        treated_unrep = expit(g0 + g1 + d0 + d1)
        untreated_rep = expit(g0)
        untreated_unrep = expit(g0 + d0)
        risk1 = (1.0 - share) * treated_rep + share * treated_unrep
        risk0 = (1.0 - share) * untreated_rep + share * untreated_unrep
        return risk1 - risk0, risk1, risk0

    rd, risk1, risk0, n_failed = _run_monte_carlo(
        spec.mc_reps, spec.rng(), n_target, draw_params, 4, evaluate
    )
    return _summarize_synthesis("synth-ipw", rd, risk1, risk0, n_failed, keep_draws)


# ---------------------------------------------------------------------------
# Bounds and diagnostics
# ---------------------------------------------------------------------------


def nonparametric_bounds(
    data: StudyDataset,
    outcome_design: DesignSpec = DEFAULT_OUTCOME_DESIGN,
) -> tuple[float, float]:
    """Worst/best-case interval for the target-population risk difference.

    Predictions for W=0 target rows come from the trial outcome model; the
    unidentified W=1 rows are imputed at the logical extremes (treated risk
    0 with untreated risk 1, and vice versa). The width is exactly twice
    the target proportion with W=1.
    """
    work = working_subset(data, population_restricted=False)
    constant = _degenerate_outcome(work)
    v_tgt = work.v[work.target]
    w_tgt = work.w[work.target]
    n_target = v_tgt.size
    if constant is not None:
        treated = np.full(n_target, constant)
        untreated = np.full(n_target, constant)
    else:
        cols_trial = {"A": work.a[work.trial], "V": work.v[work.trial],
                      "W": work.w[work.trial]}
        _require_finite(outcome_design, cols_trial,
                        np.ones(int(work.n_trial), dtype=bool), "outcome")
        fit = fit_logistic(outcome_design, cols_trial, work.y[work.trial])
        treated = np.asarray(predict(fit, {"V": v_tgt}, overrides={"A": 1.0, "W": 0.0},
                                     n=n_target), dtype=float)
        untreated = np.asarray(predict(fit, {"V": v_tgt}, overrides={"A": 0.0, "W": 0.0},
                                       n=n_target), dtype=float)
    unrep = w_tgt == 1.0
    lower = float(np.where(unrep, 0.0, treated).mean()
                  - np.where(unrep, 1.0, untreated).mean())
    upper = float(np.where(unrep, 1.0, treated).mean()
                  - np.where(unrep, 0.0, untreated).mean())
    return lower, upper


def positivity_diagnostic(
    data: StudyDataset,
    strata: Sequence[str] = ("V", "W"),
) -> list[StratumGap]:
    """Covariate strata observed in the target but absent from the trial.

    Enumerates the unique combinations of ``strata`` among target rows and
    returns those with zero trial rows, with target counts. An empty list
    means the trial covers every observed target stratum.
    """
    columns = data.columns()
    for name in strata:
        if name not in ("V", "W"):
            raise ValueError(f"unknown stratum variable {name!r}; use V and/or W")
    values = np.column_stack([columns[name] for name in strata])
    target_values = values[data.target]
    trial_values = values[data.trial]
    gaps: list[StratumGap] = []
    unique_rows, counts = np.unique(target_values, axis=0, return_counts=True)
    for row, count in zip(unique_rows, counts):
        in_trial = np.all(trial_values == row[None, :], axis=1)
        if not in_trial.any():
            gaps.append(StratumGap(
                values=tuple(zip(strata, (float(x) for x in row))),
                n_target=int(count),
            ))
    return gaps
