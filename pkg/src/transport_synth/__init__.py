"""Transport trial effects to target populations with unrepresented strata.

When a trial enrolled only one stratum of a covariate (say, only men) but
the target population contains both, the usual transportability estimators
are undefined for the missing stratum. This package implements three ways
out — restriction (answer a narrower question), synthesis (combine the
trial with external evidence about the missing stratum via Monte Carlo),
and nonparametric bounds — together with the M-estimation machinery that
gives the restriction estimators honest sandwich variances, and a
simulation study comparing all of them.
"""

from .data import DataError, StudyDataset, read_study_csv, read_two_file_csv, \
    write_study_csv
from .datagen import (
    EvidenceSummary,
    GeneratedRows,
    GenerationConfig,
    combine_rows,
    generate_evidence_trial,
    generate_study,
    generate_target,
    generate_trial,
    true_risk_difference,
)
from .dists import (
    DistributionError,
    MultivariateNormal,
    Normal,
    PointMass,
    SeededRng,
    Trapezoid,
    distribution_from_config,
    distribution_to_config,
)
from .estimators import (
    DEFAULT_OUTCOME_DESIGN,
    DEFAULT_SELECTION_DESIGN,
    MSM_DESIGN,
    EffectEstimate,
    EstimationInputError,
    MonteCarloError,
    StratumGap,
    SynthesisSpec,
    WeightOverflowError,
    nonparametric_bounds,
    positivity_diagnostic,
    restrict_covariates_gcomp,
    restrict_covariates_ipw,
    restrict_population_gcomp,
    restrict_population_ipw,
    synthesis_gcomp,
    synthesis_ipw,
)
from .glm import (
    DesignSpec,
    FittedLogistic,
    RankDeficientDesignError,
    SeparationError,
    expit,
    fit_logistic,
    predict,
)
from .mest import (
    EstimatingFunction,
    MEstimate,
    MEstimationError,
    NonConvergenceError,
    SingularBreadError,
    SingularJacobianError,
    estimate,
    sandwich,
    solve,
)
from .simstudy import (
    SimulationConfig,
    SimulationResult,
    SimulationResultRow,
    render_table,
    run_simulation,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "StudyDataset",
    "read_study_csv",
    "read_two_file_csv",
    "write_study_csv",
    "EvidenceSummary",
    "GeneratedRows",
    "GenerationConfig",
    "combine_rows",
    "generate_evidence_trial",
    "generate_study",
    "generate_target",
    "generate_trial",
    "true_risk_difference",
    "DistributionError",
    "MultivariateNormal",
    "Normal",
    "PointMass",
    "SeededRng",
    "Trapezoid",
    "distribution_from_config",
    "distribution_to_config",
    "DEFAULT_OUTCOME_DESIGN",
    "DEFAULT_SELECTION_DESIGN",
    "MSM_DESIGN",
    "EffectEstimate",
    "EstimationInputError",
    "MonteCarloError",
    "StratumGap",
    "SynthesisSpec",
    "WeightOverflowError",
    "nonparametric_bounds",
    "positivity_diagnostic",
    "restrict_covariates_gcomp",
    "restrict_covariates_ipw",
    "restrict_population_gcomp",
    "restrict_population_ipw",
    "synthesis_gcomp",
    "synthesis_ipw",
    "DesignSpec",
    "FittedLogistic",
    "RankDeficientDesignError",
    "SeparationError",
    "expit",
    "fit_logistic",
    "predict",
    "EstimatingFunction",
    "MEstimate",
    "MEstimationError",
    "NonConvergenceError",
    "SingularBreadError",
    "SingularJacobianError",
    "estimate",
    "sandwich",
    "solve",
    "SimulationConfig",
    "SimulationResult",
    "SimulationResultRow",
    "render_table",
    "run_simulation",
]
