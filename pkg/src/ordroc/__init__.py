"""Covariate-adjusted ROC homogeneity testing from ordinal rater scores.

The package fits a probit-link location-scale ordinal regression by
maximum likelihood, turns the fit into covariate-specific ROC curves and
AUCs with delta-method uncertainty, tests accuracy homogeneity across
rater groups with a chi-square statistic, and solves the matching power
and minimum-sample-size problems.  A Monte-Carlo harness validates the
operating characteristics end to end.
"""

from .data import (
    CovariateProfile,
    CsvSchema,
    DesignSpec,
    ObservationTable,
    build_design,
    load_csv,
)
from .errors import (
    DataError,
    OrdRocError,
    RankDeficiencyError,
    SingularMatrixError,
    StatisticalError,
)
from .homogeneity import (
    PairwiseReport,
    TestReport,
    contrast_matrix,
    homogeneity_test,
    lambda_vector,
    pairwise,
    roc_curve_test,
    test_statistic,
)
from .power import (
    PowerSpec,
    SampleSizeResult,
    TrueDesign,
    expected_information,
    min_sample_size,
    noncentral_chisq_cdf,
    solve_eta,
    true_gamma,
)
from .probit import (
    FitOptions,
    FittedModel,
    ModelParams,
    fit,
    hessian,
    log_likelihood,
    score,
    vcov_at,
)
from .roc import (
    AucSummary,
    BinormalParams,
    RocSummary,
    auc_at,
    auc_jacobian,
    auc_summary,
    binormal_from,
    default_fpr_grid,
    roc_at,
    roc_jacobian,
    roc_summary,
)
from .simulate import SimSetting, generate

__version__ = "0.1.0"
