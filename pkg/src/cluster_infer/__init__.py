"""Cluster-average regression estimation and inference for clustered data.

The package estimates a linear model on one-way clustered data by averaging
per-cluster OLS solutions with equal weights, pairs the average with a
sandwich variance estimator that stays valid under arbitrary within-cluster
dependence (including cluster-specific random coefficients), and provides
Wald tests, a superblock parameter-constancy test, a pooled-OLS/CRVE
baseline, and a replication engine for empirical size and power studies.
"""

from .covariance import (
    CovarianceEstimate,
    crve_pols,
    invert_psd,
    vhat_cluster_average,
    vhat_superblock,
)
from .dataset import (
    Cluster,
    ClusteredDataset,
    CsvSchema,
    ModelSpec,
    apply_model_spec,
    dataset_checksum,
    filter_min_cluster_size,
    from_arrays,
    group_rows,
    load_csv,
    replace_responses,
    write_csv,
)
from .dgp import (
    DependenceKind,
    DgpConfig,
    FrozenDesign,
    Heterogeneity,
    UDistribution,
    gen_dataset,
    gen_dependence_cov,
    gen_design,
    gen_regressors_table1,
    gen_strong_cov,
)
from .errors import (
    ClusterInferError,
    ConditioningError,
    ConfigurationError,
    DegenerateSuperblockError,
    EmptyInputError,
    EmptyResultError,
    ExcessiveFailureError,
    HypothesisError,
    ParseError,
    SchemaError,
    SingularClusterError,
    SingularDesignError,
    TransformError,
)
from .estimators import (
    AverageEstimate,
    ClusterFit,
    PolsEstimate,
    SuperblockEstimate,
    cluster_average,
    fit_cluster,
    pols_fit,
    superblock_averages,
)
from .hypothesis import (
    DEFAULT_LEVELS,
    LinearHypothesis,
    TestResult,
    size_corrected_critical_value,
    superblock_constancy,
    wald_cluster_average,
    wald_pols,
)
from .montecarlo import (
    McConfig,
    McReport,
    MethodRates,
    RmseReport,
    constancy_config,
    rmse_config,
    run_constancy,
    run_estimator_rmse,
    run_size_power,
    size_power_config,
    summarize,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
