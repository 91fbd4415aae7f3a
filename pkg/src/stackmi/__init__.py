"""Multiple imputation by stacking and weighting with the analysis-model density.

Covariates are imputed without the outcome, the M completed datasets are
stacked, and each row is weighted by ``f(Y | X; theta)`` from a complete-case
fit of the analysis model. Parameters come from one weighted fit of the stack;
standard errors from a Louis-type observed information.
"""

from .estimator import StackedImputationRegressor
from .imputation import ChainConfig, ChainedImputer, ImputerSpec, chained_impute, impute_outcome
from .models import (CoxPH, FitResult, GaussianRegression, LogisticRegression, OutcomeSpec, fit_table,
                     fit_weighted)
from .simulate import MissingnessMechanism, apply_missingness, generate_scenario
from .stacking import (StackedTable, complete_case_fit, compute_weights, fit_stacked, stack,
                       unit_mi_weights)
from .study import StudyConfig, StudyReport, run_replication, run_study
from .table import Column, Table, TableError, load_csv, write_csv
from .variance import (VarianceReport, louis_variance, rubin_combine, sandwich_variance, variance_report,
                       wood_variance)

__version__ = "0.1.0"

__all__ = [
    "ChainConfig", "ChainedImputer", "Column", "CoxPH", "FitResult", "GaussianRegression", "ImputerSpec",
    "LogisticRegression", "MissingnessMechanism", "OutcomeSpec", "StackedImputationRegressor", "StackedTable",
    "StudyConfig", "StudyReport", "Table", "TableError", "VarianceReport", "apply_missingness",
    "chained_impute", "complete_case_fit", "compute_weights", "fit_stacked", "fit_table", "fit_weighted",
    "generate_scenario", "impute_outcome", "load_csv", "louis_variance", "rubin_combine", "run_replication",
    "run_study", "sandwich_variance", "stack", "unit_mi_weights", "variance_report", "wood_variance",
    "write_csv",
]
