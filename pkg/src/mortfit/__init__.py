"""Least-squares and Poisson maximum-likelihood fitting of the
Lee-Carter / Renshaw-Haberman family of mortality models."""

from .data import (
    HmdTable,
    MortalitySurface,
    build_rate_surface,
    build_surface,
    default_generator,
    parse_hmd_table,
    random_generator,
    read_hmd_table,
    surface_from_csv,
    surface_to_csv,
    synthesize_surface,
)
from .errors import (
    CapabilityError,
    DataError,
    DegenerateNormalizationError,
    MortfitError,
    NumericalError,
    ParseError,
)
from .harness import (
    ComparisonRow,
    Method,
    SweepRow,
    comparison_to_csv,
    run_comparison,
    sweep_to_csv,
    tolerance_sweep,
)
from .linalg import SingularTriplet, first_singular_triplet, rank1_ls_fit
from .ls import (
    AgeCohortMatrix,
    ConvergenceConfig,
    FitReport,
    fit_apc_ls,
    fit_h1_ls,
    fit_lc_ls,
    fit_ls,
    fit_rh_ls,
    h1_gamma_update,
    h1_gamma_update_hv,
    iterative_svd_missing,
    rearrange_to_age_cohort,
)
from .mle import MleConfig, fit_poisson_mle, fit_poisson_mle_hv, hv_project, newton_numerators
from .models import (
    ModelKind,
    ModelParams,
    apply_identifiability,
    fitted_log_rates,
    hv_statistic,
    l2_error,
    params_from_json,
    params_to_csv,
    params_to_json,
    poisson_loglik,
)

__version__ = "0.1.0"
