"""Low-rank separated surrogate models fit by regularized alternating least squares."""

from .basis import BasisSpec, Family, eval_basis, eval_basis_batch, gauss_quadrature
from .model import (
    SampleSet,
    SeparatedModel,
    empirical_norm,
    evaluate,
    evaluate_batch,
    load_model,
    mean,
    model_from_dict,
    model_to_dict,
    moment,
    save_model,
    second_moment,
    standard_deviation,
)
from .als import (
    DirectionSolveResult,
    FitConfig,
    FitDiagnostics,
    assemble_design_matrix,
    exclusion_products,
    factor_table,
    fit_fixed,
    normalize_direction,
    solve_direction,
    sweep,
)
from .regularize import (
    GcvResult,
    RegularizationState,
    TikhonovPath,
    build_B,
    error_indicator,
    gcv_select_lambda,
    sigma_hat,
    tikhonov_factor,
)
from .selection import SelectionReport, ei_max_for_rank, select_model
from . import errors, problems

__version__ = "0.1.0"
