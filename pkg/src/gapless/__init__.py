"""Scenario-tree convex stochastic programming with computable duality certificates."""

__version__ = "0.1.0"

from .tree import (
    ScenarioTree,
    AdaptedProcess,
    TreeStructureError,
    validate_tree,
    conditional_expectation,
    expectation,
    is_annihilator,
    pairing,
    is_martingale_density,
    conditional_density,
    annihilator_from_density,
    dual_step_process,
    leaf_block_process,
    dual_block_matrix,
    dual_from_leaf_density,
    path_increments,
    gains,
    gains_matrix,
    strategy_columns,
    strategy_from_flat,
)
from .plq import (
    PlqFunction,
    MinResult,
    ElasticityReport,
    PlqValidationError,
    ImproperFunctionError,
    PartialMinUnboundedError,
    weighted_sum,
    upper_envelope,
    partial_min,
    asymptotic_elasticity,
    from_slopes,
    remark3_disutility,
    linear_kink,
    plq_from_dict,
    plq_from_json,
)
from .engine import (
    SeparableResult,
    minimize_separable_plq,
    certified_dual_bound,
    STATUS_OPTIMAL,
    STATUS_INFEASIBLE,
    STATUS_UNBOUNDED,
)
from .finance import (
    NaReport,
    TwoLambdaReport,
    DpReport,
    na_check,
    find_martingale_measure,
    two_lambda_check,
    dp_backward,
    remark3_model,
    growth_condition_check,
)
from .integrand import (
    AlmIntegrand,
    LowerBoundCertificate,
    CertificateReport,
    LinealityReport,
    alm_value,
    alm_recession,
    alm_conjugate,
    gamma,
    build_certificate,
    check_certificate,
    lineality_check,
)
from .solver import (
    SolveReport,
    solve_primal,
    value_function,
    recession_value,
    verify_recession_formula,
    STATUS_NON_ATTAINED,
    STATUS_UNBOUNDED_BELOW,
)
from .duality import (
    DualReport,
    SuperhedgeReport,
    phi_conjugate,
    dual_value,
    superhedge,
    gap_suite,
    martingale_from_truncation,
)
from .instances import (
    random_tree,
    random_disutility,
    certified_instance,
    exact_path_instance,
    gap_suite_rows,
)
