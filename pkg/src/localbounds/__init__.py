"""Problem-dependent generalization bounds via uniform localized convergence.

Surrogate functions and their fixed points, localized Rademacher complexity
for finite classes, loss- and variance-dependent certificates, gradient
descent and first-order EM with oracle error tracking, structured convex
costs, and a deterministic Monte Carlo harness.
"""

__version__ = "0.1.0"

from .classes import (
    ConvexCostData,
    FiniteLossProblem,
    Sample,
    SmoothParametricModel,
    gen_finite_random,
    gen_finite_zero_variance,
    gen_gmm2,
    gen_heavy_tailed_linear,
    gen_linear_regression,
    gen_mlr2,
    gen_quadratic,
    gen_sigmoid_regression,
)
from .convexcost import CostSpec, SmallBallEstimate, alpha, small_ball_estimate, theorem81_bound
from .em import GMM2, MLR2, EMModel, first_order_em, gmm2_weight, snr_parameters
from .estimators import Certificate, certify_loss_rate, erm, moment_penalized, variance_certificate
from .gradflow import GDTrace, gradient_descent, localized_gradient_diagnostic, stationary_point_check
from .harness import ExperimentConfig, ScalingReport, fit_loglog, load_config, run_experiment
from .numkit import (
    FixedPointResult,
    NumericError,
    SurrogateSpec,
    dudley_bound,
    fixed_point,
    fixed_point_bounded,
    is_sub_root,
    suboptimality_ratio,
)
from .rademacher import EmpiricalPsi, build_psi, local_rademacher, validate_peeling

__all__ = [name for name in dir() if not name.startswith("_")]
