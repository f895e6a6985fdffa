"""Off-policy evaluation toolkit: score-function estimators, sequential and
multi-logger combinations, game-based estimator selection, and design tools."""
from .core import (EstimatorTag, FullInformationData, LoggedBanditData, OverlapError, PolicyKind,
                   PolicyMatrix, ScoreMatrix, check_overlap, inner_value, per_record_values,
                   true_policy_value, validate_log)
from .estimators import (VarianceReport, a2ipw_estimate, aipw_crossfit, ap_estimate, estimate,
                         itope_estimate, scores_aipw, scores_dm, scores_ipw, semiparametric_bound)
from .game import LPError, lp_solve, solve_zero_sum
from .inference import (SingularCovarianceError, efficient_combine, efficient_design, normal_quantile,
                        sample_size, z_test_difference)
from .ingest import LabeledDataset, parse_libsvm, serialize_libsvm, standardize
from .models import (KernelRidgeRewardModel, LogisticPolicy, OnlineRidge, RidgeRewardModel,
                     model_from_json, model_to_json)
from .multilogger import gmm_combine, mixture_propensity, stratum_estimates

__version__ = "0.1.0"
