"""Label shift adaptation: calibrated maximum-likelihood prior estimation
with BBSL/RLLS baselines, shift simulators and evaluation metrics."""

from .calibration import (
    CalibrationParams,
    Family,
    apply_calibration,
    fit_calibration,
    nll_and_gradient,
)
from .data import LabeledLogitSet
from .errors import (
    ArgumentError,
    DatasetError,
    DegenerateRowError,
    DegenerateSampleError,
    LabelShiftError,
    NumericalError,
    SingularMatrixError,
    UnsatisfiableShiftError,
)
from .estimation import (
    EmResult,
    MomentMode,
    PriorMode,
    adapt_predictions,
    bbsl_estimate,
    confusion_matrix,
    em_estimate,
    estimate_source_priors,
    ml_estimate_direct,
    rlls_estimate,
    shift_log_likelihood,
    weights_from_priors,
)
from .metrics import (
    delta_accuracy,
    ece,
    js_divergence,
    mse_weights,
    nll,
    rank_methods,
    wilcoxon_signed_rank,
)
from .numerics import log_sum_exp, project_to_simplex, softmax
from .simulation import (
    ShiftSpec,
    SyntheticTaskSpec,
    generate_synthetic_task,
    resample_by_priors,
    sample_dirichlet_priors,
    tweak_one_priors,
)

__version__ = "0.1.0"
