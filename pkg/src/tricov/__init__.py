"""Three-factor (space x time x epoch) Kronecker covariance estimation."""

from .estimator import (
    TABLE1_SETS,
    AssumptionSet,
    FactorSet,
    FitConfig,
    FitError,
    FitResult,
    InadmissibleSampleSize,
    fit,
    log_likelihood,
    normalize,
)
from .tensor import TrialTensor, check_sample_size

__version__ = "0.1.0"
